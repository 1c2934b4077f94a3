//! HTTP client for an external generator speaking the [`super::wire`] protocol.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    decode_image, ActivationsRequest, ActivationsResponse, ErrorBody, ImageResponse, RenderFromActivationsRequest,
    RenderRequest, SampleRequest, SampleResponse,
};
use super::{ActivationTensor, BackendError, CategoryId, Generator, GeneratorInfo, ImageSample};
use crate::ids::ImageId;
use crate::image::RgbImage;
use crate::latent::{LatentVector, SpaceTag};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// What a failed call was about, so remote error codes map back onto
/// [`BackendError`] variants with the right payload.
#[derive(Clone, Copy)]
struct CallContext {
    category: CategoryId,
    layer: Option<u32>,
    dim: usize,
    shape: Option<[usize; 3]>,
}

pub struct ExternalGenerator {
    base_url: String,
    agent: ureq::Agent,
    info: GeneratorInfo,
}

impl std::fmt::Debug for ExternalGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalGenerator").field("base_url", &self.base_url).finish()
    }
}

impl ExternalGenerator {
    /// Connects and caches the remote descriptor; fails if `/info` is
    /// unreachable or malformed.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let base_url = base_url.trim_end_matches('/').to_string();
        let mut response = agent
            .get(format!("{base_url}/info"))
            .call()
            .map_err(|e| BackendError::Unavailable(format!("GET /info: {e}")))?;
        if !response.status().is_success() {
            return Err(BackendError::Unavailable(format!("GET /info returned {}", response.status())));
        }
        let info: GeneratorInfo = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Unavailable(format!("malformed /info reply: {e}")))?;
        info.validate().map_err(|e| BackendError::Unavailable(format!("invalid /info reply: {e}")))?;
        Ok(Self { base_url, agent, info })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
        ctx: CallContext,
    ) -> Result<Resp, BackendError> {
        let mut response = self
            .agent
            .post(format!("{}{path}", self.base_url))
            .send_json(body)
            .map_err(|e| BackendError::Unavailable(format!("POST {path}: {e}")))?;
        let status = response.status();
        if status.is_success() {
            return response
                .body_mut()
                .read_json()
                .map_err(|e| BackendError::Unavailable(format!("malformed {path} reply: {e}")));
        }
        if status.is_client_error() {
            if let Ok(err) = response.body_mut().read_json::<ErrorBody>() {
                return Err(map_remote_error(&err, ctx));
            }
        }
        Err(BackendError::Unavailable(format!("POST {path} returned {status}")))
    }

    fn context(&self, category: CategoryId) -> CallContext {
        CallContext { category, layer: None, dim: self.info.latent_dim, shape: None }
    }
}

fn map_remote_error(err: &ErrorBody, ctx: CallContext) -> BackendError {
    match err.error_code.as_str() {
        "UnknownCategory" => BackendError::UnknownCategory(ctx.category),
        "UnknownLayer" => match ctx.layer {
            Some(layer) => BackendError::UnknownLayer(layer),
            None => BackendError::Unavailable(err.message.clone()),
        },
        "DimensionMismatch" => BackendError::DimensionMismatch { expected: ctx.dim, actual: 0 },
        "ShapeMismatch" => match ctx.shape {
            Some(actual) => BackendError::ShapeMismatch { expected: [0; 3], actual },
            None => BackendError::Unavailable(err.message.clone()),
        },
        "NonFinite" => BackendError::NonFinite,
        _ => BackendError::Unavailable(format!("{}: {}", err.error_code, err.message)),
    }
}

impl Generator for ExternalGenerator {
    fn info(&self) -> Result<GeneratorInfo, BackendError> {
        Ok(self.info.clone())
    }

    fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError> {
        self.info.check_category(category)?;
        let reply: SampleResponse = self.post("/sample", &SampleRequest { seed, category }, self.context(category))?;
        let z = LatentVector::new(reply.z, SpaceTag::Z)
            .map_err(|e| BackendError::Unavailable(format!("malformed sample latent: {e}")))?;
        if z.dim() != self.info.latent_dim {
            return Err(BackendError::Unavailable(format!(
                "sample latent has {} entries, descriptor says {}",
                z.dim(),
                self.info.latent_dim
            )));
        }
        let pixels = decode_image(&reply.image_png_b64)?;
        Ok(ImageSample { id: ImageId::generate(), z, category, pixels })
    }

    fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError> {
        z.check_shape(SpaceTag::Z, self.info.latent_dim)?;
        self.info.check_category(category)?;
        let body = RenderRequest { z: z.values().to_vec(), category };
        let reply: ImageResponse = self.post("/render", &body, self.context(category))?;
        decode_image(&reply.image_png_b64)
    }

    fn activations(
        &self,
        z: &LatentVector,
        category: CategoryId,
        layer: u32,
    ) -> Result<ActivationTensor, BackendError> {
        let declared = self.info.layer(layer)?.shape;
        z.check_shape(SpaceTag::Z, self.info.latent_dim)?;
        self.info.check_category(category)?;
        let body = ActivationsRequest { z: z.values().to_vec(), category, layer };
        let ctx = CallContext { layer: Some(layer), ..self.context(category) };
        let reply: ActivationsResponse = self.post("/activations", &body, ctx)?;
        if reply.shape != declared {
            return Err(BackendError::Unavailable(format!(
                "activations shape {:?} differs from declared {:?}",
                reply.shape, declared
            )));
        }
        ActivationTensor::new(layer, reply.shape, reply.data)
            .map_err(|e| BackendError::Unavailable(format!("malformed activations: {e}")))
    }

    fn render_from_activations(&self, act: &ActivationTensor, category: CategoryId) -> Result<RgbImage, BackendError> {
        let declared = self.info.layer(act.layer())?.shape;
        if act.shape() != declared {
            return Err(BackendError::ShapeMismatch { expected: declared, actual: act.shape() });
        }
        self.info.check_category(category)?;
        let body = RenderFromActivationsRequest {
            category,
            layer: act.layer(),
            shape: act.shape(),
            data: act.data().to_vec(),
        };
        let ctx = CallContext { layer: Some(act.layer()), shape: Some(act.shape()), ..self.context(category) };
        let reply: ImageResponse = self.post("/render_from_activations", &body, ctx)?;
        decode_image(&reply.image_png_b64)
    }
}
