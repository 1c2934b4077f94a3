//! Serves any [`Generator`] over the external generator protocol, so a
//! service can run against a backend in another process. Also the reference
//! implementation the protocol tests are written against.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use latcompass_core::generator::wire::{
    encode_image, ActivationsRequest, ActivationsResponse, ErrorBody, ImageResponse, RenderFromActivationsRequest,
    RenderRequest, SampleRequest, SampleResponse,
};
use latcompass_core::generator::{ActivationTensor, BackendError, Generator};
use latcompass_core::latent::{LatentVector, SpaceTag};
use serde::de::DeserializeOwned;

type GenRef = Arc<dyn Generator>;

struct WireError(StatusCode, ErrorBody);

impl From<BackendError> for WireError {
    fn from(e: BackendError) -> Self {
        let status = match e {
            BackendError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::BAD_REQUEST,
        };
        Self(status, ErrorBody::from_error(&e))
    }
}

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type WireResult<T> = Result<Json<T>, WireError>;

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, WireError> {
    serde_json::from_slice(bytes).map_err(|e| {
        WireError(StatusCode::BAD_REQUEST, ErrorBody { error_code: "MalformedRequest".into(), message: e.to_string() })
    })
}

fn latent(values: Vec<f64>) -> Result<LatentVector, WireError> {
    Ok(LatentVector::new(values, SpaceTag::Z).map_err(BackendError::from)?)
}

async fn call<T: Send + 'static>(f: impl FnOnce() -> Result<T, WireError> + Send + 'static) -> WireResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map(Json),
        Err(e) => Err(BackendError::Unavailable(format!("worker failed: {e}")).into()),
    }
}

pub fn router(generator: GenRef) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/sample", post(sample))
        .route("/render", post(render))
        .route("/activations", post(activations))
        .route("/render_from_activations", post(render_from_activations))
        .with_state(generator)
}

async fn info(State(g): State<GenRef>) -> WireResult<latcompass_core::generator::GeneratorInfo> {
    call(move || Ok(g.info()?)).await
}

async fn sample(State(g): State<GenRef>, bytes: Bytes) -> WireResult<SampleResponse> {
    let req: SampleRequest = parse(&bytes)?;
    call(move || {
        let s = g.sample(req.seed, req.category)?;
        Ok(SampleResponse { z: s.z.into_values(), image_png_b64: encode_image(&s.pixels)? })
    })
    .await
}

async fn render(State(g): State<GenRef>, bytes: Bytes) -> WireResult<ImageResponse> {
    let req: RenderRequest = parse(&bytes)?;
    call(move || {
        let image = g.render(&latent(req.z)?, req.category)?;
        Ok(ImageResponse { image_png_b64: encode_image(&image)? })
    })
    .await
}

async fn activations(State(g): State<GenRef>, bytes: Bytes) -> WireResult<ActivationsResponse> {
    let req: ActivationsRequest = parse(&bytes)?;
    call(move || {
        let act = g.activations(&latent(req.z)?, req.category, req.layer)?;
        Ok(ActivationsResponse { shape: act.shape(), data: act.into_data() })
    })
    .await
}

async fn render_from_activations(State(g): State<GenRef>, bytes: Bytes) -> WireResult<ImageResponse> {
    let req: RenderFromActivationsRequest = parse(&bytes)?;
    call(move || {
        let act = ActivationTensor::new(req.layer, req.shape, req.data)?;
        let image = g.render_from_activations(&act, req.category)?;
        Ok(ImageResponse { image_png_b64: encode_image(&image)? })
    })
    .await
}
