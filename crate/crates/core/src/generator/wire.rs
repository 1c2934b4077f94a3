//! JSON bodies of the external generator protocol.
//!
//! ```text
//! GET  /info                     -> GeneratorInfo
//! POST /sample                   {seed, category}                       -> {z, image_png_b64}
//! POST /render                   {z, category}                          -> {image_png_b64}
//! POST /activations              {z, category, layer}                   -> {shape, data}
//! POST /render_from_activations  {category, layer, shape, data}         -> {image_png_b64}
//! ```
//!
//! Failures are 4xx responses carrying [`ErrorBody`].

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{BackendError, CategoryId};
use crate::image::RgbImage;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRequest {
    pub seed: u64,
    pub category: CategoryId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleResponse {
    pub z: Vec<f64>,
    pub image_png_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderRequest {
    pub z: Vec<f64>,
    pub category: CategoryId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image_png_b64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationsRequest {
    pub z: Vec<f64>,
    pub category: CategoryId,
    pub layer: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationsResponse {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderFromActivationsRequest {
    pub category: CategoryId,
    pub layer: u32,
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn from_error(e: &BackendError) -> Self {
        Self { error_code: e.code().to_string(), message: e.to_string() }
    }
}

pub fn encode_image(image: &RgbImage) -> Result<String, BackendError> {
    let png = image.to_png().map_err(|e| BackendError::Unavailable(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

pub fn decode_image(encoded: &str) -> Result<RgbImage, BackendError> {
    let bytes = STANDARD.decode(encoded).map_err(|e| BackendError::Unavailable(format!("bad base64 image: {e}")))?;
    RgbImage::from_png(&bytes).map_err(|e| BackendError::Unavailable(format!("bad png image: {e}")))
}
