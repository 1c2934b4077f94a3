//! Two-stage procedural generator with planted attribute axes.
//!
//! Stage 1 maps `(z, category)` to a 4×4×4 feature block `F`:
//!
//! | channel | value                          | attribute        |
//! |---------|--------------------------------|------------------|
//! | 0       | `tanh(z₁) + 0.1·category`      | brightness       |
//! | 1       | `tanh(z₂)`                     | hue              |
//! | 2       | `tanh(z₃)`                     | disc radius      |
//! | 3       | `tanh(z₄)`                     | stripe frequency |
//!
//! Every channel also carries a zero-mean diagonal ramp of amplitude
//! `0.1·tanh(z₅)`; `z₆..z₈` are unused. Stage 2 renders a 64×64 RGB image:
//! luminance `0.5 + 0.4·F₀` (channel 0 upsampled in 16×16 blocks, so the mean
//! luminance is `0.5 + 0.4·mean(F₀)`), a background hue at angle
//! `0.75π·mean(F₁)`, a centered disc of radius `8 + 6·mean(F₂)` pixels drawn in
//! the complementary hue, and saturation stripes at `2 + 2·mean(F₃)` cycles per
//! image. Hue, disc and stripes live in the two chroma axes orthogonal to the
//! luma weights, and the chroma amplitude shrinks for the whole image when
//! a block nears black or white, so they never move the luminance.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{ActivationTensor, BackendError, Category, CategoryId, Generator, GeneratorInfo, ImageSample, LayerInfo};
use crate::ids::ImageId;
use crate::image::RgbImage;
use crate::latent::{LatentVector, SpaceTag};

pub const BUILTIN_LATENT_DIM: usize = 8;
/// Index of the single intervenable layer (the stage-1 feature block).
pub const BUILTIN_LAYER: u32 = 1;
pub const BUILTIN_IMAGE_SIZE: u32 = 64;

const CHANNELS: usize = 4;
const GRID: usize = 4;
const RAMP_AMPLITUDE: f64 = 0.1;
const CATEGORY_OFFSET: f64 = 0.1;
const CHROMA_AMPLITUDE: f64 = 0.06;
pub(crate) const STRIPE_DEPTH: f64 = 0.5;
const HUE_RANGE: f64 = 0.75 * PI;

const CATEGORY_NAMES: [&str; 4] = ["meadow", "coast", "canyon", "forest"];

/// Rec. 601 luma weights.
pub(crate) const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Orthonormal pair spanning the RGB directions with zero luma.
pub(crate) fn chroma_basis() -> ([f64; 3], [f64; 3]) {
    let raw_u = [LUMA[1], -LUMA[0], 0.0];
    let n = (raw_u[0] * raw_u[0] + raw_u[1] * raw_u[1]).sqrt();
    let u = [raw_u[0] / n, raw_u[1] / n, 0.0];
    let cross = [LUMA[1] * u[2] - LUMA[2] * u[1], LUMA[2] * u[0] - LUMA[0] * u[2], LUMA[0] * u[1] - LUMA[1] * u[0]];
    let n = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
    (u, [cross[0] / n, cross[1] / n, cross[2] / n])
}

/// Largest factor in `[0, 1]` by which a chroma offset of at most
/// `±max_offset` per channel can be added to every luminance in `levels`
/// without leaving the unit cube. Applying one factor to the whole image
/// keeps chroma ratios intact and never shifts the luma of a pixel.
fn gamut_scale(levels: impl Iterator<Item = f64>, max_offset: [f64; 3]) -> f64 {
    let reach = max_offset.iter().fold(0.0f64, |m, o| m.max(o.abs()));
    if reach == 0.0 {
        return 1.0;
    }
    levels.fold(1.0f64, |scale, l| scale.min(l.min(1.0 - l).max(0.0) / reach))
}

/// Zero-mean diagonal ramp over the 4×4 grid, in [-1, 1].
fn ramp(row: usize, col: usize) -> f64 {
    ((row + col) as f64 - 3.0) / 3.0
}

/// Standard-normal latent for a seed: ChaCha20 seeded via `seed_from_u64`,
/// uniforms from the top 53 bits of each `u64`, Box–Muller in pairs.
pub(crate) fn seeded_latent(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut uniform = || ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let mut out = Vec::with_capacity(dim + 1);
    while out.len() < dim {
        let (u1, u2) = (uniform(), uniform());
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        out.push(radius * angle.cos());
        out.push(radius * angle.sin());
    }
    out.truncate(dim);
    out
}

#[derive(Debug, Clone)]
pub struct BuiltinGenerator {
    info: GeneratorInfo,
}

impl Default for BuiltinGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl BuiltinGenerator {
    pub fn new() -> Self {
        let info = GeneratorInfo {
            latent_dim: BUILTIN_LATENT_DIM,
            categories: CATEGORY_NAMES
                .iter()
                .enumerate()
                .map(|(id, name)| Category { id: id as CategoryId, name: (*name).to_string() })
                .collect(),
            layers: vec![LayerInfo { index: BUILTIN_LAYER, shape: [CHANNELS, GRID, GRID] }],
            image_size: [BUILTIN_IMAGE_SIZE, BUILTIN_IMAGE_SIZE],
        };
        Self { info }
    }

    fn check_z(&self, z: &LatentVector) -> Result<(), BackendError> {
        Ok(z.check_shape(SpaceTag::Z, BUILTIN_LATENT_DIM)?)
    }

    fn stage_one(&self, z: &[f64], category: CategoryId) -> Vec<f64> {
        let ramp_amp = RAMP_AMPLITUDE * z[4].tanh();
        let mut data = Vec::with_capacity(CHANNELS * GRID * GRID);
        for (channel, z_c) in z.iter().take(CHANNELS).enumerate() {
            let mut base = z_c.tanh();
            if channel == 0 {
                base += CATEGORY_OFFSET * f64::from(category);
            }
            for row in 0..GRID {
                for col in 0..GRID {
                    data.push(base + ramp_amp * ramp(row, col));
                }
            }
        }
        data
    }

    fn stage_two(&self, features: &[f64]) -> RgbImage {
        let size = BUILTIN_IMAGE_SIZE as usize;
        let plane = GRID * GRID;
        let mean = |c: usize| features[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        let hue = HUE_RANGE * mean(1);
        let radius = (8.0 + 6.0 * mean(2)).max(0.0);
        let frequency = 2.0 + 2.0 * mean(3);
        let (u, v) = chroma_basis();
        let tint = [
            hue.cos() * u[0] + hue.sin() * v[0],
            hue.cos() * u[1] + hue.sin() * v[1],
            hue.cos() * u[2] + hue.sin() * v[2],
        ];
        let block = size / GRID;
        let levels = features[..plane].iter().map(|f| (0.5 + 0.4 * f).clamp(0.0, 1.0));
        let chroma = CHROMA_AMPLITUDE * gamut_scale(levels, tint.map(|t| CHROMA_AMPLITUDE * (1.0 + STRIPE_DEPTH) * t));
        let center = size as f64 / 2.0;

        let mut data = Vec::with_capacity(3 * size * size);
        for y in 0..size {
            for x in 0..size {
                let luminance = 0.5 + 0.4 * features[(y / block) * GRID + x / block];
                let px = x as f64 + 0.5;
                let dist = (px - center).hypot(y as f64 + 0.5 - center);
                let coverage = (radius - dist + 0.5).clamp(0.0, 1.0);
                let stripes = 1.0 + STRIPE_DEPTH * (2.0 * PI * frequency * px / size as f64).sin();
                let amount = chroma * stripes * (1.0 - 2.0 * coverage);
                let luminance = luminance.clamp(0.0, 1.0);
                for t in tint {
                    let value = (luminance + amount * t).clamp(0.0, 1.0);
                    data.push((value * 255.0).round() as u8);
                }
            }
        }
        RgbImage::new(BUILTIN_IMAGE_SIZE, BUILTIN_IMAGE_SIZE, data).expect("buffer sized by construction")
    }
}

impl Generator for BuiltinGenerator {
    fn info(&self) -> Result<GeneratorInfo, BackendError> {
        Ok(self.info.clone())
    }

    fn sample(&self, seed: u64, category: CategoryId) -> Result<ImageSample, BackendError> {
        self.info.check_category(category)?;
        let z = LatentVector::new(seeded_latent(seed, BUILTIN_LATENT_DIM), SpaceTag::Z)?;
        let pixels = self.render(&z, category)?;
        Ok(ImageSample { id: ImageId::generate(), z, category, pixels })
    }

    fn render(&self, z: &LatentVector, category: CategoryId) -> Result<RgbImage, BackendError> {
        self.check_z(z)?;
        self.info.check_category(category)?;
        Ok(self.stage_two(&self.stage_one(z.values(), category)))
    }

    fn activations(
        &self,
        z: &LatentVector,
        category: CategoryId,
        layer: u32,
    ) -> Result<ActivationTensor, BackendError> {
        let info = self.info.layer(layer)?;
        self.check_z(z)?;
        self.info.check_category(category)?;
        ActivationTensor::new(layer, info.shape, self.stage_one(z.values(), category))
    }

    fn render_from_activations(&self, act: &ActivationTensor, category: CategoryId) -> Result<RgbImage, BackendError> {
        let info = self.info.layer(act.layer())?;
        if act.shape() != info.shape {
            return Err(BackendError::ShapeMismatch { expected: info.shape, actual: act.shape() });
        }
        self.info.check_category(category)?;
        Ok(self.stage_two(act.data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::readout::{disc_radius, mean_luminance};

    fn z_with(entries: &[(usize, f64)]) -> LatentVector {
        let mut values = vec![0.0; BUILTIN_LATENT_DIM];
        for (i, v) in entries {
            values[*i] = *v;
        }
        LatentVector::new(values, SpaceTag::Z).unwrap()
    }

    #[test]
    fn info_is_fixed() {
        let info = BuiltinGenerator::new().info().unwrap();
        assert_eq!(info.latent_dim, 8);
        assert_eq!(info.categories.len(), 4);
        assert_eq!(info.layers, vec![LayerInfo { index: 1, shape: [4, 4, 4] }]);
        assert_eq!(info.image_size, [64, 64]);
        info.validate().unwrap();
    }

    #[test]
    fn chroma_basis_has_no_luma() {
        let (u, v) = chroma_basis();
        let luma = |c: [f64; 3]| c.iter().zip(LUMA).map(|(a, b)| a * b).sum::<f64>();
        assert!(luma(u).abs() < 1e-15 && luma(v).abs() < 1e-15);
        assert!(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let g = BuiltinGenerator::new();
        let a = g.sample(7, 0).unwrap();
        let b = g.sample(7, 0).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.pixels, b.pixels);
        assert_ne!(a.id, b.id);
        assert_ne!(g.sample(8, 0).unwrap().z, a.z);
        assert_eq!(g.sample(7, 99).unwrap_err(), BackendError::UnknownCategory(99));
    }

    #[test]
    fn seeded_latent_looks_standard_normal() {
        let values: Vec<f64> = (0..2000).flat_map(|s| seeded_latent(s, 8)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn luminance_examples() {
        let g = BuiltinGenerator::new();
        let zero = g.render(&z_with(&[]), 0).unwrap();
        assert!((mean_luminance(&zero) - 0.5).abs() <= 0.02);
        let bright = g.render(&z_with(&[(0, 3.0)]), 0).unwrap();
        assert!((mean_luminance(&bright) - (0.5 + 0.4 * 3f64.tanh())).abs() <= 0.02);
        let up = g.render(&z_with(&[(0, 1.0)]), 0).unwrap();
        let down = g.render(&z_with(&[(0, -1.0)]), 0).unwrap();
        assert!(mean_luminance(&up) > mean_luminance(&down));
    }

    #[test]
    fn activation_examples() {
        let g = BuiltinGenerator::new();
        for category in 0..4 {
            let act = g.activations(&z_with(&[]), category, 1).unwrap();
            for v in act.channel(0) {
                assert_eq!(*v, 0.1 * f64::from(category));
            }
        }
        let act = g.activations(&z_with(&[(1, 2.0)]), 0, 1).unwrap();
        for v in act.channel(1) {
            assert!((v - 2f64.tanh()).abs() < 1e-12);
        }
        assert_eq!(g.activations(&z_with(&[]), 0, 5).unwrap_err(), BackendError::UnknownLayer(5));
    }

    #[test]
    fn render_from_activations_examples() {
        let g = BuiltinGenerator::new();
        let z = z_with(&[(0, 0.3), (2, -0.7), (4, 1.2)]);
        for category in 0..4 {
            let act = g.activations(&z, category, 1).unwrap();
            assert_eq!(g.render_from_activations(&act, category).unwrap(), g.render(&z, category).unwrap());
        }
        let mut data = vec![0.0; 64];
        data[..16].iter_mut().for_each(|v| *v = 1.0);
        let act = ActivationTensor::new(1, [4, 4, 4], data).unwrap();
        let img = g.render_from_activations(&act, 0).unwrap();
        assert!((mean_luminance(&img) - 0.9).abs() <= 0.02);
        let wrong = ActivationTensor::new(1, [3, 4, 4], vec![0.0; 48]).unwrap();
        assert!(matches!(g.render_from_activations(&wrong, 0), Err(BackendError::ShapeMismatch { .. })));
    }

    #[test]
    fn render_checks_inputs() {
        let g = BuiltinGenerator::new();
        let short = LatentVector::new(vec![0.0; 3], SpaceTag::Z).unwrap();
        assert!(matches!(g.render(&short, 0), Err(BackendError::DimensionMismatch { .. })));
        assert_eq!(g.render(&z_with(&[]), 4).unwrap_err(), BackendError::UnknownCategory(4));
    }

    #[test]
    fn planted_axes_are_monotone() {
        let g = BuiltinGenerator::new();
        let steps: Vec<f64> = (-8..=8).map(|k| f64::from(k) * 0.25).collect();
        for category in 0..4 {
            let lum: Vec<f64> =
                steps.iter().map(|s| mean_luminance(&g.render(&z_with(&[(0, *s)]), category).unwrap())).collect();
            assert!(lum.windows(2).all(|w| w[1] > w[0]), "category {category}: {lum:?}");
        }
        let radii: Vec<f64> = steps.iter().map(|s| disc_radius(&g.render(&z_with(&[(2, *s)]), 0).unwrap())).collect();
        assert!(radii.windows(2).all(|w| w[1] > w[0]), "{radii:?}");
    }

    #[test]
    fn chroma_axes_leave_luminance_alone_near_white() {
        let g = BuiltinGenerator::new();
        // block luminance ≈ 0.94, close enough to white to shrink the chroma
        let base = mean_luminance(&g.render(&z_with(&[(0, 1.5)]), 2).unwrap());
        for (axis, value) in [(1, 1.5), (2, -2.0), (2, 2.0), (3, -1.0), (3, 2.0)] {
            let img = g.render(&z_with(&[(0, 1.5), (axis, value)]), 2).unwrap();
            assert!((mean_luminance(&img) - base).abs() < 1e-3, "axis {axis}");
        }
    }

    #[test]
    fn gamut_scale_bounds_offsets() {
        assert_eq!(gamut_scale([0.5].into_iter(), [0.1, -0.1, 0.0]), 1.0);
        assert!((gamut_scale([0.95, 0.5].into_iter(), [0.1, 0.0, 0.0]) - 0.5).abs() < 1e-12);
        assert_eq!(gamut_scale([1.0].into_iter(), [0.1, 0.0, 0.0]), 0.0);
        assert_eq!(gamut_scale([0.0].into_iter(), [0.0; 3]), 1.0);
    }
}
