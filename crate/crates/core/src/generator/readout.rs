//! Scalar measurements of the builtin generator's planted attributes, read
//! back from rendered pixels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::builtin::{chroma_basis, LUMA, STRIPE_DEPTH};
use crate::image::RgbImage;

/// Pixels farther than this from the center count as background for hue.
const BACKGROUND_RADIUS: f64 = 20.0;
/// Rows at the top and bottom used for the stripe signal.
const STRIPE_ROWS: u32 = 8;
/// Search grids of the model fits, in pixels and cycles per image.
const RADIUS_COARSE_STEP: f64 = 0.05;
const RADIUS_FINE_STEP: f64 = 0.0005;
const FREQUENCY_COARSE_STEP: f64 = 0.01;
const FREQUENCY_FINE_STEP: f64 = 0.0001;

/// One of the four planted axes (latent coordinate `z_axis`, 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Brightness,
    Hue,
    DiscRadius,
    StripeFrequency,
}

impl Attribute {
    pub const ALL: [Attribute; 4] =
        [Attribute::Brightness, Attribute::Hue, Attribute::DiscRadius, Attribute::StripeFrequency];

    pub fn from_axis(axis: usize) -> Option<Self> {
        Self::ALL.get(axis.checked_sub(1)?).copied()
    }

    /// 1-based latent coordinate carrying the attribute.
    pub fn axis(self) -> usize {
        match self {
            Attribute::Brightness => 1,
            Attribute::Hue => 2,
            Attribute::DiscRadius => 3,
            Attribute::StripeFrequency => 4,
        }
    }

    /// Stage-1 channel carrying the attribute.
    pub fn channel(self) -> usize {
        self.axis() - 1
    }

    /// Largest drop tolerated between clipped steps, in readout units.
    pub fn slack(self) -> f64 {
        match self {
            Attribute::Brightness => 2e-3,
            Attribute::Hue => 1e-2,
            Attribute::DiscRadius => 0.1,
            Attribute::StripeFrequency => 0.05,
        }
    }

    pub fn measure(self, image: &RgbImage) -> f64 {
        match self {
            Attribute::Brightness => mean_luminance(image),
            Attribute::Hue => hue_angle(image),
            Attribute::DiscRadius => disc_radius(image),
            Attribute::StripeFrequency => stripe_frequency(image),
        }
    }
}

fn luma(p: [u8; 3]) -> f64 {
    (LUMA[0] * f64::from(p[0]) + LUMA[1] * f64::from(p[1]) + LUMA[2] * f64::from(p[2])) / 255.0
}

/// Pixel chroma as coordinates in the zero-luma plane.
fn chroma(p: [u8; 3]) -> (f64, f64) {
    let (u, v) = chroma_basis();
    let y = luma(p);
    let residual = [f64::from(p[0]) / 255.0 - y, f64::from(p[1]) / 255.0 - y, f64::from(p[2]) / 255.0 - y];
    let dot = |a: [f64; 3]| a.iter().zip(residual).map(|(x, r)| x * r).sum::<f64>();
    (dot(u), dot(v))
}

fn center_distance(image: &RgbImage, x: u32, y: u32) -> f64 {
    let cx = f64::from(image.width()) / 2.0;
    let cy = f64::from(image.height()) / 2.0;
    (f64::from(x) + 0.5 - cx).hypot(f64::from(y) + 0.5 - cy)
}

fn background_chroma(image: &RgbImage) -> (f64, f64) {
    let (mut su, mut sv) = (0.0, 0.0);
    for y in 0..image.height() {
        for x in 0..image.width() {
            if center_distance(image, x, y) > BACKGROUND_RADIUS {
                let (u, v) = chroma(image.pixel(x, y));
                su += u;
                sv += v;
            }
        }
    }
    (su, sv)
}

fn background_tint(image: &RgbImage) -> (f64, f64) {
    let (u, v) = background_chroma(image);
    let n = u.hypot(v);
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (u / n, v / n)
    }
}

/// Mean Rec. 601 luma in [0, 1].
pub fn mean_luminance(image: &RgbImage) -> f64 {
    let n = f64::from(image.width()) * f64::from(image.height());
    image.pixels().map(luma).sum::<f64>() / n
}

/// Angle (radians, in (-π, π]) of the mean background chroma.
pub fn hue_angle(image: &RgbImage) -> f64 {
    let (u, v) = background_chroma(image);
    v.atan2(u)
}

/// Per-column background chroma strength along the background tint, from the
/// top and bottom rows (outside any disc).
fn stripe_profile(image: &RgbImage, tint: (f64, f64)) -> Vec<f64> {
    let rows: Vec<u32> =
        (0..image.height()).filter(|y| *y < STRIPE_ROWS || *y >= image.height() - STRIPE_ROWS).collect();
    (0..image.width())
        .map(|x| {
            rows.iter()
                .map(|y| {
                    let (u, v) = chroma(image.pixel(x, *y));
                    u * tint.0 + v * tint.1
                })
                .sum::<f64>()
                / rows.len() as f64
        })
        .collect()
}

/// Minimizes `loss` over `[lo, hi]` with a coarse grid followed by a fine
/// grid around the coarse optimum.
fn grid_minimize(lo: f64, hi: f64, coarse: f64, fine: f64, loss: impl Fn(f64) -> f64) -> f64 {
    let argmin = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| (lo + i as f64 * step).min(hi))
            .map(|x| (x, loss(x)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(lo, |(x, _)| x)
    };
    let best = argmin(lo, hi, coarse);
    argmin((best - coarse).max(lo), (best + coarse).min(hi), fine)
}

/// Radius of the centered disc tinted against the background hue.
///
/// Pixels near the center are fitted by least squares to the rendering
/// model: the column's background chroma (from the stripe rows) scaled by
/// `1 − 2·coverage`, with coverage the soft pixel-in-disc fraction.
pub fn disc_radius(image: &RgbImage) -> f64 {
    let tint = background_tint(image);
    let reference = stripe_profile(image, tint);
    let mut pixels = Vec::new();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let dist = center_distance(image, x, y);
            if dist <= BACKGROUND_RADIUS {
                let (u, v) = chroma(image.pixel(x, y));
                pixels.push((dist, u * tint.0 + v * tint.1, reference[x as usize]));
            }
        }
    }
    let loss = |radius: f64| {
        pixels
            .iter()
            .map(|(dist, observed, background)| {
                let coverage = (radius - dist + 0.5).clamp(0.0, 1.0);
                let residual = observed - background * (1.0 - 2.0 * coverage);
                residual * residual
            })
            .sum::<f64>()
    };
    grid_minimize(0.0, BACKGROUND_RADIUS, RADIUS_COARSE_STEP, RADIUS_FINE_STEP, loss)
}

/// Horizontal stripe frequency in cycles per image width.
///
/// The column profile of the stripe rows is fitted by least squares to
/// `c·(1 + depth·sin(2πf·x/width))` over `f`, with `c` solved in closed form
/// for each candidate.
pub fn stripe_frequency(image: &RgbImage) -> f64 {
    let profile = stripe_profile(image, background_tint(image));
    let width = profile.len() as f64;
    let loss = |frequency: f64| {
        let (mut pg, mut gg) = (0.0, 0.0);
        for (x, p) in profile.iter().enumerate() {
            let g = 1.0 + STRIPE_DEPTH * (2.0 * PI * frequency * (x as f64 + 0.5) / width).sin();
            pg += p * g;
            gg += g * g;
        }
        -(pg * pg) / gg
    };
    grid_minimize(0.0, width / 2.0, FREQUENCY_COARSE_STEP, FREQUENCY_FINE_STEP, loss)
}

/// Whether a sequence of readouts rises along a trajectory.
///
/// Consecutive readouts must strictly increase unless either step was
/// altered by truncation, in which case they may not fall by more than
/// `slack`.
pub fn is_monotone(readouts: &[f64], clipped: &[bool], slack: f64) -> bool {
    readouts.windows(2).zip(clipped.windows(2)).all(
        |(r, c)| {
            if c[0] || c[1] {
                r[1] >= r[0] - slack
            } else {
                r[1] > r[0]
            }
        },
    )
}
