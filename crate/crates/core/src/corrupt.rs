//! Corruption regimes expressed as per-pixel inversion-angle fields.

use crate::encoder::{blend, EncodeError, SuperposedImage};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorruptError {
    #[error("inversion angle {0} outside [0, π/2]")]
    Theta(f64),
    #[error("flip probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("noise standard deviation {0} must be finite and non-negative")]
    Std(f64),
    #[error("unknown noise kind {0:?} (expected invert, flip or awgn)")]
    UnknownKind(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Invert,
    Flip,
    Awgn,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Invert, NoiseKind::Flip, NoiseKind::Awgn];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Invert => "invert",
            NoiseKind::Flip => "flip",
            NoiseKind::Awgn => "awgn",
        }
    }

    pub fn with_param(self, param: f64) -> Corruption {
        match self {
            NoiseKind::Invert => Corruption::Invert { theta: param },
            NoiseKind::Flip => Corruption::Flip { r: param },
            NoiseKind::Awgn => Corruption::Awgn { std: param },
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = CorruptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "invert" => Ok(NoiseKind::Invert),
            "flip" => Ok(NoiseKind::Flip),
            "awgn" => Ok(NoiseKind::Awgn),
            other => Err(CorruptError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    Invert { theta: f64 },
    Flip { r: f64 },
    Awgn { std: f64 },
}

impl Corruption {
    pub fn kind(&self) -> NoiseKind {
        match self {
            Corruption::Invert { .. } => NoiseKind::Invert,
            Corruption::Flip { .. } => NoiseKind::Flip,
            Corruption::Awgn { .. } => NoiseKind::Awgn,
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            Corruption::Invert { theta } => theta,
            Corruption::Flip { r } => r,
            Corruption::Awgn { std } => std,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptError> {
        match *self {
            Corruption::Invert { theta } if !(0.0..=FRAC_PI_2).contains(&theta) => Err(CorruptError::Theta(theta)),
            Corruption::Flip { r } if !(0.0..=1.0).contains(&r) => Err(CorruptError::Probability(r)),
            Corruption::Awgn { std } if !(std.is_finite() && std >= 0.0) => Err(CorruptError::Std(std)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub corruption: Corruption,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn apply(&self, width: usize, height: usize, clean: &[f64]) -> Result<SuperposedImage, CorruptError> {
        match self.corruption {
            Corruption::Invert { theta } => invert_background(width, height, clean, theta),
            Corruption::Flip { r } => flip_pixels(width, height, clean, r, self.seed),
            Corruption::Awgn { std } => awgn(width, height, clean, std, self.seed),
        }
    }
}

/// The same inversion angle on every pixel.
pub fn invert_background(width: usize, height: usize, clean: &[f64], theta: f64) -> Result<SuperposedImage, CorruptError> {
    Corruption::Invert { theta }.validate()?;
    Ok(SuperposedImage::superpose(width, height, clean, &vec![theta; clean.len()])?)
}

/// Each pixel is fully inverted with probability `r`, independently.
pub fn flip_pixels(width: usize, height: usize, clean: &[f64], r: f64, seed: u64) -> Result<SuperposedImage, CorruptError> {
    Corruption::Flip { r }.validate()?;
    let mut g = rng::stream(seed, &[0xf11b]);
    let theta: Vec<f64> = clean.iter().map(|_| if g.random_bool(r) { FRAC_PI_2 } else { 0.0 }).collect();
    Ok(SuperposedImage::superpose(width, height, clean, &theta)?)
}

/// Adds clamped Gaussian noise and assigns each pixel the inversion angle
/// whose blend reproduces the noisy value.
pub fn awgn(width: usize, height: usize, clean: &[f64], std: f64, seed: u64) -> Result<SuperposedImage, CorruptError> {
    Corruption::Awgn { std }.validate()?;
    let normal = Normal::new(0.0, std).map_err(|_| CorruptError::Std(std))?;
    let mut g = rng::stream(seed, &[0xa3c9]);
    let noisy: Vec<f64> = clean.iter().map(|&x| (x + normal.sample(&mut g)).clamp(0.0, 1.0)).collect();
    let theta = clean.iter().zip(&noisy).map(|(&x, &y)| solve_theta(x, y)).collect();
    Ok(SuperposedImage::with_blended(width, height, clean.to_vec(), theta, noisy)?)
}

pub const THETA_TOL: f64 = 1e-10;

/// Smallest `θ ∈ [0, π/2]` with `x·cos θ + (1-x)·sin θ = y`.
///
/// The blend rises from `x` to its maximum `√(x² + (1-x)²)` at
/// `θ* = atan((1-x)/x)` and falls to `1-x` at `π/2`. Unreachable targets
/// take whichever endpoint blends closest (ties to 0); `x = 0.5` maps to 0.
pub fn solve_theta(x: f64, y: f64) -> f64 {
    if x == 0.5 || y == x {
        return 0.0;
    }
    let peak_theta = (1.0 - x).atan2(x);
    let peak = x.hypot(1.0 - x);
    if y >= x && y <= peak {
        bisect(x, y, 0.0, peak_theta, true)
    } else if y >= 1.0 - x && y < x {
        bisect(x, y, peak_theta, FRAC_PI_2, false)
    } else if (y - (1.0 - x)).abs() < (y - x).abs() {
        FRAC_PI_2
    } else {
        0.0
    }
}

fn bisect(x: f64, y: f64, mut lo: f64, mut hi: f64, rising: bool) -> f64 {
    while hi - lo > THETA_TOL {
        let mid = 0.5 * (lo + hi);
        if (blend(x, mid) < y) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
