//! Superposed image representation and its conversion into phase-shifted
//! Poisson spike trains.
//!
//! Each pixel mixes its clean intensity `x` with the complement `1 - x`
//! through an inversion angle θ: `I = x·cos θ + (1 - x)·sin θ`. Measuring the
//! pixel circuit yields the inverted/original probabilities `(P, Q)`; the
//! firing phase is `φ = arctan(P/Q)` (optionally aggregated over the image) and
//! the firing rate is recovered from the blended intensity as
//! `r = (I - sin φ)/(cos φ - sin φ)`. The phase delays the spiking window by
//! `t0 = φ/(π/2)·(T - T_sp)`.

use crate::qcircuit::{self, Parity};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Below this `|cos φ - sin φ|` the rate formula is replaced by its limit 0.5.
pub const SINGULAR_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("image is {width}x{height} but {field} has {len} values")]
    Shape {
        width: usize,
        height: usize,
        field: &'static str,
        len: usize,
    },
    #[error("pixel {index}: intensity {value} outside [0, 1]")]
    Intensity { index: usize, value: f64 },
    #[error("pixel {index}: inversion angle {value} outside [0, pi/2]")]
    Angle { index: usize, value: f64 },
    #[error("phase {0} outside [0, pi/2]")]
    Phase(f64),
    #[error("invalid outcome probabilities P={p}, Q={q}")]
    Probabilities { p: f64, q: f64 },
    #[error("cannot aggregate an empty phase sequence")]
    EmptyPhases,
    #[error("rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("per-step spike probability {0} exceeds 1; reduce dt or r_max")]
    SpikeProbability(f64),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Circuit(#[from] qcircuit::CircuitError),
}

/// How phases are read out of the pixel circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Measurement {
    /// Analytic `(sin²θ, cos²θ)`.
    #[default]
    Exact,
    /// Shot-sampled frequencies; per-pixel streams are keyed by `seed`.
    Sampled { shots: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeConfig {
    /// Processing period `T` in ms.
    pub t_window: f64,
    /// Spiking window `T_sp` in ms.
    pub t_spike: f64,
    /// Maximum input firing rate in Hz.
    pub r_max_hz: f64,
    /// Simulation step in ms.
    pub dt: f64,
    pub measurement: Measurement,
    /// Multiplier on the median phase (1.0 plain median, 0.5 halves it).
    pub phase_median_scale: f64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            t_window: 50.0,
            t_spike: 20.0,
            r_max_hz: 250.0,
            dt: 1.0,
            measurement: Measurement::Exact,
            phase_median_scale: 1.0,
        }
    }
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        let bad = |m: &str| Err(EncodeError::Config(m.to_string()));
        if !(self.t_spike > 0.0 && self.t_spike <= self.t_window) {
            return bad("need 0 < T_sp <= T");
        }
        if !(self.dt > 0.0 && self.dt <= self.t_spike) {
            return bad("need 0 < dt <= T_sp");
        }
        if !(self.r_max_hz >= 0.0 && self.r_max_hz.is_finite()) {
            return bad("r_max must be a non-negative finite rate");
        }
        if !(self.phase_median_scale >= 0.0 && self.phase_median_scale <= 1.0) {
            return bad("phase_median_scale must lie in [0, 1]");
        }
        if let Measurement::Sampled { shots: 0, .. } = self.measurement {
            return bad("sampled measurement needs shots >= 1");
        }
        let p = self.spike_probability(1.0);
        if p > 1.0 {
            return Err(EncodeError::SpikeProbability(p));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_window / self.dt).round() as usize
    }

    pub fn n_spike_steps(&self) -> usize {
        (self.t_spike / self.dt).round() as usize
    }

    /// Per-step spike probability `rate·r_max·dt` (dt converted to seconds).
    pub fn spike_probability(&self, rate: f64) -> f64 {
        rate * self.r_max_hz * self.dt * 1e-3
    }

    /// Window start in steps: `round(φ/(π/2)·(T - T_sp)/dt)`.
    pub fn onset_step(&self, phi: f64) -> usize {
        let t0 = (phi / FRAC_PI_2) * (self.t_window - self.t_spike) / self.dt;
        (t0.round().max(0.0) as usize).min(self.n_steps() - self.n_spike_steps())
    }
}

/// Classical image plus per-pixel inversion angles and blended intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperposedImage {
    width: usize,
    height: usize,
    clean: Vec<f64>,
    theta: Vec<f64>,
    blended: Vec<f64>,
}

/// `x·cos θ + (1 - x)·sin θ`.
pub fn blend(x: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    x * c + (1.0 - x) * s
}

fn check_len(width: usize, height: usize, field: &'static str, v: &[f64]) -> Result<(), EncodeError> {
    if v.len() != width * height {
        return Err(EncodeError::Shape {
            width,
            height,
            field,
            len: v.len(),
        });
    }
    Ok(())
}

fn check_unit(v: &[f64]) -> Result<(), EncodeError> {
    match v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(index) => Err(EncodeError::Intensity { index, value: v[index] }),
        None => Ok(()),
    }
}

fn check_angles(v: &[f64]) -> Result<(), EncodeError> {
    match v.iter().position(|t| !(0.0..=FRAC_PI_2).contains(t)) {
        Some(index) => Err(EncodeError::Angle { index, value: v[index] }),
        None => Ok(()),
    }
}

impl SuperposedImage {
    /// Blends `clean` with its complement pixel by pixel.
    pub fn superpose(width: usize, height: usize, clean: &[f64], theta: &[f64]) -> Result<Self, EncodeError> {
        check_len(width, height, "clean", clean)?;
        check_len(width, height, "theta", theta)?;
        check_unit(clean)?;
        check_angles(theta)?;
        let blended = clean.iter().zip(theta).map(|(&x, &t)| blend(x, t)).collect();
        Ok(Self {
            width,
            height,
            clean: clean.to_vec(),
            theta: theta.to_vec(),
            blended,
        })
    }

    /// Uses an externally produced blended field (e.g. a noisy observation)
    /// that need not equal the blend of `clean` and `theta` exactly.
    pub fn with_blended(
        width: usize,
        height: usize,
        clean: Vec<f64>,
        theta: Vec<f64>,
        blended: Vec<f64>,
    ) -> Result<Self, EncodeError> {
        check_len(width, height, "clean", &clean)?;
        check_len(width, height, "theta", &theta)?;
        check_len(width, height, "blended", &blended)?;
        check_unit(&clean)?;
        check_unit(&blended)?;
        check_angles(&theta)?;
        Ok(Self {
            width,
            height,
            clean,
            theta,
            blended,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn n_pixels(&self) -> usize {
        self.clean.len()
    }
    pub fn clean(&self) -> &[f64] {
        &self.clean
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn blended(&self) -> &[f64] {
        &self.blended
    }
}

/// `arctan(P/Q)` in `[0, π/2]`, with `P` the inverted-outcome probability.
pub fn pixel_phase(p: f64, q: f64) -> Result<f64, EncodeError> {
    if !(p >= 0.0 && q >= 0.0 && p + q > 0.0) || !p.is_finite() || !q.is_finite() {
        return Err(EncodeError::Probabilities { p, q });
    }
    Ok(p.atan2(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Each pixel keeps its own phase.
    PerPixel,
    /// One global phase: the arithmetic mean.
    Mean,
    /// One global phase: the lower median, times `phase_median_scale`.
    Median,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_pixel" | "per-pixel" => Ok(Self::PerPixel),
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(format!("unknown aggregation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    pub per_pixel: Vec<f64>,
    pub mode: AggregationMode,
    /// Set for the global modes.
    pub global: Option<f64>,
}

impl PhaseEstimate {
    /// Phase used to encode pixel `i`.
    pub fn phase(&self, i: usize) -> f64 {
        self.global.unwrap_or(self.per_pixel[i])
    }
}

pub fn aggregate_phase(per_pixel: &[f64], mode: AggregationMode, median_scale: f64) -> Result<PhaseEstimate, EncodeError> {
    if per_pixel.is_empty() {
        return Err(EncodeError::EmptyPhases);
    }
    if let Some(&bad) = per_pixel.iter().find(|p| !(0.0..=FRAC_PI_2).contains(*p)) {
        return Err(EncodeError::Phase(bad));
    }
    let global = match mode {
        AggregationMode::PerPixel => None,
        AggregationMode::Mean => Some(per_pixel.iter().sum::<f64>() / per_pixel.len() as f64),
        AggregationMode::Median => {
            let mut sorted = per_pixel.to_vec();
            sorted.sort_by(f64::total_cmp);
            Some(sorted[(sorted.len() - 1) / 2] * median_scale)
        }
    };
    Ok(PhaseEstimate {
        per_pixel: per_pixel.to_vec(),
        mode,
        global: global.map(|g| g.clamp(0.0, FRAC_PI_2)),
    })
}

/// `(I - sin φ)/(cos φ - sin φ)` clamped to `[0, 1]`; 0.5 at the singular
/// point `φ = π/4`.
pub fn recover_rate(blended: f64, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    let denom = c - s;
    if denom.abs() < SINGULAR_EPS {
        return 0.5;
    }
    ((blended - s) / denom).clamp(0.0, 1.0)
}

/// One pixel's spike train over `T/dt` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    pub t0: usize,
    pub spikes: Vec<bool>,
}

impl SpikeTrain {
    pub fn count(&self) -> usize {
        self.spikes.iter().filter(|&&s| s).count()
    }
}

fn check_rate_phase(rate: f64, phi: f64) -> Result<(), EncodeError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(EncodeError::Rate(rate));
    }
    if !(0.0..=FRAC_PI_2).contains(&phi) {
        return Err(EncodeError::Phase(phi));
    }
    Ok(())
}

/// Fills `out` (length `T/dt`) with a Bernoulli-per-step train confined to
/// `[t0, t0 + T_sp/dt)`. Returns `t0`.
pub fn fill_spike_train<R: Rng + ?Sized>(
    rate: f64,
    phi: f64,
    cfg: &EncodeConfig,
    rng: &mut R,
    out: &mut [bool],
) -> Result<usize, EncodeError> {
    check_rate_phase(rate, phi)?;
    let p = cfg.spike_probability(rate);
    if p > 1.0 {
        return Err(EncodeError::SpikeProbability(p));
    }
    debug_assert_eq!(out.len(), cfg.n_steps());
    out.fill(false);
    let t0 = cfg.onset_step(phi);
    if p > 0.0 {
        for slot in &mut out[t0..t0 + cfg.n_spike_steps()] {
            *slot = rng.random::<f64>() < p;
        }
    }
    Ok(t0)
}

pub fn gen_spike_train(rate: f64, phi: f64, cfg: &EncodeConfig, seed: u64) -> Result<SpikeTrain, EncodeError> {
    let mut spikes = vec![false; cfg.n_steps()];
    let mut r = rng::stream(seed, &[]);
    let t0 = fill_spike_train(rate, phi, cfg, &mut r, &mut spikes)?;
    Ok(SpikeTrain { t0, spikes })
}

/// Spike trains for a whole image, plus the per-pixel quantities that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    pub n_pixels: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// Row-major `n_pixels × n_steps`.
    pub spikes: Vec<bool>,
    pub t0: Vec<usize>,
    pub rates: Vec<f64>,
    pub phases: PhaseEstimate,
    /// Per-pixel `(P, Q)` as measured.
    pub outcomes: Vec<(f64, f64)>,
}

impl SpikeTensor {
    pub fn train(&self, pixel: usize) -> &[bool] {
        &self.spikes[pixel * self.n_steps..(pixel + 1) * self.n_steps]
    }

    pub fn total_spikes(&self) -> usize {
        self.spikes.iter().filter(|&&s| s).count()
    }
}

/// Per-pixel `(P, Q)` for an image under the configured measurement mode.
pub fn measure_image(img: &SuperposedImage, cfg: &EncodeConfig, seed: u64) -> Result<Vec<(f64, f64)>, EncodeError> {
    match cfg.measurement {
        Measurement::Exact => Ok(img.theta().iter().map(|&t| qcircuit::exact_pq(t)).collect()),
        Measurement::Sampled { shots, seed: mseed } => img
            .clean()
            .iter()
            .zip(img.theta())
            .enumerate()
            .map(|(i, (&x, &t))| {
                let x_bit = u8::from(x >= 0.5);
                let px = qcircuit::build_pixel_state(x_bit, t, Parity::of_index(i))?;
                let counts = px.measure(shots, rng::derive_seed(mseed, &[seed, i as u64]))?;
                Ok(counts.frequencies())
            })
            .collect(),
    }
}

/// Full image encoding: measure, estimate phases, recover rates, emit trains.
/// Pixel `i` draws its spikes from the stream keyed by `(seed, i)`.
pub fn encode_image(
    img: &SuperposedImage,
    mode: AggregationMode,
    cfg: &EncodeConfig,
    seed: u64,
) -> Result<SpikeTensor, EncodeError> {
    cfg.validate()?;
    let outcomes = measure_image(img, cfg, seed)?;
    let per_pixel = outcomes
        .iter()
        .map(|&(p, q)| pixel_phase(p, q))
        .collect::<Result<Vec<_>, _>>()?;
    let phases = aggregate_phase(&per_pixel, mode, cfg.phase_median_scale)?;

    let n_steps = cfg.n_steps();
    let n = img.n_pixels();
    let mut spikes = vec![false; n * n_steps];
    let mut t0 = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for (i, chunk) in spikes.chunks_mut(n_steps).enumerate() {
        let phi = phases.phase(i);
        let rate = recover_rate(img.blended()[i], phi);
        let mut r = rng::stream(seed, &[i as u64]);
        t0.push(fill_spike_train(rate, phi, cfg, &mut r, chunk)?);
        rates.push(rate);
    }
    Ok(SpikeTensor {
        n_pixels: n,
        n_steps,
        dt: cfg.dt,
        spikes,
        t0,
        rates,
        phases,
        outcomes,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8};

    #[test]
    fn superpose_examples() {
        let img = SuperposedImage::superpose(3, 1, &[1.0, 0.3, 0.2], &[FRAC_PI_2, 0.0, FRAC_PI_4]).unwrap();
        assert_abs_diff_eq!(img.blended()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(img.blended()[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(img.blended()[2], 0.70711, epsilon = 1e-5);

        assert!(matches!(
            SuperposedImage::superpose(2, 1, &[0.1], &[0.0]),
            Err(EncodeError::Shape { field: "clean", .. })
        ));
        assert!(matches!(
            SuperposedImage::superpose(1, 1, &[0.1], &[2.0]),
            Err(EncodeError::Angle { index: 0, .. })
        ));
        assert!(matches!(
            SuperposedImage::superpose(1, 1, &[1.5], &[0.0]),
            Err(EncodeError::Intensity { .. })
        ));
    }

    #[test]
    fn amplitude_constraint_holds_per_pixel() {
        for k in 0..=32 {
            let t = k as f64 * FRAC_PI_2 / 32.0;
            let (p, q) = qcircuit::exact_pq(t);
            assert_abs_diff_eq!(p + q, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pixel_phase_examples() {
        assert_eq!(pixel_phase(0.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(pixel_phase(0.5, 0.5).unwrap(), 0.78540, epsilon = 1e-5);
        let (p, q) = qcircuit::exact_pq(FRAC_PI_8);
        // arctan(0.171573) evaluated directly.
        assert_abs_diff_eq!(pixel_phase(p, q).unwrap(), 0.169918, epsilon = 1e-6);
        assert_abs_diff_eq!(pixel_phase(1.0, 0.0).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert!(pixel_phase(0.0, 0.0).is_err());
        assert!(pixel_phase(-0.1, 1.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let e = aggregate_phase(&[0.1, 0.2], AggregationMode::PerPixel, 1.0).unwrap();
        assert_eq!(e.per_pixel, vec![0.1, 0.2]);
        assert_eq!((e.phase(0), e.phase(1)), (0.1, 0.2));
        assert_eq!(e.global, None);

        let mut phases = vec![0.0; 784];
        // 30% of 784 is not an integer; use 235 pixels and compare to the exact mean.
        for p in phases.iter_mut().take(235) {
            *p = FRAC_PI_2;
        }
        let e = aggregate_phase(&phases, AggregationMode::Mean, 1.0).unwrap();
        assert_abs_diff_eq!(e.global.unwrap(), 235.0 / 784.0 * FRAC_PI_2, epsilon = 1e-12);
        // 0.3·π/2 to within the 1/784 quantization of the pixel count.
        assert_abs_diff_eq!(e.global.unwrap(), 0.47124, epsilon = FRAC_PI_2 / 784.0);

        let e = aggregate_phase(&[0.0; 10], AggregationMode::Median, 1.0).unwrap();
        assert_eq!(e.global, Some(0.0));
        let e = aggregate_phase(&[0.4, 0.1, 0.3, 0.2], AggregationMode::Median, 1.0).unwrap();
        assert_eq!(e.global, Some(0.2));
        let e = aggregate_phase(&[0.4, 0.1, 0.3, 0.2], AggregationMode::Median, 0.5).unwrap();
        assert_eq!(e.global, Some(0.1));

        assert_eq!(
            aggregate_phase(&[], AggregationMode::Mean, 1.0),
            Err(EncodeError::EmptyPhases)
        );
    }

    #[test]
    fn recover_rate_examples() {
        assert_abs_diff_eq!(recover_rate(0.8, 0.0), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(recover_rate(0.2, FRAC_PI_2), 0.8, epsilon = 1e-12);
        // (0.9 - sin(π/8))/(cos(π/8) - sin(π/8)) evaluated directly.
        assert_abs_diff_eq!(recover_rate(0.9, FRAC_PI_8), 0.955876, epsilon = 1e-6);
        for b in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(recover_rate(b, FRAC_PI_4), 0.5);
        }
    }

    #[test]
    fn singular_limit_matches_neighbouring_evaluations() {
        let raw = |b: f64, phi: f64| (b - phi.sin()) / (phi.cos() - phi.sin());
        let b = FRAC_1_SQRT_2;
        for d in [1e-4, -1e-4] {
            assert_abs_diff_eq!(raw(b, FRAC_PI_4 + d), 0.5, epsilon = 1e-4);
        }
        assert_eq!(recover_rate(b, FRAC_PI_4), 0.5);
    }

    #[test]
    fn spike_train_examples() {
        let cfg = EncodeConfig::default();
        let t = gen_spike_train(0.0, 0.3, &cfg, 1).unwrap();
        assert_eq!(t.count(), 0);

        for seed in 0..50 {
            let t = gen_spike_train(1.0, 0.0, &cfg, seed).unwrap();
            assert_eq!(t.t0, 0);
            assert!(t.spikes[20..].iter().all(|&s| !s));
        }

        let mut total = 0usize;
        for seed in 0..1000 {
            let t = gen_spike_train(1.0, FRAC_PI_2, &cfg, seed).unwrap();
            assert_eq!(t.t0, 30);
            assert!(t.spikes[..30].iter().all(|&s| !s));
            total += t.count();
        }
        // Binomial(20, 0.25): mean 5, sd sqrt(3.75)/sqrt(1000) for the average.
        let mean = total as f64 / 1000.0;
        assert!((mean - 5.0).abs() < 4.0 * (3.75f64 / 1000.0).sqrt(), "mean {mean}");

        let hot = EncodeConfig {
            r_max_hz: 2000.0,
            ..EncodeConfig::default()
        };
        assert!(matches!(
            gen_spike_train(1.0, 0.0, &hot, 0),
            Err(EncodeError::SpikeProbability(_))
        ));
        assert!(matches!(gen_spike_train(1.2, 0.0, &cfg, 0), Err(EncodeError::Rate(_))));
    }

    fn uniform_image(clean: &[f64], theta: f64) -> SuperposedImage {
        SuperposedImage::superpose(clean.len(), 1, clean, &vec![theta; clean.len()]).unwrap()
    }

    #[test]
    fn encode_image_examples() {
        let cfg = EncodeConfig::default();
        let clean = [0.0, 0.25, 0.5, 0.9, 1.0];

        let t = encode_image(&uniform_image(&clean, 0.0), AggregationMode::PerPixel, &cfg, 3).unwrap();
        assert!(t.t0.iter().all(|&x| x == 0));
        for (r, x) in t.rates.iter().zip(clean) {
            assert_abs_diff_eq!(*r, x, epsilon = 1e-9);
        }

        let t = encode_image(&uniform_image(&clean, FRAC_PI_2), AggregationMode::PerPixel, &cfg, 3).unwrap();
        assert!(t.t0.iter().all(|&x| x == 30));
        for (r, x) in t.rates.iter().zip(clean) {
            assert_abs_diff_eq!(*r, x, epsilon = 1e-9);
        }

        let t = encode_image(&uniform_image(&clean, FRAC_PI_4), AggregationMode::PerPixel, &cfg, 3).unwrap();
        assert!(t.t0.iter().all(|&x| x == 15));
        assert!(t.rates.iter().all(|&r| r == 0.5));
    }

    #[test]
    fn sampled_measurement_is_seeded() {
        let cfg = EncodeConfig {
            measurement: Measurement::Sampled { shots: 100, seed: 9 },
            ..EncodeConfig::default()
        };
        let img = uniform_image(&[0.2, 0.8, 1.0], 0.6);
        let a = encode_image(&img, AggregationMode::Mean, &cfg, 4).unwrap();
        let b = encode_image(&img, AggregationMode::Mean, &cfg, 4).unwrap();
        assert_eq!(a, b);
        for &(p, q) in &a.outcomes {
            assert_abs_diff_eq!(p + q, 1.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn round_trip_at_zero_and_full_inversion(
            clean in prop::collection::vec(0.0f64..=1.0, 1..64),
            invert in any::<bool>(),
        ) {
            let theta = if invert { FRAC_PI_2 } else { 0.0 };
            let img = uniform_image(&clean, theta);
            let t = encode_image(&img, AggregationMode::PerPixel, &EncodeConfig::default(), 0).unwrap();
            for (r, x) in t.rates.iter().zip(&clean) {
                prop_assert!((r - x).abs() < 1e-9);
            }
        }

        #[test]
        fn blend_then_recover_is_identity_off_the_singular_band(
            x in 0.0f64..=1.0,
            theta in 0.0f64..=FRAC_PI_2,
        ) {
            prop_assume!((theta - FRAC_PI_4).abs() > 0.05);
            prop_assert!((recover_rate(blend(x, theta), theta) - x).abs() < 1e-9);
        }

        #[test]
        fn phase_is_strictly_increasing(a in 0.0f64..=FRAC_PI_2, b in 0.0f64..=FRAC_PI_2) {
            prop_assume!((a - b).abs() > 1e-9);
            let (pa, qa) = qcircuit::exact_pq(a);
            let (pb, qb) = qcircuit::exact_pq(b);
            let (fa, fb) = (pixel_phase(pa, qa).unwrap(), pixel_phase(pb, qb).unwrap());
            prop_assert_eq!(a < b, fa < fb);
        }

        #[test]
        fn spikes_stay_inside_their_window(
            clean in prop::collection::vec(0.0f64..=1.0, 1..40),
            theta in 0.0f64..=FRAC_PI_2,
            mode in prop_oneof![
                Just(AggregationMode::PerPixel),
                Just(AggregationMode::Mean),
                Just(AggregationMode::Median)
            ],
            seed in any::<u64>(),
        ) {
            let cfg = EncodeConfig::default();
            let t = encode_image(&uniform_image(&clean, theta), mode, &cfg, seed).unwrap();
            for i in 0..t.n_pixels {
                let t0 = t.t0[i];
                for (s, &spike) in t.train(i).iter().enumerate() {
                    if spike {
                        prop_assert!(s >= t0 && s < t0 + cfg.n_spike_steps());
                    }
                }
            }
            let again = encode_image(&uniform_image(&clean, theta), mode, &cfg, seed).unwrap();
            prop_assert_eq!(t, again);
        }
    }
}
