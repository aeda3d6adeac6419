//! Dendrite-prediction learning for the two-compartment network.
//!
//! The label is injected into the output somata as a teaching current through
//! excitatory/inhibitory reversal potentials. The loss compares the nudged
//! somatic rate with the rate predicted from the dendrite,
//! `V* = g_B/(g_B+g_L)·V_b`, and the weights follow the printed chain rule:
//!
//! ```text
//! δ°_i     = r_max·a·[σ(V*_i) − σ(V_i)]·σ'(V*_i)        a = g_B/(g_B+g_L)
//! ∂L/∂w°_ij = δ°_i·r_j
//! ∂L/∂w^h_ij = Σ_k δ°_k·w°_ki·r_max·a·σ'(V^h_i)·V^PSP_j
//! ```
//!
//! This is not the exact gradient of `L` (it differentiates through `V*` only
//! and carries a single `r_max`); [`fd_output_gradient`] reports the exact one
//! for comparison.

use crate::neuro::{layer_forward, sigmoid, sigmoid_prime, CompartmentLayer, CompartmentParams, ForwardTrace, NeuroError};
use crate::rng;
use ndarray::{Array1, Array2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("label {label} outside [0, {n_classes})")]
    Label { label: usize, n_classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Neuro(#[from] NeuroError),
}

fn shape(msg: impl Into<String>) -> TrainError {
    TrainError::Shape(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeachingParams {
    /// Excitatory reversal potential (mV).
    pub e_e: f64,
    /// Inhibitory reversal potential (mV).
    pub e_i: f64,
    /// Somatic membrane resistance.
    pub r_b: f64,
}

impl Default for TeachingParams {
    fn default() -> Self {
        Self {
            e_e: 8.0,
            e_i: -8.0,
            r_b: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeachingSignal {
    /// Potential added to each output soma (mV).
    pub v_inject: Array1<f64>,
}

/// Label unit gets `E_E - V`, every other unit `E_I - V`, scaled by `r_B`.
pub fn teaching_signal(label: usize, v_soma: &Array1<f64>, teach: &TeachingParams) -> Result<TeachingSignal, TrainError> {
    if label >= v_soma.len() {
        return Err(TrainError::Label {
            label,
            n_classes: v_soma.len(),
        });
    }
    let v_inject = v_soma
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let reversal = if i == label { teach.e_e } else { teach.e_i };
            teach.r_b * (reversal - v)
        })
        .collect();
    Ok(TeachingSignal { v_inject })
}

/// Fixed point of `τ_L dV/dt = -V + (g_B/g_L)(V_b - V) + V_I - V`.
pub fn nudged_soma(v_basal: &Array1<f64>, v_inject: &Array1<f64>, params: &CompartmentParams) -> Array1<f64> {
    let ratio = params.g_b / params.g_l;
    (v_basal * ratio + v_inject) / (2.0 + ratio)
}

/// `½ Σ (r_max σ(V_i) − r_max σ(V*_i))²`.
pub fn loss(v_nudged: &Array1<f64>, v_star: &Array1<f64>, r_max: f64) -> f64 {
    0.5 * v_nudged
        .iter()
        .zip(v_star)
        .map(|(&v, &s)| {
            let d = r_max * (sigmoid(v) - sigmoid(s));
            d * d
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub delta: Array1<f64>,
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

pub fn output_delta(v_star: &Array1<f64>, v_nudged: &Array1<f64>, params: &CompartmentParams) -> Array1<f64> {
    let scale = params.r_max * params.attenuation();
    Zip::from(v_star)
        .and(v_nudged)
        .map_collect(|&s, &v| scale * (sigmoid(s) - sigmoid(v)) * sigmoid_prime(s))
}

pub fn grads_output(
    v_star: &Array1<f64>,
    v_nudged: &Array1<f64>,
    hidden_rates: &Array1<f64>,
    params: &CompartmentParams,
) -> Result<OutputGrads, TrainError> {
    if v_star.len() != v_nudged.len() {
        return Err(shape(format!(
            "V* has {} units, nudged V has {}",
            v_star.len(),
            v_nudged.len()
        )));
    }
    let delta = output_delta(v_star, v_nudged, params);
    let d_weights = outer(&delta, hidden_rates);
    Ok(OutputGrads {
        d_bias: delta.clone(),
        delta,
        d_weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGrads {
    pub d_weights: Array2<f64>,
    pub d_bias: Array1<f64>,
}

/// `Σ_k δ°_k w°_ki · r_max·a·σ'(V^h_i)`: the hidden-layer error before the
/// presynaptic factor.
pub fn hidden_delta(
    delta_out: &Array1<f64>,
    output_weights: &Array2<f64>,
    hidden_v_soma: &Array1<f64>,
    params: &CompartmentParams,
) -> Result<Array1<f64>, TrainError> {
    if output_weights.nrows() != delta_out.len() || output_weights.ncols() != hidden_v_soma.len() {
        return Err(shape(format!(
            "output weights {:?} vs δ° {} and hidden {}",
            output_weights.dim(),
            delta_out.len(),
            hidden_v_soma.len()
        )));
    }
    let back = output_weights.t().dot(delta_out);
    let scale = params.r_max * params.attenuation();
    Ok(Zip::from(&back)
        .and(hidden_v_soma)
        .map_collect(|&b, &v| b * scale * sigmoid_prime(v)))
}

pub fn grads_hidden(
    delta_out: &Array1<f64>,
    output_weights: &Array2<f64>,
    hidden_v_soma: &Array1<f64>,
    psp: &Array1<f64>,
    params: &CompartmentParams,
) -> Result<HiddenGrads, TrainError> {
    let d_bias = hidden_delta(delta_out, output_weights, hidden_v_soma, params)?;
    Ok(HiddenGrads {
        d_weights: outer(&d_bias, psp),
        d_bias,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        row.scaled_add(ai, b);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Hidden and output two-compartment layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub hidden: CompartmentLayer,
    pub output: CompartmentLayer,
}

fn glorot(n_in: usize, n_out: usize, params: CompartmentParams, rng: &mut impl Rng) -> CompartmentLayer {
    let a = (6.0 / (n_in + n_out) as f64).sqrt();
    let mut layer = CompartmentLayer::zeros(n_in, n_out, params);
    layer.weights.mapv_inplace(|_| rng.random_range(-a..=a));
    layer
}

impl Network {
    /// Uniform `[-a, a]` weights with `a = √(6/(fan_in + fan_out))`, zero biases.
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize, params: CompartmentParams, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x1417]);
        let hidden = glorot(n_in, n_hidden, params, &mut r);
        let output = glorot(n_hidden, n_out, params, &mut r);
        Self { hidden, output }
    }

    pub fn n_in(&self) -> usize {
        self.hidden.n_in()
    }
    pub fn n_hidden(&self) -> usize {
        self.hidden.n_out()
    }
    pub fn n_out(&self) -> usize {
        self.output.n_out()
    }

    pub fn forward(&self, psp: &Array1<f64>) -> Result<(ForwardTrace, ForwardTrace), TrainError> {
        let h = layer_forward(psp, &self.hidden)?;
        let o = layer_forward(&h.rates, &self.output)?;
        Ok((h, o))
    }

    /// Index of the highest output rate; ties go to the lowest index.
    pub fn predict(&self, psp: &Array1<f64>) -> Result<usize, TrainError> {
        Ok(argmax(&self.forward(psp)?.1.rates))
    }
}

pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Encoded input of one image: the presynaptic PSP vector and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub psp: Array1<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
    pub loss_mean: f64,
}

impl Metrics {
    fn from_counts(n_correct: usize, n_total: usize, loss_sum: f64) -> Self {
        Self {
            accuracy: n_correct as f64 / n_total as f64,
            n_correct,
            n_total,
            loss_mean: loss_sum / n_total as f64,
        }
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden_w: Array2<f64>,
    pub hidden_b: Array1<f64>,
    pub output_w: Array2<f64>,
    pub output_b: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            hidden_w: Array2::zeros(net.hidden.weights.dim()),
            hidden_b: Array1::zeros(net.hidden.bias.len()),
            output_w: Array2::zeros(net.output.weights.dim()),
            output_b: Array1::zeros(net.output.bias.len()),
        }
    }

    fn fill(&mut self, x: f64) {
        self.hidden_w.fill(x);
        self.hidden_b.fill(x);
        self.output_w.fill(x);
        self.output_b.fill(x);
    }

    fn scale(&mut self, s: f64) {
        self.hidden_w *= s;
        self.hidden_b *= s;
        self.output_w *= s;
        self.output_b *= s;
    }
}

/// Forward pass with teaching, loss, and the rule gradients of one sample
/// added into `acc`. Returns `(loss, predicted class)`.
pub fn accumulate_sample(
    net: &Network,
    sample: &EncodedSample,
    teach: &TeachingParams,
    acc: &mut Gradients,
) -> Result<(f64, usize), TrainError> {
    let (h, o) = net.forward(&sample.psp)?;
    let predicted = argmax(&o.rates);
    let signal = teaching_signal(sample.label, &o.v_soma, teach)?;
    let v_nudged = nudged_soma(&o.v_basal, &signal.v_inject, &net.output.params);
    let l = loss(&v_nudged, &o.v_soma, net.output.params.r_max);

    let delta = output_delta(&o.v_soma, &v_nudged, &net.output.params);
    for (mut row, &d) in acc.output_w.rows_mut().into_iter().zip(&delta) {
        row.scaled_add(d, &h.rates);
    }
    acc.output_b += &delta;

    let dh = hidden_delta(&delta, &net.output.weights, &h.v_soma, &net.hidden.params)?;
    for (mut row, &d) in acc.hidden_w.rows_mut().into_iter().zip(&dh) {
        if d != 0.0 {
            row.scaled_add(d, &sample.psp);
        }
    }
    acc.hidden_b += &dh;
    Ok((l, predicted))
}

/// Loss of one sample under the current parameters.
pub fn sample_loss(net: &Network, sample: &EncodedSample, teach: &TeachingParams) -> Result<f64, TrainError> {
    let (_, o) = net.forward(&sample.psp)?;
    let signal = teaching_signal(sample.label, &o.v_soma, teach)?;
    let v_nudged = nudged_soma(&o.v_basal, &signal.v_inject, &net.output.params);
    Ok(loss(&v_nudged, &o.v_soma, net.output.params.r_max))
}

/// Central finite-difference gradient of the full loss with respect to the
/// output weights. Diagnostic only; training never uses it.
pub fn fd_output_gradient(
    net: &Network,
    sample: &EncodedSample,
    teach: &TeachingParams,
    h: f64,
) -> Result<Array2<f64>, TrainError> {
    let mut probe = net.clone();
    let mut grad = Array2::zeros(net.output.weights.dim());
    for idx in ndarray::indices(net.output.weights.dim()) {
        let w = net.output.weights[idx];
        probe.output.weights[idx] = w + h;
        let up = sample_loss(&probe, sample, teach)?;
        probe.output.weights[idx] = w - h;
        let down = sample_loss(&probe, sample, teach)?;
        probe.output.weights[idx] = w;
        grad[idx] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Adam moments for every parameter block of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOptimizer {
    pub cfg: AdamConfig,
    pub hidden_w: AdamState,
    pub hidden_b: AdamState,
    pub output_w: AdamState,
    pub output_b: AdamState,
}

impl NetworkOptimizer {
    pub fn new(net: &Network, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            hidden_w: AdamState::new(net.hidden.weights.len()),
            hidden_b: AdamState::new(net.hidden.bias.len()),
            output_w: AdamState::new(net.output.weights.len()),
            output_b: AdamState::new(net.output.bias.len()),
        }
    }

    pub fn step(&mut self, net: &mut Network, g: &Gradients) -> Result<(), TrainError> {
        fn flat<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are contiguous")
        }
        fn flat_ref<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("gradients are contiguous")
        }
        adam_step(
            flat(&mut net.hidden.weights),
            flat_ref(&g.hidden_w),
            &mut self.hidden_w,
            &self.cfg,
        )?;
        adam_step(
            flat(&mut net.hidden.bias),
            flat_ref(&g.hidden_b),
            &mut self.hidden_b,
            &self.cfg,
        )?;
        adam_step(
            flat(&mut net.output.weights),
            flat_ref(&g.output_w),
            &mut self.output_w,
            &self.cfg,
        )?;
        adam_step(
            flat(&mut net.output.bias),
            flat_ref(&g.output_b),
            &mut self.output_b,
            &self.cfg,
        )?;
        Ok(())
    }
}

/// Network, optimizer state, and teaching constants for a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Network,
    pub optimizer: NetworkOptimizer,
    pub teach: TeachingParams,
    grads: Gradients,
}

impl Trainer {
    pub fn new(net: Network, adam: AdamConfig, teach: TeachingParams) -> Self {
        let optimizer = NetworkOptimizer::new(&net, adam);
        let grads = Gradients::zeros_like(&net);
        Self {
            net,
            optimizer,
            teach,
            grads,
        }
    }

    /// One shuffled pass with per-batch mean gradients. Accuracy and loss are
    /// those seen before each batch's update.
    pub fn train_epoch(&mut self, samples: &[EncodedSample], batch_size: usize, seed: u64) -> Result<Metrics, TrainError> {
        if samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(TrainError::BatchSize);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0x5417]));

        let (mut n_correct, mut loss_sum) = (0usize, 0.0);
        for batch in order.chunks(batch_size) {
            self.grads.fill(0.0);
            for &i in batch {
                let (l, predicted) = accumulate_sample(&self.net, &samples[i], &self.teach, &mut self.grads)?;
                loss_sum += l;
                n_correct += usize::from(predicted == samples[i].label);
            }
            self.grads.scale(1.0 / batch.len() as f64);
            self.optimizer.step(&mut self.net, &self.grads)?;
        }
        if !loss_sum.is_finite() {
            return Err(TrainError::NonFinite("training loss"));
        }
        Ok(Metrics::from_counts(n_correct, samples.len(), loss_sum))
    }
}

/// Accuracy and mean teaching loss; the network is not modified.
pub fn evaluate(net: &Network, samples: &[EncodedSample], teach: &TeachingParams) -> Result<Metrics, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_sample = samples
        .par_iter()
        .map(|s| {
            let (_, o) = net.forward(&s.psp)?;
            let signal = teaching_signal(s.label, &o.v_soma, teach)?;
            let v_nudged = nudged_soma(&o.v_basal, &signal.v_inject, &net.output.params);
            let l = loss(&v_nudged, &o.v_soma, net.output.params.r_max);
            Ok((argmax(&o.rates) == s.label, l))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let n_correct = per_sample.iter().filter(|(c, _)| *c).count();
    let loss_sum = per_sample.iter().map(|(_, l)| l).sum();
    Ok(Metrics::from_counts(n_correct, samples.len(), loss_sum))
}

pub fn predict(net: &Network, sample: &EncodedSample) -> Result<usize, TrainError> {
    net.predict(&sample.psp)
}
