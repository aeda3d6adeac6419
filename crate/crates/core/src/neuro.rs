//! Time-differential convolution synapse and two-compartment membranes.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuroError {
    #[error("kernel parameters must be positive (tau={tau}, dt={dt}, T={t_window})")]
    Kernel { tau: f64, dt: f64, t_window: f64 },
    #[error("spike train has {got} steps, kernel expects {expected}")]
    TrainLength { expected: usize, got: usize },
    #[error("input has length {got}, layer expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("dt={dt} ms exceeds the Euler stability bound {bound} ms")]
    UnstableStep { dt: f64, bound: f64 },
}

/// Antisymmetric kernel `κ(t) = e^{-t/τ}` for `t > 0`, `-e^{t/τ}` for `t < 0`,
/// and `κ(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TckKernel {
    pub tau: f64,
    pub dt: f64,
    pub t_window: f64,
    /// `κ(k·dt)` for `k = -T/dt ..= T/dt`.
    pub samples: Vec<f64>,
    /// Weight of a spike in simulation step `s`, stamped at the bin midpoint
    /// `(s + ½)·dt` and referenced to the window centre `T/2`.
    step_weights: Vec<f64>,
}

pub fn kappa(t: f64, tau: f64) -> f64 {
    if t > 0.0 {
        (-t / tau).exp()
    } else if t < 0.0 {
        -(t / tau).exp()
    } else {
        0.0
    }
}

pub fn make_kernel(tau: f64, dt: f64, t_window: f64) -> Result<TckKernel, NeuroError> {
    if !(tau > 0.0 && dt > 0.0 && t_window > 0.0) {
        return Err(NeuroError::Kernel { tau, dt, t_window });
    }
    let half = (t_window / dt).round() as i64;
    let samples = (-half..=half).map(|k| kappa(k as f64 * dt, tau)).collect();
    let n_steps = (t_window / dt).round() as usize;
    // Mirror the first half so the weights are exactly antisymmetric.
    let mut step_weights: Vec<f64> = (0..n_steps)
        .map(|s| kappa((s as f64 + 0.5) * dt - t_window / 2.0, tau))
        .collect();
    for s in 0..n_steps / 2 {
        step_weights[n_steps - 1 - s] = -step_weights[s];
    }
    if n_steps % 2 == 1 {
        step_weights[n_steps / 2] = 0.0;
    }
    Ok(TckKernel {
        tau,
        dt,
        t_window,
        samples,
        step_weights,
    })
}

impl TckKernel {
    pub fn value(&self, t: f64) -> f64 {
        kappa(t, self.tau)
    }

    /// `κ(k·dt)`.
    pub fn sample(&self, k: i64) -> f64 {
        let half = (self.samples.len() / 2) as i64;
        self.samples[(k + half) as usize]
    }

    pub fn n_steps(&self) -> usize {
        self.step_weights.len()
    }

    pub fn step_weights(&self) -> &[f64] {
        &self.step_weights
    }
}

/// `|Σ κ(t_s - T/2)|` over spike times given in ms.
pub fn psp_from_times(times: &[f64], kernel: &TckKernel) -> f64 {
    let centre = kernel.t_window / 2.0;
    times.iter().map(|&t| kernel.value(t - centre)).sum::<f64>().abs()
}

/// Rectified kernel response of one binary train.
pub fn psp(train: &[bool], kernel: &TckKernel) -> Result<f64, NeuroError> {
    if train.len() != kernel.n_steps() {
        return Err(NeuroError::TrainLength {
            expected: kernel.n_steps(),
            got: train.len(),
        });
    }
    // Mirrored steps are summed as pairs, so a train symmetric about T/2
    // cancels exactly and a reversed train gives exactly the same value.
    let n = train.len();
    let w = &kernel.step_weights;
    Ok((0..n / 2)
        .map(|s| w[s] * (f64::from(u8::from(train[s])) - f64::from(u8::from(train[n - 1 - s]))))
        .sum::<f64>()
        .abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompartmentParams {
    /// Basal (dendrite-to-soma) conductance.
    pub g_b: f64,
    /// Leak conductance.
    pub g_l: f64,
    /// Membrane time constant in ms.
    pub tau_l: f64,
    /// Rate scale: output rates are `r_max·σ(V)`.
    pub r_max: f64,
}

impl Default for CompartmentParams {
    /// Rates are expressed in spikes per ms, so 250 Hz becomes 0.25.
    fn default() -> Self {
        Self {
            g_b: 0.6,
            g_l: 0.05,
            tau_l: 10.0,
            r_max: 0.25,
        }
    }
}

impl CompartmentParams {
    /// Steady-state attenuation `g_B/(g_B + g_L)`.
    pub fn attenuation(&self) -> f64 {
        self.g_b / (self.g_b + self.g_l)
    }

    /// Effective relaxation constant `τ_L/(1 + g_B/g_L)`.
    pub fn tau_eff(&self) -> f64 {
        self.tau_l / (1.0 + self.g_b / self.g_l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentLayer {
    /// `out × in`.
    pub weights: Array2<f64>,
    /// Dendritic threshold.
    pub bias: Array1<f64>,
    pub params: CompartmentParams,
}

impl CompartmentLayer {
    pub fn zeros(n_in: usize, n_out: usize, params: CompartmentParams) -> Self {
        Self {
            weights: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
            params,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Array1<f64>,
    pub v_basal: Array1<f64>,
    pub v_soma: Array1<f64>,
    pub rates: Array1<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

pub fn steady_soma(v_basal: &Array1<f64>, params: &CompartmentParams) -> Array1<f64> {
    v_basal * params.attenuation()
}

/// Forward-Euler integration of
/// `τ_L dV/dt = -V + (g_B/g_L)(V_b - V)` from `V(0) = 0`.
pub fn euler_soma(v_basal: &Array1<f64>, params: &CompartmentParams, dt: f64, duration: f64) -> Result<Array1<f64>, NeuroError> {
    let bound = 2.0 * params.tau_eff();
    if !(dt > 0.0 && dt <= bound) {
        return Err(NeuroError::UnstableStep { dt, bound });
    }
    let ratio = params.g_b / params.g_l;
    let steps = (duration / dt).round() as usize;
    let mut v = Array1::<f64>::zeros(v_basal.len());
    for _ in 0..steps {
        Zip::from(&mut v).and(v_basal).for_each(|v, &vb| {
            *v += dt / params.tau_l * (-*v + ratio * (vb - *v));
        });
    }
    Ok(v)
}

pub fn layer_forward(input: &Array1<f64>, layer: &CompartmentLayer) -> Result<ForwardTrace, NeuroError> {
    if input.len() != layer.n_in() {
        return Err(NeuroError::Dimension {
            expected: layer.n_in(),
            got: input.len(),
        });
    }
    let v_basal = layer.weights.dot(input) + &layer.bias;
    let v_soma = steady_soma(&v_basal, &layer.params);
    let rates = v_soma.mapv(|v| layer.params.r_max * sigmoid(v));
    Ok(ForwardTrace {
        input: input.clone(),
        v_basal,
        v_soma,
        rates,
    })
}
