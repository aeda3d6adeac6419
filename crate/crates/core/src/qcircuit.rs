//! A small complex statevector simulator, just large enough for the per-pixel
//! complementary encoding circuit: one ancilla qubit that selects between the
//! original and the inverted pixel, and one data qubit holding the pixel bit.
//!
//! Qubit 0 is the most significant bit of a basis index, so `|10⟩` is index 2.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

pub const MAX_QUBITS: usize = 4;

/// Ancilla qubit of the pixel circuit (selects original vs. inverted branch).
pub const ANCILLA: usize = 0;
/// Data qubit of the pixel circuit.
pub const DATA: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("qubit count {0} outside supported range 1..={MAX_QUBITS}")]
    QubitCount(usize),
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("control and target must differ (both {0})")]
    ControlIsTarget(usize),
    #[error("rotation angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("inversion angle {0} outside [0, pi/2]")]
    AngleRange(f64),
    #[error("pixel bit must be 0 or 1, got {0}")]
    PixelBit(u8),
    #[error("sampled measurement needs at least one shot")]
    ZeroShots,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    n_qubits: usize,
}

impl StateVector {
    /// Ground state `|0…0⟩`.
    pub fn new(n_qubits: usize) -> Result<Self, CircuitError> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(CircuitError::QubitCount(n_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes, n_qubits })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Probability of each basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn mask(&self, qubit: usize) -> Result<usize, CircuitError> {
        if qubit >= self.n_qubits {
            return Err(CircuitError::QubitIndex {
                index: qubit,
                n_qubits: self.n_qubits,
            });
        }
        Ok(1 << (self.n_qubits - 1 - qubit))
    }

    /// Applies a 2x2 matrix `[[m00, m01], [m10, m11]]` to one qubit.
    fn apply_single(&mut self, qubit: usize, m: [[Complex64; 2]; 2]) -> Result<(), CircuitError> {
        let mask = self.mask(qubit)?;
        for i in 0..self.amplitudes.len() {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            let (a0, a1) = (self.amplitudes[i], self.amplitudes[j]);
            self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
            self.amplitudes[j] = m[1][0] * a0 + m[1][1] * a1;
        }
        Ok(())
    }

    pub fn hadamard(&mut self, qubit: usize) -> Result<&mut Self, CircuitError> {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        self.apply_single(qubit, [[h, h], [h, -h]])?;
        Ok(self)
    }

    pub fn pauli_x(&mut self, qubit: usize) -> Result<&mut Self, CircuitError> {
        let mask = self.mask(qubit)?;
        for i in 0..self.amplitudes.len() {
            if i & mask == 0 {
                self.amplitudes.swap(i, i | mask);
            }
        }
        Ok(self)
    }

    pub fn pauli_z(&mut self, qubit: usize) -> Result<&mut Self, CircuitError> {
        let mask = self.mask(qubit)?;
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & mask != 0 {
                *a = -*a;
            }
        }
        Ok(self)
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> Result<&mut Self, CircuitError> {
        if control == target {
            return Err(CircuitError::ControlIsTarget(control));
        }
        let cmask = self.mask(control)?;
        let tmask = self.mask(target)?;
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
        Ok(self)
    }

    /// Real rotation `[[cos θ/2, -sin θ/2], [sin θ/2, cos θ/2]]`.
    pub fn rotation(&mut self, qubit: usize, theta: f64) -> Result<&mut Self, CircuitError> {
        if !theta.is_finite() {
            return Err(CircuitError::NonFiniteAngle(theta));
        }
        let (s, c) = (theta / 2.0).sin_cos();
        let (s, c) = (Complex64::new(s, 0.0), Complex64::new(c, 0.0));
        self.apply_single(qubit, [[c, -s], [s, c]])?;
        Ok(self)
    }

    /// `[P(qubit = 0), P(qubit = 1)]`.
    pub fn marginal(&self, qubit: usize) -> Result<[f64; 2], CircuitError> {
        let mask = self.mask(qubit)?;
        let mut out = [0.0; 2];
        for (i, a) in self.amplitudes.iter().enumerate() {
            out[usize::from(i & mask != 0)] += a.norm_sqr();
        }
        Ok(out)
    }
}

/// Sign of the `|1, x̄⟩` branch; the odd case carries a relative phase of -1.
/// The phase never changes measurement statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of_index(i: usize) -> Self {
        if i % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

fn check_bit(x_bit: u8) -> Result<(), CircuitError> {
    if x_bit > 1 {
        return Err(CircuitError::PixelBit(x_bit));
    }
    Ok(())
}

/// Equal-weight complementary state `(|0,x⟩ ± |1,x̄⟩)/√2` built with a
/// Hadamard on the ancilla followed by CNOT(ancilla → data).
pub fn beta_state(x_bit: u8, parity: Parity) -> Result<StateVector, CircuitError> {
    check_bit(x_bit)?;
    let mut s = StateVector::new(2)?;
    if x_bit == 1 {
        s.pauli_x(DATA)?;
    }
    s.hadamard(ANCILLA)?.cnot(ANCILLA, DATA)?;
    if parity == Parity::Odd {
        s.pauli_z(ANCILLA)?;
    }
    Ok(s)
}

/// Two-qubit state `cos θ |0,x⟩ ± sin θ |1,x̄⟩` for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelState {
    pub state: StateVector,
    pub x_bit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementCounts {
    pub shots: u64,
    pub count_original: u64,
    pub count_inverted: u64,
}

impl MeasurementCounts {
    /// `(P̂, Q̂)`: inverted- and original-outcome frequencies.
    pub fn frequencies(&self) -> (f64, f64) {
        let n = self.shots as f64;
        (self.count_inverted as f64 / n, self.count_original as f64 / n)
    }
}

/// Realizes the pixel state with R(2θ) on the ancilla then CNOT onto the data
/// qubit; a Z on the ancilla adds the odd-parity sign.
pub fn build_pixel_state(x_bit: u8, theta: f64, parity: Parity) -> Result<PixelState, CircuitError> {
    check_bit(x_bit)?;
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(CircuitError::AngleRange(theta));
    }
    let mut s = StateVector::new(2)?;
    if x_bit == 1 {
        s.pauli_x(DATA)?;
    }
    s.rotation(ANCILLA, 2.0 * theta)?.cnot(ANCILLA, DATA)?;
    if parity == Parity::Odd {
        s.pauli_z(ANCILLA)?;
    }
    Ok(PixelState { state: s, x_bit })
}

impl PixelState {
    /// Exact `(P, Q)` = (probability of reading the inverted bit, probability
    /// of reading the original bit) from the data-qubit marginal.
    pub fn exact_probabilities(&self) -> (f64, f64) {
        let m = self.state.marginal(DATA).expect("pixel state always has a data qubit");
        let original = m[usize::from(self.x_bit)];
        let inverted = m[usize::from(1 - self.x_bit)];
        (inverted, original)
    }

    /// Samples the data qubit `shots` times with a seeded generator.
    pub fn measure(&self, shots: u64, seed: u64) -> Result<MeasurementCounts, CircuitError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.measure_with(shots, &mut rng)
    }

    pub fn measure_with<R: Rng + ?Sized>(&self, shots: u64, rng: &mut R) -> Result<MeasurementCounts, CircuitError> {
        if shots == 0 {
            return Err(CircuitError::ZeroShots);
        }
        let (p_inverted, _) = self.exact_probabilities();
        let count_inverted = (0..shots).filter(|_| rng.random::<f64>() < p_inverted).count() as u64;
        Ok(MeasurementCounts {
            shots,
            count_original: shots - count_inverted,
            count_inverted,
        })
    }
}

/// Closed form of [`PixelState::exact_probabilities`]: `(sin²θ, cos²θ)`.
pub fn exact_pq(theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (s * s, c * c)
}
