//! Loss, gradients, optimizer steps and superposition batches for the QNN.
//!
//! The loss of one labelled input `|z,1>` with label `l` is
//! `1 - l <z,1|U^dag O U|z,1>`, where `O` is the readout observable.
//! Every gradient engine here returns the derivative of that loss, so the
//! `-l` factor is already folded in.
//!
//! For a gate `U_k = exp(i theta_k S_k)` the derivative is
//! `2 l Im <z,1|U^dag O A S_k B|z,1>`, with `B` the circuit up to and
//! including gate `k` and `A` the remainder. [`grad_analytic`] evaluates that
//! matrix element for every gate in one backward sweep; [`grad_hadamard_test`]
//! estimates it from ancilla measurement statistics.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, ParamVector, Readout};
use crate::error::{invalid, QnnError, Result};
use crate::statevec::StateVector;

/// Squared gradient norm below which the normalized update is skipped.
pub const VANISHING_GRADIENT: f64 = 1e-12;

/// A basis-state input with a `+1`/`-1` label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInput {
    state: StateVector,
    label: i8,
    index: usize,
}

impl LabeledInput {
    pub fn new(state: StateVector, label: i8) -> Result<Self> {
        if label != 1 && label != -1 {
            return invalid(format!("label must be +1 or -1, got {label}"));
        }
        let Some(index) = state.as_basis_index() else {
            return invalid("labelled input must be a computational basis state");
        };
        Ok(Self { state, label, index })
    }

    /// Index of the occupied computational basis state.
    pub fn basis_index(&self) -> usize {
        self.index
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn label(&self) -> i8 {
        self.label
    }

    pub fn sign(&self) -> f64 {
        f64::from(self.label)
    }
}

/// `d loss / d theta_k` for every parameter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return invalid(format!("gradient component {i} is not finite"));
        }
        Ok(Self(g))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum()
    }
}

impl std::ops::Index<usize> for GradVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `1 - label * <O>`, in `[0, 2]`.
pub fn loss_from_expectation(expectation: f64, label: f64) -> f64 {
    1.0 - label * expectation
}

pub fn loss_single(circuit: &Circuit, readout: Readout, params: &ParamVector, sample: &LabeledInput) -> Result<f64> {
    let e = circuit.expectation(params, &sample.state, readout)?;
    Ok(loss_from_expectation(e, sample.sign()))
}

/// Exact loss gradient by a single backward (adjoint) sweep.
pub fn grad_analytic(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
) -> Result<GradVector> {
    Ok(loss_and_grad_analytic(circuit, readout, params, sample)?.1)
}

/// Readout expectation of `U(theta)|input>` and its gradient in `theta`.
///
/// Keeps `phi` = state after gate `k` and `lambda = A^dag O U|input>`, with
/// `A` the gates after `k`; then `dE/dtheta_k = -2 Im <lambda|S_k phi>`
/// summed over the gates that use slot `k`.
pub fn expectation_and_grad(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    input: &StateVector,
) -> Result<(f64, Vec<f64>)> {
    let mut phi = circuit.evaluate(params, input)?;
    let e = phi.expectation_pauli(readout.qubit, readout.observable)?;
    let mut lambda = phi.clone();
    lambda.apply_pauli(readout.qubit, readout.observable)?;

    let mut grad = vec![0.0; circuit.n_params()];
    circuit.adjoint_sweep(params, &mut lambda, &mut phi, |k, m| grad[k] -= 2.0 * m.im)?;
    Ok((e, grad))
}

/// Loss and analytic gradient sharing one forward pass.
pub fn loss_and_grad_analytic(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
) -> Result<(f64, GradVector)> {
    let (e, de) = expectation_and_grad(circuit, readout, params, &sample.state)?;
    let l = sample.sign();
    Ok((loss_from_expectation(e, l), GradVector::new(de.into_iter().map(|g| -l * g).collect())?))
}

/// Central finite differences of [`loss_single`].
pub fn grad_finite_diff(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
    eps: f64,
) -> Result<GradVector> {
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid(format!("finite-difference step must be positive, got {eps}"));
    }
    let base = params.as_slice().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut shifted = base.clone();
        shifted[k] = base[k] + eps;
        let plus = loss_single(circuit, readout, &ParamVector::new(shifted.clone())?, sample)?;
        shifted[k] = base[k] - eps;
        let minus = loss_single(circuit, readout, &ParamVector::new(shifted)?, sample)?;
        grad.push((plus - minus) / (2.0 * eps));
    }
    GradVector::new(grad)
}

/// Runs the ancilla interference protocol for `apply_u` on `psi` and returns
/// the exact probability of reading the ancilla as 0.
///
/// The ancilla is the most significant qubit of an `n+1` qubit register, so
/// the amplitude array is `[ancilla=0 branch | ancilla=1 branch]`. Steps:
/// `H` on the ancilla, `i U` on the ancilla=1 branch, `H` on the ancilla.
/// The two Hadamards are applied as unnormalized butterflies and the
/// ancilla-0 weight is divided by the total weight of both branches, so a
/// slightly unnormalized `psi` does not bias the result. For `U = I` both
/// branches sum identical terms and the result is exactly 1/2.
pub fn hadamard_test_zero_probability(
    psi: &StateVector,
    apply_u: impl FnOnce(&mut StateVector) -> Result<()>,
) -> Result<f64> {
    let half = psi.amplitudes().len();
    let mut joint = Vec::with_capacity(2 * half);
    joint.extend_from_slice(psi.amplitudes());
    joint.resize(2 * half, Complex64::new(0.0, 0.0));

    let (lo, hi) = joint.split_at_mut(half);
    butterfly(lo, hi);
    let mut branch = StateVector::from_amplitudes(hi.to_vec())?;
    apply_u(&mut branch)?;
    branch.scale(Complex64::i());
    if branch.amplitudes().len() != half {
        return Err(QnnError::InvalidState("controlled operation changed the register size".into()));
    }
    hi.copy_from_slice(branch.amplitudes());
    butterfly(lo, hi);
    let p0: f64 = lo.iter().map(|a| a.norm_sqr()).sum();
    let p1: f64 = hi.iter().map(|a| a.norm_sqr()).sum();
    Ok(p0 / (p0 + p1))
}

fn butterfly(lo: &mut [Complex64], hi: &mut [Complex64]) {
    for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
        let (b0, b1) = (*a0, *a1);
        *a0 = b0 + b1;
        *a1 = b0 - b1;
    }
}

/// Applies `U^dag O A S_k B` for the gate at `gate_index`.
fn apply_gradient_operator(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    gate_index: usize,
    state: &mut StateVector,
) -> Result<()> {
    let thetas = params.as_slice();
    let gates = circuit.gates();
    for gate in &gates[..=gate_index] {
        gate.apply(state, thetas)?;
    }
    gates[gate_index]
        .apply_generator(state)
        .ok_or_else(|| QnnError::InvalidArgument(format!("gate {gate_index} has no generator")))??;
    for gate in &gates[gate_index + 1..] {
        gate.apply(state, thetas)?;
    }
    state.apply_pauli(readout.qubit, readout.observable)?;
    circuit.apply_inverse(params, state)
}

/// Exact ancilla probability `P(0)` for every gate driven by slot `k`.
pub fn hadamard_test_probabilities(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
    k: usize,
) -> Result<Vec<f64>> {
    if k >= circuit.n_params() {
        return invalid(format!("parameter {k} out of range for {} parameters", circuit.n_params()));
    }
    if params.len() != circuit.n_params() {
        return invalid(format!("circuit has {} parameters, got {}", circuit.n_params(), params.len()));
    }
    circuit
        .gates()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.slot() == Some(k))
        .map(|(gi, _)| {
            hadamard_test_zero_probability(sample.state(), |s| apply_gradient_operator(circuit, readout, params, gi, s))
        })
        .collect()
}

/// Shot-sampled estimate of `d loss / d theta_k`.
///
/// For each gate driven by slot `k` the ancilla is sampled `shots` times
/// from its exact Born probability; the matrix element's imaginary part is
/// estimated as `1 - 2 P(0)` and contributes `2 l (1 - 2 P(0))`. Each
/// contribution has standard error at most `2 / sqrt(shots)`.
pub fn grad_hadamard_test(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
    k: usize,
    shots: u64,
    rng_seed: u64,
) -> Result<f64> {
    if shots == 0 {
        return invalid("hadamard test needs at least one shot");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut estimate = 0.0;
    for p0 in hadamard_test_probabilities(circuit, readout, params, sample, k)? {
        let zeros = Binomial::new(shots, p0.clamp(0.0, 1.0))
            .map_err(|e| QnnError::InvalidState(format!("bad ancilla probability {p0}: {e}")))?
            .sample(&mut rng);
        let p0_hat = zeros as f64 / shots as f64;
        estimate += 2.0 * sample.sign() * (1.0 - 2.0 * p0_hat);
    }
    Ok(estimate)
}

/// Whether an update was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    Applied,
    VanishingGradient,
}

fn check_step(params: &ParamVector, grad: &GradVector, r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("learning rate must be positive, got {r}"));
    }
    if params.len() != grad.len() {
        return invalid(format!("{} parameters but {} gradient components", params.len(), grad.len()));
    }
    Ok(())
}

/// `theta - r (loss / |g|^2) g`. Skipped when `|g|^2` is below
/// [`VANISHING_GRADIENT`].
pub fn sgd_step_paper(params: &ParamVector, grad: &GradVector, loss: f64, r: f64) -> Result<(ParamVector, StepStatus)> {
    check_step(params, grad, r)?;
    let g2 = grad.norm_sqr();
    if g2 < VANISHING_GRADIENT {
        return Ok((params.clone(), StepStatus::VanishingGradient));
    }
    let scale = r * loss / g2;
    let next = params.as_slice().iter().zip(grad.as_slice()).map(|(t, g)| t - scale * g).collect();
    Ok((ParamVector::new(next)?, StepStatus::Applied))
}

/// `theta - r g`.
pub fn sgd_step_plain(params: &ParamVector, grad: &GradVector, r: f64) -> Result<ParamVector> {
    check_step(params, grad, r)?;
    ParamVector::new(params.as_slice().iter().zip(grad.as_slice()).map(|(t, g)| t - r * g).collect())
}

/// How training gradients are obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum GradEngine {
    #[default]
    Analytic,
    FiniteDiff {
        eps: f64,
    },
    HadamardTest {
        shots: u64,
    },
}

/// Loss and gradient of one sample under `engine`. `seed` is only used by
/// the sampling engine.
pub fn loss_and_grad(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    sample: &LabeledInput,
    engine: GradEngine,
    seed: u64,
) -> Result<(f64, GradVector)> {
    match engine {
        GradEngine::Analytic => loss_and_grad_analytic(circuit, readout, params, sample),
        GradEngine::FiniteDiff { eps } => Ok((
            loss_single(circuit, readout, params, sample)?,
            grad_finite_diff(circuit, readout, params, sample, eps)?,
        )),
        GradEngine::HadamardTest { shots } => {
            let grad = (0..circuit.n_params())
                .map(|k| grad_hadamard_test(circuit, readout, params, sample, k, shots, split_seed(seed, k as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok((loss_single(circuit, readout, params, sample)?, GradVector::new(grad)?))
        }
    }
}

/// Mean loss and mean gradient over a mini-batch.
///
/// Per-sample work runs in parallel; the reduction sums in sample order so
/// the result does not depend on scheduling. Deterministic engines evaluate
/// each distinct (input, label) pair once.
pub fn batch_loss_and_grad(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    batch: &[&LabeledInput],
    engine: GradEngine,
    seed: u64,
) -> Result<(f64, GradVector)> {
    if batch.is_empty() {
        return invalid("empty mini-batch");
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; circuit.n_params()];
    let mut add = |l: f64, g: &[f64], scale: f64| {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(acc, v)| *acc += scale * v);
    };
    match engine {
        GradEngine::Analytic => {
            // The label only flips the sign, so each distinct input is
            // differentiated once.
            let (slots, unique) = distinct_by(batch, |s| (s.basis_index(), 0));
            let results = unique
                .par_iter()
                .map(|&i| expectation_and_grad(circuit, readout, params, batch[i].state()))
                .collect::<Result<Vec<_>>>()?;
            for (s, &slot) in batch.iter().zip(&slots) {
                let (e, de) = &results[slot];
                add(loss_from_expectation(*e, s.sign()), de, -s.sign());
            }
        }
        _ => {
            let (slots, unique) = match engine {
                GradEngine::HadamardTest { .. } => ((0..batch.len()).collect(), (0..batch.len()).collect()),
                _ => distinct_by(batch, |s| (s.basis_index(), s.label())),
            };
            let results = unique
                .par_iter()
                .map(|&i| loss_and_grad(circuit, readout, params, batch[i], engine, split_seed(seed, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            for &slot in &slots {
                let (l, g) = &results[slot];
                add(*l, g.as_slice(), 1.0);
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, GradVector::new(grad)?))
}

/// For each sample, the position of its first equal sample among the
/// returned representatives.
fn distinct_by(batch: &[&LabeledInput], key: impl Fn(&LabeledInput) -> (usize, i8)) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashMap::new();
    let mut unique = Vec::new();
    let slots = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            *seen.entry(key(s)).or_insert_with(|| {
                unique.push(i);
                unique.len() - 1
            })
        })
        .collect();
    (slots, unique)
}

/// Derives an independent stream seed; splitmix64 finalizer.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Equal-amplitude superpositions of all `+1` and all `-1` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionBatch {
    pub plus_state: StateVector,
    pub minus_state: StateVector,
}

pub fn build_superposition_batch(samples: &[LabeledInput]) -> Result<SuperpositionBatch> {
    let n_qubits = match samples.first() {
        Some(s) => s.state.n_qubits(),
        None => return invalid("superposition batch needs samples"),
    };
    let class_state = |label: i8| -> Result<StateVector> {
        let mut indices = Vec::new();
        for s in samples.iter().filter(|s| s.label == label) {
            if s.state.n_qubits() != n_qubits {
                return invalid("samples have different register sizes");
            }
            let idx = s.state.as_basis_index().expect("labelled inputs are basis states");
            if indices.contains(&idx) {
                return invalid(format!("duplicate basis state {idx} in class {label:+}"));
            }
            indices.push(idx);
        }
        if indices.is_empty() {
            return invalid(format!("class {label:+} has no samples"));
        }
        let amp = Complex64::new(1.0 / (indices.len() as f64).sqrt(), 0.0);
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        for idx in indices {
            amps[idx] = amp;
        }
        StateVector::from_amplitudes(amps)
    };
    Ok(SuperpositionBatch { plus_state: class_state(1)?, minus_state: class_state(-1)? })
}

/// `1 - (<+1|U^dag O U|+1> - <-1|U^dag O U|-1>) / 2`.
pub fn loss_batch(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    batch: &SuperpositionBatch,
) -> Result<f64> {
    let plus = circuit.expectation(params, &batch.plus_state, readout)?;
    let minus = circuit.expectation(params, &batch.minus_state, readout)?;
    Ok(1.0 - 0.5 * (plus - minus))
}

/// The same combination computed from per-sample expectations averaged per
/// class. Differs from [`loss_batch`] by the interference (cross) terms.
pub fn loss_batch_from_samples(
    circuit: &Circuit,
    readout: Readout,
    params: &ParamVector,
    samples: &[LabeledInput],
) -> Result<f64> {
    let mean = |label: i8| -> Result<f64> {
        let values = samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| circuit.expectation(params, &s.state, readout))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return invalid(format!("class {label:+} has no samples"));
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    };
    Ok(1.0 - 0.5 * (mean(1)? - mean(-1)?))
}
