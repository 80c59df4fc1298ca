//! Independent oracles shared by the integration tests: dense matrices,
//! closed forms and synthetic data.

#![allow(dead_code)]

use num_complex::Complex64;
use qnn_core::circuit::{Angle, Circuit, Gate, ParamVector};
use qnn_core::data::{BinarizedImage, BitGrid, DatasetSplit, PipelineConfig, Provenance, RawImage, PIXELS};
use qnn_core::statevec::{PauliKind, StateVector};
use rand::Rng;

pub type Matrix = Vec<Vec<Complex64>>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn identity(dim: usize) -> Matrix {
    (0..dim).map(|r| (0..dim).map(|c| if r == c { ONE } else { ZERO }).collect()).collect()
}

pub fn pauli(p: PauliKind) -> Matrix {
    match p {
        PauliKind::X => vec![vec![ZERO, ONE], vec![ONE, ZERO]],
        PauliKind::Y => vec![vec![ZERO, -I], vec![I, ZERO]],
        PauliKind::Z => vec![vec![ONE, ZERO], vec![ZERO, -ONE]],
    }
}

pub fn hadamard() -> Matrix {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    vec![vec![s, s], vec![s, -s]]
}

pub fn phase(phi: f64) -> Matrix {
    vec![vec![ONE, ZERO], vec![ZERO, Complex64::from_polar(1.0, phi)]]
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![ZERO; n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// `ops[q]` on each listed qubit and identity elsewhere; qubit 0 is the
/// leftmost tensor factor.
pub fn embed(n: usize, ops: &[(usize, Matrix)]) -> Matrix {
    let mut out = vec![vec![ONE]];
    for q in 0..n {
        let factor = ops.iter().find(|(t, _)| *t == q).map_or_else(|| identity(2), |(_, m)| m.clone());
        out = kron(&out, &factor);
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![ZERO; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == ZERO {
                continue;
            }
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn adjoint(a: &Matrix) -> Matrix {
    let n = a.len();
    (0..n).map(|r| (0..n).map(|c| a[c][r].conj()).collect()).collect()
}

pub fn scale(a: &Matrix, s: Complex64) -> Matrix {
    a.iter().map(|row| row.iter().map(|x| x * s).collect()).collect()
}

pub fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn max_abs_row_sum(a: &Matrix) -> f64 {
    a.iter().map(|r| r.iter().map(|x| x.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring with a Taylor series.
pub fn expm(a: &Matrix) -> Matrix {
    let norm = max_abs_row_sum(a);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let scaled = scale(a, Complex64::new(0.5f64.powi(squarings as i32), 0.0));
    let n = a.len();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = scale(&matmul(&term, &scaled), Complex64::new(1.0 / k as f64, 0.0));
        result = add(&result, &term);
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// Dense `exp(i theta P_a P_b)` on `n` qubits from the Taylor series.
pub fn exp_pauli_pair(n: usize, a: usize, b: usize, p: PauliKind, theta: f64) -> Matrix {
    let generator = embed(n, &[(a, pauli(p)), (b, pauli(p))]);
    expm(&scale(&generator, Complex64::new(0.0, theta)))
}

/// Same matrix as [`exp_pauli_pair`] via `cos t I + i sin t G`, valid
/// because the generator squares to the identity (checked here). Much
/// cheaper for whole-circuit matrices.
pub fn exp_pauli_pair_involution(n: usize, a: usize, b: usize, p: PauliKind, theta: f64) -> Matrix {
    let generator = embed(n, &[(a, pauli(p)), (b, pauli(p))]);
    let square = matmul(&generator, &generator);
    assert!(square.iter().flatten().zip(identity(1 << n).iter().flatten()).all(|(x, y)| x == y));
    add(
        &scale(&identity(1 << n), Complex64::new(theta.cos(), 0.0)),
        &scale(&generator, Complex64::new(0.0, theta.sin())),
    )
}

pub fn gate_matrix(n: usize, gate: &Gate, params: &[f64]) -> Matrix {
    match *gate {
        Gate::X(q) => embed(n, &[(q, pauli(PauliKind::X))]),
        Gate::Z(q) => embed(n, &[(q, pauli(PauliKind::Z))]),
        Gate::H(q) => embed(n, &[(q, hadamard())]),
        Gate::Phase { qubit, phi } => embed(n, &[(qubit, phase(phi))]),
        Gate::ExpPauliPair { pauli: p, qubits: (a, b), angle } => {
            let theta = match angle {
                Angle::Slot(k) => params[k],
                Angle::Fixed(t) => t,
            };
            exp_pauli_pair_involution(n, a, b, p, theta)
        }
    }
}

/// Dense unitary of a whole circuit (first gate acts first).
pub fn circuit_matrix(circuit: &Circuit, params: &ParamVector) -> Matrix {
    let n = circuit.n_qubits();
    circuit.gates().iter().fold(identity(1 << n), |acc, g| matmul(&gate_matrix(n, g, params.as_slice()), &acc))
}

pub fn matvec(a: &Matrix, v: &[Complex64]) -> Vec<Complex64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn expectation(m: &Matrix, v: &[Complex64]) -> Complex64 {
    v.iter().zip(matvec(m, v)).map(|(a, b)| a.conj() * b).sum()
}

pub fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> StateVector {
    let mut amps: Vec<Complex64> =
        (0..1 << n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    StateVector::from_amplitudes(amps).unwrap()
}

/// `(1, prod_d (cos^2 a_d e^{-2i b_d s_d} + sin^2 a_d e^{2i b_d s_d}))` where
/// `s_d = +1` for a 0 pixel and `-1` for a 1 pixel, `a` the XX angles and
/// `b` the ZZ angles. Returns the overlap `<A|B>` of the two readout branches.
fn branch_overlap(params: &[f64], bits: &[bool]) -> Complex64 {
    let n = bits.len();
    bits.iter().enumerate().fold(ONE, |acc, (d, &bit)| {
        let (a, b) = (params[d], params[n + d]);
        let s = if bit { -1.0 } else { 1.0 };
        acc * (Complex64::from_polar(a.cos().powi(2), -2.0 * b * s)
            + Complex64::from_polar(a.sin().powi(2), 2.0 * b * s))
    })
}

/// Closed-form QNN readout expectation for the Z observable.
pub fn qnn_closed_form_z(params: &[f64], bits: &[bool]) -> f64 {
    branch_overlap(params, bits).re
}

/// Closed-form QNN readout expectation for the Y observable.
pub fn qnn_closed_form_y(params: &[f64], bits: &[bool]) -> f64 {
    -branch_overlap(params, bits).im
}

/// Basis input `|bits, 1>` for the QNN.
pub fn qnn_input(bits: &[bool]) -> StateVector {
    let mut all = bits.to_vec();
    all.push(true);
    StateVector::basis_state(all.len(), &all).unwrap()
}

/// Hand-rolled forward pass of the `dim^2 -> 2 -> 1` tanh network from its
/// flat parameters (layer 1 weights row-major, layer 1 biases, layer 2
/// weights, layer 2 bias).
pub fn dense_forward(params: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let w1 = &params[..2 * n];
    let b1 = &params[2 * n..2 * n + 2];
    let w2 = &params[2 * n + 2..2 * n + 4];
    let b2 = params[2 * n + 4];
    let h: Vec<f64> = (0..2).map(|j| ((0..n).map(|i| w1[j * n + i] * x[i]).sum::<f64>() + b1[j]).tanh()).collect();
    (w2[0] * h[0] + w2[1] * h[1] + b2).tanh()
}

pub fn all_grids(dim: usize) -> Vec<BitGrid> {
    (0..1u64 << (dim * dim)).map(|p| BitGrid::from_packed(dim, p)).collect()
}

/// Every grid of the given size, labelled by `rule`.
pub fn synthetic_split(dim: usize, rule: impl Fn(&BitGrid) -> bool) -> DatasetSplit {
    let samples: Vec<BinarizedImage> = all_grids(dim)
        .into_iter()
        .map(|grid| {
            let label = if rule(&grid) { 1 } else { -1 };
            BinarizedImage { grid, label }
        })
        .collect();
    DatasetSplit {
        config: PipelineConfig { dim, ..PipelineConfig::default() },
        train: samples.clone(),
        test: samples,
        provenance: Provenance::default(),
    }
}

/// 28x28 images whose 14x14 quadrants are each either blank or solid, with
/// digit labels cycling through `labels`.
pub fn quadrant_images(count: usize, labels: &[u8], seed: u64) -> Vec<RawImage> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let on: [bool; 4] = std::array::from_fn(|_| rng.random_bool(0.5));
            let pixels = (0..PIXELS)
                .map(|p| {
                    let (r, c) = (p / 28, p % 28);
                    if on[(r / 14) * 2 + c / 14] {
                        255
                    } else {
                        0
                    }
                })
                .collect();
            RawImage::new(pixels, labels[i % labels.len()]).unwrap()
        })
        .collect()
}

/// Big-endian IDX image file written without the library's writer.
pub fn idx_images_bytes(images: &[RawImage]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    for img in images {
        out.extend_from_slice(&img.pixels);
    }
    out
}

pub fn idx_labels_bytes(images: &[RawImage]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend(images.iter().map(|i| i.label));
    out
}

/// Writes an MNIST-style directory; `gzip` compresses every file.
pub fn write_mnist_dir(dir: &std::path::Path, train: &[RawImage], test: &[RawImage], gzip: bool) {
    use qnn_core::data::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
    use std::io::Write;
    let files = [
        (TRAIN_IMAGES, idx_images_bytes(train)),
        (TRAIN_LABELS, idx_labels_bytes(train)),
        (TEST_IMAGES, idx_images_bytes(test)),
        (TEST_LABELS, idx_labels_bytes(test)),
    ];
    for (name, bytes) in files {
        if gzip {
            let f = std::fs::File::create(dir.join(format!("{name}.gz"))).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        } else {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }
}
