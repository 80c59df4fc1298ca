//! Dense statevector simulator.
//!
//! Gate kernels work in place on the amplitude array by walking the
//! amplitude pairs (or quadruples) that a gate mixes, so every one- or
//! two-qubit gate costs `O(2^n)` rather than a dense `O(4^n)` product.
//!
//! Bit order: qubit 0 is the most significant bit of the amplitude index.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QnnError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 28;

/// Norm deviation tolerated by observables before the state is rejected.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PauliKind {
    X,
    Y,
    Z,
}

impl PauliKind {
    /// The 2x2 matrix, row-major.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        match self {
            PauliKind::X => [[ZERO, ONE], [ONE, ZERO]],
            PauliKind::Y => [[ZERO, -I], [I, ZERO]],
            PauliKind::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }

    pub fn symbol(self) -> char {
        match self {
            PauliKind::X => 'x',
            PauliKind::Y => 'y',
            PauliKind::Z => 'z',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'x' => Some(PauliKind::X),
            'y' => Some(PauliKind::Y),
            'z' => Some(PauliKind::Z),
            _ => None,
        }
    }
}

impl fmt::Display for PauliKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol().to_ascii_uppercase())
    }
}

/// A pure state of `n_qubits` qubits stored as `2^n_qubits` amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits > MAX_QUBITS {
            return invalid(format!("{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit"));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Computational basis state; `bits[i]` is the value of qubit `i`.
    pub fn basis_state(n_qubits: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != n_qubits {
            return invalid(format!("bit string has length {} but register has {n_qubits} qubits", bits.len()));
        }
        let mut state = Self::zero(n_qubits)?;
        state.amps[0] = ZERO;
        state.amps[basis_index(bits)] = ONE;
        Ok(state)
    }

    /// Parses a bit string such as `"101"` into a basis state.
    pub fn from_bitstring(bits: &str) -> Result<Self> {
        let parsed = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => invalid(format!("unexpected character {other:?} in bit string")),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::basis_state(parsed.len(), &parsed)
    }

    /// Wraps raw amplitudes. The length must be a power of two; no
    /// normalization is applied.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return invalid(format!("amplitude count {len} is not a power of two"));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return invalid(format!("{n_qubits} qubits exceeds the {MAX_QUBITS}-qubit limit"));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescales to unit norm. Fails on the zero vector.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QnnError::InvalidState(format!("cannot normalize a state of norm {norm}")));
        }
        let scale = 1.0 / norm;
        self.amps.iter_mut().for_each(|a| *a *= scale);
        Ok(())
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scale(&mut self, factor: Complex64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }

    /// Probability of reading `bit` on qubit `q` in the computational basis.
    pub fn probability(&self, q: usize, bit: bool) -> Result<f64> {
        let mask = self.mask(q)?;
        Ok(self.amps.iter().enumerate().filter(|(i, _)| (i & mask != 0) == bit).map(|(_, a)| a.norm_sqr()).sum())
    }

    /// Index of the single nonzero amplitude if this is a basis state.
    pub fn as_basis_index(&self) -> Option<usize> {
        let mut found = None;
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm_sqr() > 1e-24 {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found.filter(|&i| (self.amps[i].norm_sqr() - 1.0).abs() < 1e-12)
    }

    /// Bit mask of qubit `q` in an amplitude index.
    fn mask(&self, q: usize) -> Result<usize> {
        if q >= self.n_qubits {
            return invalid(format!("qubit {q} out of range for {} qubits", self.n_qubits));
        }
        Ok(1 << (self.n_qubits - 1 - q))
    }

    fn pair_masks(&self, q1: usize, q2: usize) -> Result<(usize, usize)> {
        if q1 == q2 {
            return invalid(format!("two-qubit gate needs distinct qubits, got {q1} twice"));
        }
        Ok((self.mask(q1)?, self.mask(q2)?))
    }

    /// Calls `f(a0, a1)` for every amplitude pair that differs only in the
    /// bit selected by `mask` (`a0` has the bit clear).
    fn for_each_pair(&mut self, mask: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        for block in self.amps.chunks_exact_mut(mask << 1) {
            let (lo, hi) = block.split_at_mut(mask);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a0, a1);
            }
        }
    }

    pub fn apply_x(&mut self, q: usize) -> Result<()> {
        let mask = self.mask(q)?;
        self.for_each_pair(mask, std::mem::swap);
        Ok(())
    }

    pub fn apply_y(&mut self, q: usize) -> Result<()> {
        let mask = self.mask(q)?;
        self.for_each_pair(mask, |a0, a1| {
            let (b0, b1) = (*a0, *a1);
            *a0 = -I * b1;
            *a1 = I * b0;
        });
        Ok(())
    }

    pub fn apply_z(&mut self, q: usize) -> Result<()> {
        let mask = self.mask(q)?;
        self.for_each_pair(mask, |_, a1| *a1 = -*a1);
        Ok(())
    }

    /// Phase shift `diag(1, e^{i phi})`.
    pub fn apply_phase(&mut self, q: usize, phi: f64) -> Result<()> {
        let mask = self.mask(q)?;
        let phase = Complex64::from_polar(1.0, phi);
        self.for_each_pair(mask, |_, a1| *a1 *= phase);
        Ok(())
    }

    pub fn apply_h(&mut self, q: usize) -> Result<()> {
        let mask = self.mask(q)?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        self.for_each_pair(mask, |a0, a1| {
            let (b0, b1) = (*a0, *a1);
            *a0 = (b0 + b1) * s;
            *a1 = (b0 - b1) * s;
        });
        Ok(())
    }

    /// Applies the bare Pauli operator `p` to qubit `q`.
    pub fn apply_pauli(&mut self, q: usize, p: PauliKind) -> Result<()> {
        match p {
            PauliKind::X => self.apply_x(q),
            PauliKind::Y => self.apply_y(q),
            PauliKind::Z => self.apply_z(q),
        }
    }

    /// Applies `P (x) P` to qubits `q1`, `q2`.
    pub fn apply_pauli_pair(&mut self, q1: usize, q2: usize, p: PauliKind) -> Result<()> {
        self.pair_masks(q1, q2)?;
        self.apply_pauli(q1, p)?;
        self.apply_pauli(q2, p)
    }

    /// Applies `exp(i theta P(x)P) = cos(theta) I + i sin(theta) P(x)P` to
    /// qubits `q1`, `q2`.
    pub fn apply_exp_pauli_pair(&mut self, q1: usize, q2: usize, p: PauliKind, theta: f64) -> Result<()> {
        let (m1, m2) = self.pair_masks(q1, q2)?;
        let (s, c) = theta.sin_cos();
        let amps = &mut self.amps[..];
        match p {
            PauliKind::Z => {
                let same = Complex64::new(c, s);
                let diff = Complex64::new(c, -s);
                for_each_quad(amps.len(), m1, m2, |i00, i01, i10, i11| {
                    amps[i00] *= same;
                    amps[i01] *= diff;
                    amps[i10] *= diff;
                    amps[i11] *= same;
                });
            }
            PauliKind::X | PauliKind::Y => {
                // P(x)P pairs bits (0,0) with (1,1) and (0,1) with (1,0). For
                // Y(x)Y the coefficient is -1 on equal bits and +1 otherwise.
                let is = Complex64::new(0.0, s);
                let (k_equal, k_diff) = if p == PauliKind::Y { (-is, is) } else { (is, is) };
                for_each_quad(amps.len(), m1, m2, |i00, i01, i10, i11| {
                    let (a00, a01, a10, a11) = (amps[i00], amps[i01], amps[i10], amps[i11]);
                    amps[i00] = a00 * c + a11 * k_equal;
                    amps[i11] = a11 * c + a00 * k_equal;
                    amps[i01] = a01 * c + a10 * k_diff;
                    amps[i10] = a10 * c + a01 * k_diff;
                });
            }
        }
        Ok(())
    }

    /// `<self|P(x)P|ket>` on qubits `q1`, `q2`, without modifying either state.
    pub fn pauli_pair_matrix_element(
        &self,
        q1: usize,
        q2: usize,
        p: PauliKind,
        ket: &StateVector,
    ) -> Result<Complex64> {
        if self.n_qubits != ket.n_qubits {
            return invalid(format!(
                "matrix element between {}-qubit and {}-qubit states",
                self.n_qubits, ket.n_qubits
            ));
        }
        let (m1, m2) = self.pair_masks(q1, q2)?;
        let (bra, ket) = (&self.amps[..], &ket.amps[..]);
        let mut acc = ZERO;
        for_each_quad(bra.len(), m1, m2, |i00, i01, i10, i11| {
            let x = |i: usize, j: usize| bra[i].conj() * ket[j];
            acc += match p {
                PauliKind::Z => x(i00, i00) - x(i01, i01) - x(i10, i10) + x(i11, i11),
                PauliKind::X => x(i00, i11) + x(i01, i10) + x(i10, i01) + x(i11, i00),
                PauliKind::Y => -x(i00, i11) + x(i01, i10) + x(i10, i01) - x(i11, i00),
            };
        });
        Ok(acc)
    }

    /// One backward step of adjoint differentiation for the gate
    /// `exp(i theta P(x)P)`: returns `<bra|P(x)P|ket>` and then applies the
    /// inverse rotation to both states, in a single pass.
    pub fn adjoint_pauli_pair_step(
        bra: &mut StateVector,
        ket: &mut StateVector,
        q1: usize,
        q2: usize,
        p: PauliKind,
        theta: f64,
    ) -> Result<Complex64> {
        if bra.n_qubits != ket.n_qubits {
            return invalid(format!("adjoint step on {}-qubit and {}-qubit states", bra.n_qubits, ket.n_qubits));
        }
        let (m1, m2) = bra.pair_masks(q1, q2)?;
        let (s, c) = (-theta).sin_cos();
        let (b, k) = (&mut bra.amps[..], &mut ket.amps[..]);
        let mut acc = ZERO;
        match p {
            PauliKind::Z => {
                let same = Complex64::new(c, s);
                let diff = Complex64::new(c, -s);
                for_each_quad(b.len(), m1, m2, |i00, i01, i10, i11| {
                    let x = |i: usize| b[i].conj() * k[i];
                    acc += x(i00) - x(i01) - x(i10) + x(i11);
                    for (i, f) in [(i00, same), (i01, diff), (i10, diff), (i11, same)] {
                        b[i] *= f;
                        k[i] *= f;
                    }
                });
            }
            PauliKind::X | PauliKind::Y => {
                let is = Complex64::new(0.0, s);
                let (sign_equal, k_equal, k_diff) = if p == PauliKind::Y { (-1.0, -is, is) } else { (1.0, is, is) };
                for_each_quad(b.len(), m1, m2, |i00, i01, i10, i11| {
                    let x = |i: usize, j: usize| b[i].conj() * k[j];
                    acc += (x(i00, i11) + x(i11, i00)) * sign_equal + x(i01, i10) + x(i10, i01);
                    for v in [&mut *b, &mut *k] {
                        let (a00, a01, a10, a11) = (v[i00], v[i01], v[i10], v[i11]);
                        v[i00] = a00 * c + a11 * k_equal;
                        v[i11] = a11 * c + a00 * k_equal;
                        v[i01] = a01 * c + a10 * k_diff;
                        v[i10] = a10 * c + a01 * k_diff;
                    }
                });
            }
        }
        Ok(acc)
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        if self.n_qubits != other.n_qubits {
            return invalid(format!("inner product of {}-qubit and {}-qubit states", self.n_qubits, other.n_qubits));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// `<psi|P_q|psi>` for a normalized state, clamped to `[-1, 1]`.
    pub fn expectation_pauli(&self, q: usize, p: PauliKind) -> Result<f64> {
        let mask = self.mask(q)?;
        let norm = self.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QnnError::InvalidState(format!(
                "expectation requires a normalized state, squared norm is {norm}"
            )));
        }
        let value: Complex64 = match p {
            PauliKind::Z => self
                .amps
                .iter()
                .enumerate()
                .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum::<f64>()
                .into(),
            PauliKind::X | PauliKind::Y => {
                // Pair sum of conj(a0) (P psi)_0 + conj(a1) (P psi)_1.
                let mut acc = ZERO;
                for block in self.amps.chunks_exact(mask << 1) {
                    let (lo, hi) = block.split_at(mask);
                    for (a0, a1) in lo.iter().zip(hi) {
                        acc += match p {
                            PauliKind::X => a0.conj() * a1 + a1.conj() * a0,
                            _ => a0.conj() * (-I * a1) + a1.conj() * (I * a0),
                        };
                    }
                }
                acc
            }
        };
        debug_assert!(value.im.abs() < 1e-10, "Hermitian expectation has imaginary part {}", value.im);
        Ok(value.re.clamp(-1.0, 1.0))
    }
}

/// Calls `f(i00, i01, i10, i11)` for every group of four indices below `len`
/// that differ only in the bits `m1` and `m2`; `iXY` has bit `m1` = X and
/// bit `m2` = Y.
#[inline(always)]
fn for_each_quad(len: usize, m1: usize, m2: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (lo, hi) = (m1.min(m2), m1.max(m2));
    for n in 0..len / 4 {
        // Insert zero bits at the positions of `lo` and then `hi`.
        let i = (n & (lo - 1)) | ((n & !(lo - 1)) << 1);
        let i = (i & (hi - 1)) | ((i & !(hi - 1)) << 1);
        f(i, i | m2, i | m1, i | m1 | m2);
    }
}

/// Amplitude index of the basis state whose qubit `i` holds `bits[i]`.
pub fn basis_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}

/// Inverse of [`basis_index`] for an `n_qubits` register.
pub fn index_bits(index: usize, n_qubits: usize) -> Vec<bool> {
    (0..n_qubits).map(|q| index >> (n_qubits - 1 - q) & 1 == 1).collect()
}
