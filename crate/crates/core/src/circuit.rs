//! Parametrized circuit IR and the QNN model builder.
//!
//! A [`Circuit`] is an ordered gate list applied left to right, so the
//! first gate in the list acts first. Parametrized gates reference a slot
//! in a [`ParamVector`]; the same slot may appear in several gates.
//!
//! # Text format
//!
//! One item per line; blank lines and `#` comments are ignored:
//!
//! ```text
//! qubits 5
//! params 8
//! x 4
//! h 4
//! xx 0 4 $0        # exp(i theta_0 X0 X4)
//! zz 0 4 $4
//! phase 1 0.25     # fixed angle in radians
//! yy 1 2 0.5       # two-qubit gate with a fixed angle
//! h 4
//! ```

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QnnError, Result};
use crate::statevec::{PauliKind, StateVector};

/// Grid sizes covered by the default experiments.
pub const SUPPORTED_DIMS: [usize; 3] = [2, 3, 4];

/// Largest grid the builder accepts when large grids are explicitly allowed.
pub const MAX_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Angle {
    /// Index into the circuit's parameter vector.
    Slot(usize),
    /// Constant angle in radians.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    X(usize),
    H(usize),
    Z(usize),
    Phase {
        qubit: usize,
        phi: f64,
    },
    /// `exp(i theta P(x)P)` on two distinct qubits.
    ExpPauliPair {
        pauli: PauliKind,
        qubits: (usize, usize),
        angle: Angle,
    },
}

impl Gate {
    pub fn targets(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::H(q) | Gate::Z(q) | Gate::Phase { qubit: q, .. } => vec![q],
            Gate::ExpPauliPair { qubits: (a, b), .. } => vec![a, b],
        }
    }

    /// Parameter slot driving this gate, if any.
    pub fn slot(&self) -> Option<usize> {
        match *self {
            Gate::ExpPauliPair { angle: Angle::Slot(k), .. } => Some(k),
            _ => None,
        }
    }

    fn angle(angle: Angle, params: &[f64]) -> f64 {
        match angle {
            Angle::Slot(k) => params[k],
            Angle::Fixed(theta) => theta,
        }
    }

    /// Applies the gate to `state`. Slots must already be validated.
    pub fn apply(&self, state: &mut StateVector, params: &[f64]) -> Result<()> {
        match *self {
            Gate::X(q) => state.apply_x(q),
            Gate::H(q) => state.apply_h(q),
            Gate::Z(q) => state.apply_z(q),
            Gate::Phase { qubit, phi } => state.apply_phase(qubit, phi),
            Gate::ExpPauliPair { pauli, qubits: (a, b), angle } => {
                state.apply_exp_pauli_pair(a, b, pauli, Self::angle(angle, params))
            }
        }
    }

    /// Applies the adjoint of the gate.
    pub fn apply_inverse(&self, state: &mut StateVector, params: &[f64]) -> Result<()> {
        match *self {
            Gate::X(_) | Gate::H(_) | Gate::Z(_) => self.apply(state, params),
            Gate::Phase { qubit, phi } => state.apply_phase(qubit, -phi),
            Gate::ExpPauliPair { pauli, qubits: (a, b), angle } => {
                state.apply_exp_pauli_pair(a, b, pauli, -Self::angle(angle, params))
            }
        }
    }

    /// Backward step of adjoint differentiation: undoes the gate on both
    /// states and, for slot gates, returns `<bra|P(x)P|ket>` taken before
    /// the undo.
    pub fn adjoint_step(
        &self,
        bra: &mut StateVector,
        ket: &mut StateVector,
        params: &[f64],
    ) -> Result<Option<Complex64>> {
        match *self {
            Gate::ExpPauliPair { pauli, qubits: (a, b), angle: Angle::Slot(k) } => {
                StateVector::adjoint_pauli_pair_step(bra, ket, a, b, pauli, params[k]).map(Some)
            }
            _ => {
                self.apply_inverse(bra, params)?;
                self.apply_inverse(ket, params)?;
                Ok(None)
            }
        }
    }

    /// `<bra|P(x)P|ket>` for the generator of a two-qubit rotation; `None`
    /// for gates without a generator.
    pub fn generator_matrix_element(&self, bra: &StateVector, ket: &StateVector) -> Option<Result<Complex64>> {
        match *self {
            Gate::ExpPauliPair { pauli, qubits: (a, b), .. } => Some(bra.pauli_pair_matrix_element(a, b, pauli, ket)),
            _ => None,
        }
    }

    /// Applies the generator `P(x)P` of a two-qubit rotation; `None` for
    /// gates without a generator.
    pub fn apply_generator(&self, state: &mut StateVector) -> Option<Result<()>> {
        match *self {
            Gate::ExpPauliPair { pauli, qubits: (a, b), .. } => Some(state.apply_pauli_pair(a, b, pauli)),
            _ => None,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::X(q) => write!(f, "x {q}"),
            Gate::H(q) => write!(f, "h {q}"),
            Gate::Z(q) => write!(f, "z {q}"),
            Gate::Phase { qubit, phi } => write!(f, "phase {qubit} {phi:?}"),
            Gate::ExpPauliPair { pauli, qubits: (a, b), angle } => {
                let p = pauli.symbol();
                match angle {
                    Angle::Slot(k) => write!(f, "{p}{p} {a} {b} ${k}"),
                    Angle::Fixed(theta) => write!(f, "{p}{p} {a} {b} {theta:?}"),
                }
            }
        }
    }
}

/// Which observable is read on which qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Readout {
    pub qubit: usize,
    pub observable: PauliKind,
}

impl Readout {
    pub fn z(qubit: usize) -> Self {
        Self { qubit, observable: PauliKind::Z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    n_params: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize, n_params: usize) -> Self {
        Self { n_qubits, n_params, gates: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Appends a gate after checking targets and parameter slot.
    pub fn push(&mut self, gate: Gate) -> Result<()> {
        for q in gate.targets() {
            if q >= self.n_qubits {
                return invalid(format!("gate `{gate}` targets qubit {q} of {}", self.n_qubits));
            }
        }
        if let Gate::ExpPauliPair { qubits: (a, b), angle, .. } = gate {
            if a == b {
                return invalid(format!("gate `{gate}` needs two distinct qubits"));
            }
            match angle {
                Angle::Slot(k) if k >= self.n_params => {
                    return invalid(format!("gate `{gate}` uses slot {k} of {}", self.n_params))
                }
                Angle::Fixed(theta) if !theta.is_finite() => {
                    return invalid(format!("gate `{gate}` has a non-finite angle"))
                }
                _ => {}
            }
        }
        if let Gate::Phase { phi, .. } = gate {
            if !phi.is_finite() {
                return invalid(format!("gate `{gate}` has a non-finite angle"));
            }
        }
        self.gates.push(gate);
        Ok(())
    }

    fn check_shapes(&self, params: &ParamVector, input: &StateVector) -> Result<()> {
        if params.len() != self.n_params {
            return invalid(format!("circuit has {} parameters, got {}", self.n_params, params.len()));
        }
        if input.n_qubits() != self.n_qubits {
            return invalid(format!("circuit acts on {} qubits, input state has {}", self.n_qubits, input.n_qubits()));
        }
        Ok(())
    }

    /// Applies every gate in order to `state` in place.
    pub fn apply(&self, params: &ParamVector, state: &mut StateVector) -> Result<()> {
        self.check_shapes(params, state)?;
        self.gates.iter().try_for_each(|g| g.apply(state, params.as_slice()))
    }

    /// Backward sweep of adjoint differentiation. `ket` must hold the output
    /// state `U|input>` and `bra` the state `O U|input>`. Gates are undone on
    /// both states from last to first; before a slot gate `k` is undone,
    /// `on_slot(k, <bra|P(x)P|ket>)` is called.
    pub fn adjoint_sweep(
        &self,
        params: &ParamVector,
        bra: &mut StateVector,
        ket: &mut StateVector,
        mut on_slot: impl FnMut(usize, Complex64),
    ) -> Result<()> {
        self.check_shapes(params, bra)?;
        self.check_shapes(params, ket)?;
        for g in self.gates.iter().rev() {
            if let Some(m) = g.adjoint_step(bra, ket, params.as_slice())? {
                on_slot(g.slot().expect("only slot gates report a matrix element"), m);
            }
        }
        Ok(())
    }

    /// Applies the adjoint circuit (gates reversed and inverted) in place.
    pub fn apply_inverse(&self, params: &ParamVector, state: &mut StateVector) -> Result<()> {
        self.check_shapes(params, state)?;
        self.gates.iter().rev().try_for_each(|g| g.apply_inverse(state, params.as_slice()))
    }

    /// `U(theta)|input>`.
    pub fn evaluate(&self, params: &ParamVector, input: &StateVector) -> Result<StateVector> {
        let mut state = input.clone();
        self.apply(params, &mut state)?;
        Ok(state)
    }

    /// `<input|U^dag O U|input>` with `O` the readout observable.
    pub fn expectation(&self, params: &ParamVector, input: &StateVector, readout: Readout) -> Result<f64> {
        self.evaluate(params, input)?.expectation_pauli(readout.qubit, readout.observable)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "qubits {}", self.n_qubits)?;
        writeln!(f, "params {}", self.n_params)?;
        for gate in &self.gates {
            writeln!(f, "{gate}")?;
        }
        Ok(())
    }
}

impl FromStr for Circuit {
    type Err = QnnError;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let mut header = |key: &str| -> Result<usize> {
            let (lineno, line) = lines.next().ok_or_else(|| parse_err(0, format!("missing `{key}` header")))?;
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                [k, v] if k == key => v.parse().map_err(|_| parse_err(lineno, format!("bad {key} count `{v}`"))),
                _ => Err(parse_err(lineno, format!("expected `{key} N`, found `{line}`"))),
            }
        };
        let n_qubits = header("qubits")?;
        let n_params = header("params")?;
        let mut circuit = Circuit::new(n_qubits, n_params);

        for (lineno, line) in lines {
            let gate = parse_gate(line).map_err(|reason| parse_err(lineno, reason))?;
            circuit.push(gate).map_err(|e| parse_err(lineno, e.to_string()))?;
        }
        Ok(circuit)
    }
}

fn parse_err(line: usize, reason: impl fmt::Display) -> QnnError {
    QnnError::InvalidArgument(format!("circuit text line {line}: {reason}"))
}

fn parse_gate(line: &str) -> std::result::Result<Gate, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let qubit = |s: &str| s.parse::<usize>().map_err(|_| format!("bad qubit index `{s}`"));
    let real = |s: &str| s.parse::<f64>().map_err(|_| format!("bad angle `{s}`"));
    match tokens[..] {
        ["x", q] => Ok(Gate::X(qubit(q)?)),
        ["h", q] => Ok(Gate::H(qubit(q)?)),
        ["z", q] => Ok(Gate::Z(qubit(q)?)),
        ["phase", q, phi] => Ok(Gate::Phase { qubit: qubit(q)?, phi: real(phi)? }),
        [kind, a, b, angle] if kind.len() == 2 && kind.as_bytes()[0] == kind.as_bytes()[1] => {
            let pauli = PauliKind::from_symbol(kind.chars().next().unwrap_or(' '))
                .ok_or_else(|| format!("unknown gate `{kind}`"))?;
            let angle = match angle.strip_prefix('$') {
                Some(slot) => Angle::Slot(slot.parse().map_err(|_| format!("bad slot `{angle}`"))?),
                None => Angle::Fixed(real(angle)?),
            };
            Ok(Gate::ExpPauliPair { pauli, qubits: (qubit(a)?, qubit(b)?), angle })
        }
        _ => Err(format!("cannot parse gate `{line}`")),
    }
}

/// Trainable angles of a circuit. Entries are unconstrained finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if let Some(i) = thetas.iter().position(|t| !t.is_finite()) {
            return invalid(format!("parameter {i} is not finite"));
        }
        Ok(Self(thetas))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Uniform draws from `[0, 2 pi)`.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.random_range(0.0..TAU)).collect())
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn validate_dim(dim: usize, allow_large: bool) -> Result<()> {
    let max = if allow_large { MAX_DIM } else { *SUPPORTED_DIMS.last().unwrap() };
    if (SUPPORTED_DIMS[0]..=max).contains(&dim) {
        Ok(())
    } else {
        invalid(format!("grid size {dim} is outside 2..={max}"))
    }
}

/// Builds the single-block QNN for a `dim x dim` input grid.
///
/// Data qubits are `0..dim*dim` in row-major grid order and the readout is
/// qubit `dim*dim`. The gate list is `X(r) H(r)`, one `exp(i theta XX)` per
/// data qubit coupled to the readout, one `exp(i theta ZZ)` per data qubit,
/// then `H(r)`. Slot `d` drives the XX gate of data qubit `d` and slot
/// `dim*dim + d` its ZZ gate.
pub fn build_qnn(dim: usize) -> Result<(Circuit, usize)> {
    validate_dim(dim, false)?;
    build_qnn_grid(dim)
}

/// As [`build_qnn`] but also accepts the 5x5 grid.
pub fn build_qnn_large(dim: usize) -> Result<(Circuit, usize)> {
    validate_dim(dim, true)?;
    build_qnn_grid(dim)
}

fn build_qnn_grid(dim: usize) -> Result<(Circuit, usize)> {
    let n_data = dim * dim;
    let readout = n_data;
    let mut circuit = Circuit::new(n_data + 1, 2 * n_data);
    circuit.push(Gate::X(readout))?;
    circuit.push(Gate::H(readout))?;
    for (layer, pauli) in [PauliKind::X, PauliKind::Z].into_iter().enumerate() {
        for d in 0..n_data {
            circuit.push(Gate::ExpPauliPair { pauli, qubits: (d, readout), angle: Angle::Slot(layer * n_data + d) })?;
        }
    }
    circuit.push(Gate::H(readout))?;
    Ok((circuit, readout))
}
