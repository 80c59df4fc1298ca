//! Classically simulated quantum neural network (QNN) for binary image
//! classification, a parameter-matched dense baseline, and the experiment
//! harness that compares the two on downsampled MNIST.
//!
//! Module map:
//!
//! * [`statevec`]: dense statevector simulator and the gate kernels.
//! * [`circuit`]: parametrized circuit IR and the QNN model builder.
//! * [`qml`]: loss, gradient engines, optimizer steps, superposition batches.
//! * [`data`]: IDX parsing and the downsample/binarize/encode pipeline.
//! * [`baseline`]: the small classical dense network.
//! * [`harness`]: run configuration, training loops, sweeps and reports.
//!
//! # Conventions
//!
//! Qubit 0 is the most significant bit of an amplitude index, so in an
//! `n`-qubit register qubit `q` lives at bit position `n - 1 - q`. Basis
//! states therefore read left to right: `|z1 z2 ... zn, r>` has index
//! `z1 z2 ... zn r` in binary. The readout qubit is always the last qubit,
//! i.e. the least significant bit.
//!
//! Parametrized two-qubit gates are `exp(+i theta P(x)P)` with the positive
//! sign in the exponent. In terms of other common conventions,
//! `exp(+i theta P(x)P) = exp(-i (-2 theta)/2 P(x)P)`, i.e. a standard
//! `R_PP(phi)` rotation with `phi = -2 theta`.

pub mod baseline;
pub mod circuit;
pub mod data;
pub mod error;
pub mod harness;
pub mod qml;
pub mod statevec;

pub use error::{QnnError, Result};
