//! Parameter-matched classical baseline: a `dim^2 -> 2 -> 1` tanh network.
//!
//! With hidden width 2 the parameter totals are 13, 23 and 37 for 2x2, 3x3
//! and 4x4 inputs. It is trained on the same `1 - label * prediction` loss
//! as the QNN, with pixels fed as `+1`/`-1` features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::validate_dim;
use crate::data::{BinarizedImage, DatasetSplit};
use crate::error::{invalid, Result};
use crate::harness::{accuracy, EpochMetrics};

pub const HIDDEN_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| self.activation.apply(row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network from layer widths; weights uniform in `[-0.5, 0.5]`,
    /// biases zero.
    pub fn with_widths<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weights: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-0.5..=0.5)).collect()).collect(),
                biases: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() * l.inputs() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.weights.iter().for_each(|row| out.extend_from_slice(row));
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return invalid(format!("network has {} parameters, got {}", self.param_count(), params.len()));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for row in &mut l.weights {
                row.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            }
            l.biases.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return invalid(format!("network takes {} inputs, got {}", self.n_inputs(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let out = self.layers.iter().fold(x.to_vec(), |a, l| l.forward(&a));
        Ok(out[0])
    }

    /// Loss `1 - label * y` and its gradient, flattened like [`Self::params`].
    pub fn loss_and_grad(&self, x: &[f64], label: f64) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut activations = vec![x.to_vec()];
        for l in &self.layers {
            let next = l.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        let y = activations.last().expect("non-empty")[0];

        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut delta = vec![-label];
        for (li, l) in self.layers.iter().enumerate().rev() {
            let (input, output) = (&activations[li], &activations[li + 1]);
            let dz: Vec<f64> = delta.iter().zip(output).map(|(d, a)| d * l.activation.derivative(*a)).collect();
            let mut g = Vec::with_capacity(l.weights.len() * l.inputs() + l.biases.len());
            for d in &dz {
                g.extend(input.iter().map(|xi| d * xi));
            }
            g.extend_from_slice(&dz);
            per_layer.push(g);
            delta = (0..l.inputs()).map(|j| l.weights.iter().zip(&dz).map(|(row, d)| row[j] * d).sum()).collect();
        }
        per_layer.reverse();
        Ok((1.0 - label * y, per_layer.concat()))
    }
}

/// The `dim^2 -> 2 -> 1` tanh network.
pub fn build_fair(dim: usize, seed: u64) -> Result<DenseNet> {
    validate_dim(dim, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DenseNet::with_widths(&[dim * dim, HIDDEN_WIDTH, 1], &[Activation::Tanh, Activation::Tanh], &mut rng))
}

pub fn predict(net: &DenseNet, sample: &BinarizedImage) -> Result<f64> {
    net.forward(&sample.grid.signed_features())
}

/// Mini-batch gradient descent on `1 - label * y`, reshuffling every epoch.
pub fn train_fair(
    net: DenseNet,
    split: &DatasetSplit,
    epochs: usize,
    batch_size: usize,
    r: f64,
    seed: u64,
) -> Result<(DenseNet, Vec<EpochMetrics>)> {
    train_fair_with(net, split, epochs, batch_size, r, seed, |_| {})
}

/// [`train_fair`] calling `on_epoch` after each epoch is evaluated.
pub fn train_fair_with(
    mut net: DenseNet,
    split: &DatasetSplit,
    epochs: usize,
    batch_size: usize,
    r: f64,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(DenseNet, Vec<EpochMetrics>)> {
    if split.train.is_empty() || split.test.is_empty() {
        return invalid("training and test sets must be non-empty");
    }
    if batch_size == 0 {
        return invalid("batch size must be positive");
    }
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("learning rate must be positive, got {r}"));
    }
    let features: Vec<Vec<f64>> = split.train.iter().map(|s| s.grid.signed_features()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut metrics = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grad = vec![0.0; net.param_count()];
            for &i in batch {
                let (l, g) = net.loss_and_grad(&features[i], f64::from(split.train[i].label))?;
                loss_sum += l;
                grad.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
            }
            let scale = r / batch.len() as f64;
            let next: Vec<f64> = net.params().iter().zip(&grad).map(|(p, g)| p - scale * g).collect();
            net.set_params(&next)?;
        }
        let outputs = split.test.iter().map(|s| predict(&net, s)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<i8> = split.test.iter().map(|s| s.label).collect();
        let m = EpochMetrics {
            train_loss: loss_sum / split.train.len() as f64,
            test_accuracy: accuracy(&outputs, &labels)?,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok((net, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_totals() {
        for (dim, total) in [(2, 13), (3, 23), (4, 37)] {
            assert_eq!(build_fair(dim, 0).unwrap().param_count(), total);
        }
        assert!(build_fair(1, 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = build_fair(2, 1).unwrap();
        net.set_params(&[0.0; 13]).unwrap();
        assert_eq!(net.forward(&[1.0, -1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn output_is_inside_open_interval() {
        let mut net = build_fair(3, 2).unwrap();
        let big: Vec<f64> = (0..23).map(|i| if i % 2 == 0 { 3.0 } else { -2.0 }).collect();
        net.set_params(&big).unwrap();
        let y = net.forward(&[1.0; 9]).unwrap();
        assert!(y > -1.0 && y < 1.0);
    }

    #[test]
    fn params_round_trip() {
        let net = build_fair(4, 9).unwrap();
        let mut copy = build_fair(4, 10).unwrap();
        copy.set_params(&net.params()).unwrap();
        assert_eq!(copy, net);
        assert!(net.params().iter().all(|w| (-0.5..=0.5).contains(w)));
    }
}
