use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Hidden width of the production networks.
pub const HIDDEN_UNITS: usize = 100;

/// Fully connected layer `x -> x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.rows
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }
}

/// Feed-forward network: leaky-rectified hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub leaky_slope: f64,
}

impl Network {
    /// Random network with the given layer widths (`[in, h1, ..., out]`).
    /// Weights and biases are uniform in `±1/sqrt(fan_in)`. With zero biases
    /// a network of one scalar input is positively homogeneous at start, so
    /// every initial relay boundary would sit at the origin.
    pub fn new<R: RngCore>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| bound * (2.0 * rng::uniform_open(rng) - 1.0))
                    .collect();
                let bias = (0..w[1])
                    .map(|_| bound * (2.0 * rng::uniform_open(rng) - 1.0))
                    .collect();
                Dense {
                    weight: Matrix::from_vec(w[0], w[1], data).unwrap(),
                    bias: Matrix::from_vec(1, w[1], bias).unwrap(),
                }
            })
            .collect();
        Ok(Network {
            layers,
            leaky_slope: LEAKY_SLOPE,
        })
    }

    /// Three dense layers: two hidden layers of [`HIDDEN_UNITS`] and a linear
    /// output layer of width `outputs`.
    pub fn standard<R: RngCore>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Network::new(&[inputs, HIDDEN_UNITS, HIDDEN_UNITS, outputs], rng)
    }

    /// All-zero network (zero output everywhere).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        Ok(Network {
            layers: widths
                .windows(2)
                .map(|w| Dense {
                    weight: Matrix::zeros(w[0], w[1]),
                    bias: Matrix::zeros(1, w[1]),
                })
                .collect(),
            leaky_slope: LEAKY_SLOPE,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, leaky_slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.outputs()) {
                return Err(Error::Shape(format!("layer {i}: bias shape {:?}", l.bias.shape())));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Network {
            layers,
            leaky_slope,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    /// Number of parameter matrices (weight and bias per layer).
    pub fn param_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(input))?.data)
    }

    /// Forward pass over a `B x in` batch.
    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols != self.input_width() {
            return Err(Error::Shape(format!(
                "network takes {} inputs, got {}",
                self.input_width(),
                input.cols
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(h.rows, layer.outputs());
            for r in 0..out.rows {
                out.row_mut(r).copy_from_slice(&layer.bias.data);
            }
            gemm(&h, false, &layer.weight, false, &mut out, 1.0);
            if i < last {
                let s = self.leaky_slope;
                out.data.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v *= s
                    }
                });
            }
            h = out;
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`. With `first_slot = Some(s)` the
    /// parameters are registered as slots `s, s+1, ...` (weight then bias per
    /// layer); with `None` they enter as constants.
    pub fn forward_tape(&self, tape: &mut Tape, input: Var, first_slot: Option<usize>) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = match first_slot {
                Some(s) => (
                    tape.param(s + 2 * i, &layer.weight),
                    tape.param(s + 2 * i + 1, &layer.bias),
                ),
                None => (
                    tape.constant(layer.weight.clone()),
                    tape.constant(layer.bias.clone()),
                ),
            };
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i < last {
                h = tape.leaky_relu(h, self.leaky_slope);
            }
        }
        Ok(h)
    }
}
