use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::numerics::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Perceptron with tanh hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub output: Activation,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `widths` lists every layer
    /// width including input and output.
    pub fn xavier(widths: &[usize], output: Activation, rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer { weight: xavier_matrix(w[1], w[0], rng), bias: vec![0.0; w[1]] })
            .collect();
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    /// Evaluates every column of `x`.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(layer.weight.rows(), h.cols());
            gemm(1.0, &layer.weight, false, &h, false, 0.0, &mut out);
            let cols = out.cols();
            let act = i < last || self.output == Activation::Tanh;
            for (r, b) in layer.bias.iter().enumerate() {
                for v in &mut out.as_mut_slice()[r * cols..(r + 1) * cols] {
                    *v += b;
                    if act {
                        *v = v.tanh();
                    }
                }
            }
            h = out;
        }
        h
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        self.forward(&Matrix::column(x)).into_vec()
    }

    /// Product of layer spectral norms; a Lipschitz bound since tanh is
    /// 1-Lipschitz.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| crate::numerics::svd(&l.weight).map(|s| s.sigma.first().copied().unwrap_or(0.0)).unwrap_or(f64::INFINITY))
            .product()
    }

    pub(crate) fn push_params(&self, prefix: &str, set: &mut crate::autodiff::ParameterSet) {
        for (i, l) in self.layers.iter().enumerate() {
            set.insert(format!("{prefix}.{i}.weight"), l.weight.clone());
            set.insert(format!("{prefix}.{i}.bias"), Matrix::column(&l.bias));
        }
    }

    pub(crate) fn pull_params(&mut self, prefix: &str, set: &crate::autodiff::ParameterSet) -> Option<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.weight = set.get(&format!("{prefix}.{i}.weight"))?.clone();
            l.bias = set.get(&format!("{prefix}.{i}.bias"))?.as_slice().to_vec();
        }
        Some(())
    }

    pub(crate) fn check_shapes(&self) -> Result<(), String> {
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].weight.rows() != w[1].weight.cols() {
                return Err(format!("layer {} outputs {} but layer {} expects {}", i, w[0].weight.rows(), i + 1, w[1].weight.cols()));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(format!("layer {i} bias has {} entries for {} outputs", l.bias.len(), l.weight.rows()));
            }
        }
        Ok(())
    }
}

pub(crate) fn xavier_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let a = if rows + cols == 0 { 0.0 } else { (6.0 / (rows + cols) as f64).sqrt() };
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..=a))
}

/// Tape handles for one perceptron: `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub output: Activation,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(w, b, h)?;
            if i < last || self.output == Activation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}
