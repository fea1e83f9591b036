//! Unit-level network assembly.
//!
//! Every unit of a new layer is an activation applied to an affine
//! expression of the previous layer's outputs (or of the inputs, for the
//! first layer). The final layer is linear.

use crate::error::Result;
use crate::network::{ActivationKind, Architecture, LayerActivation, Network};

/// `constant + Σ coeff · source[index]` over the outputs of the current last
/// layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn unit(index: usize) -> Self {
        Affine {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Affine {
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn plus(&self, other: &Affine) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Affine {
            terms,
            constant: self.constant + other.constant,
        }
    }

    pub fn minus(&self, other: &Affine) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    /// `Σ coeffs[k] · exprs[k]`.
    pub fn combination(coeffs: &[f64], exprs: &[Affine]) -> Self {
        let mut out = Affine::default();
        for (c, e) in coeffs.iter().zip(exprs) {
            if *c != 0.0 {
                out = out.plus(&e.scaled(*c));
            }
        }
        out
    }
}

#[derive(Debug)]
pub(crate) struct NetBuilder {
    input_dim: usize,
    layers: Vec<Vec<(ActivationKind, Affine)>>,
}

impl NetBuilder {
    pub fn new(input_dim: usize) -> Self {
        NetBuilder {
            input_dim,
            layers: Vec::new(),
        }
    }

    /// Inputs as expressions, valid before the first `push_layer`.
    pub fn inputs(&self) -> Vec<Affine> {
        (0..self.input_dim).map(Affine::unit).collect()
    }

    /// Appends a hidden layer; returns each unit's output as an expression
    /// over the new layer.
    pub fn push_layer(&mut self, units: Vec<(ActivationKind, Affine)>) -> Vec<Affine> {
        let n = units.len();
        self.layers.push(units);
        (0..n).map(Affine::unit).collect()
    }

    /// Closes the network with a linear layer producing `outputs`.
    pub fn finish(mut self, outputs: Vec<Affine>) -> Result<Network> {
        self.layers
            .push(outputs.into_iter().map(|e| (ActivationKind::Identity, e)).collect());

        let mut dims = vec![self.input_dim];
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n_in = *dims.last().unwrap();
            let mut w = vec![0.0; n_in * layer.len()];
            let mut b = vec![0.0; layer.len()];
            for (r, (_, expr)) in layer.iter().enumerate() {
                for &(c, coeff) in &expr.terms {
                    w[r * n_in + c] += coeff;
                }
                b[r] = expr.constant;
            }
            activations.push(LayerActivation::from_units(layer.iter().map(|(k, _)| *k).collect()));
            dims.push(layer.len());
            weights.push(w);
            biases.push(b);
        }
        Network::new(Architecture::new(dims, activations)?, weights, biases)
    }
}

/// Four ReLU² units realising `x·y = ¼[(x+y)² − (x−y)²]`.
pub(crate) fn product_units(x: &Affine, y: &Affine) -> [(ActivationKind, Affine); 4] {
    let s = x.plus(y);
    let t = x.minus(y);
    [
        (ActivationKind::Relu2, s.clone()),
        (ActivationKind::Relu2, s.scaled(-1.0)),
        (ActivationKind::Relu2, t.clone()),
        (ActivationKind::Relu2, t.scaled(-1.0)),
    ]
}

/// Readout of four consecutive product units starting at `first`, times `scale`.
pub(crate) fn product_readout(first: usize, scale: f64) -> Affine {
    let q = 0.25 * scale;
    Affine {
        terms: vec![(first, q), (first + 1, q), (first + 2, -q), (first + 3, -q)],
        constant: 0.0,
    }
}
