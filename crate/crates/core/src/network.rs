//! Feed-forward networks with per-layer (or per-unit) ReLU / ReLU² / identity
//! activations.
//!
//! A network with depth `L` is the recursion
//!
//! ```text
//! f_0 = x,   f_l = act_l(A_l f_{l-1} + b_l),   l = 1..L
//! ```
//!
//! where the last layer is normally the identity. Weights are stored
//! row-major with shape `(N_l, N_{l-1})`.
//!
//! # Parameter order
//!
//! Flattened parameter vectors are layer-major: for each layer, the weight
//! matrix in row-major order followed by the bias vector. Derivative routines,
//! the trainer, and the on-disk format all use this order.
//!
//! # Derivative conventions
//!
//! `relu'(0) = 0`, `relu2'(x) = 2 max(0, x)`, `relu2''(x) = 2 [x > 0]`. With
//! these conventions the input gradient and both parameter Jacobians are exact
//! for piecewise-quadratic networks away from measure-zero kink sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar activation applied component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Relu2,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Relu2 => {
                let r = x.max(0.0);
                r * r
            }
            ActivationKind::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Relu2 => 2.0 * x.max(0.0),
            ActivationKind::Identity => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu2 if x > 0.0 => 2.0,
            _ => 0.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Relu2 => "relu2",
            ActivationKind::Identity => "identity",
        }
    }
}

/// Activation of one layer: either shared by all units or given per unit.
///
/// Per-unit layers are what the gradient-norm construction produces, where
/// ReLU and ReLU² units sit side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerActivation {
    Uniform(ActivationKind),
    PerUnit(Vec<ActivationKind>),
}

impl LayerActivation {
    #[inline]
    pub fn kind(&self, unit: usize) -> ActivationKind {
        match self {
            LayerActivation::Uniform(k) => *k,
            LayerActivation::PerUnit(ks) => ks[unit],
        }
    }

    /// True when every unit uses `kind`.
    pub fn is_all(&self, kind: ActivationKind) -> bool {
        match self {
            LayerActivation::Uniform(k) => *k == kind,
            LayerActivation::PerUnit(ks) => ks.iter().all(|k| *k == kind),
        }
    }

    /// Collapses a per-unit list to `Uniform` when all units agree.
    pub fn from_units(units: Vec<ActivationKind>) -> Self {
        match units.first() {
            Some(first) if units.iter().all(|k| k == first) => LayerActivation::Uniform(*first),
            _ => LayerActivation::PerUnit(units),
        }
    }
}

impl From<ActivationKind> for LayerActivation {
    fn from(kind: ActivationKind) -> Self {
        LayerActivation::Uniform(kind)
    }
}

/// Layer sizes `N_0..N_L` and one activation per affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<LayerActivation>,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, activations: Vec<LayerActivation>) -> Result<Self> {
        let arch = Architecture {
            layer_dims,
            activations,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `hidden` ReLU² layers followed by a linear scalar output.
    pub fn relu2_mlp(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts: Vec<LayerActivation> = hidden.iter().map(|_| ActivationKind::Relu2.into()).collect();
        acts.push(ActivationKind::Identity.into());
        Architecture::new(dims, acts)
    }

    fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidNetwork(
                "need at least an input and an output layer".into(),
            ));
        }
        if self.layer_dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidNetwork("layer dimensions must be positive".into()));
        }
        if self.activations.len() != self.layer_dims.len() - 1 {
            return Err(Error::InvalidNetwork(format!(
                "{} activations for {} affine layers",
                self.activations.len(),
                self.layer_dims.len() - 1
            )));
        }
        for (l, act) in self.activations.iter().enumerate() {
            if let LayerActivation::PerUnit(ks) = act {
                if ks.len() != self.layer_dims[l + 1] {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {} has {} units but {} activation tags",
                        l + 1,
                        self.layer_dims[l + 1],
                        ks.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Number of affine layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Largest layer size, input included.
    pub fn width(&self) -> usize {
        self.layer_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offset of layer `l` (0-based) in the flat parameter vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_dims[..=layer].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Value and input gradient of a scalar network at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    pub input_gradient: Vec<f64>,
}

/// Exact parameter derivatives at one point.
///
/// `value[k] = ∂u/∂φ_k` and `input_gradient[i][k] = ∂(∂u/∂x_i)/∂φ_k`, both in
/// the flat parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    pub value: Vec<f64>,
    pub input_gradient: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    architecture: Architecture,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(architecture: Architecture, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        architecture.validate()?;
        let depth = architecture.depth();
        if weights.len() != depth || biases.len() != depth {
            return Err(Error::InvalidNetwork(format!(
                "expected {depth} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..depth {
            let (n_in, n_out) = (architecture.layer_dims[l], architecture.layer_dims[l + 1]);
            if weights[l].len() != n_in * n_out || biases[l].len() != n_out {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} expects a {n_out}x{n_in} matrix and {n_out} biases",
                    l + 1
                )));
            }
        }
        let net = Network {
            architecture,
            weights,
            biases,
        };
        if !net.all_finite() {
            return Err(Error::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let params = vec![0.0; architecture.parameter_count()];
        Network::from_parameters(architecture, &params)
    }

    pub fn from_parameters(architecture: Architecture, params: &[f64]) -> Result<Self> {
        architecture.validate()?;
        if params.len() != architecture.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: architecture.parameter_count(),
                got: params.len(),
            });
        }
        let mut weights = Vec::with_capacity(architecture.depth());
        let mut biases = Vec::with_capacity(architecture.depth());
        let mut at = 0;
        for w in architecture.layer_dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            weights.push(params[at..at + n_in * n_out].to_vec());
            at += n_in * n_out;
            biases.push(params[at..at + n_out].to_vec());
            at += n_out;
        }
        Network::new(architecture, weights, biases)
    }

    /// Same architecture, new parameters.
    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        Network::from_parameters(self.architecture.clone(), params)
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrites all parameters in place. Used by the optimizer loop.
    pub(crate) fn load_parameters(&mut self, params: &[f64]) {
        debug_assert_eq!(params.len(), self.parameter_count());
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.len();
            w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = b.len();
            b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim()
    }

    pub fn depth(&self) -> usize {
        self.architecture.depth()
    }

    pub fn width(&self) -> usize {
        self.architecture.width()
    }

    pub fn parameter_count(&self) -> usize {
        self.architecture.parameter_count()
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_scalar(&self) -> Result<()> {
        if self.architecture.output_dim() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "scalar output required, network has {} outputs",
                self.architecture.output_dim()
            )));
        }
        Ok(())
    }

    /// All outputs `f_L(x)`.
    pub fn forward_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = self.tape();
        self.run_forward(x, &mut tape);
        Ok(tape.post.last().unwrap().clone())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        self.check_scalar()?;
        let mut tape = self.tape();
        self.run_forward(x, &mut tape);
        Ok(tape.output())
    }

    pub fn forward_with_input_gradient(&self, x: &[f64]) -> Result<EvalResult> {
        self.check_input(x)?;
        self.check_scalar()?;
        let mut tape = self.tape();
        self.run_forward(x, &mut tape);
        self.run_input_gradient(&mut tape);
        Ok(EvalResult {
            value: tape.output(),
            input_gradient: tape.grad_x.clone(),
        })
    }

    pub fn parameter_sensitivities(&self, x: &[f64]) -> Result<Sensitivities> {
        self.check_input(x)?;
        self.check_scalar()?;
        let d = self.input_dim();
        let p = self.parameter_count();
        let mut tape = self.tape();
        self.run_forward(x, &mut tape);

        let mut value = vec![0.0; p];
        self.accumulate_parameter_gradient(&mut tape, 1.0, 0.0, &mut value);

        let mut input_gradient = Vec::with_capacity(d);
        let mut direction = vec![0.0; d];
        for i in 0..d {
            direction.fill(0.0);
            direction[i] = 1.0;
            self.run_tangent(&direction, &mut tape);
            let mut col = vec![0.0; p];
            self.accumulate_parameter_gradient(&mut tape, 0.0, 1.0, &mut col);
            input_gradient.push(col);
        }
        Ok(Sensitivities { value, input_gradient })
    }

    pub(crate) fn tape(&self) -> Tape {
        Tape::new(&self.architecture)
    }

    /// Forward pass recording pre- and post-activations. `x` must have the
    /// input dimension.
    pub(crate) fn run_forward(&self, x: &[f64], tape: &mut Tape) {
        tape.post[0].copy_from_slice(x);
        for l in 0..self.depth() {
            let n_in = self.architecture.layer_dims[l];
            let act = &self.architecture.activations[l];
            let w = &self.weights[l];
            let b = &self.biases[l];
            let (before, after) = tape.post.split_at_mut(l + 1);
            let input = &before[l];
            let pre = &mut tape.pre[l];
            let out = &mut after[0];
            for (r, (z, h)) in pre.iter_mut().zip(out.iter_mut()).enumerate() {
                let row = &w[r * n_in..(r + 1) * n_in];
                *z = b[r] + dot(row, input);
                *h = act.kind(r).apply(*z);
            }
        }
    }

    /// Reverse pass for `∇_x u`; requires a preceding `run_forward`.
    pub(crate) fn run_input_gradient(&self, tape: &mut Tape) {
        let depth = self.depth();
        let act = &self.architecture.activations[depth - 1];
        tape.adj_pre.clear();
        tape.adj_pre.extend(
            tape.pre[depth - 1]
                .iter()
                .enumerate()
                .map(|(r, &z)| act.kind(r).derivative(z)),
        );
        for l in (0..depth).rev() {
            let n_in = self.architecture.layer_dims[l];
            tape.adj_post.clear();
            tape.adj_post.resize(n_in, 0.0);
            let w = &self.weights[l];
            for (r, &g) in tape.adj_pre.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[r * n_in..(r + 1) * n_in], &mut tape.adj_post);
                }
            }
            if l == 0 {
                tape.grad_x.copy_from_slice(&tape.adj_post);
            } else {
                let act = &self.architecture.activations[l - 1];
                let pre = &tape.pre[l - 1];
                tape.adj_pre.clear();
                tape.adj_pre.extend(
                    tape.adj_post
                        .iter()
                        .zip(pre)
                        .enumerate()
                        .map(|(r, (&a, &z))| a * act.kind(r).derivative(z)),
                );
            }
        }
    }

    /// Forward-mode tangent along `direction`; returns `∇u · direction`.
    pub(crate) fn run_tangent(&self, direction: &[f64], tape: &mut Tape) -> f64 {
        tape.post_dot[0].copy_from_slice(direction);
        for l in 0..self.depth() {
            let n_in = self.architecture.layer_dims[l];
            let act = &self.architecture.activations[l];
            let w = &self.weights[l];
            let (before, after) = tape.post_dot.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            let pre = &tape.pre[l];
            let pre_dot = &mut tape.pre_dot[l];
            for r in 0..out.len() {
                let row = &w[r * n_in..(r + 1) * n_in];
                let zd = dot(row, input);
                pre_dot[r] = zd;
                out[r] = act.kind(r).derivative(pre[r]) * zd;
            }
        }
        tape.post_dot.last().unwrap()[0]
    }

    /// Adds `value_weight · ∂u/∂φ + tangent_weight · ∂(∇u·c)/∂φ` to `grad`,
    /// where `c` is the direction of the last `run_tangent` call. The tangent
    /// is not read when `tangent_weight` is zero.
    pub(crate) fn accumulate_parameter_gradient(
        &self,
        tape: &mut Tape,
        value_weight: f64,
        tangent_weight: f64,
        grad: &mut [f64],
    ) {
        let depth = self.depth();
        let with_tangent = tangent_weight != 0.0;
        let Tape {
            pre,
            post,
            pre_dot,
            post_dot,
            adj_pre,
            adj_pre_dot,
            adj_post,
            adj_post_dot,
            ..
        } = tape;

        // Seed with the adjoint of the (scalar) output and its tangent.
        adj_post.clear();
        adj_post.push(value_weight);
        adj_post_dot.clear();
        adj_post_dot.push(if with_tangent { tangent_weight } else { 0.0 });

        for l in (0..depth).rev() {
            let n_in = self.architecture.layer_dims[l];
            let n_out = self.architecture.layer_dims[l + 1];
            let act = &self.architecture.activations[l];

            adj_pre.clear();
            adj_pre_dot.clear();
            for r in 0..n_out {
                let k = act.kind(r);
                let z = pre[l][r];
                let d1 = k.derivative(z);
                if with_tangent {
                    adj_pre.push(adj_post[r] * d1 + adj_post_dot[r] * k.second_derivative(z) * pre_dot[l][r]);
                    adj_pre_dot.push(adj_post_dot[r] * d1);
                } else {
                    adj_pre.push(adj_post[r] * d1);
                }
            }

            let offset = self.architecture.layer_offset(l);
            let (gw, rest) = grad[offset..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            let input = &post[l];
            for r in 0..n_out {
                let a = adj_pre[r];
                gb[r] += a;
                let row = &mut gw[r * n_in..(r + 1) * n_in];
                if a != 0.0 {
                    axpy(a, input, row);
                }
                if with_tangent {
                    let ad = adj_pre_dot[r];
                    if ad != 0.0 {
                        axpy(ad, &post_dot[l], row);
                    }
                }
            }

            if l > 0 {
                let w = &self.weights[l];
                adj_post.clear();
                adj_post.resize(n_in, 0.0);
                adj_post_dot.clear();
                adj_post_dot.resize(n_in, 0.0);
                for r in 0..n_out {
                    let row = &w[r * n_in..(r + 1) * n_in];
                    if adj_pre[r] != 0.0 {
                        axpy(adj_pre[r], row, adj_post);
                    }
                    if with_tangent && adj_pre_dot[r] != 0.0 {
                        axpy(adj_pre_dot[r], row, adj_post_dot);
                    }
                }
            }
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.into_network()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Network::from_json_str(&std::fs::read_to_string(path)?)
    }
}

pub const NETWORK_FORMAT: &str = "ritzlab-network/1";

/// On-disk layout: architecture header, then all parameters in flat order.
#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    layer_dims: Vec<usize>,
    activations: Vec<LayerActivation>,
    parameters: Vec<f64>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        NetworkFile {
            format: NETWORK_FORMAT.to_string(),
            layer_dims: net.architecture.layer_dims.clone(),
            activations: net.architecture.activations.clone(),
            parameters: net.parameters(),
        }
    }
}

impl NetworkFile {
    fn into_network(self) -> Result<Network> {
        if self.format != NETWORK_FORMAT {
            return Err(Error::InvalidNetwork(format!(
                "unknown network format `{}`",
                self.format
            )));
        }
        let arch = Architecture::new(self.layer_dims, self.activations)?;
        Network::from_parameters(arch, &self.parameters)
    }
}

/// Per-evaluation buffers, reused across points.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    pre_dot: Vec<Vec<f64>>,
    post_dot: Vec<Vec<f64>>,
    adj_pre: Vec<f64>,
    adj_pre_dot: Vec<f64>,
    adj_post: Vec<f64>,
    adj_post_dot: Vec<f64>,
    pub(crate) grad_x: Vec<f64>,
}

impl Tape {
    fn new(arch: &Architecture) -> Self {
        let dims = &arch.layer_dims;
        let width = arch.width();
        Tape {
            pre: dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
            post: dims.iter().map(|&n| vec![0.0; n]).collect(),
            pre_dot: dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
            post_dot: dims.iter().map(|&n| vec![0.0; n]).collect(),
            adj_pre: Vec::with_capacity(width),
            adj_pre_dot: Vec::with_capacity(width),
            adj_post: Vec::with_capacity(width),
            adj_post_dot: Vec::with_capacity(width),
            grad_x: vec![0.0; dims[0]],
        }
    }

    #[inline]
    pub(crate) fn output(&self) -> f64 {
        self.post.last().unwrap()[0]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_neuron(a: f64, b: f64) -> Network {
        let arch = Architecture::relu2_mlp(1, &[1]).unwrap();
        Network::new(arch, vec![vec![a], vec![1.0]], vec![vec![b], vec![0.0]]).unwrap()
    }

    fn random_net(dims: &[usize], seed: u64) -> Network {
        let arch = Architecture::relu2_mlp(dims[0], &dims[1..dims.len() - 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..arch.parameter_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Network::from_parameters(arch, &params).unwrap()
    }

    /// Straightforward re-implementation of the layer recursion, kept separate
    /// from the tape-based evaluator.
    fn naive_forward(net: &Network, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for l in 0..net.depth() {
            let n_out = net.architecture().layer_dims[l + 1];
            let mut next = vec![0.0; n_out];
            for (r, v) in next.iter_mut().enumerate() {
                let mut z = net.biases()[l][r];
                for (c, hc) in h.iter().enumerate() {
                    z += net.weights()[l][r * h.len() + c] * hc;
                }
                *v = match net.architecture().activations[l].kind(r) {
                    ActivationKind::Relu => z.max(0.0),
                    ActivationKind::Relu2 => z.max(0.0).powi(2),
                    ActivationKind::Identity => z,
                };
            }
            h = next;
        }
        h[0]
    }

    #[test]
    fn single_relu2_neuron() {
        let net = single_neuron(1.0, 0.0);
        assert_eq!(net.forward(&[0.5]).unwrap(), 0.25);
        let g = net.forward_with_input_gradient(&[-1.0]).unwrap();
        assert_eq!(g.value, 0.0);
        assert_eq!(g.input_gradient, vec![0.0]);
    }

    #[test]
    fn identity_only_network() {
        let arch = Architecture::new(vec![1, 1], vec![ActivationKind::Identity.into()]).unwrap();
        let net = Network::new(arch, vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        assert_eq!(net.forward(&[0.3]).unwrap(), 0.3);
    }

    #[test]
    fn matches_naive_recursion() {
        let net = random_net(&[3, 7, 1], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = random_net(&[2, 3, 1], 1);
        assert!(matches!(
            net.forward(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(net.forward_with_input_gradient(&[0.1, 0.2, 0.3]).is_err());
        assert!(net.parameter_sensitivities(&[]).is_err());
    }

    #[test]
    fn hand_chain_rule_sensitivities() {
        // u = a2 * relu2(a1 x + b1) + b2 with a1 = 1, b1 = 0, a2 = 1, b2 = 0.
        let net = single_neuron(1.0, 0.0);
        let s = net.parameter_sensitivities(&[0.5]).unwrap();
        // order: a1, b1, a2, b2
        assert_eq!(s.value, vec![0.5, 1.0, 0.25, 1.0]);
        // du/dx = 2 a2 relu(a1 x + b1) a1
        // d/da1 = 2 a2 (x a1 + relu) = 2(0.5 + 0.5) = 2; d/db1 = 2 a2 a1 = 2
        // d/da2 = 2 relu a1 = 1; d/db2 = 0
        assert_eq!(s.input_gradient[0], vec![2.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn positive_homogeneity_of_a_neuron() {
        let base = single_neuron(0.7, -0.2);
        for &c in &[0.5, 2.0, 3.0] {
            let scaled = single_neuron(0.7 * c, -0.2 * c);
            for &x in &[0.4, 1.3, 2.0] {
                let u = base.forward(&[x]).unwrap();
                let v = scaled.forward(&[x]).unwrap();
                assert!((v - c * c * u).abs() <= 1e-14 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn value_from_gradient_path_is_identical() {
        let net = random_net(&[2, 5, 4, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_eq!(
                net.forward(&x).unwrap(),
                net.forward_with_input_gradient(&x).unwrap().value
            );
        }
    }

    #[test]
    fn zero_network_is_zero() {
        let arch = Architecture::relu2_mlp(2, &[4]).unwrap();
        let net = Network::zeros(arch).unwrap();
        assert_eq!(net.forward(&[0.3, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes_and_non_finite_values() {
        let arch = Architecture::relu2_mlp(1, &[2]).unwrap();
        assert!(Network::new(
            arch.clone(),
            vec![vec![1.0], vec![1.0, 1.0]],
            vec![vec![0.0; 2], vec![0.0]]
        )
        .is_err());
        let mut p = vec![0.0; arch.parameter_count()];
        p[1] = f64::NAN;
        assert!(Network::from_parameters(arch.clone(), &p).is_err());
        assert!(Architecture::new(vec![1, 2], vec![]).is_err());
        assert!(Architecture::new(
            vec![1, 2, 1],
            vec![
                LayerActivation::PerUnit(vec![ActivationKind::Relu]),
                ActivationKind::Identity.into()
            ]
        )
        .is_err());
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let net = random_net(&[3, 6, 5, 1], 21);
        let text = net.to_json_string().unwrap();
        let back = Network::from_json_str(&text).unwrap();
        assert_eq!(net, back);
        let bits = |n: &Network| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&net), bits(&back));
    }

    #[test]
    fn serializes_mixed_layers() {
        let arch = Architecture::new(
            vec![1, 2, 1],
            vec![
                LayerActivation::PerUnit(vec![ActivationKind::Relu, ActivationKind::Relu2]),
                ActivationKind::Identity.into(),
            ],
        )
        .unwrap();
        let net = Network::from_parameters(arch, &[1.0, -1.0, 0.1, 0.2, 1.0, 1.0, 0.0]).unwrap();
        let back = Network::from_json_str(&net.to_json_string().unwrap()).unwrap();
        assert_eq!(net, back);
        assert!(Network::from_json_str(
            "{\"format\":\"nope\",\"layer_dims\":[1,1],\"activations\":[\"identity\"],\"parameters\":[1,0]}"
        )
        .is_err());
    }
}
