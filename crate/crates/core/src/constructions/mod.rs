//! Exact weight-level constructions of ReLU² networks: squaring and
//! multiplication gadgets, cardinal quadratic B-splines and their tensor
//! products, spline combinations, the gradient-norm transformer, and the
//! architecture prescription used by convergence studies.

mod builder;
mod gradnet;
mod spline;

pub use gradnet::{build_gradient_norm_network, gradient_norm_bounds};
pub use spline::{
    bspline_derivative, bspline_value, build_multivariate_bspline, build_spline_combination, build_univariate_bspline,
    fit_spline_coefficients, fit_spline_coefficients_on, multivariate_bspline_bounds, BasisSet, SplineCombination,
    SplineIndex,
};

use builder::{product_readout, product_units, NetBuilder};

use crate::network::{ActivationKind, Architecture, Network};

/// `x² = relu2(x) + relu2(-x)`, one hidden layer of width 2.
pub fn build_square_gadget() -> Network {
    let mut b = NetBuilder::new(1);
    let x = &b.inputs()[0];
    let units = b.push_layer(vec![
        (ActivationKind::Relu2, x.clone()),
        (ActivationKind::Relu2, x.scaled(-1.0)),
    ]);
    let out = units[0].plus(&units[1]);
    b.finish(vec![out]).expect("square gadget is well formed")
}

/// `xy = ¼[relu2(x+y) + relu2(-x-y) - relu2(x-y) - relu2(y-x)]`, one hidden
/// layer of width 4.
pub fn build_product_gadget() -> Network {
    let mut b = NetBuilder::new(2);
    let inputs = b.inputs();
    b.push_layer(product_units(&inputs[0], &inputs[1]).to_vec());
    b.finish(vec![product_readout(0, 1.0)])
        .expect("product gadget is well formed")
}

/// `⌈log₂ d⌉` for `d ≥ 1`.
pub fn ceil_log2(d: usize) -> usize {
    assert!(d >= 1);
    (usize::BITS - (d - 1).leading_zeros()) as usize
}

/// Ceiling that treats values within rounding noise of an integer as that
/// integer, so `16.000000000000004 - 4` rounds up to 12 and not 13.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Depth `⌈log₂ d⌉ + 3` and hidden width `4d ⌈max(1, n^{1/(d+2+ν)} − 4)⌉^d`
/// with ReLU² hidden layers and a linear output.
pub fn prescribe_architecture(d: usize, n: usize, nu: f64) -> Architecture {
    assert!(
        d >= 1 && n >= 1 && nu >= 0.0,
        "prescribe_architecture needs d ≥ 1, n ≥ 1, ν ≥ 0"
    );
    let depth = ceil_log2(d) + 3;
    let base = ((n as f64).powf(1.0 / (d as f64 + 2.0 + nu)) - 4.0).max(1.0);
    let per_axis = ceil_tolerant(base) as usize;
    let width = 4 * d * per_axis.pow(d as u32);
    Architecture::relu2_mlp(d, &vec![width; depth - 1]).expect("prescribed architecture is valid")
}
