//! Complexity and generalisation bounds for ReLU² networks, evaluated
//! numerically. Hidden constants are explicit multipliers; logarithms are
//! natural.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Depth `D`.
    pub depth: usize,
    /// Width `W`.
    pub width: usize,
    pub d: usize,
    pub n: usize,
    /// Sup bound `B` of the network class and its gradients.
    #[serde(rename = "B")]
    pub b: f64,
    pub c3: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "one")]
    pub pdim_constant: f64,
    /// Multiplier `C_{B,c₃}` of the statistical error bound.
    #[serde(default = "one")]
    pub stat_constant: f64,
    /// Scale `ε` for the covering-number bound.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    0.5
}

impl BoundInputs {
    pub fn from_toml(s: &str) -> Result<Self> {
        let inputs: BoundInputs = toml::from_str(s)?;
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.d == 0 || self.n == 0 {
            return Err(Error::Domain("depth, width, d and n must be positive".into()));
        }
        for (name, v) in [
            ("B", self.b),
            ("c3", self.c3),
            ("pdim_constant", self.pdim_constant),
            ("stat_constant", self.stat_constant),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite")));
            }
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Domain("nu must be non-negative".into()));
        }
        Ok(())
    }
}

/// `C · D² W² (D + ln W)`.
pub fn pdim_bound(depth: usize, width: usize, constant: f64) -> f64 {
    assert!(depth >= 1 && width >= 1);
    let (dd, w) = (depth as f64, width as f64);
    constant * dd * dd * w * w * (dd + w.ln())
}

/// `Pdim · ln(e n B / (ε Pdim))`, the logarithm of the uniform covering
/// number bound. Requires `n ≥ Pdim ≥ 1`.
pub fn log_covering_bound(epsilon: f64, n: f64, b: f64, pdim: f64) -> Result<f64> {
    if !(pdim >= 1.0) || n < pdim {
        return Err(Error::Domain(format!(
            "covering bound needs n ≥ pdim ≥ 1 (n = {n}, pdim = {pdim})"
        )));
    }
    if !(epsilon > 0.0 && b > 0.0) {
        return Err(Error::Domain("covering bound needs ε > 0 and B > 0".into()));
    }
    Ok(pdim * (E * n * b / (epsilon * pdim)).ln())
}

/// `28 √(3/2) B √(Pdim / n) √(ln(e n / Pdim))`. Requires `n > Pdim ≥ 1`.
pub fn dudley_rademacher_bound(n: f64, b: f64, pdim: f64) -> Result<f64> {
    if !(pdim >= 1.0) || n <= pdim {
        return Err(Error::Domain(format!(
            "chaining bound needs n > pdim ≥ 1 (n = {n}, pdim = {pdim})"
        )));
    }
    Ok(28.0 * 1.5f64.sqrt() * b * (pdim / n).sqrt() * (E * n / pdim).ln().sqrt())
}

/// `d (D+3)(D+2) W √((D + 3 + ln(d (D+2) W)) / n)`.
pub fn statistical_error_bracket(inputs: &BoundInputs) -> f64 {
    let (d, dd, w, n) = (
        inputs.d as f64,
        inputs.depth as f64,
        inputs.width as f64,
        inputs.n as f64,
    );
    d * (dd + 3.0) * (dd + 2.0) * w * ((dd + 3.0 + (d * (dd + 2.0) * w).ln()) / n).sqrt()
}

/// `C · bracket^{1-ν}`.
pub fn statistical_error_bound(inputs: &BoundInputs, c_b_c3: f64) -> f64 {
    c_b_c3 * statistical_error_bracket(inputs).powf(1.0 - inputs.nu)
}

/// Exponents of `n` in the bounds on `E‖û - u*‖²_{H¹}` and `E‖û - u*‖_{H¹}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRates {
    pub h1_sq_rate_exponent: f64,
    pub h1_rate_exponent: f64,
}

pub fn predicted_rates(d: usize, nu: f64) -> PredictedRates {
    assert!(d >= 1 && nu >= 0.0);
    let s = d as f64 + 2.0 + nu;
    PredictedRates {
        h1_sq_rate_exponent: -1.0 / s,
        h1_rate_exponent: -1.0 / (2.0 * s),
    }
}

/// Every bound evaluated at one input set; fields that are undefined at the
/// inputs (for instance `n ≤ Pdim`) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub pdim: f64,
    pub log_covering: Option<f64>,
    pub rademacher: Option<f64>,
    pub statistical_error_bracket: f64,
    pub statistical_error: f64,
    pub predicted_rates: PredictedRates,
}

pub fn evaluate_bounds(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let pdim = pdim_bound(inputs.depth, inputs.width, inputs.pdim_constant);
    let n = inputs.n as f64;
    Ok(BoundReport {
        inputs: inputs.clone(),
        pdim,
        log_covering: log_covering_bound(inputs.epsilon, n, inputs.b, pdim).ok(),
        rademacher: dudley_rademacher_bound(n, inputs.b, pdim).ok(),
        statistical_error_bracket: statistical_error_bracket(inputs),
        statistical_error: statistical_error_bound(inputs, inputs.stat_constant),
        predicted_rates: predicted_rates(inputs.d, inputs.nu),
    })
}
