//! Cardinal quadratic B-splines on the dyadic partition of `[0,1]` and their
//! exact ReLU² realisations.
//!
//! `N_{l,i}(x) = 2^{2l-1} Σ_{j=0}^{3} (-1)^j C(3,j) (x - (i+j)2^{-l})₊²` for
//! `i = -2..2^l - 1`; the support is `(i 2^{-l}, (i+3) 2^{-l})`. Tensor
//! products are realised with a binary tree of product gadgets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::builder::{product_readout, product_units, Affine, NetBuilder};
use super::ceil_log2;
use crate::error::{Error, Result};
use crate::network::{ActivationKind, Network};

const BINOMIAL_SIGNED: [f64; 4] = [1.0, -3.0, 3.0, -1.0];

/// Multi-index of a tensor-product B-spline at a fixed level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SplineIndex {
    level: u32,
    index: Vec<i64>,
}

impl SplineIndex {
    pub fn new(level: u32, index: Vec<i64>) -> Result<Self> {
        if level == 0 || level > 30 {
            return Err(Error::InvalidSplineIndex(format!("level {level} outside 1..=30")));
        }
        if index.is_empty() {
            return Err(Error::InvalidSplineIndex("empty multi-index".into()));
        }
        let hi = (1i64 << level) - 1;
        if let Some(bad) = index.iter().find(|&&i| i < -2 || i > hi) {
            return Err(Error::InvalidSplineIndex(format!(
                "index {bad} outside -2..={hi} at level {level}"
            )));
        }
        Ok(SplineIndex { level, index })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> &[i64] {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    /// Closed-form value of the tensor product at `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.index
            .iter()
            .zip(x)
            .map(|(&i, &xj)| bspline_value(self.level, i, xj))
            .product()
    }

    /// Closed-form gradient of the tensor product at `x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> = self
            .index
            .iter()
            .zip(x)
            .map(|(&i, &xj)| bspline_value(self.level, i, xj))
            .collect();
        (0..self.dim())
            .map(|k| {
                let mut g = bspline_derivative(self.level, self.index[k], x[k]);
                for (j, v) in vals.iter().enumerate() {
                    if j != k {
                        g *= v;
                    }
                }
                g
            })
            .collect()
    }
}

/// Which univariate indices a fit may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSet {
    /// `i = -2..=2^l-1`: every B-spline whose support meets `[0,1]`.
    Full,
    /// `i = 1..=2^l-4`: the `2^l - 4` splines supported away from the
    /// boundary, as in the counting of the classical approximation result.
    Interior,
}

impl BasisSet {
    fn range(self, level: u32) -> std::ops::RangeInclusive<i64> {
        let n = 1i64 << level;
        match self {
            BasisSet::Full => -2..=n - 1,
            BasisSet::Interior => 1..=n - 4,
        }
    }

    pub fn indices(self, level: u32, d: usize) -> Vec<SplineIndex> {
        let axis: Vec<i64> = self.range(level).collect();
        let mut out = Vec::new();
        if axis.is_empty() {
            return out;
        }
        let mut counter = vec![0usize; d];
        loop {
            let index = counter.iter().map(|&c| axis[c]).collect();
            out.push(SplineIndex { level, index });
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                counter[k] += 1;
                if counter[k] < axis.len() {
                    break;
                }
                counter[k] = 0;
            }
        }
    }
}

/// `Σ c_j N_{l, i_j}` with all terms at one level and dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCombination {
    level: u32,
    dim: usize,
    coefficients: BTreeMap<SplineIndex, f64>,
}

impl SplineCombination {
    pub fn new(level: u32, dim: usize) -> Self {
        SplineCombination {
            level,
            dim,
            coefficients: BTreeMap::new(),
        }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (SplineIndex, f64)>) -> Result<Self> {
        let mut iter = terms.into_iter().peekable();
        let first = iter.peek().ok_or(Error::EmptyCombination)?;
        let mut comb = SplineCombination::new(first.0.level, first.0.dim());
        for (idx, c) in iter {
            comb.insert(idx, c)?;
        }
        Ok(comb)
    }

    /// Adds `c` to the coefficient of `idx`.
    pub fn insert(&mut self, idx: SplineIndex, c: f64) -> Result<()> {
        if idx.level != self.level || idx.dim() != self.dim {
            return Err(Error::MixedCombination);
        }
        *self.coefficients.entry(idx).or_insert(0.0) += c;
        Ok(())
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coefficients(&self) -> &BTreeMap<SplineIndex, f64> {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().map(|(idx, c)| c * idx.value(x)).sum()
    }
}

/// Outside the open support the truncated powers cancel exactly in real
/// arithmetic but not in floating point.
fn in_support(i: i64, h: f64, x: f64) -> bool {
    x > i as f64 * h && x < (i + 3) as f64 * h
}

/// Closed-form `N_{l,i}(x)`.
pub fn bspline_value(level: u32, i: i64, x: f64) -> f64 {
    let h = (-(level as f64)).exp2();
    if !in_support(i, h, x) {
        return 0.0;
    }
    let scale = (2.0 * level as f64 - 1.0).exp2();
    let mut acc = 0.0;
    for (j, c) in BINOMIAL_SIGNED.iter().enumerate() {
        let r = (x - (i + j as i64) as f64 * h).max(0.0);
        acc += c * r * r;
    }
    scale * acc
}

/// Closed-form `N'_{l,i}(x)`.
pub fn bspline_derivative(level: u32, i: i64, x: f64) -> f64 {
    let h = (-(level as f64)).exp2();
    if !in_support(i, h, x) {
        return 0.0;
    }
    let scale = (2.0 * level as f64 - 1.0).exp2();
    let mut acc = 0.0;
    for (j, c) in BINOMIAL_SIGNED.iter().enumerate() {
        acc += c * 2.0 * (x - (i + j as i64) as f64 * h).max(0.0);
    }
    scale * acc
}

/// Layer 1 holds four ReLU² units per (term, axis); each following layer
/// multiplies factors pairwise, pairing a leftover factor with the constant 1.
/// Returns the builder and, per term, the expression of its full product.
fn bspline_terms(dim: usize, level: u32, terms: &[&SplineIndex]) -> (NetBuilder, Vec<Affine>) {
    let h = (-(level as f64)).exp2();
    let scale = (2.0 * level as f64 - 1.0).exp2();
    let mut b = NetBuilder::new(dim);
    let inputs = b.inputs();

    let mut units = Vec::with_capacity(4 * dim * terms.len());
    for idx in terms {
        for (axis, &i) in idx.index.iter().enumerate() {
            for j in 0..4 {
                let shift = (i + j) as f64 * h;
                units.push((ActivationKind::Relu2, inputs[axis].plus(&Affine::constant(-shift))));
            }
        }
    }
    let outs = b.push_layer(units);
    let coeffs: Vec<f64> = BINOMIAL_SIGNED.iter().map(|c| c * scale).collect();
    let mut factors: Vec<Vec<Affine>> = (0..terms.len())
        .map(|t| {
            (0..dim)
                .map(|axis| {
                    let at = 4 * (t * dim + axis);
                    Affine::combination(&coeffs, &outs[at..at + 4])
                })
                .collect()
        })
        .collect();

    while factors[0].len() > 1 {
        let mut units = Vec::new();
        let mut layout = Vec::with_capacity(factors.len());
        for fs in &factors {
            let mut starts = Vec::new();
            for pair in fs.chunks(2) {
                let one = Affine::constant(1.0);
                let y = pair.get(1).unwrap_or(&one);
                starts.push(units.len());
                units.extend(product_units(&pair[0], y));
            }
            layout.push(starts);
        }
        b.push_layer(units);
        factors = layout
            .into_iter()
            .map(|starts| starts.into_iter().map(|s| product_readout(s, 1.0)).collect())
            .collect();
    }
    let products = factors.into_iter().map(|mut fs| fs.pop().unwrap()).collect();
    (b, products)
}

/// Depth and width bounds `(⌈log₂ d⌉ + 2, 4d)` for a single tensor B-spline.
pub fn multivariate_bspline_bounds(d: usize) -> (usize, usize) {
    (ceil_log2(d) + 2, 4 * d)
}

/// Depth-2, width-4 ReLU² network equal to `N_{l,i}`.
pub fn build_univariate_bspline(level: u32, i: i64) -> Result<Network> {
    build_multivariate_bspline(&SplineIndex::new(level, vec![i])?)
}

pub fn build_multivariate_bspline(idx: &SplineIndex) -> Result<Network> {
    let idx = SplineIndex::new(idx.level, idx.index.clone())?;
    let (b, mut products) = bspline_terms(idx.dim(), idx.level, &[&idx]);
    let net = b.finish(vec![products.pop().unwrap()])?;
    let (depth, width) = multivariate_bspline_bounds(idx.dim());
    assert!(
        net.depth() <= depth && net.width() <= width,
        "B-spline network {}x{} exceeds depth {depth} / width {width}",
        net.depth(),
        net.width()
    );
    Ok(net)
}

/// Parallel composition of all terms merged by the output layer. Depth is
/// at most `⌈log₂ d⌉ + 3`; width is `4d` per term.
pub fn build_spline_combination(comb: &SplineCombination) -> Result<Network> {
    if comb.is_empty() {
        return Err(Error::EmptyCombination);
    }
    let terms: Vec<&SplineIndex> = comb.coefficients.keys().collect();
    if terms.iter().any(|t| t.level != comb.level || t.dim() != comb.dim) {
        return Err(Error::MixedCombination);
    }
    let coeffs: Vec<f64> = comb.coefficients.values().copied().collect();
    let (b, products) = bspline_terms(comb.dim, comb.level, &terms);
    let net = b.finish(vec![Affine::combination(&coeffs, &products)])?;
    assert!(net.depth() <= ceil_log2(comb.dim) + 3);
    assert!(net.width() <= 4 * comb.dim * terms.len().max(1));
    Ok(net)
}

/// Least-squares fit over the full basis; see [`fit_spline_coefficients_on`].
pub fn fit_spline_coefficients(target: &dyn Fn(&[f64]) -> f64, level: u32, d: usize) -> Result<SplineCombination> {
    fit_spline_coefficients_on(target, level, d, BasisSet::Full)
}

/// Discrete L² projection on the tensor grid with four midpoints per knot
/// interval per axis, solved through the normal equations.
pub fn fit_spline_coefficients_on(
    target: &dyn Fn(&[f64]) -> f64,
    level: u32,
    d: usize,
    basis: BasisSet,
) -> Result<SplineCombination> {
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    // validates the level
    SplineIndex::new(level, vec![0; d])?;
    let axis_idx: Vec<i64> = basis.range(level).collect();
    if axis_idx.is_empty() {
        return Err(Error::InvalidSplineIndex(format!(
            "no {basis:?} splines at level {level}"
        )));
    }
    let m = 4usize << level;
    let grid: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
    // table[k][a] = N_{l, axis_idx[a]}(grid[k])
    let table: Vec<Vec<f64>> = grid
        .iter()
        .map(|&x| axis_idx.iter().map(|&i| bspline_value(level, i, x)).collect())
        .collect();

    let indices = basis.indices(level, d);
    let nb = indices.len();
    let points = m.pow(d as u32);
    let offsets: Vec<Vec<usize>> = indices
        .iter()
        .map(|idx| idx.index.iter().map(|&i| (i - axis_idx[0]) as usize).collect())
        .collect();

    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DVector::<f64>::zeros(nb);
    let mut row = vec![0.0; nb];
    let mut grid_pos = vec![0usize; d];
    let mut x = vec![0.0; d];
    for _ in 0..points {
        for (xj, &k) in x.iter_mut().zip(&grid_pos) {
            *xj = grid[k];
        }
        for (r, offs) in row.iter_mut().zip(&offsets) {
            *r = offs.iter().zip(&grid_pos).map(|(&a, &k)| table[k][a]).product();
        }
        let y = target(&x);
        for a in 0..nb {
            if row[a] == 0.0 {
                continue;
            }
            rhs[a] += row[a] * y;
            for c in 0..nb {
                gram[(a, c)] += row[a] * row[c];
            }
        }
        for k in (0..d).rev() {
            grid_pos[k] += 1;
            if grid_pos[k] < m {
                break;
            }
            grid_pos[k] = 0;
        }
    }

    let chol = gram.cholesky().ok_or(Error::SingularFit { basis: nb, points })?;
    let coeffs = chol.solve(&rhs);
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularFit { basis: nb, points });
    }
    let mut comb = SplineCombination::new(level, d);
    for (idx, c) in indices.into_iter().zip(coeffs.iter()) {
        comb.insert(idx, *c)?;
    }
    Ok(comb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Piecewise form of the cardinal quadratic B-spline in the local
    /// variable t = x/h - i.
    fn piecewise(level: u32, i: i64, x: f64) -> f64 {
        let t = x * 2f64.powi(level as i32) - i as f64;
        if t <= 0.0 || t >= 3.0 {
            0.0
        } else if t < 1.0 {
            0.5 * t * t
        } else if t < 2.0 {
            0.5 * (-2.0 * t * t + 6.0 * t - 3.0)
        } else {
            0.5 * (3.0 - t) * (3.0 - t)
        }
    }

    #[test]
    fn closed_form_examples() {
        let net = build_univariate_bspline(1, 0).unwrap();
        assert!((net.forward(&[0.75]).unwrap() - 0.75).abs() < 1e-15);
        assert!((net.forward(&[0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(net.forward(&[0.0]).unwrap(), 0.0);
        assert!(net.forward(&[1.5]).unwrap().abs() < 1e-15);
        assert_eq!(net.depth(), 2);
        assert_eq!(net.width(), 4);
    }

    #[test]
    fn closed_form_matches_piecewise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for level in 1..=4u32 {
            for i in -2..(1i64 << level) {
                for _ in 0..200 {
                    let x: f64 = rng.random_range(-0.5..1.5);
                    let a = bspline_value(level, i, x);
                    assert!((a - piecewise(level, i, x)).abs() < 1e-12);
                    assert!(a >= 0.0);
                }
            }
        }
    }

    #[test]
    fn index_validation() {
        assert!(build_univariate_bspline(1, -3).is_err());
        assert!(build_univariate_bspline(1, 2).is_err());
        assert!(build_univariate_bspline(0, 0).is_err());
        assert!(build_univariate_bspline(2, 3).is_ok());
        assert!(SplineIndex::new(2, vec![]).is_err());
    }

    #[test]
    fn bivariate_example_and_bounds() {
        let idx = SplineIndex::new(1, vec![0, 0]).unwrap();
        let net = build_multivariate_bspline(&idx).unwrap();
        assert!((net.forward(&[0.75, 0.75]).unwrap() - 0.5625).abs() < 1e-14);
        assert_eq!(net.forward(&[0.75, 1.6]).unwrap().abs() < 1e-14, true);
        for d in 1..=5 {
            let idx = SplineIndex::new(2, vec![1; d]).unwrap();
            let net = build_multivariate_bspline(&idx).unwrap();
            let (depth, width) = multivariate_bspline_bounds(d);
            assert!(net.depth() <= depth && net.width() <= width, "d={d}");
        }
    }

    #[test]
    fn trivariate_matches_product_of_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let idx = SplineIndex::new(2, vec![-1, 1, 2]).unwrap();
        let net = build_multivariate_bspline(&idx).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let oracle: f64 = idx
                .index()
                .iter()
                .zip(&x)
                .map(|(&i, &xj)| piecewise(2, i, xj))
                .product();
            assert!((net.forward(&x).unwrap() - oracle).abs() <= 1e-10);
        }
    }

    #[test]
    fn combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = SplineIndex::new(2, vec![0, 1]).unwrap();
        let b = SplineIndex::new(2, vec![1, 1]).unwrap();
        let single = build_spline_combination(&SplineCombination::from_terms([(a.clone(), 1.0)]).unwrap()).unwrap();
        let direct = build_multivariate_bspline(&a).unwrap();
        let two =
            build_spline_combination(&SplineCombination::from_terms([(a.clone(), 2.0), (b.clone(), -1.0)]).unwrap())
                .unwrap();
        let zero =
            build_spline_combination(&SplineCombination::from_terms([(a.clone(), 0.0), (b.clone(), 0.0)]).unwrap())
                .unwrap();
        for _ in 0..100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            assert!((single.forward(&x).unwrap() - direct.forward(&x).unwrap()).abs() <= 1e-12);
            let want = 2.0 * a.value(&x) - b.value(&x);
            assert!((two.forward(&x).unwrap() - want).abs() <= 1e-12);
            assert_eq!(zero.forward(&x).unwrap(), 0.0);
        }
        assert!(SplineCombination::from_terms(Vec::new()).is_err());
        let mut comb = SplineCombination::new(2, 2);
        assert!(comb.insert(SplineIndex::new(3, vec![0, 0]).unwrap(), 1.0).is_err());
        assert!(comb.insert(SplineIndex::new(2, vec![0]).unwrap(), 1.0).is_err());
        assert!(build_spline_combination(&comb).is_err());
    }

    #[test]
    fn partition_of_unity() {
        for level in 1..=3u32 {
            let nets: Vec<Network> = (-2..(1i64 << level))
                .map(|i| build_univariate_bspline(level, i).unwrap())
                .collect();
            for k in 0..=200 {
                let x = k as f64 / 200.0;
                let s: f64 = nets.iter().map(|n| n.forward(&[x]).unwrap()).sum();
                assert!((s - 1.0).abs() <= 1e-12, "level {level} x {x}: {s}");
            }
        }
    }

    #[test]
    fn fit_recovers_a_basis_function() {
        let idx = SplineIndex::new(3, vec![2]).unwrap();
        let target = |x: &[f64]| idx.value(x);
        let comb = fit_spline_coefficients(&target, 3, 1).unwrap();
        let net = build_spline_combination(&comb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = [rng.random_range(0.0..1.0)];
            assert!((net.forward(&x).unwrap() - target(&x)).abs() <= 1e-8);
        }
    }

    #[test]
    fn fit_reproduces_constants() {
        let comb = fit_spline_coefficients(&|_| 1.0, 2, 1).unwrap();
        // oracle: direct sum of fitted coefficients times the piecewise basis
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let s: f64 = comb
                .coefficients()
                .iter()
                .map(|(idx, c)| c * piecewise(2, idx.index()[0], x))
                .sum();
            assert!((s - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn fit_in_two_dimensions_reproduces_quadratics() {
        let target = |x: &[f64]| x[0] * x[0] + x[1] * x[1];
        let comb = fit_spline_coefficients(&target, 2, 2).unwrap();
        assert_eq!(comb.len(), 36);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            assert!((comb.value(&x) - target(&x)).abs() <= 1e-9);
        }
    }

    #[test]
    fn basis_sets() {
        assert_eq!(BasisSet::Full.indices(2, 2).len(), 36);
        assert_eq!(BasisSet::Interior.indices(4, 1).len(), 12);
        assert_eq!(BasisSet::Interior.indices(3, 2).len(), 16);
        assert!(fit_spline_coefficients_on(&|_| 1.0, 2, 1, BasisSet::Interior).is_err());
    }
}
