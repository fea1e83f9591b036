//! Manufactured Neumann problems `-Δu + w u = f` in `(0,1)^d`,
//! `∂u/∂n = g` on the boundary.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, Stream};

/// Which end of an axis a boundary face sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn coordinate(self) -> f64 {
        match self {
            Side::Low => 0.0,
            Side::High => 1.0,
        }
    }

    pub fn normal_sign(self) -> f64 {
        match self {
            Side::Low => -1.0,
            Side::High => 1.0,
        }
    }
}

/// Face `{x_axis = side}` of the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    /// Faces are numbered `2·axis + (side == High)`.
    pub fn from_index(k: usize) -> Face {
        Face {
            axis: k / 2,
            side: if k % 2 == 0 { Side::Low } else { Side::High },
        }
    }

    pub fn index(self) -> usize {
        2 * self.axis + usize::from(self.side == Side::High)
    }

    pub fn normal(self, d: usize) -> Vec<f64> {
        let mut n = vec![0.0; d];
        n[self.axis] = self.side.normal_sign();
        n
    }
}

/// `|Ω|` for the unit cube.
pub const DOMAIN_VOLUME: f64 = 1.0;

/// `|∂Ω| = 2d` for the unit cube.
pub fn boundary_measure(d: usize) -> f64 {
    2.0 * d as f64
}

pub trait Problem: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn w(&self, x: &[f64]) -> f64;
    fn f(&self, x: &[f64]) -> f64;
    /// Flux `∂u*/∂n` at a point of `face`.
    fn g(&self, x: &[f64], face: Face) -> f64;
    fn u_star(&self, x: &[f64]) -> f64;
    fn grad_u_star(&self, x: &[f64]) -> Vec<f64>;
    /// Essential lower bound of `w`.
    fn c1(&self) -> f64;
    /// Upper bound on `‖u*‖_{H²}`.
    fn c2(&self) -> f64;
    /// Common bound on `|f|`, `|w|`, `|g|`.
    fn c3(&self) -> f64;
    /// `‖w‖_∞`.
    fn w_sup(&self) -> f64;
    /// `L(u*)`, the minimum of the Ritz energy.
    fn analytic_energy(&self) -> Option<f64>;
    fn analytic_h1_norm_sq(&self) -> Option<f64>;
}

/// `u* = Σ cos(π x_i)`, `w ≡ 1`, homogeneous flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineProblem {
    d: usize,
}

pub fn make_cosine_problem(d: usize) -> CosineProblem {
    assert!(d >= 1, "dimension must be positive");
    CosineProblem { d }
}

impl Problem for CosineProblem {
    fn name(&self) -> &str {
        "cosine"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn w(&self, _x: &[f64]) -> f64 {
        1.0
    }

    fn f(&self, x: &[f64]) -> f64 {
        (PI * PI + 1.0) * self.u_star(x)
    }

    fn g(&self, _x: &[f64], _face: Face) -> f64 {
        0.0
    }

    fn u_star(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| (PI * xi).cos()).sum()
    }

    fn grad_u_star(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&xi| -PI * (PI * xi).sin()).collect()
    }

    fn c1(&self) -> f64 {
        1.0
    }

    fn c2(&self) -> f64 {
        let p2 = PI * PI;
        (self.d as f64 / 2.0 * (1.0 + p2 + p2 * p2)).sqrt()
    }

    fn c3(&self) -> f64 {
        (PI * PI + 1.0) * self.d as f64
    }

    fn w_sup(&self) -> f64 {
        1.0
    }

    fn analytic_energy(&self) -> Option<f64> {
        Some(-(PI * PI + 1.0) * self.d as f64 / 4.0)
    }

    fn analytic_h1_norm_sq(&self) -> Option<f64> {
        let d = self.d as f64;
        Some(d / 2.0 + d * PI * PI / 2.0)
    }
}

/// `u* = Σ x_i²`, `w ≡ 1`, flux 2 on the faces `x_j = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    d: usize,
}

pub fn make_quadratic_problem(d: usize) -> QuadraticProblem {
    assert!(d >= 1, "dimension must be positive");
    QuadraticProblem { d }
}

impl QuadraticProblem {
    /// `∫ u*²`.
    fn l2_sq(&self) -> f64 {
        let d = self.d as f64;
        d / 5.0 + d * (d - 1.0) / 9.0
    }
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn w(&self, _x: &[f64]) -> f64 {
        1.0
    }

    fn f(&self, x: &[f64]) -> f64 {
        -2.0 * self.d as f64 + self.u_star(x)
    }

    fn g(&self, x: &[f64], face: Face) -> f64 {
        face.side.normal_sign() * 2.0 * x[face.axis]
    }

    fn u_star(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| xi * xi).sum()
    }

    fn grad_u_star(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&xi| 2.0 * xi).collect()
    }

    fn c1(&self) -> f64 {
        1.0
    }

    fn c2(&self) -> f64 {
        let d = self.d as f64;
        (self.l2_sq() + 4.0 * d / 3.0 + 4.0 * d).sqrt()
    }

    fn c3(&self) -> f64 {
        2.0 * self.d as f64
    }

    fn w_sup(&self) -> f64 {
        1.0
    }

    fn analytic_energy(&self) -> Option<f64> {
        // L(u*) = -½‖u*‖²_{H¹} for the weak solution
        self.analytic_h1_norm_sq().map(|h| -0.5 * h)
    }

    fn analytic_h1_norm_sq(&self) -> Option<f64> {
        Some(self.l2_sq() + 4.0 * self.d as f64 / 3.0)
    }
}

/// Looks a problem up by its configuration name.
pub fn problem_by_name(name: &str, d: usize) -> Result<Box<dyn Problem>> {
    if d == 0 {
        return Err(Error::Config("problem dimension must be positive".into()));
    }
    match name {
        "cosine" => Ok(Box::new(make_cosine_problem(d))),
        "quadratic" => Ok(Box::new(make_quadratic_problem(d))),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// Maximum residuals found by [`verify_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemCheck {
    pub pde_residual: f64,
    pub flux_residual: f64,
    pub min_w: f64,
}

pub const VERIFY_TOLERANCE: f64 = 1e-6;
const LAPLACIAN_STEP: f64 = 1e-4;

/// Probes `-Δu* + w u* - f` (central second differences) at interior points
/// and `∇u*·n - g` at boundary points.
pub fn verify_problem(p: &dyn Problem, n_probe: usize, seed: u64) -> Result<ProblemCheck> {
    if n_probe == 0 {
        return Err(Error::EmptySamples);
    }
    let d = p.dim();
    let h = LAPLACIAN_STEP;
    let mut rng = sampling::stream_rng(seed, Stream::Probe);
    let mut check = ProblemCheck {
        pde_residual: 0.0,
        flux_residual: 0.0,
        min_w: f64::INFINITY,
    };
    let mut x = vec![0.0; d];
    for _ in 0..n_probe {
        // stay a step away from the boundary so the stencil is inside Ω
        for xi in x.iter_mut() {
            *xi = rng.random_range(h..1.0 - h);
        }
        let u0 = p.u_star(&x);
        let mut lap = 0.0;
        for k in 0..d {
            let xk = x[k];
            x[k] = xk + h;
            let up = p.u_star(&x);
            x[k] = xk - h;
            let dn = p.u_star(&x);
            x[k] = xk;
            lap += (up - 2.0 * u0 + dn) / (h * h);
        }
        let w = p.w(&x);
        check.min_w = check.min_w.min(w);
        let r = (-lap + w * u0 - p.f(&x)).abs();
        check.pde_residual = check.pde_residual.max(r);

        let face = Face::from_index(rng.random_range(0..2 * d));
        for xi in x.iter_mut() {
            *xi = rng.random_range(0.0..1.0);
        }
        x[face.axis] = face.side.coordinate();
        let grad = p.grad_u_star(&x);
        let flux = grad[face.axis] * face.side.normal_sign();
        check.flux_residual = check.flux_residual.max((flux - p.g(&x, face)).abs());
    }
    if check.pde_residual > VERIFY_TOLERANCE
        || check.flux_residual > VERIFY_TOLERANCE
        || check.min_w < p.c1()
        || !check.pde_residual.is_finite()
        || !check.flux_residual.is_finite()
    {
        return Err(Error::ProblemDefinition {
            name: p.name().to_string(),
            pde_residual: check.pde_residual,
            flux_residual: check.flux_residual,
        });
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ShiftedForcing<P>(P);

    impl<P: Problem> Problem for ShiftedForcing<P> {
        fn name(&self) -> &str {
            "shifted"
        }
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn w(&self, x: &[f64]) -> f64 {
            self.0.w(x)
        }
        fn f(&self, x: &[f64]) -> f64 {
            self.0.f(x) + 1.0
        }
        fn g(&self, x: &[f64], face: Face) -> f64 {
            self.0.g(x, face)
        }
        fn u_star(&self, x: &[f64]) -> f64 {
            self.0.u_star(x)
        }
        fn grad_u_star(&self, x: &[f64]) -> Vec<f64> {
            self.0.grad_u_star(x)
        }
        fn c1(&self) -> f64 {
            1.0
        }
        fn c2(&self) -> f64 {
            self.0.c2()
        }
        fn c3(&self) -> f64 {
            self.0.c3()
        }
        fn w_sup(&self) -> f64 {
            1.0
        }
        fn analytic_energy(&self) -> Option<f64> {
            None
        }
        fn analytic_h1_norm_sq(&self) -> Option<f64> {
            None
        }
    }

    #[test]
    fn reference_values() {
        assert!((make_cosine_problem(3).analytic_energy().unwrap() + 8.15220).abs() < 1e-5);
        assert!((make_cosine_problem(2).analytic_h1_norm_sq().unwrap() - (1.0 + PI * PI)).abs() < 1e-12);
        let q = make_quadratic_problem(2);
        assert_eq!(q.f(&[0.5, 0.5]), -3.5);
        let face = Face {
            axis: 0,
            side: Side::High,
        };
        assert_eq!(q.g(&[1.0, 0.3], face), 2.0);
        assert_eq!(
            q.g(
                &[0.0, 0.3],
                Face {
                    axis: 0,
                    side: Side::Low
                }
            ),
            0.0
        );
    }

    #[test]
    fn quadratic_gradient_energy_by_quadrature() {
        // midpoint rule is exact enough for ∫|∇u*|² = 4d/3 with d = 2
        let q = make_quadratic_problem(2);
        let m = 400;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = [(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64];
                s += q.grad_u_star(&x).iter().map(|g| g * g).sum::<f64>();
            }
        }
        s /= (m * m) as f64;
        assert!((s - 8.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn shipped_problems_verify() {
        for d in 1..=3 {
            verify_problem(&make_cosine_problem(d), 1000, 7).unwrap();
            verify_problem(&make_quadratic_problem(d), 1000, 7).unwrap();
        }
    }

    #[test]
    fn corrupted_forcing_is_flagged() {
        let bad = ShiftedForcing(make_cosine_problem(2));
        match verify_problem(&bad, 1000, 1) {
            Err(Error::ProblemDefinition { pde_residual, .. }) => assert!((pde_residual - 1.0).abs() < 1e-3),
            other => panic!("expected a definition error, got {other:?}"),
        }
    }

    #[test]
    fn cosine_flux_vanishes() {
        let p = make_cosine_problem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let face = Face::from_index(rng.random_range(0..6));
            let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            x[face.axis] = face.side.coordinate();
            let flux = p.grad_u_star(&x)[face.axis] * face.side.normal_sign();
            assert!(flux.abs() < 1e-12);
            assert_eq!(p.g(&x, face), 0.0);
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(problem_by_name("cosine", 2).unwrap().dim(), 2);
        assert!(matches!(problem_by_name("heat", 2), Err(Error::UnknownProblem(_))));
        assert!(problem_by_name("cosine", 0).is_err());
        for k in 0..6 {
            assert_eq!(Face::from_index(k).index(), k);
        }
    }
}
