//! Seeded uniform sampling on the unit cube and its boundary, and Monte
//! Carlo integration.
//!
//! Every random quantity is drawn from ChaCha8 seeded with the user seed and
//! a fixed stream number per purpose, so domain and boundary samples from
//! the same seed are independent. Points are generated sequentially; only
//! integrand evaluation is parallel, and sums are reduced in sample order, so
//! results do not depend on the thread count.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::problems::{boundary_measure, Face, Problem, DOMAIN_VOLUME};

/// Identifier recorded in reports.
pub const RNG_ID: &str = "chacha8-rand_chacha-0.9/seed_from_u64+stream";

/// Stream numbers separating independent uses of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Domain = 1,
    Boundary = 2,
    Probe = 3,
    Init = 4,
    Batch = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Domain("rows of unequal length".into()));
        }
        Points::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Points { dim: self.dim, data }
    }

    /// Evaluates `f` at every row in parallel; output order matches rows.
    pub fn par_map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync + Send,
    {
        self.data.par_chunks_exact(self.dim).map(f).collect()
    }
}

/// Domain and boundary samples for the empirical loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub domain: Points,
    pub boundary: Points,
    pub faces: Vec<Face>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(domain: Points, boundary: Points, faces: Vec<Face>, seed: u64) -> Result<Self> {
        if boundary.len() != faces.len() {
            return Err(Error::DimensionMismatch {
                expected: boundary.len(),
                got: faces.len(),
            });
        }
        if domain.dim() != boundary.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: boundary.dim(),
            });
        }
        Ok(SampleSet {
            domain,
            boundary,
            faces,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Sub-sample with the given domain and boundary rows.
    pub fn subset(&self, domain_idx: &[usize], boundary_idx: &[usize]) -> SampleSet {
        SampleSet {
            domain: self.domain.select(domain_idx),
            boundary: self.boundary.select(boundary_idx),
            faces: boundary_idx.iter().map(|&i| self.faces[i]).collect(),
            seed: self.seed,
        }
    }
}

/// `n` i.i.d. uniform points strictly inside `(0,1)^d`.
pub fn sample_domain(n: usize, d: usize, seed: u64) -> Points {
    assert!(d >= 1, "dimension must be positive");
    let mut rng = stream_rng(seed, Stream::Domain);
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(Open01)).collect();
    Points { dim: d, data }
}

/// `m` i.i.d. uniform points on the boundary: a face uniformly among `2d`,
/// then a uniform point on it.
pub fn sample_boundary(m: usize, d: usize, seed: u64) -> (Points, Vec<Face>) {
    assert!(d >= 1, "dimension must be positive");
    let mut rng = stream_rng(seed, Stream::Boundary);
    let mut data = Vec::with_capacity(m * d);
    let mut faces = Vec::with_capacity(m);
    for _ in 0..m {
        let face = Face::from_index(rng.random_range(0..2 * d));
        for k in 0..d {
            let v = if k == face.axis {
                face.side.coordinate()
            } else {
                rng.sample::<f64, _>(Open01)
            };
            data.push(v);
        }
        faces.push(face);
    }
    (Points { dim: d, data }, faces)
}

/// `n` domain and `m` boundary samples from one seed.
pub fn sample_set(n: usize, m: usize, d: usize, seed: u64) -> SampleSet {
    let domain = sample_domain(n, d, seed);
    let (boundary, faces) = sample_boundary(m, d, seed);
    SampleSet {
        domain,
        boundary,
        faces,
        seed,
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Sample mean and standard error of the mean (`n - 1` normalisation).
pub fn mean_and_se(values: &[f64]) -> Result<Estimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::EmptySamples);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(Estimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
    })
}

/// `volume · mean f(points)` with standard error `volume · sd / √n`.
pub fn mc_integrate<F>(f: F, points: &Points, volume: f64) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let values = points.par_map(f);
    let e = mean_and_se(&values)?;
    Ok(Estimate {
        value: volume * e.value,
        std_error: volume * e.std_error,
    })
}

/// Monte Carlo estimates of `u - u*` in `L²`, the `H¹` seminorm and `H¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H1Error {
    pub l2_err: f64,
    pub h1_semi_err: f64,
    pub h1_err: f64,
    /// Standard error of `h1_err` by the delta method.
    pub h1_err_se: f64,
    pub l2_sq: Estimate,
    pub semi_sq: Estimate,
    pub h1_sq: Estimate,
}

/// Per-point `((u - u*)², |∇u - ∇u*|²)`.
pub(crate) fn pointwise_errors(net: &Network, p: &dyn Problem, points: &Points) -> Vec<(f64, f64)> {
    points
        .data
        .par_chunks_exact(points.dim)
        .map_init(
            || net.tape(),
            |tape, x| {
                net.run_forward(x, tape);
                net.run_input_gradient(tape);
                let e0 = tape.output() - p.u_star(x);
                let gs = p.grad_u_star(x);
                let e1: f64 = tape.grad_x.iter().zip(&gs).map(|(a, b)| (a - b) * (a - b)).sum();
                (e0 * e0, e1)
            },
        )
        .collect()
}

pub fn h1_error(net: &Network, p: &dyn Problem, n_quad: usize, seed: u64) -> Result<H1Error> {
    check_dim(net, p)?;
    let points = sample_domain(n_quad, p.dim(), seed);
    let errs = pointwise_errors(net, p, &points);
    let l2: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let semi: Vec<f64> = errs.iter().map(|e| e.1).collect();
    let total: Vec<f64> = errs.iter().map(|e| e.0 + e.1).collect();
    let l2_sq = scale(mean_and_se(&l2)?, DOMAIN_VOLUME);
    let semi_sq = scale(mean_and_se(&semi)?, DOMAIN_VOLUME);
    let h1_sq = scale(mean_and_se(&total)?, DOMAIN_VOLUME);
    let h1_err = h1_sq.value.sqrt();
    Ok(H1Error {
        l2_err: l2_sq.value.sqrt(),
        h1_semi_err: semi_sq.value.sqrt(),
        h1_err,
        h1_err_se: if h1_err > 0.0 {
            h1_sq.std_error / (2.0 * h1_err)
        } else {
            0.0
        },
        l2_sq,
        semi_sq,
        h1_sq,
    })
}

fn scale(e: Estimate, volume: f64) -> Estimate {
    Estimate {
        value: volume * e.value,
        std_error: volume * e.std_error,
    }
}

pub(crate) fn check_dim(net: &Network, p: &dyn Problem) -> Result<()> {
    if net.input_dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: net.input_dim(),
        });
    }
    Ok(())
}

/// `|∂Ω|` as a sampling volume.
pub fn boundary_volume(d: usize) -> f64 {
    boundary_measure(d)
}
