//! The empirical Ritz loss
//!
//! `L̂(u) = (|Ω|/N) Σ [½|∇u(X_i)|² + ½ w u² - u f](X_i) - (|∂Ω|/M) Σ u(Y_j) g(Y_j)`
//!
//! with its four terms reported separately, its exact parameter gradient,
//! and Monte Carlo estimates of population quantities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::problems::{boundary_measure, Face, Problem, DOMAIN_VOLUME};
use crate::sampling::{check_dim, mean_and_se, sample_domain, sample_set, Estimate, Points, SampleSet};

/// Samples per parallel work item. Fixed so that reductions are identical
/// regardless of the number of threads.
const CHUNK: usize = 32;

/// Sample count of the reference loss in [`statistical_gap_estimate`].
pub const REFERENCE_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    #[serde(rename = "grad_term")]
    pub term_gradient: f64,
    #[serde(rename = "mass_term")]
    pub term_mass: f64,
    #[serde(rename = "forcing_term")]
    pub term_forcing: f64,
    #[serde(rename = "boundary_term")]
    pub term_boundary: f64,
}

impl LossReport {
    fn from_terms(term_gradient: f64, term_mass: f64, term_forcing: f64, term_boundary: f64) -> Self {
        LossReport {
            total: term_gradient + term_mass - term_forcing - term_boundary,
            term_gradient,
            term_mass,
            term_forcing,
            term_boundary,
        }
    }

    /// Terms in the order gradient, mass, forcing, boundary.
    pub fn terms(&self) -> [f64; 4] {
        [
            self.term_gradient,
            self.term_mass,
            self.term_forcing,
            self.term_boundary,
        ]
    }
}

fn check_samples(net: &Network, p: &dyn Problem, samples: &SampleSet) -> Result<()> {
    check_dim(net, p)?;
    if samples.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: samples.dim(),
        });
    }
    if samples.domain.is_empty() || samples.boundary.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(())
}

/// Per-sample `(½|∇u|², ½ w u², u f)`.
fn domain_integrands(net: &Network, p: &dyn Problem, points: &Points) -> Vec<[f64; 3]> {
    points
        .as_slice()
        .par_chunks_exact(points.dim())
        .map_init(
            || net.tape(),
            |tape, x| {
                net.run_forward(x, tape);
                net.run_input_gradient(tape);
                let u = tape.output();
                let g2: f64 = tape.grad_x.iter().map(|g| g * g).sum();
                [0.5 * g2, 0.5 * p.w(x) * u * u, u * p.f(x)]
            },
        )
        .collect()
}

/// Per-sample `u g`.
fn boundary_integrands(net: &Network, p: &dyn Problem, points: &Points, faces: &[Face]) -> Vec<f64> {
    let d = points.dim();
    points
        .as_slice()
        .par_chunks_exact(d)
        .zip(faces.par_iter())
        .map_init(
            || net.tape(),
            |tape, (y, &face)| {
                net.run_forward(y, tape);
                tape.output() * p.g(y, face)
            },
        )
        .collect()
}

pub fn empirical_loss(net: &Network, p: &dyn Problem, samples: &SampleSet) -> Result<LossReport> {
    check_samples(net, p, samples)?;
    let dom = domain_integrands(net, p, &samples.domain);
    let bnd = boundary_integrands(net, p, &samples.boundary, &samples.faces);
    let scale_d = DOMAIN_VOLUME / dom.len() as f64;
    let scale_b = boundary_measure(p.dim()) / bnd.len() as f64;
    let mut sums = [0.0; 3];
    for v in &dom {
        for k in 0..3 {
            sums[k] += v[k];
        }
    }
    let b: f64 = bnd.iter().sum();
    Ok(LossReport::from_terms(
        scale_d * sums[0],
        scale_d * sums[1],
        scale_d * sums[2],
        scale_b * b,
    ))
}

/// Empirical loss and its exact gradient with respect to the flattened
/// parameters.
pub fn loss_and_parameter_gradient(
    net: &Network,
    p: &dyn Problem,
    samples: &SampleSet,
) -> Result<(LossReport, Vec<f64>)> {
    check_samples(net, p, samples)?;
    let d = p.dim();
    let n = samples.domain.len();
    let m = samples.boundary.len();
    let scale_d = DOMAIN_VOLUME / n as f64;
    let scale_b = boundary_measure(d) / m as f64;
    let np = net.parameter_count();

    let dom_chunks: Vec<&[f64]> = samples.domain.as_slice().chunks(CHUNK * d).collect();
    let dom_parts: Vec<([f64; 3], Vec<f64>)> = dom_chunks
        .par_iter()
        .map(|chunk| {
            let mut tape = net.tape();
            let mut grad = vec![0.0; np];
            let mut dir = vec![0.0; d];
            let mut sums = [0.0; 3];
            for x in chunk.chunks_exact(d) {
                net.run_forward(x, &mut tape);
                net.run_input_gradient(&mut tape);
                let u = tape.output();
                let w = p.w(x);
                let f = p.f(x);
                dir.copy_from_slice(&tape.grad_x);
                sums[0] += 0.5 * dir.iter().map(|g| g * g).sum::<f64>();
                sums[1] += 0.5 * w * u * u;
                sums[2] += u * f;
                net.run_tangent(&dir, &mut tape);
                net.accumulate_parameter_gradient(&mut tape, scale_d * (w * u - f), scale_d, &mut grad);
            }
            (sums, grad)
        })
        .collect();

    let faces: Vec<&[Face]> = samples.faces.chunks(CHUNK).collect();
    let bnd_chunks: Vec<(&[f64], &[Face])> = samples.boundary.as_slice().chunks(CHUNK * d).zip(faces).collect();
    let bnd_parts: Vec<(f64, Vec<f64>)> = bnd_chunks
        .par_iter()
        .map(|(chunk, faces)| {
            let mut tape = net.tape();
            let mut grad = vec![0.0; np];
            let mut sum = 0.0;
            for (y, &face) in chunk.chunks_exact(d).zip(faces.iter()) {
                net.run_forward(y, &mut tape);
                let g = p.g(y, face);
                sum += tape.output() * g;
                if g != 0.0 {
                    net.accumulate_parameter_gradient(&mut tape, -scale_b * g, 0.0, &mut grad);
                }
            }
            (sum, grad)
        })
        .collect();

    let mut grad = vec![0.0; np];
    let mut sums = [0.0; 3];
    for (s, g) in &dom_parts {
        for k in 0..3 {
            sums[k] += s[k];
        }
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let mut bsum = 0.0;
    for (s, g) in &bnd_parts {
        bsum += s;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let report = LossReport::from_terms(scale_d * sums[0], scale_d * sums[1], scale_d * sums[2], scale_b * bsum);
    Ok((report, grad))
}

/// Loss on a fresh sample of `n_quad` domain and `n_quad` boundary points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationLoss {
    pub value: f64,
    pub std_error: f64,
    pub terms: LossReport,
}

pub fn population_loss_estimate(net: &Network, p: &dyn Problem, n_quad: usize, seed: u64) -> Result<PopulationLoss> {
    check_dim(net, p)?;
    let samples = sample_set(n_quad, n_quad, p.dim(), seed);
    let dom = domain_integrands(net, p, &samples.domain);
    let bnd = boundary_integrands(net, p, &samples.boundary, &samples.faces);
    let a: Vec<f64> = dom.iter().map(|v| v[0] + v[1] - v[2]).collect();
    let bm = boundary_measure(p.dim());
    let b: Vec<f64> = bnd.iter().map(|v| bm * v).collect();
    let ea = mean_and_se(&a)?;
    let eb = mean_and_se(&b)?;
    let terms = empirical_loss(net, p, &samples)?;
    Ok(PopulationLoss {
        value: terms.total,
        std_error: (ea.std_error * ea.std_error + eb.std_error * eb.std_error).sqrt(),
        terms,
    })
}

/// `L(u) - L(u*)` and an independent estimate of `‖∇v‖² + ‖v‖²_w`,
/// `v = u - u*`; the two satisfy `excess = ½ h1_sq_of_diff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyExcess {
    pub excess: Estimate,
    pub h1_sq_of_diff: Estimate,
}

/// Offset separating the seed of the second estimate from the first.
const INDEPENDENT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn energy_excess(net: &Network, p: &dyn Problem, n_quad: usize, seed: u64) -> Result<EnergyExcess> {
    let l_star = p
        .analytic_energy()
        .ok_or_else(|| Error::MissingAnalyticEnergy(p.name().to_string()))?;
    let pop = population_loss_estimate(net, p, n_quad, seed)?;
    let points = sample_domain(n_quad, p.dim(), seed.wrapping_add(INDEPENDENT_SEED_OFFSET));
    let vals: Vec<f64> = points
        .as_slice()
        .par_chunks_exact(points.dim())
        .map_init(
            || net.tape(),
            |tape, x| {
                net.run_forward(x, tape);
                net.run_input_gradient(tape);
                let e0 = tape.output() - p.u_star(x);
                let gs = p.grad_u_star(x);
                let e1: f64 = tape.grad_x.iter().zip(&gs).map(|(a, b)| (a - b) * (a - b)).sum();
                e1 + p.w(x) * e0 * e0
            },
        )
        .collect();
    let h = mean_and_se(&vals)?;
    Ok(EnergyExcess {
        excess: Estimate {
            value: pop.value - l_star,
            std_error: pop.std_error,
        },
        h1_sq_of_diff: Estimate {
            value: DOMAIN_VOLUME * h.value,
            std_error: DOMAIN_VOLUME * h.std_error,
        },
    })
}

/// Mean absolute deviation of the empirical loss of a fixed network from a
/// large-sample reference, overall and per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    pub reps: usize,
    pub reference_samples: usize,
    pub mean_abs_gap: f64,
    /// Standard error of `mean_abs_gap` across repetitions.
    pub mean_abs_gap_se: f64,
    /// Gradient, mass, forcing and boundary terms.
    pub per_term: [f64; 4],
    pub reference: LossReport,
}

/// Gap with the default reference size.
pub fn statistical_gap_estimate(net: &Network, p: &dyn Problem, n: usize, reps: usize, seed: u64) -> Result<GapReport> {
    statistical_gap_estimate_with_reference(net, p, n, reps, seed, REFERENCE_SAMPLES)
}

/// Repetition `r` uses seed `seed + 1 + r`; the reference uses `seed`.
pub fn statistical_gap_estimate_with_reference(
    net: &Network,
    p: &dyn Problem,
    n: usize,
    reps: usize,
    seed: u64,
    reference_samples: usize,
) -> Result<GapReport> {
    if reps < 2 {
        return Err(Error::Domain("statistical gap needs at least 2 repetitions".into()));
    }
    if n == 0 || reference_samples == 0 {
        return Err(Error::EmptySamples);
    }
    check_dim(net, p)?;
    let d = p.dim();
    let reference = empirical_loss(net, p, &sample_set(reference_samples, reference_samples, d, seed))?;
    let reports: Vec<LossReport> = (0..reps as u64)
        .into_par_iter()
        .map(|r| empirical_loss(net, p, &sample_set(n, n, d, seed.wrapping_add(1 + r))))
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = reports.iter().map(|l| (l.total - reference.total).abs()).collect();
    let mean = mean_and_se(&gaps)?;
    let mut per_term = [0.0; 4];
    let rt = reference.terms();
    for l in &reports {
        for (k, t) in l.terms().iter().enumerate() {
            per_term[k] += (t - rt[k]).abs() / reps as f64;
        }
    }
    Ok(GapReport {
        n,
        reps,
        reference_samples,
        mean_abs_gap: mean.value,
        mean_abs_gap_se: mean.std_error,
        per_term,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::problems::{make_cosine_problem, make_quadratic_problem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, d: usize, hidden: &[usize]) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::relu2_mlp(d, hidden).unwrap();
        let p: Vec<f64> = (0..arch.parameter_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Network::from_parameters(arch, &p).unwrap()
    }

    fn constant_net(d: usize, c: f64) -> Network {
        let arch = Architecture::relu2_mlp(d, &[]).unwrap();
        Network::new(arch, vec![vec![0.0; d]], vec![vec![c]]).unwrap()
    }

    #[test]
    fn zero_network_has_zero_loss() {
        let p = make_quadratic_problem(2);
        let s = sample_set(100, 100, 2, 1);
        let net = Network::zeros(Architecture::relu2_mlp(2, &[4]).unwrap()).unwrap();
        assert_eq!(empirical_loss(&net, &p, &s).unwrap(), LossReport::default());
    }

    #[test]
    fn constant_network_by_hand() {
        let p = make_cosine_problem(2);
        let s = sample_set(500, 300, 2, 4);
        let l = empirical_loss(&constant_net(2, 1.0), &p, &s).unwrap();
        let fbar = s.domain.iter().map(|x| p.f(x)).sum::<f64>() / 500.0;
        assert!((l.total - (0.5 - fbar)).abs() < 1e-12);
        assert_eq!(l.term_gradient, 0.0);
        assert_eq!(l.term_boundary, 0.0);
    }

    #[test]
    fn additivity_and_permutation_invariance() {
        let p = make_quadratic_problem(2);
        let net = random_net(3, 2, &[5, 5]);
        let s = sample_set(200, 150, 2, 8);
        let l = empirical_loss(&net, &p, &s).unwrap();
        let sum = l.term_gradient + l.term_mass - l.term_forcing - l.term_boundary;
        assert!((l.total - sum).abs() <= 1e-12 * l.total.abs().max(1.0));
        let rev_d: Vec<usize> = (0..200).rev().collect();
        let rev_b: Vec<usize> = (0..150).rev().collect();
        let lp = empirical_loss(&net, &p, &s.subset(&rev_d, &rev_b)).unwrap();
        assert!((l.total - lp.total).abs() <= 1e-12 * l.total.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = make_quadratic_problem(2);
        let net = random_net(5, 2, &[4, 3]);
        let s = sample_set(70, 45, 2, 2);
        let (l, g) = loss_and_parameter_gradient(&net, &p, &s).unwrap();
        let direct = empirical_loss(&net, &p, &s).unwrap();
        for (a, b) in l.terms().iter().zip(direct.terms()) {
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
        }
        let phi = net.parameters();
        let h = 1e-5;
        for k in 0..phi.len() {
            let mut q = phi.clone();
            q[k] += h;
            let up = empirical_loss(&net.with_parameters(&q).unwrap(), &p, &s).unwrap().total;
            q[k] -= 2.0 * h;
            let dn = empirical_loss(&net.with_parameters(&q).unwrap(), &p, &s).unwrap().total;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "param {k}: {} vs {fd}",
                g[k]
            );
        }
    }

    #[test]
    fn empty_samples_rejected() {
        let p = make_cosine_problem(1);
        let net = random_net(1, 1, &[2]);
        let mut s = sample_set(10, 10, 1, 1);
        s.boundary = Points::new(1, Vec::new()).unwrap();
        s.faces.clear();
        assert!(matches!(empirical_loss(&net, &p, &s), Err(Error::EmptySamples)));
    }

    #[test]
    fn exact_solution_energy() {
        let p = make_cosine_problem(1);
        let zero = Network::zeros(Architecture::relu2_mlp(1, &[2]).unwrap()).unwrap();
        let pop = population_loss_estimate(&zero, &p, 1000, 3).unwrap();
        assert_eq!((pop.value, pop.std_error), (0.0, 0.0));
        let a = population_loss_estimate(&random_net(2, 1, &[3]), &p, 1000, 3).unwrap();
        let b = population_loss_estimate(&random_net(2, 1, &[3]), &p, 1000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn excess_matches_half_h1_norm() {
        let p = make_quadratic_problem(2);
        let net = random_net(9, 2, &[6]);
        let e = energy_excess(&net, &p, 200_000, 1).unwrap();
        let half = 0.5 * e.h1_sq_of_diff.value;
        let sigma = (e.excess.std_error.powi(2) + (0.5 * e.h1_sq_of_diff.std_error).powi(2)).sqrt();
        assert!(
            (e.excess.value - half).abs() <= 5.0 * sigma,
            "{} vs {half} ± {sigma}",
            e.excess.value
        );
        assert!(e.excess.value >= -5.0 * e.excess.std_error);
    }

    #[test]
    fn gap_of_zero_network_vanishes() {
        let p = make_cosine_problem(1);
        let zero = Network::zeros(Architecture::relu2_mlp(1, &[2]).unwrap()).unwrap();
        let g = statistical_gap_estimate_with_reference(&zero, &p, 64, 4, 0, 1000).unwrap();
        assert_eq!(g.mean_abs_gap, 0.0);
        let net = random_net(4, 1, &[3]);
        let g = statistical_gap_estimate_with_reference(&net, &p, 64, 10, 0, 10_000).unwrap();
        assert!(g.mean_abs_gap <= g.per_term.iter().sum::<f64>() + 1e-12);
        assert!(statistical_gap_estimate_with_reference(&net, &p, 64, 1, 0, 100).is_err());
    }
}
