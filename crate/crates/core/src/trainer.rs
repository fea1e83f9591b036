//! First-order minimisation of the empirical Ritz loss.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, Network};
use crate::objective::{empirical_loss, loss_and_parameter_gradient};
use crate::problems::Problem;
use crate::sampling::{sample_set, stream_rng, SampleSet, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    /// Mini-batches drawn without replacement from the fixed sample set.
    FixedSet,
    /// New i.i.d. samples every step.
    FreshEachStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    pub iterations: usize,
    pub batch_domain: usize,
    pub batch_boundary: usize,
    pub resample: Resample,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub init_scale: f64,
    /// Full-set loss is recorded every this many iterations.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            iterations: 5000,
            batch_domain: 256,
            batch_boundary: 256,
            resample: Resample::FixedSet,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            init_scale: 1.0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_domain == 0 || self.batch_boundary == 0 {
            return bad("batch sizes must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || self.adam_eps <= 0.0 {
            return bad("adam_betas must lie in [0, 1) and adam_eps must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Loss on the full fixed sample set.
    pub loss: f64,
    /// Norm of the full-set gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub checkpoints: Vec<Checkpoint>,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Excluded from serialised reports so reruns are byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.checkpoints {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weights uniform on `[-s, s]`, `s = init_scale·√(6/(fan_in + fan_out))`,
/// zero biases.
pub fn init_network(arch: &Architecture, init_scale: f64, seed: u64) -> Result<Network> {
    let mut rng = stream_rng(seed, Stream::Init);
    let dims = &arch.layer_dims;
    let mut weights = Vec::with_capacity(arch.depth());
    let mut biases = Vec::with_capacity(arch.depth());
    for l in 0..arch.depth() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let s = init_scale * (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
            .collect();
        weights.push(w);
        biases.push(vec![0.0; n_out]);
    }
    Network::new(arch.clone(), weights, biases)
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, (beta1, beta2): (f64, f64), eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diverged(iteration: usize, what: &'static str, params: &[f64]) -> Error {
    Error::TrainingDiverged {
        iteration,
        what,
        parameter_norm: norm(params),
    }
}

/// Runs `cfg.iterations` optimizer steps from `net` and returns the iterate
/// with the lowest full-set loss among the checkpoints, with its history.
pub fn train(
    net: &Network,
    p: &dyn Problem,
    samples: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    let start = Instant::now();
    let n = samples.domain.len();
    let m = samples.boundary.len();
    if cfg.resample == Resample::FixedSet && (cfg.batch_domain > n || cfg.batch_boundary > m) {
        return Err(Error::Config(format!(
            "batch sizes ({}, {}) exceed the sample set ({n}, {m})",
            cfg.batch_domain, cfg.batch_boundary
        )));
    }
    let d = p.dim();
    let mut params = net.parameters();
    let mut current = net.clone();
    let mut adam = Adam::new(params.len(), cfg.adam_betas, cfg.adam_eps);
    let mut rng = stream_rng(cfg.seed, Stream::Batch);
    let epoch = n.div_ceil(cfg.batch_domain).max(1);

    let mut checkpoints = Vec::new();
    let mut best = (current.clone(), 0usize, f64::INFINITY);
    let mut record = |it: usize, net: &Network, params: &[f64], checkpoints: &mut Vec<Checkpoint>| -> Result<()> {
        let (l, g) = loss_and_parameter_gradient(net, p, samples)?;
        if !l.total.is_finite() {
            return Err(diverged(it, "loss", params));
        }
        checkpoints.push(Checkpoint {
            iteration: it,
            loss: l.total,
            grad_norm: norm(&g),
        });
        if l.total < best.2 {
            best = (net.clone(), it, l.total);
        }
        Ok(())
    };
    record(0, &current, &params, &mut checkpoints)?;

    for it in 1..=cfg.iterations {
        let batch;
        let batch_ref = match cfg.resample {
            Resample::FixedSet if cfg.batch_domain == n && cfg.batch_boundary == m => samples,
            Resample::FixedSet => {
                let di = index::sample(&mut rng, n, cfg.batch_domain).into_vec();
                let bi = index::sample(&mut rng, m, cfg.batch_boundary).into_vec();
                batch = samples.subset(&di, &bi);
                &batch
            }
            Resample::FreshEachStep => {
                batch = sample_set(cfg.batch_domain, cfg.batch_boundary, d, rng.random());
                &batch
            }
        };
        let (l, g) = loss_and_parameter_gradient(&current, p, batch_ref)?;
        if !l.total.is_finite() {
            return Err(diverged(it, "loss", &params));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(diverged(it, "gradient", &params));
        }
        let lr = cfg.learning_rate * cfg.lr_decay.powi(((it - 1) / epoch) as i32);
        match cfg.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&g) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => adam.step(&mut params, &g, lr),
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(diverged(it, "parameters", &params));
        }
        current.load_parameters(&params);
        if it % cfg.checkpoint_every == 0 || it == cfg.iterations {
            record(it, &current, &params, &mut checkpoints)?;
        }
    }

    let (best_net, best_iteration, best_loss) = best;
    let history = TrainHistory {
        initial_loss: checkpoints[0].loss,
        final_loss: checkpoints.last().unwrap().loss,
        checkpoints,
        best_iteration,
        best_loss,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best_net, history))
}

/// Initialises with `init_network(arch, cfg.init_scale, cfg.seed)` and trains.
pub fn train_from_scratch(
    arch: &Architecture,
    p: &dyn Problem,
    samples: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    let net = init_network(arch, cfg.init_scale, cfg.seed)?;
    train(&net, p, samples, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationError {
    /// `max(0, L̂(trained) - min_k L̂(restart_k))`.
    pub value: f64,
    pub trained_loss: f64,
    pub restart_losses: Vec<f64>,
}

/// Restart `k` trains from scratch with `cfg.seed + 1 + k` for both the
/// initialisation and the batch stream, so no restart repeats a run made
/// with `cfg` itself; restarts run concurrently.
pub fn optimization_error_estimate(
    trained: &Network,
    p: &dyn Problem,
    samples: &SampleSet,
    cfg: &TrainConfig,
    restarts: usize,
) -> Result<OptimizationError> {
    if restarts == 0 {
        return Err(Error::Config("restarts must be at least 1".into()));
    }
    let trained_loss = empirical_loss(trained, p, samples)?.total;
    let restart_losses: Vec<f64> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| {
            let cfg_k = TrainConfig {
                seed: cfg.seed.wrapping_add(1 + k),
                ..cfg.clone()
            };
            let (net, _) = train_from_scratch(trained.architecture(), p, samples, &cfg_k)?;
            Ok(empirical_loss(&net, p, samples)?.total)
        })
        .collect::<Result<_>>()?;
    let best = restart_losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OptimizationError {
        value: (trained_loss - best).max(0.0),
        trained_loss,
        restart_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::prescribe_architecture;
    use crate::problems::{make_cosine_problem, make_quadratic_problem};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 50,
            batch_domain: 32,
            batch_boundary: 32,
            checkpoint_every: 10,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let arch = Architecture::relu2_mlp(2, &[400, 400]).unwrap();
        let a = init_network(&arch, 1.0, 3).unwrap();
        assert_eq!(a, init_network(&arch, 1.0, 3).unwrap());
        let w = &a.weights()[1];
        let s = (6.0f64 / 800.0).sqrt();
        let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max <= s && max >= 0.95 * s);
        let sd = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
        assert!((sd / (s / 3f64.sqrt()) - 1.0).abs() < 0.05);
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
        let z = init_network(&arch, 0.0, 3).unwrap();
        assert_eq!(z.forward(&[0.3, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn zero_iterations_and_zero_rate_leave_parameters() {
        let p = make_cosine_problem(1);
        let s = sample_set(64, 64, 1, 1);
        let net = init_network(&Architecture::relu2_mlp(1, &[8]).unwrap(), 1.0, 2).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..small_cfg()
        };
        assert_eq!(train(&net, &p, &s, &cfg).unwrap().0, net);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let (out, hist) = train(&net, &p, &s, &cfg).unwrap();
        assert_eq!(out.parameters(), net.parameters());
        assert_eq!(hist.checkpoints.len(), 6);
    }

    #[test]
    fn single_sgd_step_on_one_parameter() {
        // u(x) = a·x, so ∇u = a and the loss is quadratic in a
        let p = make_quadratic_problem(1);
        let s = sample_set(40, 40, 1, 5);
        let arch = Architecture::relu2_mlp(1, &[]).unwrap();
        let net = Network::new(arch, vec![vec![0.7]], vec![vec![0.0]]).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            iterations: 1,
            batch_domain: 40,
            batch_boundary: 40,
            checkpoint_every: 1,
            ..TrainConfig::default()
        };
        let h = 1e-6;
        let loss_at = |a: f64| {
            let n = net.with_parameters(&[a, 0.0]).unwrap();
            empirical_loss(&n, &p, &s).unwrap().total
        };
        let da = (loss_at(0.7 + h) - loss_at(0.7 - h)) / (2.0 * h);
        let db = {
            let at = |b: f64| {
                empirical_loss(&net.with_parameters(&[0.7, b]).unwrap(), &p, &s)
                    .unwrap()
                    .total
            };
            (at(h) - at(-h)) / (2.0 * h)
        };
        let mut stepped = net.clone();
        stepped.load_parameters(&[0.7 - 0.1 * da, -0.1 * db]);
        let (_, hist) = train(&net, &p, &s, &cfg).unwrap();
        let want = empirical_loss(&stepped, &p, &s).unwrap().total;
        assert!((hist.checkpoints[1].loss - want).abs() < 1e-8);
    }

    #[test]
    fn adam_first_steps_by_hand() {
        let mut adam = Adam::new(1, (0.9, 0.999), 1e-8);
        let mut x = [1.0];
        // f(x) = x², gradient 2x
        adam.step(&mut x, &[2.0], 0.1);
        assert!((x[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        let g2 = 2.0 * x[0];
        let m = 0.9 * 0.2 + 0.1 * g2;
        let v = 0.999 * 0.004 + 0.001 * g2 * g2;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.999f64.powi(2));
        let want = x[0] - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        adam.step(&mut x, &[g2], 0.1);
        assert!((x[0] - want).abs() < 1e-14);
    }

    #[test]
    fn training_is_deterministic_and_decreases_loss() {
        let p = make_cosine_problem(1);
        let s = sample_set(256, 256, 1, 2);
        let arch = prescribe_architecture(1, 256, 0.0);
        let cfg = TrainConfig {
            iterations: 300,
            batch_domain: 64,
            batch_boundary: 64,
            ..TrainConfig::default()
        };
        let (a, ha) = train_from_scratch(&arch, &p, &s, &cfg).unwrap();
        let (b, hb) = train_from_scratch(&arch, &p, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.checkpoints, hb.checkpoints);
        assert!(ha.best_loss < ha.initial_loss);
        let min = ha.checkpoints.iter().map(|c| c.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(ha.best_loss, min);
        assert!(ha
            .checkpoints
            .iter()
            .any(|c| c.iteration == ha.best_iteration && c.loss == min));
    }

    #[test]
    fn fresh_samples_and_decay_run() {
        let p = make_quadratic_problem(2);
        let s = sample_set(64, 64, 2, 2);
        let cfg = TrainConfig {
            resample: Resample::FreshEachStep,
            lr_decay: 0.9,
            batch_domain: 128,
            ..small_cfg()
        };
        let (_, h) = train_from_scratch(&Architecture::relu2_mlp(2, &[6]).unwrap(), &p, &s, &cfg).unwrap();
        assert!(h.best_loss.is_finite());
        let bad = TrainConfig {
            resample: Resample::FixedSet,
            ..cfg
        };
        assert!(matches!(
            train_from_scratch(&Architecture::relu2_mlp(2, &[6]).unwrap(), &p, &s, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let p = make_cosine_problem(1);
        let s = sample_set(32, 32, 1, 1);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e6,
            iterations: 200,
            batch_domain: 32,
            batch_boundary: 32,
            ..TrainConfig::default()
        };
        let res = train_from_scratch(&Architecture::relu2_mlp(1, &[8, 8]).unwrap(), &p, &s, &cfg);
        assert!(matches!(res, Err(Error::TrainingDiverged { .. })), "{res:?}");
    }

    #[test]
    fn optimization_error_of_identical_restart_is_zero() {
        let p = make_cosine_problem(1);
        let s = sample_set(64, 64, 1, 3);
        let arch = Architecture::relu2_mlp(1, &[8]).unwrap();
        let cfg = small_cfg();
        let next = TrainConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        };
        let (net, _) = train_from_scratch(&arch, &p, &s, &next).unwrap();
        let e = optimization_error_estimate(&net, &p, &s, &cfg, 1).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.restart_losses[0], e.trained_loss);
        let e = optimization_error_estimate(&net, &p, &s, &cfg, 3).unwrap();
        assert!(e.value >= 0.0);
        assert_eq!(e.restart_losses.len(), 3);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg: TrainConfig =
            toml::from_str("optimizer = \"sgd\"\nresample = \"fresh_each_step\"\nadam_betas = [0.8, 0.99]").unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.adam_betas, (0.8, 0.99));
        assert_eq!(cfg.iterations, 5000);
        assert!(toml::from_str::<TrainConfig>("learning_rat = 1.0").is_err());
    }
}
