//! Sequential Bayesian optimization of the wave speed.
//!
//! The loop follows the usual pattern: an initial random design, a
//! Gaussian-process surrogate refit after every observation, and an
//! upper-confidence-bound acquisition maximized on a dense grid over the
//! search interval. The target is the negative mean squared misfit between
//! the forward model's snapshot and the observation, so maximizing it drives
//! the candidate speed toward the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gp::{self, GprModel, HyperSearch};
use crate::lbfgs::LbfgsOptions;
use crate::pinn::{eval_field, train_pinn, CollocationSet};
use crate::wave::{analytic_u, Snapshot, WaveDomain, WaveSpeed};
use crate::{Error, Result};

/// Queries closer than this to a previous one reuse the cached value.
const MEMO_TOL: f64 = 1e-9;
/// Acquisition winners closer than this to a previous query are skipped in
/// favor of the next-best grid point.
const DUPLICATE_TOL: f64 = 1e-6;

/// Loop configuration.
#[derive(Debug, Clone)]
pub struct BoConfig {
    /// Closed search interval for the scaled wave speed.
    pub bounds: (f64, f64),
    /// Random evaluations used to seed the surrogate.
    pub n_init: usize,
    /// Acquisition-driven iterations after the initial design.
    pub n_iters: usize,
    /// Exploration weight of the upper confidence bound.
    pub kappa: f64,
    /// Grid resolution for acquisition maximization.
    pub acq_grid: usize,
    pub seed: u64,
    /// Hyperparameter policy for the surrogate refits.
    pub hyper_search: HyperSearch,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            bounds: (0.1, 1.0),
            n_init: 5,
            n_iters: 50,
            kappa: 2.45,
            acq_grid: 1001,
            seed: 0,
            hyper_search: HyperSearch::MarginalLikelihood,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.0 < self.bounds.1) {
            return Err(Error::Config(format!(
                "bounds must satisfy lo < hi, got ({}, {})",
                self.bounds.0, self.bounds.1
            )));
        }
        if self.n_init == 0 {
            return Err(Error::Config("n_init must be >= 1".into()));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.acq_grid < 2 {
            return Err(Error::Config("acq_grid must be >= 2".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.bounds;
        (0..self.acq_grid)
            .map(|i| lo + (hi - lo) * i as f64 / (self.acq_grid - 1) as f64)
            .collect()
    }
}

/// Record of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoTrace {
    /// Every queried speed, initial design included.
    pub queried_c: Vec<f64>,
    /// Matching target values (`-inf` for failed evaluations).
    pub queried_g: Vec<f64>,
    /// Running argmax after each query.
    pub incumbent_c: Vec<f64>,
    /// Running maximum after each query.
    pub incumbent_g: Vec<f64>,
    /// Marks evaluations that failed and were recorded as `-inf`.
    pub failed: Vec<bool>,
}

impl BoTrace {
    fn push(&mut self, c: f64, g: f64, failed: bool) {
        let (mut inc_c, mut inc_g) = match self.incumbent_g.last() {
            Some(&g_best) => (*self.incumbent_c.last().unwrap(), g_best),
            None => (c, f64::NEG_INFINITY),
        };
        if g > inc_g {
            inc_c = c;
            inc_g = g;
        }
        self.queried_c.push(c);
        self.queried_g.push(g);
        self.incumbent_c.push(inc_c);
        self.incumbent_g.push(inc_g);
        self.failed.push(failed);
    }

    /// Final incumbent as `(c*, g*)`.
    pub fn best(&self) -> (f64, f64) {
        (
            *self.incumbent_c.last().expect("trace is never empty"),
            *self.incumbent_g.last().expect("trace is never empty"),
        )
    }
}

/// Upper confidence bound `mean + kappa * std`.
#[inline]
pub fn ucb(mean: f64, std: f64, kappa: f64) -> f64 {
    mean + kappa * std
}

/// Maximize the UCB on the configured grid. Ties break toward the lowest
/// speed; a winner within `1e-6` of an already-queried point is passed over
/// for the next-best non-duplicate.
pub fn argmax_acquisition(model: &GprModel, cfg: &BoConfig, queried: &[f64]) -> f64 {
    let grid = cfg.grid();
    let mut scored: Vec<(f64, f64)> = grid
        .iter()
        .map(|&c| {
            let (mean, std) = model.predict(c);
            (c, ucb(mean, std, cfg.kappa))
        })
        .collect();
    // Stable sort: descending acquisition, ascending c on ties.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    for &(c, _) in &scored {
        if queried.iter().all(|&q| (q - c).abs() > DUPLICATE_TOL) {
            return c;
        }
    }
    scored[0].0
}

/// The forward model the target function compares against the snapshot.
pub enum ForwardModel {
    /// Closed-form solution; cheap, used for testing and BO isolation.
    Analytic { domain: WaveDomain },
    /// Train a PINN at each queried speed.
    Pinn(Box<PinnForwardConfig>),
}

/// Everything a PINN-backed target evaluation needs.
#[derive(Debug, Clone)]
pub struct PinnForwardConfig {
    pub colloc: CollocationSet,
    pub arch: Vec<usize>,
    pub opts: LbfgsOptions,
    pub dropout_rate: f64,
    /// Every evaluation retrains from the same fresh initialization seed
    /// (no warm starting across queries).
    pub train_seed: u64,
}

/// Negative mean squared misfit between the forward model's snapshot at
/// speed `c` and the observation.
pub fn target_function(c: WaveSpeed, obs: &Snapshot, forward: &ForwardModel) -> Result<f64> {
    let wrap = |e: Error| Error::TargetEval {
        c: c.scaled(),
        source: Box::new(e),
    };
    let model_us: Vec<f64> = match forward {
        ForwardModel::Analytic { domain } => obs
            .xs
            .iter()
            .map(|&x| analytic_u(x, obs.t_obs, c, domain))
            .collect::<Result<_>>()
            .map_err(wrap)?,
        ForwardModel::Pinn(cfg) => {
            let field = train_pinn(c, &cfg.colloc, &cfg.arch, &cfg.opts, cfg.dropout_rate, cfg.train_seed)
                .map_err(wrap)?;
            eval_field(&field, &obs.xs, obs.t_obs)
        }
    };
    let n = obs.us.len();
    if n == 0 || model_us.len() != n {
        return Err(wrap(Error::InvalidInput("empty or mismatched snapshot".into())));
    }
    let mse = obs
        .us
        .iter()
        .zip(&model_us)
        .map(|(o, m)| (m - o) * (m - o))
        .sum::<f64>()
        / n as f64;
    if !mse.is_finite() {
        return Err(wrap(Error::NonFinite("snapshot misfit".into())));
    }
    Ok(-mse)
}

/// Look up a previous evaluation within [`MEMO_TOL`].
fn memoized(trace: &BoTrace, c: f64) -> Option<f64> {
    trace
        .queried_c
        .iter()
        .position(|&q| (q - c).abs() <= MEMO_TOL)
        .map(|i| trace.queried_g[i])
}

/// Finite `(c, g)` pairs usable for the surrogate fit.
fn finite_data(trace: &BoTrace) -> (Vec<f64>, Vec<f64>) {
    trace
        .queried_c
        .iter()
        .zip(&trace.queried_g)
        .filter(|(_, g)| g.is_finite())
        .map(|(&c, &g)| (c, g))
        .unzip()
}

/// Run the full loop: `n_init` seeded random evaluations, then `n_iters`
/// rounds of refit, acquisition maximization, and evaluation. A failed
/// evaluation is recorded as `-inf` and the loop continues.
pub fn run_bo<F>(mut target: F, cfg: &BoConfig) -> Result<BoTrace>
where
    F: FnMut(f64) -> Result<f64>,
{
    cfg.validate()?;
    let (lo, hi) = cfg.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = BoTrace {
        queried_c: Vec::new(),
        queried_g: Vec::new(),
        incumbent_c: Vec::new(),
        incumbent_g: Vec::new(),
        failed: Vec::new(),
    };

    let evaluate = |c: f64, trace: &mut BoTrace, target: &mut F| {
        if let Some(g) = memoized(trace, c) {
            trace.push(c, g, !g.is_finite());
            return;
        }
        match target(c) {
            Ok(g) if g.is_finite() => trace.push(c, g, false),
            _ => trace.push(c, f64::NEG_INFINITY, true),
        }
    };

    for _ in 0..cfg.n_init {
        let c = rng.gen_range(lo..=hi);
        evaluate(c, &mut trace, &mut target);
    }

    for _ in 0..cfg.n_iters {
        let (xs, ys) = finite_data(&trace);
        let proposal = if xs.is_empty() {
            // Nothing finite to model yet; keep sampling at random.
            rng.gen_range(lo..=hi)
        } else {
            let model = gp::fit(&xs, &ys, cfg.hyper_search)?;
            argmax_acquisition(&model, cfg, &trace.queried_c)
        };
        evaluate(proposal, &mut trace, &mut target);
    }

    Ok(trace)
}
