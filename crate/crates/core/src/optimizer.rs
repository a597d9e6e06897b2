//! Gradient descent with momentum on the KL loss, with step halving so the
//! loss never increases once early exaggeration is over.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinities::CalibratedAffinities;
use crate::error::{Error, Result};
use crate::kernel::{pair_pass, PairPass};
use crate::types::Embedding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// `None` means `2n`.
    pub learning_rate: Option<f64>,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub use_exaggeration: bool,
    /// Stop once every row of the unit-factor residual is this small.
    pub grad_tol: f64,
    /// Convergence is not tested before this iteration. The collapsed
    /// starting configuration is itself stationary, with a residual far
    /// below any useful tolerance.
    pub min_iters: usize,
    pub init_scale: f64,
    pub max_halvings: usize,
    /// Record every k-th iteration in the loss trace (the last one always).
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            learning_rate: None,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            use_exaggeration: false,
            grad_tol: 1e-7,
            min_iters: 250,
            init_scale: 1e-4,
            max_halvings: 30,
            trace_every: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning_rate must be positive");
            }
        }
        for m in [self.momentum_initial, self.momentum_final] {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        if !(self.early_exaggeration >= 1.0) {
            return bad("early_exaggeration must be >= 1");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidScale(self.init_scale));
        }
        if self.trace_every == 0 {
            return bad("trace_every must be >= 1");
        }
        Ok(())
    }

    pub fn learning_rate_for(&self, n: usize) -> f64 {
        self.learning_rate.unwrap_or(2.0 * n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    #[serde(skip)]
    pub embedding: Option<Embedding>,
    pub final_loss: f64,
    pub iters_run: usize,
    /// Max row norm of the unit-factor residual at the returned embedding.
    pub final_grad_norm: f64,
    pub converged: bool,
    pub seed: u64,
    pub loss_trace: Vec<(usize, f64)>,
}

impl OptimizeResult {
    pub fn embedding(&self) -> &Embedding {
        self.embedding.as_ref().expect("result carries its embedding")
    }
}

/// I.i.d. `N(0, scale²)` coordinates.
pub fn init_embedding(n: usize, s: usize, scale: f64, seed: u64) -> Result<Embedding> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidScale(scale));
    }
    if n < 3 {
        return Err(Error::TooFewPoints { n });
    }
    if s < 2 {
        return Err(Error::DimensionTooSmall { d: s, min: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let coords = (0..n * s).map(|_| normal.sample(&mut rng)).collect();
    Embedding::from_flat(coords, s)
}

pub(crate) fn max_row_norm(v: &[f64], s: usize) -> f64 {
    v.chunks_exact(s)
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

struct State {
    y: Vec<f64>,
    pass: PairPass,
    loss: f64,
}

/// Minimizes the loss starting from `init_embedding(n, s, init_scale, cfg.seed)`.
pub fn minimize(p: &CalibratedAffinities, s: usize, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let y0 = init_embedding(p.n(), s, cfg.init_scale, cfg.seed)?;
    minimize_from(p, y0, cfg)
}

/// Minimizes the loss from a given starting embedding.
pub fn minimize_from(
    p: &CalibratedAffinities,
    start: Embedding,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let n = p.n();
    let s = start.dim();
    if start.n() != n {
        return Err(Error::SizeMismatch(format!(
            "starting embedding has {} points, affinities {n}",
            start.n()
        )));
    }
    let pm = p.symmetric();
    let plogp = p.plogp();
    let psum: f64 = pm.iter().sum();
    let lr = cfg.learning_rate_for(n);
    let exag_end = if cfg.use_exaggeration {
        cfg.exaggeration_iters
    } else {
        0
    };

    let eval = |y: Vec<f64>, iter: usize| -> Result<State> {
        let pass = pair_pass(pm, &y, n, s);
        let loss = pass.loss(plogp, psum);
        if !loss.is_finite() || pass.attract.iter().chain(&pass.repulse).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { iter });
        }
        Ok(State { y, pass, loss })
    };

    let mut cur = eval(start.as_flat().to_vec(), 0)?;
    let mut velocity = vec![0.0; n * s];
    let mut grad = vec![0.0; n * s];
    let mut residual = vec![0.0; n * s];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    for it in 1..=cfg.max_iters {
        let exaggerating = it <= exag_end;
        cur.pass.residual_into(&mut residual);
        if !exaggerating && it > cfg.min_iters && max_row_norm(&residual, s) <= cfg.grad_tol {
            converged = true;
            break;
        }
        let alpha = if exaggerating { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it <= cfg.momentum_switch_iter {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };
        cur.pass.gradient_into(alpha, &mut grad);

        let mut next = None;
        // first with momentum, then along the plain negative gradient
        'directions: for mom in [momentum, 0.0] {
            let mut step: Vec<f64> = velocity
                .par_iter()
                .zip(&grad)
                .map(|(v, g)| mom * v - lr * g)
                .collect();
            for _ in 0..=cfg.max_halvings {
                let y: Vec<f64> = cur.y.iter().zip(&step).map(|(a, b)| a + b).collect();
                let trial = eval(y, it)?;
                if exaggerating || trial.loss <= cur.loss {
                    next = Some((trial, step));
                    break 'directions;
                }
                step.iter_mut().for_each(|v| *v *= 0.5);
            }
            if mom == 0.0 {
                break;
            }
        }
        iters = it;
        match next {
            Some((trial, step)) => {
                cur = trial;
                velocity = step;
            }
            None => {
                // no decrease representable at this precision
                trace.push((it, cur.loss));
                break;
            }
        }
        if it % cfg.trace_every == 0 || it == cfg.max_iters {
            trace.push((it, cur.loss));
        }
    }

    cur.pass.residual_into(&mut residual);
    let final_grad_norm = max_row_norm(&residual, s);
    if !converged && final_grad_norm <= cfg.grad_tol && iters >= exag_end.max(cfg.min_iters) {
        converged = true;
    }
    if trace.last().map(|t| t.0) != Some(iters) {
        trace.push((iters, cur.loss));
    }
    Ok(OptimizeResult {
        embedding: Some(Embedding::from_flat(cur.y, s)?),
        final_loss: cur.loss,
        iters_run: iters,
        final_grad_norm,
        converged,
        seed: cfg.seed,
        loss_trace: trace,
    })
}

/// Best of `restarts` runs seeded `seed, seed + 1, ...`.
pub fn multistart_minimize(
    p: &CalibratedAffinities,
    s: usize,
    cfg: &OptimizerConfig,
    restarts: usize,
) -> Result<(OptimizeResult, Vec<Result<f64>>)> {
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be >= 1".into()));
    }
    let runs: Vec<Result<OptimizeResult>> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| {
            let c = OptimizerConfig {
                seed: cfg.seed.wrapping_add(k),
                ..cfg.clone()
            };
            minimize(p, s, &c)
        })
        .collect();
    let losses = runs
        .iter()
        .map(|r| r.as_ref().map(|o| o.final_loss).map_err(Clone::clone))
        .collect();
    let mut best: Option<OptimizeResult> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.final_loss < b.final_loss) {
                    best = Some(o);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(b) => Ok((b, losses)),
        None => Err(first_err.expect("at least one restart ran")),
    }
}
