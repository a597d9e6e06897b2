//! Monte Carlo check of the sub-Gaussian maximum bound: for `n` standard
//! Gaussian samples in `R^d`,
//! `P(max_i |X_i| >= sqrt(log n / c1) + sqrt(d) + t) <= C exp(-c1 t²)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailCheckConfig {
    pub d: usize,
    pub n: usize,
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    /// Constants of the norm tail bound; `C = 1, c1 = 1/2` holds for the
    /// standard Gaussian by Lipschitz concentration.
    pub big_c: f64,
    pub c1: f64,
    /// Optional `δ` of the uniform convergence statement, only checked
    /// against `c1 δ² > 16`.
    pub delta: Option<f64>,
    pub seed: u64,
}

impl Default for TailCheckConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n: 100,
            t_grid: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            replicas: 2000,
            big_c: 1.0,
            c1: 0.5,
            delta: None,
            seed: 0,
        }
    }
}

impl TailCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.replicas == 0 {
            return Err(Error::InvalidConfig("d, n and replicas must be >= 1".into()));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidConfig("t_grid must be nonempty and nonnegative".into()));
        }
        if !(self.big_c > 0.0 && self.c1 > 0.0) {
            return Err(Error::InvalidConfig("C and c1 must be positive".into()));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let Some(delta) = self.delta {
            if self.c1 * delta * delta <= 16.0 {
                w.push(format!(
                    "c1 * delta^2 = {:.6} is not > 16; the uniform convergence statement does not cover this delta",
                    self.c1 * delta * delta
                ));
            }
        }
        w
    }

    pub fn threshold(&self, t: f64) -> f64 {
        ((self.n as f64).ln() / self.c1).sqrt() + (self.d as f64).sqrt() + t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub threshold: f64,
    pub violations: usize,
    pub frequency: f64,
    pub bound: f64,
    /// Binomial standard error at the bound, `sqrt(b(1 - b)/R)` with `b`
    /// clipped to 1.
    pub std_err: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub config: TailCheckConfig,
    pub rows: Vec<TailRow>,
    pub warnings: Vec<String>,
}

impl TailTable {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }
}

/// Largest sample norm of each replica.
pub fn max_norms(cfg: &TailCheckConfig) -> Vec<f64> {
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, cfg.n, r, 2));
            (0..cfg.n)
                .map(|_| {
                    (0..cfg.d)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * z
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn tail_bound_check(cfg: &TailCheckConfig) -> Result<TailTable> {
    cfg.validate()?;
    let maxima = max_norms(cfg);
    let r = cfg.replicas as f64;
    let rows = cfg
        .t_grid
        .iter()
        .map(|&t| {
            let threshold = cfg.threshold(t);
            let violations = maxima.iter().filter(|m| **m >= threshold).count();
            let frequency = violations as f64 / r;
            let bound = cfg.big_c * (-cfg.c1 * t * t).exp();
            let b = bound.min(1.0);
            let std_err = (b * (1.0 - b) / r).sqrt();
            TailRow {
                t,
                threshold,
                violations,
                frequency,
                bound,
                std_err,
                flagged: frequency > bound + 3.0 * std_err,
            }
        })
        .collect();
    Ok(TailTable {
        config: cfg.clone(),
        rows,
        warnings: cfg.warnings(),
    })
}
