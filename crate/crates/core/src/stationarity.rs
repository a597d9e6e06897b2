//! Zero-force residuals of an embedding: the discrete t-SNE stationarity
//! condition and its plug-in version built from the population kernels on
//! the empirical joint measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinities::CalibratedAffinities;
use crate::error::{Error, Result};
use crate::kernel::pair_pass;
use crate::population::{DiagonalConvention, JointKernels, JointMeasure};
use crate::types::Embedding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualConvention {
    /// `Σ_{j≠i} (p_ij - q_ij)(Y_i - Y_j) / (1 + |Y_i - Y_j|²)`
    Discrete,
    /// `(1/n) Σ_j (p_{σ*}(X_i, X_j) - q(Y_i, Y_j))(Y_i - Y_j) / (1 + |Y_i - Y_j|²)`
    Plugin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub convention: ResidualConvention,
    pub max_norm: f64,
    pub mean_norm: f64,
    pub s: usize,
    /// Row-major `n x s`.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_point_residual: Vec<f64>,
}

impl StationarityReport {
    fn from_rows(convention: ResidualConvention, residual: Vec<f64>, s: usize) -> Self {
        let norms = row_norms(&residual, s);
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        let mean_norm = if norms.is_empty() {
            0.0
        } else {
            norms.iter().sum::<f64>() / norms.len() as f64
        };
        Self {
            convention,
            max_norm,
            mean_norm,
            s,
            per_point_residual: residual,
        }
    }

    pub fn n(&self) -> usize {
        self.per_point_residual.len() / self.s.max(1)
    }

    pub fn residual(&self, i: usize) -> &[f64] {
        &self.per_point_residual[i * self.s..(i + 1) * self.s]
    }

    pub fn norms(&self) -> Vec<f64> {
        row_norms(&self.per_point_residual, self.s)
    }

    /// Drops the per-point vectors, keeping the summary norms.
    pub fn summary(mut self) -> Self {
        self.per_point_residual.clear();
        self
    }
}

fn row_norms(v: &[f64], s: usize) -> Vec<f64> {
    v.chunks_exact(s.max(1))
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Equals `loss_gradient / 4`.
pub fn residual_discrete(p: &CalibratedAffinities, emb: &Embedding) -> Result<StationarityReport> {
    if p.n() != emb.n() {
        return Err(Error::SizeMismatch(format!(
            "affinities for {} points, embedding of {}",
            p.n(),
            emb.n()
        )));
    }
    let s = emb.dim();
    let pass = pair_pass(p.symmetric(), emb.as_flat(), p.n(), s);
    let mut out = vec![0.0; p.n() * s];
    pass.residual_into(&mut out);
    Ok(StationarityReport::from_rows(ResidualConvention::Discrete, out, s))
}

/// Plug-in residual with `σ*` solved against the X-marginal of `joint`.
pub fn residual_plugin(joint: &JointMeasure, rho: f64, tol: f64) -> Result<StationarityReport> {
    let kernels = JointKernels::build(joint, rho, DiagonalConvention::Include, tol)?;
    Ok(residual_from_kernels(&kernels, joint.y().dim()))
}

pub fn residual_from_kernels(kernels: &JointKernels<'_>, s: usize) -> StationarityReport {
    let n = kernels.sigma().len();
    let mut out = vec![0.0; n * s];
    out.par_chunks_mut(s).enumerate().for_each(|(k, row)| kernels.force(k, row));
    StationarityReport::from_rows(ResidualConvention::Plugin, out, s)
}
