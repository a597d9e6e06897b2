//! Datasets, embeddings, probability measures and run configuration.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::OptimizerConfig;
use crate::quadrature::{QuadraturePlan, WeightedNodes};

/// Row-major block of `n` points in a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    coords: Vec<f64>,
    dim: usize,
}

impl PointSet {
    /// Wraps flat row-major coordinates. Only checks shape.
    pub fn from_flat(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionTooSmall { d: 0, min: 1 });
        }
        if coords.len() % dim != 0 {
            return Err(Error::SizeMismatch(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        Ok(Self { coords, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::RaggedInput {
                    row: i,
                    expected: dim,
                    found: r.len(),
                });
            }
            coords.extend_from_slice(r);
        }
        Self::from_flat(coords, dim)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.coords
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.dim, k % self.dim))
    }

    /// Rows reordered so that row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            coords.extend_from_slice(self.row(p));
        }
        Self {
            coords,
            dim: self.dim,
        }
    }

    pub fn mapped(&self, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut coords = vec![0.0; self.coords.len()];
        for (src, dst) in self.rows().zip(coords.chunks_exact_mut(self.dim)) {
            f(src, dst);
        }
        Self {
            coords,
            dim: self.dim,
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Input vectors `X_1..X_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset(PointSet);

impl Dataset {
    /// Builds a dataset of at least 3 finite points in dimension `>= min_dim`.
    pub fn with_min_dim(points: PointSet, min_dim: usize) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::TooFewPoints { n: points.len() });
        }
        if points.dim() < min_dim {
            return Err(Error::DimensionTooSmall {
                d: points.dim(),
                min: min_dim,
            });
        }
        if let Some((row, col)) = points.first_non_finite() {
            return Err(Error::NonFiniteInput { row, col });
        }
        Ok(Self(points))
    }

    /// Simulated samples may live on the line; everything downstream only needs
    /// pairwise distances.
    pub fn from_samples(points: PointSet) -> Result<Self> {
        Self::with_min_dim(points, 1)
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn points(&self) -> &PointSet {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.mapped(|s, d| {
            for (o, v) in d.iter_mut().zip(s) {
                *o = c * v;
            }
        }))
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(self.0.permuted(perm))
    }
}

/// Validates a raw matrix as an input dataset (`n >= 3`, `d >= 2`, finite).
pub fn validate_dataset(raw: &[Vec<f64>]) -> Result<Dataset> {
    let points = PointSet::from_rows(raw)?;
    if points.len() < 3 {
        return Err(Error::TooFewPoints { n: points.len() });
    }
    Dataset::with_min_dim(points, 2)
}

/// Output vectors `Y_1..Y_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(PointSet);

impl Embedding {
    pub fn new(points: PointSet) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::SizeMismatch(format!(
                "an embedding needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some((row, col)) = points.first_non_finite() {
            return Err(Error::NonFiniteInput { row, col });
        }
        Ok(Self(points))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(PointSet::from_rows(rows)?)
    }

    pub fn from_flat(coords: Vec<f64>, s: usize) -> Result<Self> {
        Self::new(PointSet::from_flat(coords, s)?)
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn points(&self) -> &PointSet {
        &self.0
    }

    pub fn as_flat(&self) -> &[f64] {
        self.0.as_flat()
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        Self(self.0.mapped(|s, d| {
            for ((o, v), t) in d.iter_mut().zip(s).zip(shift) {
                *o = v + t;
            }
        }))
    }

    /// Applies `y -> M y` with `M` given row-major as `s x s`.
    pub fn transformed(&self, m: &[f64]) -> Self {
        let s = self.dim();
        Self(self.0.mapped(|src, dst| {
            for (r, o) in dst.iter_mut().enumerate() {
                *o = (0..s).map(|c| m[r * s + c] * src[c]).sum();
            }
        }))
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(self.0.permuted(perm))
    }

    pub fn centered(&self) -> Self {
        let s = self.dim();
        let n = self.n() as f64;
        let mut mean = vec![0.0; s];
        for r in self.0.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = -*m / n);
        self.translated(&mean)
    }

    pub fn max_norm(&self) -> f64 {
        self.0.max_norm()
    }
}

/// Closed box `[lo_k, hi_k]` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SupportBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidConfig(
                "support box needs matching non-empty bounds".into(),
            ));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidConfig(format!(
                    "support box axis [{a}, {b}] is not a bounded interval"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A C¹ density with compact support and a caller-supplied gradient.
#[derive(Clone)]
pub struct AnalyticDensity {
    label: String,
    density: DensityFn,
    gradient: GradientFn,
    support: SupportBox,
    plan: QuadraturePlan,
}

/// Mass must be 1 to this accuracy on deterministic grids.
pub const DENSITY_MASS_TOL: f64 = 1e-6;

impl AnalyticDensity {
    pub fn new(
        label: impl Into<String>,
        density: DensityFn,
        gradient: GradientFn,
        support: SupportBox,
        plan: QuadraturePlan,
    ) -> Result<Self> {
        let out = Self {
            label: label.into(),
            density,
            gradient,
            support,
            plan,
        };
        let nodes = out.plan.raw_nodes(&out.support)?;
        let mut mass = 0.0;
        let mut sq = 0.0;
        for (x, w) in nodes.points.rows().zip(&nodes.weights) {
            let v = w * (out.density)(x);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "density is negative or non-finite at {x:?}"
                )));
            }
            mass += v;
            sq += v * v;
        }
        // Monte Carlo masses are only known up to sampling error.
        let tol = match out.plan {
            QuadraturePlan::MonteCarlo { samples, .. } => {
                let m = samples as f64;
                let var = (sq * m - mass * mass).max(0.0) / (m - 1.0).max(1.0);
                DENSITY_MASS_TOL.max(4.0 * var.sqrt())
            }
            QuadraturePlan::GaussLegendre { .. } => DENSITY_MASS_TOL,
        };
        if (mass - 1.0).abs() > tol {
            return Err(Error::DensityNotNormalized { mass });
        }
        Ok(out)
    }

    /// Uniform density on a box; the gradient vanishes in the interior.
    pub fn uniform(support: SupportBox, plan: QuadraturePlan) -> Result<Self> {
        let vol = support.volume();
        let b = support.clone();
        let label = format!("uniform{:?}x{:?}", support.lo, support.hi);
        Self::new(
            label,
            Arc::new(move |x| if b.contains(x) { 1.0 / vol } else { 0.0 }),
            Arc::new(|_, g| g.iter_mut().for_each(|v| *v = 0.0)),
            support,
            plan,
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        (self.density)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        (self.gradient)(x, &mut g);
        g
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    pub fn plan(&self) -> &QuadraturePlan {
        &self.plan
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Largest `f` and `|grad f|` over the quadrature nodes. Both must be
    /// finite for the small-bandwidth blow-up of `F` to hold.
    pub fn sup_bounds(&self) -> Result<(f64, f64)> {
        let nodes = self.plan.raw_nodes(&self.support)?;
        let mut fmax: f64 = 0.0;
        let mut gmax: f64 = 0.0;
        for x in nodes.points.rows() {
            fmax = fmax.max(self.density(x));
            let g = self.gradient(x);
            gmax = gmax.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        Ok((fmax, gmax))
    }

    pub(crate) fn weighted_nodes(&self) -> Result<WeightedNodes> {
        let raw = self.plan.raw_nodes(&self.support)?;
        let dim = self.dim();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (x, w) in raw.points.rows().zip(&raw.weights) {
            let v = w * self.density(x);
            if v > 0.0 {
                coords.extend_from_slice(x);
                weights.push(v);
            }
        }
        WeightedNodes::normalized(PointSet::from_flat(coords, dim)?, weights)
    }
}

impl fmt::Debug for AnalyticDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticDensity")
            .field("label", &self.label)
            .field("support", &self.support)
            .field("plan", &self.plan)
            .finish()
    }
}

/// Uniform-weight point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: PointSet,
}

impl EmpiricalMeasure {
    pub fn new(points: PointSet) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::SizeMismatch("empty empirical measure".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![self.weight(); self.len()]
    }

    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.rows().map(g).sum::<f64>() / self.len() as f64
    }
}

#[derive(Clone, Debug)]
pub enum MeasureSpec {
    Empirical(EmpiricalMeasure),
    AnalyticDensity(AnalyticDensity),
}

impl MeasureSpec {
    pub fn dim(&self) -> usize {
        match self {
            MeasureSpec::Empirical(m) => m.points().dim(),
            MeasureSpec::AnalyticDensity(a) => a.dim(),
        }
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self, MeasureSpec::Empirical(_))
    }

    /// Node set realizing integrals against this measure.
    pub fn nodes(&self) -> Result<WeightedNodes> {
        match self {
            MeasureSpec::Empirical(m) => {
                WeightedNodes::new(m.points().clone(), m.weights())
            }
            MeasureSpec::AnalyticDensity(a) => a.weighted_nodes(),
        }
    }

    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let nodes = self.nodes()?;
        Ok(nodes
            .points
            .rows()
            .zip(&nodes.weights)
            .map(|(x, w)| w * g(x))
            .sum())
    }
}

/// Uniform empirical measure of a dataset.
pub fn empirical_measure(ds: &Dataset) -> MeasureSpec {
    MeasureSpec::Empirical(EmpiricalMeasure {
        points: ds.points().clone(),
    })
}

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub(crate) fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_rho() -> f64 {
    0.3
}
fn default_s() -> usize {
    2
}
fn default_calibration_tol() -> f64 {
    1e-10
}
fn default_sigma_tol() -> f64 {
    1e-10
}
fn default_restarts() -> usize {
    1
}

/// Resolved settings for one embedding run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_calibration_tol")]
    pub calibration_tol: f64,
    #[serde(default = "default_sigma_tol")]
    pub sigma_tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            rho: default_rho(),
            s: default_s(),
            optimizer: OptimizerConfig::default(),
            calibration_tol: default_calibration_tol(),
            sigma_tol: default_sigma_tol(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.s < 2 {
            return Err(Error::DimensionTooSmall { d: self.s, min: 2 });
        }
        if !(self.calibration_tol > 0.0 && self.sigma_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    /// Feasibility of `Perp = rho * n`: the target must lie strictly inside `(1, n - 1)`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        check_perplexity(self.rho, n)
    }
}

pub(crate) fn check_perplexity(rho: f64, n: usize) -> Result<()> {
    let perp = rho * n as f64;
    let hi = (n as f64 - 1.0).ln();
    if !(perp > 1.0 && perp < n as f64 - 1.0) {
        return Err(Error::PerplexityInfeasible {
            row: None,
            target: perp.ln(),
            lo: 0.0,
            hi,
        });
    }
    Ok(())
}
