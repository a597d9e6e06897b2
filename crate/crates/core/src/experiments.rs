//! Finite-`n` experiments: sample inputs, run t-SNE, compare the empirical
//! bandwidth equation and loss to their population counterparts, and
//! summarize trends across a grid of sample sizes.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::affinities::calibrate_from_distances;
use crate::distance::SqDistMatrix;
use crate::error::{Error, Result};
use crate::optimizer::multistart_minimize;
use crate::population::{
    functional_report, DiagonalConvention, JointKernels, JointMeasure, PopulationContext, Probe, QuadratureInfo,
};
use crate::quadrature::QuadraturePlan;
use crate::stationarity::{residual_discrete, residual_from_kernels};
use crate::types::{AnalyticDensity, Dataset, MeasureSpec, PointSet, RunConfig, SupportBox};

pub type Sampler = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;

/// A user-supplied input law. Population comparisons run only when a
/// density with compact support is attached.
#[derive(Clone)]
pub struct CustomDistribution {
    pub label: String,
    pub d: usize,
    pub sampler: Sampler,
    pub density: Option<AnalyticDensity>,
}

impl fmt::Debug for CustomDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDistribution")
            .field("label", &self.label)
            .field("d", &self.d)
            .field("density", &self.density.is_some())
            .finish()
    }
}

impl Serialize for CustomDistribution {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("CustomDistribution", 2)?;
        st.serialize_field("label", &self.label)?;
        st.serialize_field("d", &self.d)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for CustomDistribution {
    fn deserialize<D: Deserializer<'de>>(_: D) -> std::result::Result<Self, D::Error> {
        Err(serde::de::Error::custom(
            "custom distributions carry code and cannot be loaded from a file",
        ))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        /// Quadrature for the population side; `None` picks by dimension.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quadrature: Option<QuadraturePlan>,
    },
    GaussianIso {
        d: usize,
        #[serde(default)]
        mean: f64,
        sd: f64,
    },
    Custom(CustomDistribution),
}

impl DistributionSpec {
    pub fn uniform_cube(d: usize, lo: f64, hi: f64) -> Self {
        Self::UniformBox {
            lo: vec![lo; d],
            hi: vec![hi; d],
            quadrature: None,
        }
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::GaussianIso { d, mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::UniformBox { lo, hi, .. } => SupportBox::new(lo.clone(), hi.clone()).map(|_| ()),
            Self::GaussianIso { d, mean, sd } => {
                if *d == 0 {
                    return Err(Error::InvalidConfig("d must be >= 1".into()));
                }
                if !(*sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                    return Err(Error::InvalidConfig(format!("sd must be positive, got {sd}")));
                }
                Ok(())
            }
            Self::Custom(c) => {
                if let Some(a) = &c.density {
                    if a.dim() != c.d {
                        return Err(Error::SizeMismatch("custom density dimension".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lo, .. } => lo.len(),
            Self::GaussianIso { d, .. } => *d,
            Self::Custom(c) => c.d,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::UniformBox { .. } => "uniform_box".into(),
            Self::GaussianIso { .. } => "gaussian_iso".into(),
            Self::Custom(c) => c.label.clone(),
        }
    }

    /// The law as a density with compact support, when it has one.
    pub fn population_density(&self) -> Result<Option<AnalyticDensity>> {
        match self {
            Self::UniformBox { lo, hi, quadrature } => {
                let b = SupportBox::new(lo.clone(), hi.clone())?;
                let plan = quadrature.clone().unwrap_or_else(|| QuadraturePlan::default_for_dim(b.dim()));
                Ok(Some(AnalyticDensity::uniform(b, plan)?))
            }
            Self::GaussianIso { .. } => Ok(None),
            Self::Custom(c) => Ok(c.density.clone()),
        }
    }

    fn support(&self) -> Option<SupportBox> {
        match self {
            Self::UniformBox { lo, hi, .. } => SupportBox::new(lo.clone(), hi.clone()).ok(),
            Self::GaussianIso { .. } => None,
            Self::Custom(c) => c.density.as_ref().map(|a| a.support().clone()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Self::UniformBox { lo, hi, .. } => {
                for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
            Self::GaussianIso { mean, sd, .. } => {
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = mean + sd * z;
                }
            }
            Self::Custom(c) => (c.sampler)(rng, out),
        }
    }
}

/// `n` i.i.d. draws, a pure function of `seed`.
pub fn sample_dataset(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = vec![0.0; n * d];
    for row in coords.chunks_exact_mut(d) {
        spec.draw(&mut rng, row);
    }
    Dataset::from_samples(PointSet::from_flat(coords, d)?)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one replica of one cell; `stream` separates the
/// data draw from the optimizer initialization.
pub fn derive_seed(base: u64, n: usize, replica: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base ^ splitmix64(n as u64)) ^ replica as u64) ^ stream)
}

/// Where `sup_F_gap` is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Probe locations: a midpoint grid along the box diagonal in `d = 1`,
    /// seeded uniform draws from the box otherwise.
    pub points: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Log-spaced bandwidths between the two ends.
    pub sigma_count: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            points: 20,
            sigma_min: 0.1,
            sigma_max: 2.0,
            sigma_count: 16,
            seed: 0x9e0b,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.sigma_count < 2 {
            return Err(Error::InvalidConfig("probe grid needs >= 1 point and >= 2 bandwidths".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::InvalidConfig("probe bandwidths must satisfy 0 < min < max".into()));
        }
        Ok(())
    }

    pub fn sigma_grid(&self) -> Vec<f64> {
        let (a, b) = (self.sigma_min.ln(), self.sigma_max.ln());
        let m = (self.sigma_count - 1) as f64;
        (0..self.sigma_count)
            .map(|k| (a + (b - a) * k as f64 / m).exp())
            .collect()
    }

    pub fn probe_points(&self, support: &SupportBox) -> PointSet {
        let d = support.dim();
        let m = self.points;
        let mut coords = Vec::with_capacity(m * d);
        if d == 1 {
            let (lo, hi) = (support.lo[0], support.hi[0]);
            coords.extend((0..m).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / m as f64));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for _ in 0..m {
                for (a, b) in support.lo.iter().zip(&support.hi) {
                    coords.push(a + (b - a) * rng.random::<f64>());
                }
            }
        }
        PointSet::from_flat(coords, d).expect("probe grid is well formed")
    }
}

/// How samples at different `n` relate within one replica.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingDesign {
    /// Every cell of a replica reads a prefix of one i.i.d. sequence, so the
    /// grid follows a single realization `X_1, X_2, ...`.
    #[default]
    Nested,
    /// A fresh sample per cell.
    Independent,
}

/// Everything needed to rerun one replica.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaConfig {
    pub distribution: DistributionSpec,
    pub n: usize,
    pub replica: usize,
    pub run: RunConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub design: SamplingDesign,
}

impl ReplicaConfig {
    pub fn data_seed(&self) -> u64 {
        match self.design {
            SamplingDesign::Nested => derive_seed(self.run.seed, 0, self.replica, 0),
            SamplingDesign::Independent => derive_seed(self.run.seed, self.n, self.replica, 0),
        }
    }

    pub fn optimizer_seed(&self) -> u64 {
        derive_seed(self.run.seed, self.n, self.replica, 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub key: String,
    pub n: usize,
    pub replica: usize,
    pub family: String,
    pub d: usize,
    pub s: usize,
    pub rho: f64,
    pub data_seed: u64,
    pub optimizer_seed: u64,
    pub exaggeration: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ReplicaOutcome>,
    /// Wall clock, kept out of the serialized record so reruns compare byte
    /// for byte.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaOutcome {
    pub d_n: f64,
    pub i_plugin: f64,
    pub dn_iplugin_gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_sigma_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_f_gap: Option<f64>,
    pub residual_discrete_max: f64,
    pub residual_plugin_max: f64,
    pub max_embed_norm: f64,
    pub converged: bool,
    pub iters_run: usize,
    pub restart_losses: Vec<Option<f64>>,
    pub p_mass: f64,
    pub q_mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureInfo>,
}

pub fn record_key(n: usize, replica: usize) -> String {
    format!("n={n}/r={replica}")
}

/// Sample, calibrate, embed, and compare against the population.
pub fn run_replica(cfg: &ReplicaConfig) -> ExperimentRecord {
    let start = Instant::now();
    let result = replica_outcome(cfg);
    let (outcome, error) = match result {
        Ok(o) => (Some(o), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ExperimentRecord {
        key: record_key(cfg.n, cfg.replica),
        n: cfg.n,
        replica: cfg.replica,
        family: cfg.distribution.label(),
        d: cfg.distribution.dim(),
        s: cfg.run.s,
        rho: cfg.run.rho,
        data_seed: cfg.data_seed(),
        optimizer_seed: cfg.optimizer_seed(),
        exaggeration: cfg.run.optimizer.use_exaggeration,
        error,
        outcome,
        runtime_seconds: start.elapsed().as_secs_f64(),
    }
}

fn replica_outcome(cfg: &ReplicaConfig) -> Result<ReplicaOutcome> {
    cfg.run.validate_for(cfg.n)?;
    cfg.probe.validate()?;
    let run = &cfg.run;
    let ds = sample_dataset(&cfg.distribution, cfg.n, cfg.data_seed())?;
    let dist = SqDistMatrix::new(ds.points());
    let p = calibrate_from_distances(&dist, run.rho, run.calibration_tol)?;

    let mut ocfg = run.optimizer.clone();
    ocfg.seed = cfg.optimizer_seed();
    let (best, losses) = multistart_minimize(&p, run.s, &ocfg, run.restarts)?;
    let emb = best.embedding();

    let joint = JointMeasure::empirical(&ds, emb)?;
    let sigma_n = empirical_sigma_star(&dist, run.rho, run.sigma_tol, ds.points())?;
    let kernels = JointKernels::with_sigma(&joint, DiagonalConvention::Include, sigma_n)?;
    let report = functional_report(&kernels, run.rho);
    let plugin = residual_from_kernels(&kernels, run.s);
    let discrete = residual_discrete(&p, emb)?;

    let population = cfg.distribution.population_density()?;
    let (sup_sigma_gap, sup_f_gap, quadrature) = match (&population, cfg.distribution.support()) {
        (Some(a), Some(support)) => {
            let pop = PopulationContext::new(&MeasureSpec::AnalyticDensity(a.clone()), run.rho)?;
            let emp = PopulationContext::new(&MeasureSpec::Empirical(crate::types::EmpiricalMeasure::new(ds.points().clone())?), run.rho)?;
            let sigma_gap = sup_sigma_gap(&pop, ds.points(), kernels.sigma(), run.sigma_tol)?;
            let f_gap = sup_f_gap(&emp, &pop, &cfg.probe.probe_points(&support), &cfg.probe.sigma_grid())?;
            (Some(sigma_gap), Some(f_gap), Some(pop.info().clone()))
        }
        _ => (None, None, None),
    };

    Ok(ReplicaOutcome {
        d_n: best.final_loss,
        i_plugin: report.value,
        dn_iplugin_gap: (best.final_loss - report.value).abs(),
        sup_sigma_gap,
        sup_f_gap,
        residual_discrete_max: discrete.max_norm,
        residual_plugin_max: plugin.max_norm,
        max_embed_norm: emb.max_norm(),
        converged: best.converged,
        iters_run: best.iters_run,
        restart_losses: losses.into_iter().map(|r| r.ok()).collect(),
        p_mass: report.p_mass,
        q_mass: report.q_mass,
        quadrature,
    })
}

/// `σ*_{ρ,μ_n}(X_i)` for every sample, reusing the distance matrix.
pub fn empirical_sigma_star(dist: &SqDistMatrix, rho: f64, tol: f64, points: &PointSet) -> Result<Vec<f64>> {
    let n = dist.n();
    let w = vec![1.0 / n as f64; n];
    (0..n)
        .into_par_iter()
        .map(|i| Probe::new(dist.row(i).to_vec(), &w, None).solve(rho, tol, points.row(i)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// `max_i |σ_n(X_i) - σ*_{ρ,μ}(X_i)|`.
pub fn sup_sigma_gap(pop: &PopulationContext, points: &PointSet, sigma_n: &[f64], tol: f64) -> Result<f64> {
    let gaps: Vec<Result<f64>> = (0..points.len())
        .into_par_iter()
        .map(|i| Ok((crate::population::solve_sigma_star(pop, points.row(i), tol)? - sigma_n[i]).abs()))
        .collect();
    gaps.into_iter().try_fold(0.0, |m, g| Ok(f64::max(m, g?)))
}

/// `max |F_{μ_n}(x, σ) - F_μ(x, σ)|` over probe points and bandwidths.
pub fn sup_f_gap(emp: &PopulationContext, pop: &PopulationContext, probes: &PointSet, sigmas: &[f64]) -> Result<f64> {
    let gaps: Vec<Result<f64>> = (0..probes.len())
        .into_par_iter()
        .map(|k| {
            let x = probes.row(k);
            sigmas.iter().try_fold(0.0, |m: f64, &s| {
                let a = crate::population::f_value(emp, x, s)?;
                let b = crate::population::f_value(pop, x, s)?;
                Ok(m.max((a - b).abs()))
            })
        })
        .collect();
    gaps.into_iter().try_fold(0.0, |m, g| Ok(f64::max(m, g?)))
}

/// Replicas `0..replicas` of one cell.
pub fn run_cell(
    distribution: &DistributionSpec,
    n: usize,
    run: &RunConfig,
    probe: &ProbeConfig,
    design: SamplingDesign,
    replicas: usize,
) -> Vec<ExperimentRecord> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            run_replica(&ReplicaConfig {
                distribution: distribution.clone(),
                n,
                replica: r,
                run: run.clone(),
                probe: probe.clone(),
                design,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "crate::types::default_schema")]
    pub schema_version: u32,
    pub distribution: DistributionSpec,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub design: SamplingDesign,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.len() < 3 {
            return Err(Error::GridTooShort { len: self.n_grid.len() });
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("n_grid must be strictly increasing".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidConfig("replicas must be >= 1".into()));
        }
        self.distribution.validate()?;
        self.probe.validate()?;
        self.run.validate()?;
        self.run.validate_for(self.n_grid[0])
    }

    pub fn replica_configs(&self) -> Vec<ReplicaConfig> {
        self.n_grid
            .iter()
            .flat_map(|&n| {
                (0..self.replicas).map(move |r| ReplicaConfig {
                    distribution: self.distribution.clone(),
                    n,
                    replica: r,
                    run: self.run.clone(),
                    probe: self.probe.clone(),
                    design: self.design,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    NotDecreasing,
    Absent,
}

impl Trend {
    /// Strict decrease along the grid; `Absent` if any entry is missing.
    pub fn of(values: &[Option<f64>]) -> Self {
        let Some(v) = values.iter().copied().collect::<Option<Vec<f64>>>() else {
            return Self::Absent;
        };
        if v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0]) {
            Self::Decreasing
        } else {
            Self::NotDecreasing
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMedians {
    pub d_n: Option<f64>,
    pub i_plugin: Option<f64>,
    pub dn_iplugin_gap: Option<f64>,
    pub sup_sigma_gap: Option<f64>,
    pub sup_f_gap: Option<f64>,
    pub residual_discrete_max: Option<f64>,
    pub residual_plugin_max: Option<f64>,
    pub max_embed_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub converged: usize,
    pub median: CellMedians,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub sigma_gap: Trend,
    pub f_gap: Trend,
    pub dn_iplugin_gap: Trend,
    pub plugin_residual: Trend,
    /// Median over replicas of `|d_{n_{k+1}} - d_{n_k}|` strictly shrinking.
    pub dn_increments: Trend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slopes {
    pub sup_sigma_gap: Option<f64>,
    pub sup_f_gap: Option<f64>,
    pub dn_iplugin_gap: Option<f64>,
    pub residual_plugin_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub cells: Vec<CellSummary>,
    /// Least-squares slope of `log median` against `log n`.
    pub slopes: Slopes,
    pub trend: TrendSummary,
    /// Per grid step, the median over replicas of `|d_{n_{k+1}} - d_{n_k}|`
    /// taken within each replica.
    pub dn_increments: Vec<Option<f64>>,
    /// Median max embedding norm at the largest `n` over that at the smallest.
    pub max_embed_norm_ratio: Option<f64>,
    pub failed_cells: Vec<usize>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

pub fn log_log_slope(ns: &[usize], values: &[Option<f64>]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(values)
        .map(|(n, v)| v.filter(|v| *v > 0.0).map(|v| ((*n as f64).ln(), v.ln())))
        .collect::<Option<_>>()?;
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn cell_summary(n: usize, records: &[&ExperimentRecord]) -> CellSummary {
    let ok: Vec<&ReplicaOutcome> = records.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let med = |f: &dyn Fn(&ReplicaOutcome) -> Option<f64>| {
        let mut v: Vec<f64> = ok.iter().filter_map(|o| f(o)).collect();
        median(&mut v)
    };
    CellSummary {
        n,
        succeeded: ok.len(),
        failed: records.len() - ok.len(),
        converged: ok.iter().filter(|o| o.converged).count(),
        median: CellMedians {
            d_n: med(&|o| Some(o.d_n)),
            i_plugin: med(&|o| Some(o.i_plugin)),
            dn_iplugin_gap: med(&|o| Some(o.dn_iplugin_gap)),
            sup_sigma_gap: med(&|o| o.sup_sigma_gap),
            sup_f_gap: med(&|o| o.sup_f_gap),
            residual_discrete_max: med(&|o| Some(o.residual_discrete_max)),
            residual_plugin_max: med(&|o| Some(o.residual_plugin_max)),
            max_embed_norm: med(&|o| Some(o.max_embed_norm)),
        },
    }
}

/// Medians per cell, slopes and trend verdicts. Records may arrive in any
/// order.
pub fn summarize(n_grid: &[usize], replicas: usize, records: &[ExperimentRecord]) -> SweepSummary {
    let mut sorted: Vec<&ExperimentRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.n, r.replica));
    let cells: Vec<CellSummary> = n_grid
        .iter()
        .map(|&n| {
            let rs: Vec<&ExperimentRecord> = sorted.iter().copied().filter(|r| r.n == n).collect();
            cell_summary(n, &rs)
        })
        .collect();
    let col = |f: &dyn Fn(&CellMedians) -> Option<f64>| cells.iter().map(|c| f(&c.median)).collect::<Vec<_>>();
    let sigma = col(&|m| m.sup_sigma_gap);
    let fgap = col(&|m| m.sup_f_gap);
    let dgap = col(&|m| m.dn_iplugin_gap);
    let plug = col(&|m| m.residual_plugin_max);
    let d_of = |n: usize, r: usize| {
        sorted
            .iter()
            .find(|x| x.n == n && x.replica == r)
            .and_then(|x| x.outcome.as_ref())
            .map(|o| o.d_n)
    };
    let increments: Vec<Option<f64>> = n_grid
        .windows(2)
        .map(|w| {
            let mut v: Vec<f64> = (0..replicas)
                .filter_map(|r| Some((d_of(w[1], r)? - d_of(w[0], r)?).abs()))
                .collect();
            median(&mut v)
        })
        .collect();
    let ratio = match (cells.first(), cells.last()) {
        (Some(a), Some(b)) => match (a.median.max_embed_norm, b.median.max_embed_norm) {
            (Some(x), Some(y)) if x > 0.0 => Some(y / x),
            _ => None,
        },
        _ => None,
    };
    SweepSummary {
        n_grid: n_grid.to_vec(),
        replicas,
        slopes: Slopes {
            sup_sigma_gap: log_log_slope(n_grid, &sigma),
            sup_f_gap: log_log_slope(n_grid, &fgap),
            dn_iplugin_gap: log_log_slope(n_grid, &dgap),
            residual_plugin_max: log_log_slope(n_grid, &plug),
        },
        trend: TrendSummary {
            sigma_gap: Trend::of(&sigma),
            f_gap: Trend::of(&fgap),
            dn_iplugin_gap: Trend::of(&dgap),
            plugin_residual: Trend::of(&plug),
            dn_increments: Trend::of(&increments),
        },
        dn_increments: increments,
        max_embed_norm_ratio: ratio,
        failed_cells: cells.iter().filter(|c| c.succeeded == 0).map(|c| c.n).collect(),
        cells,
    }
}

/// Runs every cell and replica; failures are recorded, not raised.
pub fn convergence_sweep(cfg: &SweepConfig) -> Result<(Vec<ExperimentRecord>, SweepSummary)> {
    cfg.validate()?;
    let records: Vec<ExperimentRecord> = cfg.replica_configs().par_iter().map(run_replica).collect();
    let summary = summarize(&cfg.n_grid, cfg.replicas, &records);
    Ok((records, summary))
}
