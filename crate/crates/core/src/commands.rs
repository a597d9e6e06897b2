//! Directory-level pipelines behind the `tsne-eq` binary. Each writes
//! `manifest.json` before any result file.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinities::{calibrate_all, CalibratedAffinities};
use crate::error::{Error, Result};
use crate::experiments::{
    record_key, run_replica, sample_dataset, summarize, DistributionSpec, ExperimentRecord, SweepConfig, SweepSummary,
};
use crate::figure::{curves_svg, scatter_svg, FigureSpec, Series};
use crate::io::{read_csv, read_dataset, read_json_lines, write_csv, write_json, write_points, JsonLines, Manifest};
use crate::optimizer::{multistart_minimize, OptimizeResult};
use crate::population::{functional_i, sigma_field, DiagonalConvention, FunctionalReport, JointMeasure, PopulationContext};
use crate::quadrature::QuadraturePlan;
use crate::stationarity::{residual_discrete, residual_plugin, StationarityReport};
use crate::tail::{tail_bound_check, TailCheckConfig, TailTable};
use crate::types::{AnalyticDensity, Dataset, Embedding, MeasureSpec, PointSet, RunConfig, SupportBox};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn write_rows(out: &Path, stem: &str, format: TableFormat, header: &[&str], rows: Vec<Vec<f64>>) -> Result<PathBuf> {
    match format {
        TableFormat::Csv => {
            let p = out.join(format!("{stem}.csv"));
            write_csv(&p, Some(header), rows)?;
            Ok(p)
        }
        TableFormat::Json => {
            let p = out.join(format!("{stem}.json"));
            let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .into_iter()
                .map(|r| header.iter().map(|h| h.to_string()).zip(r.into_iter().map(serde_json::Value::from)).collect())
                .collect();
            write_json(&p, &objs)?;
            Ok(p)
        }
    }
}

pub fn read_embedding(path: &Path) -> Result<Embedding> {
    Embedding::from_rows(&read_csv(path)?.rows)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedOptions {
    pub trace: bool,
    pub figure: bool,
    pub format: TableFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResult {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub max_entropy_error: f64,
    pub optimizer: OptimizeResult,
    pub restart_losses: Vec<Option<f64>>,
    pub max_embed_norm: f64,
}

pub struct EmbedOutput {
    pub result: EmbedResult,
    pub embedding: Embedding,
    pub affinities: CalibratedAffinities,
}

/// Calibrates and embeds an in-memory dataset.
pub fn embed_dataset(ds: &Dataset, cfg: &RunConfig) -> Result<EmbedOutput> {
    cfg.validate_for(ds.n())?;
    let p = calibrate_all(ds, cfg.rho, cfg.calibration_tol)?;
    let mut ocfg = cfg.optimizer.clone();
    ocfg.seed = cfg.seed;
    let (best, losses) = multistart_minimize(&p, cfg.s, &ocfg, cfg.restarts)?;
    let embedding = best.embedding().clone();
    let target = p.target_log_perp();
    let result = EmbedResult {
        n: ds.n(),
        d: ds.dim(),
        s: cfg.s,
        rho: cfg.rho,
        sigma_min: p.sigma().iter().copied().fold(f64::INFINITY, f64::min),
        sigma_max: p.sigma().iter().copied().fold(0.0, f64::max),
        max_entropy_error: p.entropy().iter().map(|h| (h - target).abs()).fold(0.0, f64::max),
        max_embed_norm: embedding.max_norm(),
        restart_losses: losses.into_iter().map(|r| r.ok()).collect(),
        optimizer: best,
    };
    Ok(EmbedOutput {
        result,
        embedding,
        affinities: p,
    })
}

/// `embedding.csv`, `result.json`, and optionally `trace.csv` and `figure.svg`.
pub fn embed(dataset: &Path, cfg: &RunConfig, opts: &EmbedOptions, out: &Path) -> Result<EmbedResult> {
    fs::create_dir_all(out)?;
    Manifest::new("embed", threads(), cfg)?
        .with("dataset", dataset)?
        .with("options", opts)?
        .write_to(out)?;
    let ds = read_dataset(dataset)?;
    let o = embed_dataset(&ds, cfg)?;
    write_embedding(out, &o.embedding, opts.format)?;
    write_json(&out.join("result.json"), &o.result)?;
    if opts.trace {
        write_csv(
            &out.join("trace.csv"),
            Some(&["iter", "loss"]),
            o.result.optimizer.loss_trace.iter().map(|(i, l)| vec![*i as f64, *l]),
        )?;
    }
    if opts.figure {
        fs::write(out.join("figure.svg"), scatter_svg(&o.embedding, &FigureSpec::default())?)?;
    }
    Ok(o.result)
}

fn write_embedding(out: &Path, emb: &Embedding, format: TableFormat) -> Result<PathBuf> {
    if format == TableFormat::Csv {
        let p = out.join("embedding.csv");
        write_points(&p, emb.points(), "y")?;
        return Ok(p);
    }
    let names: Vec<String> = (0..emb.dim()).map(|c| format!("y{c}")).collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    write_rows(out, "embedding", format, &header, emb.points().to_rows())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinitySettings {
    pub rho: f64,
    pub tol: f64,
    pub format: TableFormat,
}

/// `sigma.csv` (per-row σ_i and entropy) and `affinities.csv` (the `n x n`
/// symmetric matrix).
pub fn affinities(dataset: &Path, set: &AffinitySettings, out: &Path) -> Result<CalibratedAffinities> {
    fs::create_dir_all(out)?;
    Manifest::new("affinities", threads(), set)?
        .with("dataset", dataset)?
        .write_to(out)?;
    let ds = read_dataset(dataset)?;
    let p = calibrate_all(&ds, set.rho, set.tol)?;
    let rows = (0..p.n()).map(|i| vec![i as f64, p.sigma()[i], p.entropy()[i]]).collect();
    write_rows(out, "sigma", set.format, &["row", "sigma", "entropy"], rows)?;
    let n = p.n();
    let names: Vec<String> = (0..n).map(|j| format!("p{j}")).collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    write_rows(out, "affinities", set.format, &header, p.symmetric().chunks(n).map(<[f64]>::to_vec).collect())?;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureInput {
    Empirical { path: PathBuf },
    Uniform { lo: f64, hi: f64, dim: usize, plan: Option<QuadraturePlan> },
}

impl MeasureInput {
    pub fn load(&self) -> Result<(MeasureSpec, Option<PointSet>)> {
        match self {
            Self::Empirical { path } => {
                let rows = read_csv(path)?.rows;
                let ds = Dataset::from_samples(PointSet::from_rows(&rows)?)?;
                let pts = ds.points().clone();
                Ok((crate::types::empirical_measure(&ds), Some(pts)))
            }
            Self::Uniform { lo, hi, dim, plan } => {
                let b = SupportBox::cube(*dim, *lo, *hi)?;
                let plan = plan.clone().unwrap_or_else(|| QuadraturePlan::default_for_dim(*dim));
                Ok((MeasureSpec::AnalyticDensity(AnalyticDensity::uniform(b, plan)?), None))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSettings {
    pub measure: MeasureInput,
    pub points: Option<PathBuf>,
    pub rho: f64,
    pub tol: f64,
    pub convention: DiagonalConvention,
    pub format: TableFormat,
}

/// `sigma_field.csv`: coordinates, `σ*`, and `|F(x, σ*)|` per point.
pub fn sigma(set: &SigmaSettings, out: &Path) -> Result<crate::population::SigmaField> {
    fs::create_dir_all(out)?;
    Manifest::new("sigma", threads(), set)?.write_to(out)?;
    let (mu, own) = set.measure.load()?;
    let points = match (&set.points, own) {
        (Some(p), _) => PointSet::from_rows(&read_csv(p)?.rows)?,
        (None, Some(own)) => own,
        (None, None) => return Err(Error::InvalidConfig("a density measure needs --points".into())),
    };
    let ctx = PopulationContext::new(&mu, set.rho)?.with_convention(set.convention);
    let field = sigma_field(&ctx, &points, set.tol)?;
    let d = points.dim();
    let mut names: Vec<String> = (0..d).map(|c| format!("x{c}")).collect();
    names.push("sigma".into());
    names.push("residual".into());
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows = points
        .rows()
        .zip(field.values.iter().zip(&field.residuals))
        .map(|(x, (s, r))| x.iter().copied().chain([*s, *r]).collect())
        .collect();
    write_rows(out, "sigma_field", set.format, &header, rows)?;
    write_json(&out.join("quadrature.json"), ctx.info())?;
    Ok(field)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSettings {
    pub dataset: PathBuf,
    pub embedding: PathBuf,
    pub rho: f64,
    pub tol: f64,
}

fn load_pair(set: &PairSettings) -> Result<(Dataset, Embedding)> {
    let rows = read_csv(&set.dataset)?.rows;
    let ds = Dataset::from_samples(PointSet::from_rows(&rows)?)?;
    let emb = read_embedding(&set.embedding)?;
    if emb.n() != ds.n() {
        return Err(Error::SizeMismatch(format!("{} inputs but {} embedded points", ds.n(), emb.n())));
    }
    Ok((ds, emb))
}

/// `functional.json` for the empirical joint measure of `(X_i, Y_i)`.
pub fn functional(set: &PairSettings, convention: DiagonalConvention, out: &Path) -> Result<FunctionalReport> {
    fs::create_dir_all(out)?;
    Manifest::new("functional", threads(), set)?
        .with("convention", convention)?
        .write_to(out)?;
    let (ds, emb) = load_pair(set)?;
    let joint = JointMeasure::empirical(&ds, &emb)?;
    let mut r = functional_i(&joint, set.rho, convention, set.tol)?;
    r.quadrature = Some(crate::population::QuadratureInfo {
        kind: "empirical".into(),
        nodes: ds.n(),
        nodes_per_axis: None,
        seed: None,
        mass_rel_stderr: None,
    });
    write_json(&out.join("functional.json"), &r)?;
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityOutput {
    pub discrete: StationarityReport,
    pub plugin: StationarityReport,
}

/// `stationarity.json` with both conventions, and `residuals.csv` with
/// per-point norms.
pub fn stationarity(set: &PairSettings, out: &Path) -> Result<StationarityOutput> {
    fs::create_dir_all(out)?;
    Manifest::new("stationarity", threads(), set)?.write_to(out)?;
    let (ds, emb) = load_pair(set)?;
    let p = calibrate_all(&ds, set.rho, set.tol)?;
    let discrete = residual_discrete(&p, &emb)?;
    let plugin = residual_plugin(&JointMeasure::empirical(&ds, &emb)?, set.rho, set.tol)?;
    let rows = discrete
        .norms()
        .into_iter()
        .zip(plugin.norms())
        .enumerate()
        .map(|(i, (a, b))| vec![i as f64, a, b])
        .collect::<Vec<_>>();
    write_csv(&out.join("residuals.csv"), Some(&["row", "discrete", "plugin"]), rows)?;
    let o = StationarityOutput {
        discrete: discrete.summary(),
        plugin: plugin.summary(),
    };
    write_json(&out.join("stationarity.json"), &o)?;
    Ok(o)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub all_failed: bool,
    pub skipped: usize,
}

/// `records.jsonl`, `summary.json`, `metrics.csv` and `curves.svg`. Cells
/// run in grid order with replicas in parallel; records land in
/// `(n, replica)` order. With `resume`, keys already in `records.jsonl`
/// are skipped.
pub fn sweep(cfg: &SweepConfig, resume: bool, timings: bool, out: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    Manifest::new("sweep", threads(), cfg)?.write_to(out)?;
    let path = out.join("records.jsonl");
    let (mut sink, done) = if resume {
        JsonLines::resume(&path)?
    } else {
        (JsonLines::create(&path)?, Default::default())
    };
    let mut timing_rows = Vec::new();
    let all = cfg.replica_configs();
    let skipped = all.iter().filter(|c| done.contains(&record_key(c.n, c.replica))).count();
    for &n in &cfg.n_grid {
        let todo: Vec<_> = all
            .iter()
            .filter(|c| c.n == n && !done.contains(&record_key(c.n, c.replica)))
            .collect();
        let recs: Vec<ExperimentRecord> = todo.par_iter().map(|c| run_replica(c)).collect();
        for r in &recs {
            sink.append(r)?;
            timing_rows.push(vec![r.n as f64, r.replica as f64, r.runtime_seconds]);
        }
    }
    drop(sink);
    if timings {
        write_csv(&out.join("timings.csv"), Some(&["n", "replica", "seconds"]), timing_rows)?;
    }
    let records: Vec<ExperimentRecord> = read_json_lines(&path)?;
    let summary = summarize(&cfg.n_grid, cfg.replicas, &records);
    write_json(&out.join("summary.json"), &summary)?;
    write_metrics(out, &summary)?;
    let all_failed = summary.cells.iter().all(|c| c.succeeded == 0);
    Ok(SweepOutcome {
        summary,
        all_failed,
        skipped,
    })
}

fn write_metrics(out: &Path, s: &SweepSummary) -> Result<()> {
    let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let rows = s.cells.iter().map(|c| {
        let m = &c.median;
        vec![
            c.n as f64,
            nan(m.d_n),
            nan(m.i_plugin),
            nan(m.dn_iplugin_gap),
            nan(m.sup_sigma_gap),
            nan(m.sup_f_gap),
            nan(m.residual_discrete_max),
            nan(m.residual_plugin_max),
            nan(m.max_embed_norm),
        ]
    });
    write_csv(
        &out.join("metrics.csv"),
        Some(&[
            "n",
            "d_n",
            "i_plugin",
            "dn_iplugin_gap",
            "sup_sigma_gap",
            "sup_f_gap",
            "residual_discrete_max",
            "residual_plugin_max",
            "max_embed_norm",
        ]),
        rows,
    )?;
    let series = |label: &str, f: &dyn Fn(&crate::experiments::CellMedians) -> Option<f64>| Series {
        label: label.into(),
        points: s.cells.iter().filter_map(|c| f(&c.median).map(|v| (c.n as f64, v))).collect(),
    };
    let all = [
        series("sup sigma gap", &|m| m.sup_sigma_gap),
        series("sup F gap", &|m| m.sup_f_gap),
        series("|d_n - I_plugin|", &|m| m.dn_iplugin_gap),
        series("plugin residual", &|m| m.residual_plugin_max),
    ];
    let spec = FigureSpec {
        x_label: "n".into(),
        y_label: "median over replicas".into(),
        ..FigureSpec::default()
    };
    match curves_svg(&all, &spec) {
        Ok(svg) => fs::write(out.join("curves.svg"), svg)?,
        Err(Error::InvalidConfig(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(())
}

/// `tail.json` or `tail.csv`.
pub fn tailcheck(cfg: &TailCheckConfig, format: TableFormat, out: &Path) -> Result<TailTable> {
    fs::create_dir_all(out)?;
    Manifest::new("tailcheck", threads(), cfg)?.write_to(out)?;
    let table = tail_bound_check(cfg)?;
    match format {
        TableFormat::Json => write_json(&out.join("tail.json"), &table)?,
        TableFormat::Csv => write_csv(
            &out.join("tail.csv"),
            Some(&["t", "threshold", "violations", "frequency", "bound", "std_err", "flagged"]),
            table.rows.iter().map(|r| {
                vec![
                    r.t,
                    r.threshold,
                    r.violations as f64,
                    r.frequency,
                    r.bound,
                    r.std_err,
                    if r.flagged { 1.0 } else { 0.0 },
                ]
            }),
        )?,
    }
    Ok(table)
}

/// Uniform noise on `[-1, 1]^d` embedded in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Config {
    pub n: usize,
    pub d: usize,
    pub full: bool,
    pub run: RunConfig,
    pub figure: FigureSpec,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self::desk()
    }
}

impl Figure1Config {
    pub fn desk() -> Self {
        Self {
            n: 2000,
            d: 50,
            full: false,
            run: RunConfig::default(),
            figure: FigureSpec {
                title: "t-SNE of uniform noise".into(),
                ..FigureSpec::default()
            },
        }
    }

    /// `n = 100000`, `d = 500`. The exact method stores several `n x n`
    /// matrices, roughly 240 GB at this size.
    pub fn full() -> Self {
        Self {
            n: 100_000,
            d: 500,
            full: true,
            ..Self::desk()
        }
    }
}

/// `figure.svg`, `embedding.csv` and `result.json`.
pub fn figure1(cfg: &Figure1Config, out: &Path) -> Result<EmbedResult> {
    if cfg.run.s != 2 {
        return Err(Error::InvalidConfig("the figure preset embeds into s = 2".into()));
    }
    fs::create_dir_all(out)?;
    Manifest::new("figure1", threads(), cfg)?
        .with("full", cfg.full)?
        .write_to(out)?;
    let ds = sample_dataset(&DistributionSpec::uniform_cube(cfg.d, -1.0, 1.0), cfg.n, cfg.run.seed)?;
    let o = embed_dataset(&ds, &cfg.run)?;
    fs::write(out.join("figure.svg"), scatter_svg(&o.embedding, &cfg.figure)?)?;
    write_embedding(out, &o.embedding, TableFormat::Csv)?;
    write_json(&out.join("result.json"), &o.result)?;
    Ok(o.result)
}
