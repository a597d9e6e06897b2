use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tsne_eq::commands::{
    self, AffinitySettings, EmbedOptions, Figure1Config, MeasureInput, PairSettings, SigmaSettings, TableFormat,
};
use tsne_eq::experiments::{DistributionSpec, ProbeConfig, SamplingDesign, SweepConfig};
use tsne_eq::io::read_json;
use tsne_eq::population::DiagonalConvention;
use tsne_eq::quadrature::QuadraturePlan;
use tsne_eq::tail::TailCheckConfig;
use tsne_eq::types::RunConfig;
use tsne_eq::Error;

#[derive(Parser)]
#[command(name = "tsne-eq", version, about = "t-SNE with perplexity proportional to n, and its large-n limit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON configuration for the subcommand
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 lets the pool decide
    #[arg(long, global = true, env = "TSNE_EQ_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Include,
    ExcludeSelf,
}

impl From<Convention> for DiagonalConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Include => DiagonalConvention::Include,
            Convention::ExcludeSelf => DiagonalConvention::ExcludeSelf,
        }
    }
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    rho: Option<f64>,
    /// Embedding dimension
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    exaggeration: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Embed a CSV dataset
    Embed {
        dataset: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// Also write trace.csv with the loss per iteration
        #[arg(long)]
        trace: bool,
        /// Also write figure.svg (s = 2 only)
        #[arg(long)]
        figure: bool,
    },
    /// Calibrated bandwidths and the symmetric affinity matrix
    Affinities {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Population bandwidth field sigma*(x)
    Sigma {
        /// Empirical measure from a CSV sample
        #[arg(long, conflicts_with = "uniform")]
        data: Option<PathBuf>,
        /// Uniform density on [LO, HI]^dim, as LO,HI
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "LO,HI")]
        uniform: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Gauss-Legendre nodes per axis for --uniform
        #[arg(long)]
        nodes: Option<usize>,
        /// Evaluation points (defaults to the sample itself)
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = Convention::Include)]
        convention: Convention,
    },
    /// Plug-in KL functional of the empirical joint measure
    Functional {
        dataset: PathBuf,
        embedding: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = Convention::Include)]
        convention: Convention,
    },
    /// Zero-force residuals of an embedding
    Stationarity {
        dataset: PathBuf,
        embedding: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Convergence sweep over a grid of sample sizes
    Sweep {
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Uniform input on [-1, 1]^dim when no config is given
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        resume: bool,
        /// Also write timings.csv (wall clock, not reproducible)
        #[arg(long)]
        timings: bool,
    },
    /// Monte Carlo check of the Gaussian maximum-norm tail bound
    Tailcheck {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long = "big-c")]
        big_c: Option<f64>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Scatter plot of t-SNE on uniform noise in [-1, 1]^d
    Figure1 {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        /// n = 100000, d = 500; needs --yes
        #[arg(long)]
        full: bool,
        #[arg(long)]
        yes: bool,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::PerplexityInfeasible { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::BracketFailure { .. }
            | Error::SolverStalled { .. }
            | Error::VanishingNormalizer { .. }
            | Error::NoSignChange { .. } => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn load_or<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>, default: impl FnOnce() -> T) -> Result<T, Failure> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(default()),
    }
}

fn apply(run: &mut RunConfig, f: &RunFlags, seed: Option<u64>) {
    if let Some(v) = f.rho {
        run.rho = v;
    }
    if let Some(v) = f.s {
        run.s = v;
    }
    if let Some(v) = f.restarts {
        run.restarts = v;
    }
    if let Some(v) = f.max_iters {
        run.optimizer.max_iters = v;
    }
    if f.exaggeration {
        run.optimizer.use_exaggeration = true;
    }
    if let Some(s) = seed {
        run.seed = s;
    }
}

fn default_sweep(dim: usize) -> SweepConfig {
    SweepConfig {
        schema_version: 1,
        distribution: DistributionSpec::uniform_cube(dim, -1.0, 1.0),
        n_grid: vec![250, 500, 1000, 2000],
        replicas: 10,
        run: RunConfig::default(),
        probe: ProbeConfig::default(),
        design: SamplingDesign::Nested,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let out: &Path = &c.out;
    let format: TableFormat = c.format.into();
    match cli.cmd {
        Cmd::Embed { dataset, run, trace, figure } => {
            let mut cfg: RunConfig = load_or(&c.config, RunConfig::default)?;
            apply(&mut cfg, &run, c.seed);
            let r = commands::embed(&dataset, &cfg, &EmbedOptions { trace, figure, format }, out)?;
            eprintln!(
                "loss {:.10} after {} iterations (converged: {})",
                r.optimizer.final_loss, r.optimizer.iters_run, r.optimizer.converged
            );
        }
        Cmd::Affinities { dataset, rho, tol } => {
            commands::affinities(&dataset, &AffinitySettings { rho, tol, format }, out)?;
        }
        Cmd::Sigma { data, uniform, dim, nodes, points, rho, tol, convention } => {
            let measure = match (data, uniform) {
                (Some(path), None) => MeasureInput::Empirical { path },
                (None, Some(v)) if v.len() != 2 => return Err(usage("--uniform takes LO,HI")),
                (None, Some(v)) => MeasureInput::Uniform {
                    lo: v[0],
                    hi: v[1],
                    dim,
                    plan: nodes.map(|m| QuadraturePlan::GaussLegendre { nodes_per_axis: m }),
                },
                _ => return Err(usage("give exactly one of --data or --uniform")),
            };
            let set = SigmaSettings { measure, points, rho, tol, convention: convention.into(), format };
            let f = commands::sigma(&set, out)?;
            eprintln!("{} points, max residual {:.3e}", f.values.len(), f.max_residual());
        }
        Cmd::Functional { dataset, embedding, rho, tol, convention } => {
            let r = commands::functional(&PairSettings { dataset, embedding, rho, tol }, convention.into(), out)?;
            eprintln!("I = {:.10}", r.value);
        }
        Cmd::Stationarity { dataset, embedding, rho, tol } => {
            let r = commands::stationarity(&PairSettings { dataset, embedding, rho, tol }, out)?;
            eprintln!("max residual: discrete {:.3e}, plugin {:.3e}", r.discrete.max_norm, r.plugin.max_norm);
        }
        Cmd::Sweep { n_grid, replicas, dim, run, resume, timings } => {
            let mut cfg: SweepConfig = load_or(&c.config, || default_sweep(dim))?;
            if let Some(g) = n_grid {
                cfg.n_grid = g;
            }
            if let Some(r) = replicas {
                cfg.replicas = r;
            }
            apply(&mut cfg.run, &run, c.seed);
            let o = commands::sweep(&cfg, resume, timings, out)?;
            eprintln!("{}", serde_json::to_string_pretty(&o.summary.trend).unwrap_or_default());
            if o.all_failed {
                return Err(Failure { code: 5, msg: "every cell failed".into() });
            }
        }
        Cmd::Tailcheck { d, n, t_grid, replicas, big_c, c1, delta } => {
            let mut cfg: TailCheckConfig = load_or(&c.config, TailCheckConfig::default)?;
            cfg.d = d.unwrap_or(cfg.d);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.t_grid = t_grid.unwrap_or(cfg.t_grid);
            cfg.replicas = replicas.unwrap_or(cfg.replicas);
            cfg.big_c = big_c.unwrap_or(cfg.big_c);
            cfg.c1 = c1.unwrap_or(cfg.c1);
            cfg.delta = delta.or(cfg.delta);
            cfg.seed = c.seed.unwrap_or(cfg.seed);
            let t = commands::tailcheck(&cfg, format, out)?;
            for w in &t.warnings {
                eprintln!("warning: {w}");
            }
            for r in &t.rows {
                eprintln!(
                    "t={:<4} freq={:.5} bound={:.5}{}",
                    r.t,
                    r.frequency,
                    r.bound,
                    if r.flagged { "  FLAGGED" } else { "" }
                );
            }
        }
        Cmd::Figure1 { n, d, full, yes } => {
            if full && !yes {
                return Err(usage(
                    "--full runs n = 100000, d = 500 with an exact O(n^2) method (hundreds of GB); add --yes to proceed",
                ));
            }
            let mut cfg: Figure1Config =
                load_or(&c.config, || if full { Figure1Config::full() } else { Figure1Config::desk() })?;
            cfg.full |= full;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.d = d.unwrap_or(cfg.d);
            cfg.run.seed = c.seed.unwrap_or(cfg.run.seed);
            let r = commands::figure1(&cfg, out)?;
            eprintln!("loss {:.10}, max |y| {:.4}", r.optimizer.final_loss, r.max_embed_norm);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
