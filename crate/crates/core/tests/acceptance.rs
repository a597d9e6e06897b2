//! One line per acceptance criterion; exits non-zero if any fails.
//! Criteria 4 to 7 share one convergence sweep.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsne_eq::affinities::calibrate_all;
use tsne_eq::commands::{self, AffinitySettings, EmbedOptions, Figure1Config, MeasureInput, PairSettings, SigmaSettings, TableFormat};
use tsne_eq::experiments::{convergence_sweep, sample_dataset, DistributionSpec, ExperimentRecord, SweepConfig, SweepSummary, Trend};
use tsne_eq::io::write_points;
use tsne_eq::kernel::{loss, loss_gradient};
use tsne_eq::population::{f_value, functional_i, solve_sigma_star, DiagonalConvention, JointMeasure, PopulationContext};
use tsne_eq::quadrature::QuadraturePlan;
use tsne_eq::stationarity::residual_discrete;
use tsne_eq::tail::{tail_bound_check, TailCheckConfig};
use tsne_eq::types::{empirical_measure, AnalyticDensity, Dataset, Embedding, MeasureSpec, RunConfig, SupportBox};

type Outcome = Result<String, String>;

fn require(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mixed_dataset(k: u64, n: usize, d: usize) -> Dataset {
    let spec = if k % 2 == 0 {
        DistributionSpec::uniform_cube(d, -1.0, 1.0)
    } else {
        DistributionSpec::standard_gaussian(d)
    };
    sample_dataset(&spec, n, 1000 + k).unwrap()
}

fn calibration_exactness() -> Outcome {
    let t = Instant::now();
    let (mut worst_h, mut worst_sum): (f64, f64) = (0.0, 0.0);
    for k in 0..20 {
        let ds = mixed_dataset(k, 500, 10);
        let p = calibrate_all(&ds, 0.3, 1e-10).map_err(|e| e.to_string())?;
        let target = (0.3f64 * 500.0).ln();
        for h in p.entropy() {
            worst_h = worst_h.max((h - target).abs());
        }
        worst_sum = worst_sum.max((p.symmetric().iter().sum::<f64>() - 1.0).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    require(
        worst_h <= 1e-8 && worst_sum <= 1e-12 && secs < 30.0,
        format!("max |H - log(rho n)| = {worst_h:.2e}, max |sum p - 1| = {worst_sum:.2e}, {secs:.2} s"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_fd, mut worst_res): (f64, f64) = (0.0, 0.0);
    for k in 0..50 {
        let n = rng.random_range(5..=30);
        let ds = mixed_dataset(k, n, 4);
        let p = calibrate_all(&ds, rng.random_range(0.2..0.6), 1e-12).map_err(|e| e.to_string())?;
        let y: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let emb = Embedding::from_flat(y.clone(), 2).unwrap();
        let g = loss_gradient(&p, &emb).unwrap();
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..y.len() {
            let (mut a, mut b) = (y.clone(), y.clone());
            a[c] += h;
            b[c] -= h;
            let fd = (loss(&p, &Embedding::from_flat(a, 2).unwrap()).unwrap()
                - loss(&p, &Embedding::from_flat(b, 2).unwrap()).unwrap())
                / (2.0 * h);
            num += (g[c] - fd).powi(2);
            den += fd * fd;
        }
        worst_fd = worst_fd.max((num / den).sqrt());
        let r = residual_discrete(&p, &emb).unwrap();
        for i in 0..n {
            for (c, v) in r.residual(i).iter().enumerate() {
                worst_res = worst_res.max((v - g[2 * i + c] / 4.0).abs());
            }
        }
    }
    require(
        worst_fd < 1e-5 && worst_res <= 1e-12,
        format!("max relative FD error = {worst_fd:.2e}, max |residual - grad/4| = {worst_res:.2e}"),
    )
}

fn f_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid: Vec<f64> = (0..50).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 49.0)).collect();
    let (mut rise, mut limit, mut resid, mut agree): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..100u64 {
        let rho = rng.random_range(0.1..0.9);
        let d = 1 + (k % 3) as usize;
        let mu = if k < 50 {
            empirical_measure(&mixed_dataset(k, rng.random_range(20..80), d))
        } else {
            let plan = QuadraturePlan::GaussLegendre {
                nodes_per_axis: [200, 48, 16][d - 1],
            };
            MeasureSpec::AnalyticDensity(AnalyticDensity::uniform(SupportBox::cube(d, -1.0, 1.0).unwrap(), plan).unwrap())
        };
        let ctx = PopulationContext::new(&mu, rho).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = grid.iter().map(|s| f_value(&ctx, &x, *s).unwrap()).collect();
        for w in f.windows(2) {
            rise = rise.max(w[1] - w[0]);
        }
        limit = limit.max((f_value(&ctx, &x, 1e6).unwrap() - rho.ln()).abs());
        let fine = solve_sigma_star(&ctx, &x, 1e-12).map_err(|e| e.to_string())?;
        let coarse = solve_sigma_star(&ctx, &x, 1e-8).map_err(|e| e.to_string())?;
        resid = resid.max(f_value(&ctx, &x, fine).unwrap().abs());
        agree = agree.max((fine - coarse).abs());
    }
    require(
        rise <= 1e-12 && limit <= 1e-3 && resid <= 1e-10 && agree <= 1e-6,
        format!(
            "largest rise of F = {rise:.1e}, max |F(x,1e6) - log rho| = {limit:.1e}, max residual = {resid:.1e}, tol 1e-8 vs 1e-12 = {agree:.1e}"
        ),
    )
}

fn convergence_sweep_fixture() -> (Vec<ExperimentRecord>, SweepSummary, f64) {
    let cfg = SweepConfig {
        schema_version: 1,
        distribution: DistributionSpec::uniform_cube(1, -1.0, 1.0),
        n_grid: vec![250, 500, 1000, 2000],
        replicas: 10,
        run: RunConfig::default(),
        probe: Default::default(),
        design: Default::default(),
    };
    let t = Instant::now();
    let (records, summary) = convergence_sweep(&cfg).expect("valid sweep");
    (records, summary, t.elapsed().as_secs_f64())
}

fn fmt_col(summary: &SweepSummary, f: impl Fn(&tsne_eq::experiments::CellMedians) -> Option<f64>) -> String {
    let v: Vec<String> = summary
        .cells
        .iter()
        .map(|c| f(&c.median).map_or("-".into(), |x| format!("{x:.3e}")))
        .collect();
    v.join(", ")
}

fn sup_gaps(summary: &SweepSummary, secs: f64) -> Outcome {
    let ok = summary.trend.sigma_gap == Trend::Decreasing && summary.trend.f_gap == Trend::Decreasing && secs < 600.0;
    require(
        ok,
        format!(
            "sup_sigma_gap {}; sup_F_gap {}; {secs:.0} s",
            fmt_col(summary, |m| m.sup_sigma_gap),
            fmt_col(summary, |m| m.sup_f_gap)
        ),
    )
}

fn loss_vs_functional(summary: &SweepSummary) -> Outcome {
    let inc: Vec<String> = summary
        .dn_increments
        .iter()
        .map(|v| v.map_or("-".into(), |x| format!("{x:.2e}")))
        .collect();
    require(
        summary.trend.dn_iplugin_gap == Trend::Decreasing && summary.trend.dn_increments == Trend::Decreasing,
        format!(
            "|d_n - I_plugin| {}; |d_2n - d_n| {}",
            fmt_col(summary, |m| m.dn_iplugin_gap),
            inc.join(", ")
        ),
    )
}

fn stationarity(records: &[ExperimentRecord], summary: &SweepSummary) -> Outcome {
    let outs: Vec<_> = records.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let converged: Vec<_> = outs.iter().filter(|o| o.converged).collect();
    let worst = converged.iter().map(|o| o.residual_discrete_max).fold(0.0, f64::max);
    require(
        worst <= 1e-7 && summary.trend.plugin_residual == Trend::Decreasing,
        format!(
            "{}/{} runs converged, max discrete residual {worst:.2e}; plugin residual {}",
            converged.len(),
            records.len(),
            fmt_col(summary, |m| m.residual_plugin_max)
        ),
    )
}

fn bounded_support(summary: &SweepSummary) -> Outcome {
    let ratio = summary.max_embed_norm_ratio.unwrap_or(f64::INFINITY);
    require(
        ratio <= 2.0,
        format!("median max_embed_norm {}; ratio {ratio:.3}", fmt_col(summary, |m| m.max_embed_norm)),
    )
}

fn nonnegativity(records: &[ExperimentRecord]) -> Outcome {
    let mut min_i = f64::INFINITY;
    let mut worst_mass: f64 = 0.0;
    let mut seen = 0;
    let mut add = |value: f64, p_mass: f64, q_mass: f64| {
        min_i = min_i.min(value);
        worst_mass = worst_mass.max((p_mass - 1.0).abs()).max((q_mass - 1.0).abs());
        seen += 1;
    };
    for o in records.iter().filter_map(|r| r.outcome.as_ref()) {
        add(o.i_plugin, o.p_mass, o.q_mass);
    }
    // smooth joint measures on quadrature grids, at two refinements
    let maps: [(usize, fn(&[f64], &mut [f64])); 3] = [
        (1, |x, y| {
            y[0] = 2.0 * x[0];
            y[1] = (3.0 * x[0]).sin();
        }),
        (1, |x, y| {
            y[0] = x[0].powi(3);
            y[1] = 0.0;
        }),
        (2, |x, y| {
            y[0] = x[0] + 0.3 * x[1];
            y[1] = x[1] * x[0];
        }),
    ];
    for (d, map) in maps {
        let base = if d == 1 { 100 } else { 20 };
        for plan in [
            QuadraturePlan::GaussLegendre { nodes_per_axis: base },
            QuadraturePlan::GaussLegendre { nodes_per_axis: 2 * base },
        ] {
            let mu = MeasureSpec::AnalyticDensity(
                AnalyticDensity::uniform(SupportBox::cube(d, -1.0, 1.0).unwrap(), plan).unwrap(),
            );
            let nodes = mu.nodes().map_err(|e| e.to_string())?;
            let joint = JointMeasure::from_map(&nodes, 2, map).map_err(|e| e.to_string())?;
            for conv in [DiagonalConvention::Include, DiagonalConvention::ExcludeSelf] {
                let r = functional_i(&joint, 0.3, conv, 1e-12).map_err(|e| e.to_string())?;
                add(r.value, r.p_mass, r.q_mass);
            }
        }
    }
    require(
        min_i >= -1e-10 && worst_mass <= 1e-6,
        format!("{seen} measures, min I = {min_i:.3e}, max mass error = {worst_mass:.1e}"),
    )
}

fn tail_bound() -> Outcome {
    let t = tail_bound_check(&TailCheckConfig::default()).map_err(|e| e.to_string())?;
    let rows: Vec<String> = t
        .rows
        .iter()
        .map(|r| format!("t={}: {:.4} vs {:.4}", r.t, r.frequency, r.bound))
        .collect();
    require(!t.any_flagged(), rows.join(", "))
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_loss, mut worst_res, mut worst_sigma, mut worst_p): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..20 {
        let n = rng.random_range(10..40);
        let ds = mixed_dataset(k, n, 3);
        let p = calibrate_all(&ds, 0.3, 1e-12).unwrap();
        let y: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let emb = Embedding::from_flat(y, 2).unwrap();
        let base = loss(&p, &emb).unwrap();
        let norms = residual_discrete(&p, &emb).unwrap().norms();

        let th: f64 = rng.random_range(0.0..6.28);
        let rot = [th.cos(), -th.sin(), th.sin(), th.cos()];
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let variants = [
            (p.clone(), emb.translated(&[rng.random_range(-20.0..20.0), 7.5])),
            (p.clone(), emb.transformed(&rot)),
            (p.permuted(&perm), emb.permuted(&perm)),
        ];
        for (v, (pv, ev)) in variants.iter().enumerate() {
            worst_loss = worst_loss.max((loss(pv, ev).unwrap() - base).abs());
            let r = residual_discrete(pv, ev).unwrap().norms();
            for i in 0..n {
                let src = if v == 2 { perm[i] } else { i };
                worst_res = worst_res.max((r[i] - norms[src]).abs());
            }
        }
        let c = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled = calibrate_all(&ds.scaled(c), 0.3, 1e-12).unwrap();
        for (a, b) in p.sigma().iter().zip(scaled.sigma()) {
            worst_sigma = worst_sigma.max((b / a - c).abs() / c);
        }
        for (a, b) in p.symmetric().iter().zip(scaled.symmetric()) {
            worst_p = worst_p.max((a - b).abs());
        }
    }
    require(
        worst_loss <= 1e-12 && worst_res <= 1e-12 && worst_sigma <= 1e-10 && worst_p <= 1e-10,
        format!(
            "loss {worst_loss:.1e}, residual norms {worst_res:.1e}, sigma scaling {worst_sigma:.1e}, affinities {worst_p:.1e}"
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            for (k, v) in snapshot(&p) {
                out.insert(format!("{}/{k}", p.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn run_fixtures(root: &Path, out: &Path) -> tsne_eq::Result<()> {
    let data = root.join("data.csv");
    let ds = sample_dataset(&DistributionSpec::uniform_cube(3, -1.0, 1.0), 80, 4)?;
    write_points(&data, ds.points(), "x")?;
    let run = RunConfig { restarts: 2, ..Default::default() };
    let opts = EmbedOptions {
        trace: true,
        figure: true,
        format: TableFormat::Csv,
    };
    commands::embed(&data, &run, &opts, &out.join("embed"))?;
    // later steps read the embedding from one fixed path, so both runs echo the same inputs
    fs::copy(out.join("embed/embedding.csv"), root.join("embedding.csv"))?;
    let aff = AffinitySettings {
        rho: 0.3,
        tol: 1e-10,
        format: TableFormat::Json,
    };
    commands::affinities(&data, &aff, &out.join("affinities"))?;
    let sig = SigmaSettings {
        measure: MeasureInput::Uniform {
            lo: -1.0,
            hi: 1.0,
            dim: 3,
            plan: Some(QuadraturePlan::GaussLegendre { nodes_per_axis: 12 }),
        },
        points: Some(data.clone()),
        rho: 0.3,
        tol: 1e-12,
        convention: DiagonalConvention::Include,
        format: TableFormat::Csv,
    };
    commands::sigma(&sig, &out.join("sigma"))?;
    let pair = PairSettings {
        dataset: data.clone(),
        embedding: root.join("embedding.csv"),
        rho: 0.3,
        tol: 1e-12,
    };
    commands::functional(&pair, DiagonalConvention::Include, &out.join("functional"))?;
    commands::stationarity(&pair, &out.join("stationarity"))?;
    let sweep = SweepConfig {
        schema_version: 1,
        distribution: DistributionSpec::uniform_cube(1, -1.0, 1.0),
        n_grid: vec![40, 80, 120],
        replicas: 2,
        run: RunConfig::default(),
        probe: Default::default(),
        design: Default::default(),
    };
    commands::sweep(&sweep, false, false, &out.join("sweep"))?;
    let tail = TailCheckConfig {
        replicas: 300,
        ..Default::default()
    };
    commands::tailcheck(&tail, TableFormat::Csv, &out.join("tail"))?;
    let fig = Figure1Config {
        n: 150,
        d: 20,
        ..Figure1Config::desk()
    };
    commands::figure1(&fig, &out.join("figure1"))?;
    Ok(())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_fixtures(root.path(), &a).map_err(|e| e.to_string())?;
    run_fixtures(root.path(), &b).map_err(|e| e.to_string())?;
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let exts: std::collections::BTreeSet<_> = sa.keys().filter_map(|k| k.rsplit('.').next()).collect();
    require(
        differing.is_empty() && sa.len() == sb.len(),
        format!(
            "{} files ({}) compared, {} differ {:?}",
            sa.len(),
            exts.into_iter().collect::<Vec<_>>().join("/"),
            differing.len(),
            differing
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {id:>2} PASS  {name} ({secs:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1} s): {d}");
            }
        }
    };
    report(1, "calibration exactness", &mut calibration_exactness);
    report(2, "gradient correctness", &mut gradient_correctness);
    report(3, "F structure", &mut f_structure);
    let (records, summary, secs) = convergence_sweep_fixture();
    report(4, "empirical-to-population convergence", &mut || sup_gaps(&summary, secs));
    report(5, "loss vs plug-in functional", &mut || loss_vs_functional(&summary));
    report(6, "stationarity", &mut || stationarity(&records, &summary));
    report(7, "bounded support", &mut || bounded_support(&summary));
    report(8, "nonnegativity and normalization", &mut || nonnegativity(&records));
    report(9, "tail bound", &mut tail_bound);
    report(10, "invariance suite", &mut invariance);
    report(11, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
