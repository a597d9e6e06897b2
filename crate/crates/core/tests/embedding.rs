use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsne_eq::affinities::{calibrate_all, calibrate_sigma, row_conditionals, row_entropy, CalibratedAffinities};
use tsne_eq::experiments::{sample_dataset, DistributionSpec};
use tsne_eq::kernel::{loss, loss_gradient, q_matrix};
use tsne_eq::optimizer::{init_embedding, minimize, minimize_from, multistart_minimize, OptimizerConfig};
use tsne_eq::types::{validate_dataset, Dataset, Embedding, PointSet};
use tsne_eq::Error;

fn gaussian(n: usize, d: usize, seed: u64) -> Dataset {
    sample_dataset(&DistributionSpec::standard_gaussian(d), n, seed).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let n = rng.random_range(5..16);
        let ds = gaussian(n, 3, 100 + inst);
        let p = calibrate_all(&ds, rng.random_range(0.3..0.6), 1e-12).unwrap();
        let y: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let emb = Embedding::from_flat(y.clone(), 2).unwrap();
        let g = loss_gradient(&p, &emb).unwrap();
        let h = 1e-5;
        let mut fd = vec![0.0; y.len()];
        for k in 0..y.len() {
            let (mut a, mut b) = (y.clone(), y.clone());
            a[k] += h;
            b[k] -= h;
            let la = loss(&p, &Embedding::from_flat(a, 2).unwrap()).unwrap();
            let lb = loss(&p, &Embedding::from_flat(b, 2).unwrap()).unwrap();
            fd[k] = (la - lb) / (2.0 * h);
        }
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn extreme_distance_spread_calibrates() {
    let xs = [0.0, 1e-6, 1e-3, 1.0, 7.0, 1e3, 1e6];
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x, 0.0]).collect();
    let ds = validate_dataset(&rows).unwrap();
    let p = calibrate_all(&ds, 0.5, 1e-10).unwrap();
    let target = (0.5 * 7.0f64).ln();
    for i in 0..7 {
        assert!(p.sigma()[i].is_finite() && p.sigma()[i] > 0.0);
        assert!((p.entropy()[i] - target).abs() <= 1e-10, "row {i}: {}", p.entropy()[i]);
        assert!(p.conditional_row(i).iter().all(|v| v.is_finite()));
    }
    assert!(p.symmetric().iter().all(|v| v.is_finite()));
}

#[test]
fn fixed_row_calibration_example() {
    // rows of the three-point line at perplexity 1.5
    let ds = validate_dataset(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let s = calibrate_sigma(&ds, 0, 1.5f64.ln(), 1e-13).unwrap();
    assert!((s - 0.909_593_380_709_149_46).abs() < 1e-10, "{s}");
    let h = row_entropy(&row_conditionals(&ds, 0, s).unwrap());
    assert!((h - 1.5f64.ln()).abs() < 1e-12);
    // the middle row sees two equidistant neighbours, so its entropy is ln 2 at every bandwidth
    assert!(matches!(
        calibrate_sigma(&ds, 1, 1.5f64.ln(), 1e-13),
        Err(Error::PerplexityInfeasible { .. })
    ));
}

#[test]
fn infeasible_perplexity_is_reported_with_its_band() {
    let ds = gaussian(10, 3, 1);
    match calibrate_all(&ds, 0.99, 1e-10) {
        Err(e @ Error::PerplexityInfeasible { .. }) => {
            let m = e.to_string();
            assert!(m.contains("feasible band"), "{m}");
        }
        other => panic!("expected infeasible perplexity, got {other:?}"),
    }
}

#[test]
fn invalid_datasets_are_rejected() {
    assert!(matches!(
        validate_dataset(&[vec![0.0, f64::NAN], vec![1.0, 0.0], vec![0.0, 1.0]]),
        Err(Error::NonFiniteInput { row: 0, col: 1 })
    ));
    assert!(matches!(validate_dataset(&[vec![0.0, 0.0], vec![1.0, 0.0]]), Err(Error::TooFewPoints { n: 2 })));
    assert!(matches!(
        validate_dataset(&[vec![0.0], vec![1.0], vec![2.0]]),
        Err(Error::DimensionTooSmall { d: 1, min: 2 })
    ));
}

#[test]
fn three_point_embedding_q() {
    let e = Embedding::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let q = q_matrix(&e);
    // weights 1/2, 1/2, 1/3 on the three pairs, each counted twice
    let z = 2.0 * (0.5 + 0.5 + 1.0 / 3.0);
    assert!((q[1] - 0.5 / z).abs() < 1e-15);
    assert!((q[5] - (1.0 / 3.0) / z).abs() < 1e-15);
    assert_eq!(q[0], 0.0);
}

#[test]
fn fifty_point_fixture_converges() {
    let ds = gaussian(50, 5, 7);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    let t = std::time::Instant::now();
    let r = minimize(&p, 2, &OptimizerConfig::default()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 10.0);
    assert!(r.converged && r.final_grad_norm <= 1e-7);
    // frozen from a reference run
    assert!((r.final_loss - 0.341_231_683_595_721_87).abs() < 1e-8, "{}", r.final_loss);
    assert_eq!(r.loss_trace.len(), r.iters_run);
    for w in r.loss_trace.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-9, "{:?}", w);
    }
    let recomputed = loss(&p, r.embedding()).unwrap();
    assert!((recomputed - r.final_loss).abs() < 1e-12);
}

#[test]
fn restarts_never_do_worse_than_one_start() {
    let ds = gaussian(50, 5, 7);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    let cfg = OptimizerConfig::default();
    let single = minimize(&p, 2, &cfg).unwrap();
    let (best, all) = multistart_minimize(&p, 2, &cfg, 5).unwrap();
    assert_eq!(all.len(), 5);
    assert!(best.final_loss <= single.final_loss);
    let min = all.iter().filter_map(|r| r.as_ref().ok()).copied().fold(f64::INFINITY, f64::min);
    assert_eq!(best.final_loss, min);
}

#[test]
fn exaggerated_trace_is_monotone_after_the_phase() {
    let ds = gaussian(40, 4, 2);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    let cfg = OptimizerConfig {
        use_exaggeration: true,
        exaggeration_iters: 100,
        max_iters: 600,
        ..Default::default()
    };
    let r = minimize(&p, 3, &cfg).unwrap();
    let after: Vec<_> = r.loss_trace.iter().filter(|(it, _)| *it > 100).collect();
    for w in after.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-9);
    }
    assert_eq!(r.embedding().dim(), 3);
}

#[test]
fn one_iteration_gives_one_trace_entry() {
    let ds = gaussian(20, 3, 4);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    let cfg = OptimizerConfig {
        max_iters: 1,
        ..Default::default()
    };
    let r = minimize(&p, 2, &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iters_run, 1);
    assert_eq!(r.loss_trace.len(), 1);
}

#[test]
fn matching_affinities_are_recovered_from_a_nearby_start() {
    let n = 12;
    let target = init_embedding(n, 2, 1.0, 5).unwrap();
    let p = CalibratedAffinities::from_joint(q_matrix(&target), n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let start: Vec<f64> = target.as_flat().iter().map(|v| v + 1e-3 * rng.random_range(-1.0..1.0)).collect();
    let cfg = OptimizerConfig {
        learning_rate: Some(1.0),
        max_iters: 20_000,
        grad_tol: 1e-9,
        ..Default::default()
    };
    let r = minimize_from(&p, Embedding::from_flat(start, 2).unwrap(), &cfg).unwrap();
    assert!(r.final_loss < 1e-10, "{}", r.final_loss);
}

#[test]
fn overflowing_steps_raise_non_finite_loss() {
    let ds = gaussian(20, 3, 4);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    let cfg = OptimizerConfig {
        learning_rate: Some(1e300),
        ..Default::default()
    };
    assert!(matches!(minimize(&p, 2, &cfg), Err(Error::NonFiniteLoss { .. })));
    assert!(matches!(multistart_minimize(&p, 2, &cfg, 3), Err(Error::NonFiniteLoss { .. })));
}

#[test]
fn bad_configs_are_rejected() {
    let ds = gaussian(20, 3, 4);
    let p = calibrate_all(&ds, 0.3, 1e-10).unwrap();
    for cfg in [
        OptimizerConfig { max_iters: 0, ..Default::default() },
        OptimizerConfig { learning_rate: Some(-1.0), ..Default::default() },
        OptimizerConfig { momentum_final: 1.0, ..Default::default() },
        OptimizerConfig { init_scale: 0.0, ..Default::default() },
    ] {
        assert!(minimize(&p, 2, &cfg).is_err());
    }
    assert!(multistart_minimize(&p, 2, &OptimizerConfig::default(), 0).is_err());
    let short = Embedding::new(PointSet::from_flat(vec![0.0; 10], 2).unwrap()).unwrap();
    assert!(matches!(minimize_from(&p, short, &OptimizerConfig::default()), Err(Error::SizeMismatch(..))));
}
