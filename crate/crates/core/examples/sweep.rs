//! A small convergence sweep on uniform noise in one dimension: medians per
//! sample size, log-log slopes and trend verdicts.
//!
//! ```text
//! cargo run --release -p tsne-eq --example sweep
//! ```
//!
//! The `sweep` subcommand of the binary runs the same thing with output
//! files and resume support.

use tsne_eq::experiments::{convergence_sweep, DistributionSpec, SweepConfig};
use tsne_eq::types::RunConfig;

fn main() -> tsne_eq::Result<()> {
    let cfg = SweepConfig {
        schema_version: 1,
        distribution: DistributionSpec::uniform_cube(1, -1.0, 1.0),
        n_grid: vec![125, 250, 500],
        replicas: 4,
        run: RunConfig::default(),
        probe: Default::default(),
        design: Default::default(),
    };
    let (records, s) = convergence_sweep(&cfg)?;
    println!("{} records", records.len());
    println!("{:>6} {:>12} {:>12} {:>12} {:>12} {:>10}", "n", "d_n", "sigma gap", "F gap", "d_n - I", "max |y|");
    for c in &s.cells {
        let m = &c.median;
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
        println!(
            "{:>6} {:>12} {:>12} {:>12} {:>12} {:>10}",
            c.n,
            f(m.d_n),
            f(m.sup_sigma_gap),
            f(m.sup_f_gap),
            f(m.dn_iplugin_gap),
            f(m.max_embed_norm)
        );
    }
    println!("slopes: {:?}", s.slopes);
    println!("trend: {:?}", s.trend);
    Ok(())
}
