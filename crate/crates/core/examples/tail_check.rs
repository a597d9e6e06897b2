//! Monte Carlo check of the maximum-norm tail bound for Gaussian samples.
//!
//! ```text
//! cargo run --release -p tsne-eq --example tail_check
//! ```

use tsne_eq::tail::{tail_bound_check, TailCheckConfig};

fn main() -> tsne_eq::Result<()> {
    for cfg in [
        TailCheckConfig::default(),
        // c1 too large for the Gaussian: the bound should fail somewhere
        TailCheckConfig {
            c1: 8.0,
            big_c: 0.05,
            t_grid: vec![0.0, 0.1, 0.2, 0.5],
            ..Default::default()
        },
    ] {
        let table = tail_bound_check(&cfg)?;
        println!("C = {}, c1 = {}, {} replicas of n = {} in d = {}", cfg.big_c, cfg.c1, cfg.replicas, cfg.n, cfg.d);
        for r in &table.rows {
            println!(
                "  t {:<4} threshold {:>7.3}  frequency {:.4}  bound {:.4}{}",
                r.t,
                r.threshold,
                r.frequency,
                r.bound,
                if r.flagged { "  <- exceeds bound" } else { "" }
            );
        }
    }
    Ok(())
}
