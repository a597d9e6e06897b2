//! Per-row bandwidth calibration at perplexity `rho * n`.
//!
//! ```text
//! cargo run --release -p tsne-eq --example calibration
//! ```

use tsne_eq::affinities::calibrate_all;
use tsne_eq::experiments::{sample_dataset, DistributionSpec};

fn main() -> tsne_eq::Result<()> {
    let ds = sample_dataset(&DistributionSpec::standard_gaussian(10), 500, 1)?;
    for rho in [0.05, 0.3, 0.8] {
        let p = calibrate_all(&ds, rho, 1e-10)?;
        let target = p.target_log_perp();
        let worst = p.entropy().iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
        let (lo, hi) = p
            .sigma()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(*s), b.max(*s)));
        println!(
            "rho {rho:<4}  perplexity {:>5.1}  sigma in [{lo:.4}, {hi:.4}]  max entropy error {worst:.1e}  sum p = {:.15}",
            rho * ds.n() as f64,
            p.symmetric().iter().sum::<f64>()
        );
    }

    // the band is (0, log(n - 1)); asking for more fails with the row and the band
    match calibrate_all(&ds, 0.999, 1e-10) {
        Err(e) => println!("rho 0.999: {e}"),
        Ok(_) => unreachable!("perplexity above n - 1"),
    }
    Ok(())
}
