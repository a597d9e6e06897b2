//! Force balance of an embedding: the discrete residual the optimizer
//! drives to zero, and the plug-in residual with population bandwidths.
//!
//! ```text
//! cargo run --release -p tsne-eq --example stationarity
//! ```

use tsne_eq::affinities::calibrate_all;
use tsne_eq::experiments::{sample_dataset, DistributionSpec};
use tsne_eq::optimizer::{minimize, OptimizerConfig};
use tsne_eq::population::JointMeasure;
use tsne_eq::stationarity::{residual_discrete, residual_plugin};

fn main() -> tsne_eq::Result<()> {
    let spec = DistributionSpec::uniform_cube(1, -1.0, 1.0);
    for n in [200, 400, 800] {
        let ds = sample_dataset(&spec, n, 2)?;
        let p = calibrate_all(&ds, 0.3, 1e-10)?;
        let early = minimize(&p, 2, &OptimizerConfig { max_iters: 100, min_iters: 0, ..Default::default() })?;
        let done = minimize(&p, 2, &OptimizerConfig::default())?;
        let r_early = residual_discrete(&p, early.embedding())?.summary();
        let r_done = residual_discrete(&p, done.embedding())?.summary();
        let plug = residual_plugin(&JointMeasure::empirical(&ds, done.embedding())?, 0.3, 1e-12)?.summary();
        println!(
            "n {n:>4}: discrete max {:.2e} after 100 iterations, {:.2e} at convergence; plug-in max {:.2e}",
            r_early.max_norm, r_done.max_norm, plug.max_norm
        );
    }
    Ok(())
}
