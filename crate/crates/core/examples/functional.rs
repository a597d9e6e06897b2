//! The plug-in KL functional of an embedded sample next to the finite-n
//! loss it approximates.
//!
//! ```text
//! cargo run --release -p tsne-eq --example functional
//! ```

use tsne_eq::commands::embed_dataset;
use tsne_eq::experiments::{sample_dataset, DistributionSpec};
use tsne_eq::population::{functional_i, DiagonalConvention, JointMeasure};
use tsne_eq::types::RunConfig;

fn main() -> tsne_eq::Result<()> {
    let spec = DistributionSpec::uniform_cube(3, -1.0, 1.0);
    let cfg = RunConfig::default();
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "n", "loss", "I (incl.)", "gap", "I (excl.)");
    for n in [125, 250, 500] {
        let ds = sample_dataset(&spec, n, 11)?;
        let out = embed_dataset(&ds, &cfg)?;
        let joint = JointMeasure::empirical(&ds, &out.embedding)?;
        let inc = functional_i(&joint, cfg.rho, DiagonalConvention::Include, 1e-12)?;
        // dropping the self pairs turns the functional back into the loss
        let exc = functional_i(&joint, cfg.rho, DiagonalConvention::ExcludeSelf, 1e-12)?;
        let loss = out.result.optimizer.final_loss;
        println!(
            "{n:>6} {loss:>12.8} {:>12.8} {:>12.2e} {:>12.8}",
            inc.value,
            (loss - inc.value).abs(),
            exc.value
        );
    }
    Ok(())
}
