//! Embed a small two-cluster dataset in the plane with a few restarts and
//! print the loss trace.
//!
//! ```text
//! cargo run --release -p tsne-eq --example embedding
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tsne_eq::commands::embed_dataset;
use tsne_eq::types::{Dataset, PointSet, RunConfig};

fn main() -> tsne_eq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let (n, d) = (200, 5);
    let mut coords = Vec::with_capacity(n * d);
    for i in 0..n {
        let centre = if i < n / 2 { -1.5 } else { 1.5 };
        coords.extend((0..d).map(|_| centre + noise.sample(&mut rng)));
    }
    let ds = Dataset::with_min_dim(PointSet::from_flat(coords, d)?, 2)?;

    let mut cfg = RunConfig {
        rho: 0.1,
        restarts: 3,
        ..RunConfig::default()
    };
    cfg.optimizer.max_iters = 20_000;
    cfg.optimizer.trace_every = 1000;
    let out = embed_dataset(&ds, &cfg)?;
    let r = &out.result;
    println!("restart losses: {:?}", r.restart_losses);
    for (it, loss) in &r.optimizer.loss_trace {
        println!("  iter {it:>5}  loss {loss:.8}");
    }
    println!(
        "converged {} after {} iterations, max residual {:.2e}, max |y| {:.3}",
        r.optimizer.converged, r.optimizer.iters_run, r.optimizer.final_grad_norm, r.max_embed_norm
    );

    let centroid = |range: std::ops::Range<usize>| {
        let k = range.len() as f64;
        let mut c = [0.0; 2];
        for i in range {
            c[0] += out.embedding.row(i)[0] / k;
            c[1] += out.embedding.row(i)[1] / k;
        }
        c
    };
    let (a, b) = (centroid(0..n / 2), centroid(n / 2..n));
    println!("cluster centroids {a:.3?} and {b:.3?}");
    Ok(())
}
