//! t-SNE of uniform noise in a high-dimensional cube, drawn as an SVG
//! scatter plot. The output is a filled disc.
//!
//! ```text
//! cargo run --release -p tsne-eq --example figure -- noise.svg
//! ```

use tsne_eq::commands::embed_dataset;
use tsne_eq::experiments::{sample_dataset, DistributionSpec};
use tsne_eq::figure::{scatter_svg, FigureSpec};
use tsne_eq::types::RunConfig;

fn main() -> tsne_eq::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "noise.svg".into());
    let ds = sample_dataset(&DistributionSpec::uniform_cube(50, -1.0, 1.0), 800, 0)?;
    let out = embed_dataset(&ds, &RunConfig::default())?;
    let spec = FigureSpec {
        title: "uniform noise, d = 50, n = 800".into(),
        ..FigureSpec::default()
    };
    std::fs::write(&path, scatter_svg(&out.embedding, &spec)?)?;
    println!(
        "wrote {path}: loss {:.6}, max |y| {:.3}",
        out.result.optimizer.final_loss, out.result.max_embed_norm
    );
    Ok(())
}
