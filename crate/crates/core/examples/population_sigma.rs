//! The population bandwidth `sigma*(x)` of the uniform law on [-1, 1] and
//! its empirical counterpart at growing sample sizes.
//!
//! ```text
//! cargo run --release -p tsne-eq --example population_sigma
//! ```

use tsne_eq::experiments::{sample_dataset, DistributionSpec};
use tsne_eq::population::{f_value, sigma_field, PopulationContext};
use tsne_eq::quadrature::QuadraturePlan;
use tsne_eq::types::{empirical_measure, AnalyticDensity, MeasureSpec, PointSet, SupportBox};

fn main() -> tsne_eq::Result<()> {
    let rho = 0.3;
    let mu = MeasureSpec::AnalyticDensity(AnalyticDensity::uniform(
        SupportBox::cube(1, -1.0, 1.0)?,
        QuadraturePlan::GaussLegendre { nodes_per_axis: 200 },
    )?);
    let ctx = PopulationContext::new(&mu, rho)?;
    let probes = PointSet::from_rows(&[-0.95, -0.5, 0.0, 0.5, 0.95].map(|x| vec![x]))?;
    let field = sigma_field(&ctx, &probes, 1e-12)?;

    println!("F(0, sigma) falls from +inf to log rho = {:.4}:", rho.ln());
    for s in [0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 10.0] {
        println!("  sigma {s:<5} F = {:+.6}", f_value(&ctx, &[0.0], s)?);
    }

    print!("\n{:>6} {:>10}", "x", "sigma*");
    let sizes = [100, 400, 1600];
    for n in sizes {
        print!(" {:>12}", format!("n={n}"));
    }
    println!();
    let spec = DistributionSpec::uniform_cube(1, -1.0, 1.0);
    let emp: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&n| {
            let ds = sample_dataset(&spec, n, 7)?;
            let emp = PopulationContext::new(&empirical_measure(&ds), rho)?;
            Ok(sigma_field(&emp, &probes, 1e-12)?.values)
        })
        .collect::<tsne_eq::Result<_>>()?;
    for (k, x) in probes.rows().enumerate() {
        print!("{:>6} {:>10.6}", x[0], field.values[k]);
        for e in &emp {
            print!(" {:>12.6}", e[k]);
        }
        println!();
    }
    Ok(())
}
