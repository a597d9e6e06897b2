//! Node sets for integrals against probability measures: tensor
//! Gauss–Legendre on boxes for `d <= 3`, seeded Monte Carlo otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PointSet, SupportBox};

/// Largest dimension handled by deterministic tensor grids.
pub const MAX_TENSOR_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadraturePlan {
    GaussLegendre { nodes_per_axis: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadraturePlan {
    /// Default plan for a density on a `d`-dimensional box.
    pub fn default_for_dim(d: usize) -> Self {
        match d {
            1 => QuadraturePlan::GaussLegendre { nodes_per_axis: 200 },
            2 => QuadraturePlan::GaussLegendre { nodes_per_axis: 64 },
            3 => QuadraturePlan::GaussLegendre { nodes_per_axis: 24 },
            _ => QuadraturePlan::MonteCarlo {
                samples: 20_000,
                seed: 0x5eed,
            },
        }
    }

    pub fn refined(&self) -> Self {
        match *self {
            QuadraturePlan::GaussLegendre { nodes_per_axis } => QuadraturePlan::GaussLegendre {
                nodes_per_axis: 2 * nodes_per_axis,
            },
            QuadraturePlan::MonteCarlo { samples, seed } => QuadraturePlan::MonteCarlo {
                samples: 2 * samples,
                seed,
            },
        }
    }

    /// Nodes and weights with `sum w g(x) ≈ ∫_box g(x) dx` (Lebesgue).
    pub fn raw_nodes(&self, support: &SupportBox) -> Result<WeightedNodes> {
        let d = support.dim();
        match *self {
            QuadraturePlan::GaussLegendre { nodes_per_axis: m } => {
                if d > MAX_TENSOR_DIM {
                    return Err(Error::InvalidConfig(format!(
                        "tensor Gauss-Legendre is limited to d <= {MAX_TENSOR_DIM}, got d = {d}"
                    )));
                }
                if m == 0 {
                    return Err(Error::InvalidConfig("zero quadrature nodes".into()));
                }
                let (t, w) = gauss_legendre(m);
                let total = m.pow(d as u32);
                let mut coords = Vec::with_capacity(total * d);
                let mut weights = Vec::with_capacity(total);
                let mut idx = vec![0usize; d];
                for _ in 0..total {
                    let mut wt = 1.0;
                    for (k, &i) in idx.iter().enumerate() {
                        let half = 0.5 * (support.hi[k] - support.lo[k]);
                        let mid = 0.5 * (support.hi[k] + support.lo[k]);
                        coords.push(mid + half * t[i]);
                        wt *= half * w[i];
                    }
                    weights.push(wt);
                    for slot in idx.iter_mut().rev() {
                        *slot += 1;
                        if *slot < m {
                            break;
                        }
                        *slot = 0;
                    }
                }
                Ok(WeightedNodes {
                    points: PointSet::from_flat(coords, d)?,
                    weights,
                })
            }
            QuadraturePlan::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(Error::InvalidConfig("Monte Carlo needs >= 2 samples".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut coords = Vec::with_capacity(samples * d);
                for _ in 0..samples {
                    for k in 0..d {
                        coords.push(rng.random_range(support.lo[k]..support.hi[k]));
                    }
                }
                let w = support.volume() / samples as f64;
                Ok(WeightedNodes {
                    points: PointSet::from_flat(coords, d)?,
                    weights: vec![w; samples],
                })
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[m - 1 - i] = z;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

/// Positive weights summing to one over a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedNodes {
    pub points: PointSet,
    pub weights: Vec<f64>,
}

impl WeightedNodes {
    pub fn new(points: PointSet, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::SizeMismatch(format!(
                "{} nodes but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("quadrature weights must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    pub fn normalized(points: PointSet, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DensityNotNormalized { mass: total });
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }
}
