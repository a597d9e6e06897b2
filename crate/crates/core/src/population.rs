//! Population-level objects: the bandwidth equation `F_{ρ,μ}(x, σ) = 0`, its
//! root `σ*_{ρ,μ}(x)`, the symmetrized Gaussian kernel `p_ψ`, the Student-t
//! kernel `q` and the KL functional `I_ρ(μ)`.
//!
//! Every integral is a weighted sum over the nodes of a [`WeightedNodes`]:
//! the atoms of an empirical measure, or a quadrature rule for a density.
//! With `f_σ(x, x') = exp(-|x - x'|² / 2σ²)` and `a_k = |x - x_k|² / 2σ²`,
//!
//! ```text
//! F(x, σ) = -(Σ w_k f_k a_k) / (Σ w_k f_k) - log Σ w_k f_k + log ρ,
//! ```
//!
//! evaluated after shifting every exponent by the nearest node so that the
//! normalizer never underflows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::sq_dist;
use crate::error::{Error, Result};
use crate::quadrature::{QuadraturePlan, WeightedNodes};
use crate::types::{Dataset, Embedding, MeasureSpec, PointSet};

/// Initial bandwidth bracket `[2^-10, 2^10]`, expanded by doubling.
pub const BRACKET_START_EXP: i32 = 10;
/// The bracket never leaves `[2^-60, 2^60]`.
pub const BRACKET_LIMIT_EXP: i32 = 60;
pub const MAX_SIGMA_BISECTIONS: usize = 200;

/// Whether integrals against an empirical measure keep the atom at the
/// evaluation point. `ExcludeSelf` reproduces the finite-`n` estimators
/// `∫ f dμ_n - 1/n` and `∬ g dμ_n dμ_n - 1/n`, and with them the discrete
/// t-SNE quantities exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalConvention {
    #[default]
    Include,
    ExcludeSelf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub kind: String,
    pub nodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes_per_axis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Standard error of the Monte Carlo estimate of the total mass before
    /// normalization, relative to that mass.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_rel_stderr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PopulationContext {
    nodes: WeightedNodes,
    rho: f64,
    convention: DiagonalConvention,
    info: QuadratureInfo,
}

impl PopulationContext {
    pub fn new(mu: &MeasureSpec, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let nodes = mu.nodes()?;
        let info = match mu {
            MeasureSpec::Empirical(_) => QuadratureInfo {
                kind: "empirical".into(),
                nodes: nodes.len(),
                nodes_per_axis: None,
                seed: None,
                mass_rel_stderr: None,
            },
            MeasureSpec::AnalyticDensity(a) => match *a.plan() {
                QuadraturePlan::GaussLegendre { nodes_per_axis } => QuadratureInfo {
                    kind: "gauss_legendre".into(),
                    nodes: nodes.len(),
                    nodes_per_axis: Some(nodes_per_axis),
                    seed: None,
                    mass_rel_stderr: None,
                },
                QuadraturePlan::MonteCarlo { samples, seed } => {
                    let raw = a.plan().raw_nodes(a.support())?;
                    let vals: Vec<f64> = raw
                        .points
                        .rows()
                        .zip(&raw.weights)
                        .map(|(x, w)| w * a.density(x))
                        .collect();
                    let m = samples as f64;
                    let mean = vals.iter().sum::<f64>() / m;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
                    QuadratureInfo {
                        kind: "monte_carlo".into(),
                        nodes: nodes.len(),
                        nodes_per_axis: None,
                        seed: Some(seed),
                        mass_rel_stderr: Some((var * m).sqrt() / (mean * m)),
                    }
                }
            },
        };
        Ok(Self {
            nodes,
            rho,
            convention: DiagonalConvention::Include,
            info,
        })
    }

    pub fn from_nodes(nodes: WeightedNodes, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let info = QuadratureInfo {
            kind: "nodes".into(),
            nodes: nodes.len(),
            nodes_per_axis: None,
            seed: None,
            mass_rel_stderr: None,
        };
        Ok(Self {
            nodes,
            rho,
            convention: DiagonalConvention::Include,
            info,
        })
    }

    pub fn with_convention(mut self, convention: DiagonalConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn convention(&self) -> DiagonalConvention {
        self.convention
    }

    pub fn nodes(&self) -> &WeightedNodes {
        &self.nodes
    }

    pub fn info(&self) -> &QuadratureInfo {
        &self.info
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    /// Node to leave out for evaluation point `x` under `ExcludeSelf`.
    fn self_index(&self, x: &[f64]) -> Option<usize> {
        match self.convention {
            DiagonalConvention::Include => None,
            DiagonalConvention::ExcludeSelf => self.nodes.points.rows().position(|r| r == x),
        }
    }

    fn probe(&self, x: &[f64]) -> Result<Probe<'_>> {
        if x.len() != self.dim() {
            return Err(Error::SizeMismatch(format!(
                "point has dimension {}, measure {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row: 0, col: 0 });
        }
        let d2 = self.nodes.points.rows().map(|r| sq_dist(x, r)).collect();
        Ok(Probe::new(d2, &self.nodes.weights, self.self_index(x)))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Squared distances from one evaluation point to every node.
#[derive(Clone, Debug)]
pub(crate) struct Probe<'a> {
    d2: Vec<f64>,
    weights: &'a [f64],
    skip: Option<usize>,
    min: f64,
}

struct Tilt {
    /// `log Σ w_k exp(-(d_k - d_min)/2σ²)`
    log_z_shifted: f64,
    /// `Σ w_k e_k a'_k / Σ w_k e_k` with `a'_k = (d_k - d_min)/2σ²`
    mean_a: f64,
    beta: f64,
}

impl<'a> Probe<'a> {
    pub(crate) fn new(d2: Vec<f64>, weights: &'a [f64], skip: Option<usize>) -> Self {
        let min = d2
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != skip)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        Self {
            d2,
            weights,
            skip,
            min,
        }
    }

    fn included(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let skip = self.skip;
        self.d2
            .iter()
            .zip(self.weights)
            .enumerate()
            .filter(move |(k, _)| Some(*k) != skip)
            .map(|(k, (d, w))| (k, *d, *w))
    }

    fn tilt(&self, sigma: f64) -> Result<Tilt> {
        let beta = 0.5 / (sigma * sigma);
        let mut z = 0.0;
        let mut s = 0.0;
        for (_, d, w) in self.included() {
            let a = beta * (d - self.min);
            let e = w * (-a).exp();
            z += e;
            s += e * a;
        }
        if !(z > 0.0 && z.is_finite()) || !self.min.is_finite() {
            return Err(Error::VanishingNormalizer { sigma });
        }
        Ok(Tilt {
            log_z_shifted: z.ln(),
            mean_a: s / z,
            beta,
        })
    }

    /// `log ∫ f_σ(x, ·) dμ`.
    pub(crate) fn log_normalizer(&self, sigma: f64) -> Result<f64> {
        let t = self.tilt(sigma)?;
        Ok(t.log_z_shifted - t.beta * self.min)
    }

    pub(crate) fn f_value(&self, rho: f64, sigma: f64) -> Result<f64> {
        let t = self.tilt(sigma)?;
        let v = -t.mean_a - t.log_z_shifted + rho.ln();
        if !v.is_finite() {
            return Err(Error::VanishingNormalizer { sigma });
        }
        Ok(v)
    }

    /// Variance of `|x - x'|²` under the tilted measure, the factor that
    /// makes `∂_η F̃ = η Var ≥ 0`.
    fn tilted_variance(&self, sigma: f64) -> Result<f64> {
        let t = self.tilt(sigma)?;
        let mut z = 0.0;
        let mut m1 = 0.0;
        for (_, d, w) in self.included() {
            let e = w * (-(t.beta * (d - self.min))).exp();
            z += e;
            m1 += e * d;
        }
        let mean = m1 / z;
        let var = self
            .included()
            .map(|(_, d, w)| w * (-(t.beta * (d - self.min))).exp() * (d - mean).powi(2))
            .sum::<f64>()
            / z;
        Ok(var)
    }

    pub(crate) fn solve(&self, rho: f64, tol: f64, x: &[f64]) -> Result<f64> {
        let f = |s: f64| self.f_value(rho, s);
        let no_sign = || Error::NoSignChange { point: x.to_vec() };
        let mut lo = 2f64.powi(-BRACKET_START_EXP);
        let mut hi = 2f64.powi(BRACKET_START_EXP);
        let floor = 2f64.powi(-BRACKET_LIMIT_EXP);
        let ceil = 2f64.powi(BRACKET_LIMIT_EXP);

        // F is nonincreasing in σ: need F(lo) > 0 > F(hi)
        let mut f_lo = f(lo)?;
        while f_lo <= 0.0 {
            if f_lo.abs() <= tol && f_lo == 0.0 {
                return Ok(lo);
            }
            if lo <= floor {
                return Err(no_sign());
            }
            hi = lo;
            lo *= 0.5;
            f_lo = f(lo)?;
        }
        let mut f_hi = f(hi)?;
        while f_hi >= 0.0 {
            if hi >= ceil {
                return Err(no_sign());
            }
            lo = hi;
            hi *= 2.0;
            f_hi = f(hi)?;
        }
        if f_lo <= tol {
            return Ok(lo);
        }
        if -f_hi <= tol {
            return Ok(hi);
        }

        let mut best = (f64::INFINITY, lo);
        for _ in 0..MAX_SIGMA_BISECTIONS {
            let mid = (lo * hi).sqrt();
            let v = f(mid)?;
            if v.abs() < best.0 {
                best = (v.abs(), mid);
            }
            if v.abs() <= tol {
                return Ok(mid);
            }
            if v > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if mid == lo && mid == hi {
                break;
            }
        }
        Err(Error::SolverStalled {
            residual: best.0,
            tol,
        })
    }
}

/// `F_{ρ,μ}(x, σ)`.
pub fn f_value(ctx: &PopulationContext, x: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidScale(sigma));
    }
    ctx.probe(x)?.f_value(ctx.rho, sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Zero,
    Positive,
}

/// Sign of `∂_η F̃(x, η)` at `η = 1/2σ²`. Never negative: it is `η` times a
/// variance.
pub fn f_eta_derivative_sign(ctx: &PopulationContext, x: &[f64], sigma: f64) -> Result<Sign> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidScale(sigma));
    }
    let var = ctx.probe(x)?.tilted_variance(sigma)?;
    Ok(if var > 0.0 { Sign::Positive } else { Sign::Zero })
}

/// `σ*_{ρ,μ}(x)`, the root of `F(x, ·)`, to `|F| ≤ tol`.
pub fn solve_sigma_star(ctx: &PopulationContext, x: &[f64], tol: f64) -> Result<f64> {
    ctx.probe(x)?.solve(ctx.rho, tol, x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaField {
    pub points: PointSet,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl SigmaField {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn sigma_field(ctx: &PopulationContext, points: &PointSet, tol: f64) -> Result<SigmaField> {
    let solved: Vec<Result<(f64, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let probe = ctx.probe(x)?;
            let s = probe.solve(ctx.rho, tol, x)?;
            Ok((s, probe.f_value(ctx.rho, s)?.abs()))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut residuals = Vec::with_capacity(points.len());
    for r in solved {
        let (v, res) = r?;
        values.push(v);
        residuals.push(res);
    }
    Ok(SigmaField {
        points: points.clone(),
        values,
        residuals,
    })
}

/// `p_ψ(x, x')` for a bandwidth function `ψ`.
pub fn p_psi_kernel(
    ctx: &PopulationContext,
    psi: &dyn Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    x2: &[f64],
) -> Result<f64> {
    let (s1, s2) = (psi(x)?, psi(x2)?);
    let z1 = ctx.probe(x)?.log_normalizer(s1)?;
    let z2 = ctx.probe(x2)?.log_normalizer(s2)?;
    let d = sq_dist(x, x2);
    Ok(0.5 * ((-d / (2.0 * s1 * s1) - z1).exp() + (-d / (2.0 * s2 * s2) - z2).exp()))
}

/// Atoms `(x_k, y_k)` with positive weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMeasure {
    x: PointSet,
    y: PointSet,
    weights: Vec<f64>,
}

impl JointMeasure {
    pub fn new(x: PointSet, y: PointSet, weights: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::SizeMismatch(format!(
                "{} x-atoms but {} y-atoms",
                x.len(),
                y.len()
            )));
        }
        let nodes = WeightedNodes::new(x, weights)?;
        if (nodes.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("joint weights must sum to 1".into()));
        }
        Ok(Self {
            x: nodes.points,
            y,
            weights: nodes.weights,
        })
    }

    /// Empirical measure of input/output pairs `(X_i, Y_i)`.
    pub fn empirical(ds: &Dataset, emb: &Embedding) -> Result<Self> {
        let n = ds.n();
        Self::new(ds.points().clone(), emb.points().clone(), vec![1.0 / n as f64; n])
    }

    /// Pushes node weights through a map `x -> y`.
    pub fn from_map(nodes: &WeightedNodes, s: usize, map: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut y = vec![0.0; nodes.len() * s];
        for (x, out) in nodes.points.rows().zip(y.chunks_exact_mut(s)) {
            map(x, out);
        }
        Self::new(nodes.points.clone(), PointSet::from_flat(y, s)?, nodes.weights.clone())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn x(&self) -> &PointSet {
        &self.x
    }

    pub fn y(&self) -> &PointSet {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn x_marginal(&self) -> WeightedNodes {
        WeightedNodes {
            points: self.x.clone(),
            weights: self.weights.clone(),
        }
    }

    /// `∬ (1 + |y - y'|²)^{-1} dμ dμ`, minus the diagonal under `ExcludeSelf`.
    pub fn q_normalizer(&self, convention: DiagonalConvention) -> f64 {
        let n = self.len();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                let yk = self.y.row(k);
                let mut acc = 0.0;
                for l in 0..n {
                    if l == k && convention == DiagonalConvention::ExcludeSelf {
                        continue;
                    }
                    acc += self.weights[l] / (1.0 + sq_dist(yk, self.y.row(l)));
                }
                self.weights[k] * acc
            })
            .collect();
        rows.iter().sum()
    }
}

/// Normalized Student-t kernel `q(y, y')` of a joint measure's Y-marginal.
pub fn q_population(joint: &JointMeasure, convention: DiagonalConvention, y: &[f64], y2: &[f64]) -> f64 {
    1.0 / (1.0 + sq_dist(y, y2)) / joint.q_normalizer(convention)
}

/// `σ*`, Gaussian log-normalizers and the `q` normalizer at every atom of a
/// joint measure, so that `p_{σ*}` and `q` can be read off for any atom pair.
#[derive(Clone, Debug)]
pub struct JointKernels<'a> {
    joint: &'a JointMeasure,
    convention: DiagonalConvention,
    sigma: Vec<f64>,
    log_z: Vec<f64>,
    q_norm: f64,
}

impl<'a> JointKernels<'a> {
    /// Solves `σ*` against the X-marginal at every atom.
    pub fn build(joint: &'a JointMeasure, rho: f64, convention: DiagonalConvention, tol: f64) -> Result<Self> {
        check_rho(rho)?;
        let sigma: Vec<Result<f64>> = (0..joint.len())
            .into_par_iter()
            .map(|k| {
                let x = joint.x.row(k);
                atom_probe(joint, k, convention).solve(rho, tol, x)
            })
            .collect();
        let sigma = sigma.into_iter().collect::<Result<Vec<_>>>()?;
        Self::with_sigma(joint, convention, sigma)
    }

    /// Uses precomputed bandwidths, one per atom.
    pub fn with_sigma(joint: &'a JointMeasure, convention: DiagonalConvention, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != joint.len() {
            return Err(Error::SizeMismatch("one bandwidth per atom".into()));
        }
        let log_z: Vec<Result<f64>> = (0..joint.len())
            .into_par_iter()
            .map(|k| atom_probe(joint, k, convention).log_normalizer(sigma[k]))
            .collect();
        let log_z = log_z.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            joint,
            convention,
            q_norm: joint.q_normalizer(convention),
            sigma,
            log_z,
        })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn convention(&self) -> DiagonalConvention {
        self.convention
    }

    pub fn q_normalizer(&self) -> f64 {
        self.q_norm
    }

    fn skip(&self, k: usize, l: usize) -> bool {
        k == l && self.convention == DiagonalConvention::ExcludeSelf
    }

    pub fn p(&self, k: usize, l: usize) -> f64 {
        let d = sq_dist(self.joint.x.row(k), self.joint.x.row(l));
        let (sk, sl) = (self.sigma[k], self.sigma[l]);
        0.5 * ((-d / (2.0 * sk * sk) - self.log_z[k]).exp() + (-d / (2.0 * sl * sl) - self.log_z[l]).exp())
    }

    pub fn q(&self, k: usize, l: usize) -> f64 {
        1.0 / (1.0 + sq_dist(self.joint.y.row(k), self.joint.y.row(l))) / self.q_norm
    }

    /// `Σ_k w_k Σ_l w_l h(k, l)` over included pairs, reduced in index order.
    fn double_sum(&self, h: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
        let w = &self.joint.weights;
        let rows: Vec<f64> = (0..self.joint.len())
            .into_par_iter()
            .map(|k| {
                let mut acc = 0.0;
                for (l, wl) in w.iter().enumerate() {
                    if !self.skip(k, l) {
                        acc += wl * h(k, l);
                    }
                }
                w[k] * acc
            })
            .collect();
        rows.iter().sum()
    }

    pub fn p_mass(&self) -> f64 {
        self.double_sum(|k, l| self.p(k, l))
    }

    pub fn q_mass(&self) -> f64 {
        self.double_sum(|k, l| self.q(k, l))
    }

    /// `∬ p log(p / q) dμ dμ`, with `0 log 0 = 0`.
    pub fn kl(&self) -> f64 {
        self.double_sum(|k, l| {
            let p = self.p(k, l);
            if p > 0.0 {
                p * (p / self.q(k, l)).ln()
            } else {
                0.0
            }
        })
    }

    /// Zero-force residual `Σ_l w_l (p - q)(y_k - y_l) / (1 + |y_k - y_l|²)` at atom `k`.
    pub fn force(&self, k: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let yk = self.joint.y.row(k);
        for (l, wl) in self.joint.weights.iter().enumerate() {
            if self.skip(k, l) {
                continue;
            }
            let yl = self.joint.y.row(l);
            let d2 = sq_dist(yk, yl);
            let c = wl * (self.p(k, l) - self.q(k, l)) / (1.0 + d2);
            for ((o, a), b) in out.iter_mut().zip(yk).zip(yl) {
                *o += c * (a - b);
            }
        }
    }
}

fn atom_probe(joint: &JointMeasure, k: usize, convention: DiagonalConvention) -> Probe<'_> {
    let x = joint.x.row(k);
    let d2 = joint.x.rows().map(|r| sq_dist(x, r)).collect();
    let skip = (convention == DiagonalConvention::ExcludeSelf).then_some(k);
    Probe::new(d2, &joint.weights, skip)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub value: f64,
    pub convention: DiagonalConvention,
    pub atoms: usize,
    pub rho: f64,
    /// `∬ p dμ dμ` and `∬ q dμ dμ`; both are 1 up to rounding.
    pub p_mass: f64,
    pub q_mass: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureInfo>,
}

/// Plug-in estimate of `I_ρ(μ)` with `σ*` solved exactly at every atom.
pub fn functional_i(
    joint: &JointMeasure,
    rho: f64,
    convention: DiagonalConvention,
    tol: f64,
) -> Result<FunctionalReport> {
    let kernels = JointKernels::build(joint, rho, convention, tol)?;
    Ok(functional_report(&kernels, rho))
}

pub fn functional_report(kernels: &JointKernels<'_>, rho: f64) -> FunctionalReport {
    FunctionalReport {
        value: kernels.kl(),
        convention: kernels.convention,
        atoms: kernels.joint.len(),
        rho,
        p_mass: kernels.p_mass(),
        q_mass: kernels.q_mass(),
        sigma_min: kernels.sigma.iter().copied().fold(f64::INFINITY, f64::min),
        sigma_max: kernels.sigma.iter().copied().fold(0.0, f64::max),
        quadrature: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{empirical_measure, AnalyticDensity, SupportBox};

    fn line_measure(xs: &[f64]) -> MeasureSpec {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        empirical_measure(&Dataset::from_samples(PointSet::from_rows(&rows).unwrap()).unwrap())
    }

    #[test]
    fn three_point_f_matches_direct_sums() {
        let ctx = PopulationContext::new(&line_measure(&[0.0, 1.0, 2.0]), 0.5).unwrap();
        let f = f_value(&ctx, &[0.0], 1.0).unwrap();
        // f = (1, e^{-1/2}, e^{-2}), g = f · (0, 1/2, 2)
        let (e1, e2) = ((-0.5f64).exp(), (-2.0f64).exp());
        let fs = 1.0 + e1 + e2;
        let gs = 0.5 * e1 + 2.0 * e2;
        let want = -(gs / fs) - (fs / 3.0).ln() + 0.5f64.ln();
        assert!((f - want).abs() < 1e-15, "{f} vs {want}");
        // 50-digit evaluation
        assert!((f + 0.478_986_683_772_834_87).abs() < 1e-15);
    }

    #[test]
    fn large_bandwidth_limit_is_log_rho() {
        let ctx = PopulationContext::new(&line_measure(&[0.0, 1.0, 2.0, -3.0]), 0.3).unwrap();
        let f = f_value(&ctx, &[0.5], 1e6).unwrap();
        assert!((f - 0.3f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn small_bandwidth_on_an_atom_is_positive() {
        let ctx = PopulationContext::new(&line_measure(&[0.0, 1.0, 2.0]), 0.5).unwrap();
        let f = f_value(&ctx, &[0.0], 1e-3).unwrap();
        assert!(f > 0.0);
        assert!((f - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn derivative_sign() {
        let ctx = PopulationContext::new(&line_measure(&[0.0, 1.0, 2.0]), 0.5).unwrap();
        assert_eq!(f_eta_derivative_sign(&ctx, &[0.0], 1.0).unwrap(), Sign::Positive);
        let point = PopulationContext::new(&line_measure(&[0.7, 0.7, 0.7]), 0.5).unwrap();
        assert_eq!(f_eta_derivative_sign(&point, &[0.7], 1.0).unwrap(), Sign::Zero);
    }

    #[test]
    fn excluding_the_atom_reproduces_discrete_calibration() {
        use crate::affinities::calibrate_sigma;
        let ds = Dataset::from_samples(PointSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap()).unwrap();
        let mu = empirical_measure(&ds);
        let ctx = PopulationContext::new(&mu, 0.5)
            .unwrap()
            .with_convention(DiagonalConvention::ExcludeSelf);
        let s = solve_sigma_star(&ctx, &[0.0], 1e-13).unwrap();
        let discrete = calibrate_sigma(&ds, 0, 1.5f64.ln(), 1e-13).unwrap();
        assert!((s - discrete).abs() < 1e-10, "{s} vs {discrete}");
        assert!((s - 0.909_593_380_709_149_46).abs() < 1e-10);

        // the population convention keeps the atom and lands elsewhere
        let incl = PopulationContext::new(&mu, 0.5).unwrap();
        let s_incl = solve_sigma_star(&incl, &[0.0], 1e-13).unwrap();
        // 50-digit root of the three-point F
        assert!((s_incl - 0.522_165_432_559_419_44).abs() < 1e-10, "{s_incl}");
    }

    #[test]
    fn uniform_density_sigma_star_is_stable_under_refinement() {
        let b = SupportBox::cube(1, -1.0, 1.0).unwrap();
        let solve = |m| {
            let a = AnalyticDensity::uniform(b.clone(), QuadraturePlan::GaussLegendre { nodes_per_axis: m }).unwrap();
            let ctx = PopulationContext::new(&MeasureSpec::AnalyticDensity(a), 0.3).unwrap();
            solve_sigma_star(&ctx, &[0.0], 1e-13).unwrap()
        };
        let (s200, s400) = (solve(200), solve(400));
        assert!((s200 - s400).abs() < 1e-6);
        // adaptive 50-digit quadrature
        assert!((s200 - 0.145_182_434_732_205_74).abs() < 1e-8, "{s200}");
    }

    #[test]
    fn point_mass_y_marginal_gives_unit_q() {
        let x = PointSet::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        let y = PointSet::from_rows(&vec![vec![2.0, 2.0]; 3]).unwrap();
        let j = JointMeasure::new(x, y, vec![0.2, 0.3, 0.5]).unwrap();
        let q = q_population(&j, DiagonalConvention::Include, &[2.0, 2.0], &[2.0, 2.0]);
        assert!((q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn engineered_two_atom_joint_has_zero_functional() {
        // p(a,b)/p(a,a) = exp(-d²/2σ*²) must equal 1/(1 + |Δy|²)
        let rho = 0.7;
        let nodes = WeightedNodes::new(PointSet::from_rows(&[vec![0.0], vec![1.0]]).unwrap(), vec![0.5, 0.5]).unwrap();
        let ctx = PopulationContext::from_nodes(nodes.clone(), rho).unwrap();
        let s = solve_sigma_star(&ctx, &[0.0], 1e-14).unwrap();
        let dy = ((1.0 / (2.0 * s * s)).exp() - 1.0).sqrt();
        let joint = JointMeasure::from_map(&nodes, 2, |x, y| {
            y[0] = x[0] * dy;
            y[1] = 0.0;
        })
        .unwrap();
        let r = functional_i(&joint, rho, DiagonalConvention::Include, 1e-14).unwrap();
        assert!(r.value.abs() < 1e-12, "{}", r.value);
        assert!((r.p_mass - 1.0).abs() < 1e-14 && (r.q_mass - 1.0).abs() < 1e-14);
    }
}
