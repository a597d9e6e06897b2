//! Gaussian conditional affinities with per-point bandwidths calibrated to a
//! perplexity proportional to `n`, and their symmetrization.
//!
//! Every row sum runs over the other points sorted by decreasing distance.
//! Besides adding the small kernel values first, this makes the result
//! independent of the row order of the dataset, so permuting the input
//! permutes bandwidths and affinities bit for bit.

use rayon::prelude::*;

use crate::distance::{sq_dist, SqDistMatrix};
use crate::error::{Error, Result};
use crate::types::{check_perplexity, Dataset};

/// Bisection budget in `log σ` once the target is bracketed.
pub const MAX_BISECTIONS: usize = 80;
/// Doubling/halving budget while looking for a bracket.
pub const MAX_BRACKET_STEPS: usize = 200;
pub const DEFAULT_ENTROPY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedAffinities {
    n: usize,
    sigma: Vec<f64>,
    entropy: Vec<f64>,
    conditional: Vec<f64>,
    symmetric: Vec<f64>,
    target_log_perp: f64,
    plogp: f64,
}

impl CalibratedAffinities {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Entropy of each conditional row at its calibrated bandwidth.
    pub fn entropy(&self) -> &[f64] {
        &self.entropy
    }

    pub fn target_log_perp(&self) -> f64 {
        self.target_log_perp
    }

    /// `p_{j|i}` as row `i`.
    pub fn conditional_row(&self, i: usize) -> &[f64] {
        &self.conditional[i * self.n..(i + 1) * self.n]
    }

    pub fn conditional(&self) -> &[f64] {
        &self.conditional
    }

    /// Row-major symmetric `p_{ij}`, summing to one over ordered pairs.
    pub fn symmetric(&self) -> &[f64] {
        &self.symmetric
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.symmetric[i * self.n + j]
    }

    /// `Σ p_{ij} log p_{ij}` over pairs with `p_{ij} > 0`.
    pub fn plogp(&self) -> f64 {
        self.plogp
    }

    /// Builds affinities directly from a symmetric, zero-diagonal matrix that
    /// sums to one. Used for fixtures where `p` is prescribed rather than
    /// calibrated; bandwidths and conditionals are left empty.
    pub fn from_joint(symmetric: Vec<f64>, n: usize) -> Result<Self> {
        if symmetric.len() != n * n {
            return Err(Error::SizeMismatch(format!(
                "joint matrix has {} entries, expected {}",
                symmetric.len(),
                n * n
            )));
        }
        for i in 0..n {
            if symmetric[i * n + i] != 0.0 {
                return Err(Error::InvalidConfig("p_ii must be zero".into()));
            }
            for j in 0..n {
                let v = symmetric[i * n + j];
                if !(v >= 0.0 && v.is_finite()) || v != symmetric[j * n + i] {
                    return Err(Error::InvalidConfig(
                        "p must be finite, nonnegative and symmetric".into(),
                    ));
                }
            }
        }
        let total: f64 = symmetric.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("p sums to {total}, expected 1")));
        }
        let plogp = plogp(&symmetric);
        Ok(Self {
            n,
            sigma: Vec::new(),
            entropy: Vec::new(),
            conditional: Vec::new(),
            symmetric,
            target_log_perp: f64::NAN,
            plogp,
        })
    }

    /// Same affinities relabelled by `perm` (row `k` of the result is row `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let pick = |m: &[f64]| -> Vec<f64> {
            if m.is_empty() {
                return Vec::new();
            }
            let mut out = vec![0.0; n * n];
            for (a, &pa) in perm.iter().enumerate() {
                for (b, &pb) in perm.iter().enumerate() {
                    out[a * n + b] = m[pa * n + pb];
                }
            }
            out
        };
        let pv = |v: &[f64]| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                perm.iter().map(|&p| v[p]).collect()
            }
        };
        let symmetric = pick(&self.symmetric);
        let plogp = plogp(&symmetric);
        Self {
            n,
            sigma: pv(&self.sigma),
            entropy: pv(&self.entropy),
            conditional: pick(&self.conditional),
            symmetric,
            target_log_perp: self.target_log_perp,
            plogp,
        }
    }
}

fn plogp(p: &[f64]) -> f64 {
    p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum()
}

/// Squared distances from one point to all others, sorted decreasingly.
#[derive(Clone, Debug)]
struct RowDistances {
    sorted: Vec<f64>,
    min: f64,
    ties: usize,
    mean: f64,
}

impl RowDistances {
    fn new(row: &[f64], i: usize) -> Self {
        let mut sorted: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let min = *sorted.last().expect("row has at least one other point");
        let ties = sorted.iter().rev().take_while(|v| **v == min).count();
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Self {
            sorted,
            min,
            ties,
            mean,
        }
    }

    fn others(&self) -> usize {
        self.sorted.len()
    }

    /// Log-normalizer `log Σ_j exp(-β (d_j - d_min))` and entropy of the row.
    fn entropy(&self, sigma: f64) -> (f64, f64) {
        let beta = 0.5 / (sigma * sigma);
        let mut z = 0.0;
        let mut s = 0.0;
        for &d in &self.sorted {
            let a = beta * (d - self.min);
            let e = (-a).exp();
            z += e;
            s += a * e;
        }
        let log_z = z.ln();
        (log_z, log_z + s / z)
    }
}

/// `p_{j|i}` for bandwidth `sigma`, with `p_{i|i} = 0`.
pub fn row_conditionals(ds: &Dataset, i: usize, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidScale(sigma));
    }
    let row = distance_row(ds, i)?;
    let rd = RowDistances::new(&row, i);
    if rd.ties == rd.others() && rd.min == 0.0 {
        return Err(Error::DegenerateRow { row: i });
    }
    Ok(conditionals_from(&row, i, &rd, sigma).0)
}

fn distance_row(ds: &Dataset, i: usize) -> Result<Vec<f64>> {
    if i >= ds.n() {
        return Err(Error::SizeMismatch(format!("row {i} out of range for n = {}", ds.n())));
    }
    let xi = ds.row(i);
    Ok((0..ds.n()).map(|j| sq_dist(xi, ds.row(j))).collect())
}

fn conditionals_from(row: &[f64], i: usize, rd: &RowDistances, sigma: f64) -> (Vec<f64>, f64) {
    let (log_z, h) = rd.entropy(sigma);
    let beta = 0.5 / (sigma * sigma);
    let p = row
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            if j == i {
                0.0
            } else {
                (-beta * (d - rd.min) - log_z).exp()
            }
        })
        .collect();
    (p, h)
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn row_entropy(p_row: &[f64]) -> f64 {
    -p_row
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Bandwidth of row `i` whose conditional entropy equals `target_log_perp`.
pub fn calibrate_sigma(ds: &Dataset, i: usize, target_log_perp: f64, tol: f64) -> Result<f64> {
    let row = distance_row(ds, i)?;
    solve_row(&RowDistances::new(&row, i), i, target_log_perp, tol)
}

fn solve_row(rd: &RowDistances, i: usize, target: f64, tol: f64) -> Result<f64> {
    let hi_band = (rd.others() as f64).ln();
    if rd.ties == rd.others() {
        // entropy is log(n-1) for every bandwidth
        if (hi_band - target).abs() <= tol {
            return Ok(1.0);
        }
        return Err(Error::PerplexityInfeasible {
            row: Some(i),
            target,
            lo: hi_band,
            hi: hi_band,
        });
    }
    let lo_band = (rd.ties as f64).ln();
    if !(target > lo_band && target < hi_band) {
        return Err(Error::PerplexityInfeasible {
            row: Some(i),
            target,
            lo: lo_band,
            hi: hi_band,
        });
    }

    // Entropy is nondecreasing in σ. Start at the row's RMS distance so the
    // whole search scales with the data.
    let h = |s: f64| rd.entropy(s).1 - target;
    let start = rd.mean.sqrt();
    let h0 = h(start);
    if h0.abs() <= tol {
        return Ok(start);
    }
    let (mut lo, mut hi) = (start, start);
    let mut steps = 0;
    if h0 < 0.0 {
        loop {
            hi *= 2.0;
            steps += 1;
            let v = h(hi);
            if v.abs() <= tol {
                return Ok(hi);
            }
            if v > 0.0 {
                break;
            }
            lo = hi;
            if steps >= MAX_BRACKET_STEPS {
                return Err(Error::BracketFailure { row: i, steps });
            }
        }
    } else {
        loop {
            lo *= 0.5;
            steps += 1;
            let v = h(lo);
            if v.abs() <= tol {
                return Ok(lo);
            }
            if v < 0.0 {
                break;
            }
            hi = lo;
            if steps >= MAX_BRACKET_STEPS {
                return Err(Error::BracketFailure { row: i, steps });
            }
        }
    }

    let mut best = (f64::INFINITY, lo);
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        let v = h(mid);
        if v.abs() < best.0 {
            best = (v.abs(), mid);
        }
        if v.abs() <= tol {
            return Ok(mid);
        }
        if v < 0.0 {
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

/// Calibrates every row to `log(ρ n)` and symmetrizes.
pub fn calibrate_all(ds: &Dataset, rho: f64, tol: f64) -> Result<CalibratedAffinities> {
    calibrate_from_distances(&SqDistMatrix::new(ds.points()), rho, tol)
}

pub fn calibrate_from_distances(
    dist: &SqDistMatrix,
    rho: f64,
    tol: f64,
) -> Result<CalibratedAffinities> {
    let n = dist.n();
    if n < 3 {
        return Err(Error::TooFewPoints { n });
    }
    check_perplexity(rho, n)?;
    let target = (rho * n as f64).ln();

    let rows: Vec<Result<(f64, Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = dist.row(i);
            let rd = RowDistances::new(row, i);
            let sigma = solve_row(&rd, i, target, tol)?;
            let (p, h) = conditionals_from(row, i, &rd, sigma);
            Ok((sigma, p, h))
        })
        .collect();

    let mut sigma = Vec::with_capacity(n);
    let mut entropy = Vec::with_capacity(n);
    let mut conditional = Vec::with_capacity(n * n);
    for r in rows {
        let (s, p, h) = r?;
        sigma.push(s);
        entropy.push(h);
        conditional.extend_from_slice(&p);
    }

    let scale = 1.0 / (2.0 * n as f64);
    let mut symmetric = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                // same operand order for (i, j) and (j, i)
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                symmetric[i * n + j] = (conditional[a * n + b] + conditional[b * n + a]) * scale;
            }
        }
    }
    let plogp = plogp(&symmetric);
    Ok(CalibratedAffinities {
        n,
        sigma,
        entropy,
        conditional,
        symmetric,
        target_log_perp: target,
        plogp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PointSet;

    fn line(xs: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x, 0.0]).collect();
        Dataset::with_min_dim(PointSet::from_rows(&rows).unwrap(), 2).unwrap()
    }

    #[test]
    fn middle_point_splits_evenly() {
        let ds = line(&[0.0, 1.0, 2.0]);
        for s in [0.01, 1.0, 37.0] {
            let p = row_conditionals(&ds, 1, s).unwrap();
            assert_eq!(p, vec![0.5, 0.0, 0.5]);
        }
    }

    #[test]
    fn end_point_conditionals_match_direct_evaluation() {
        let ds = line(&[0.0, 1.0, 2.0]);
        let p = row_conditionals(&ds, 0, 1.0).unwrap();
        // frozen from 50-digit evaluation of e^{-1/2}/(e^{-1/2}+e^{-2})
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.817_574_476_193_643_66).abs() < 1e-15);
        assert!((p[2] - 0.182_425_523_806_356_34).abs() < 1e-15);
    }

    #[test]
    fn huge_bandwidth_flattens_the_row() {
        let ds = line(&[0.0, 1.0, 2.0, 5.0, -4.0]);
        let p = row_conditionals(&ds, 0, 1e9).unwrap();
        for v in &p[1..] {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_row_is_degenerate() {
        let ds = line(&[1.0, 1.0, 1.0]);
        assert_eq!(
            row_conditionals(&ds, 0, 1.0).unwrap_err(),
            Error::DegenerateRow { row: 0 }
        );
    }

    #[test]
    fn entropy_examples() {
        assert!((row_entropy(&[0.5, 0.0, 0.5]) - 2f64.ln()).abs() < 1e-15);
        let u = vec![0.1; 10];
        assert!((row_entropy(&u) - 10f64.ln()).abs() < 1e-14);
        let h = row_entropy(&[0.0, 0.817_574_476_193_643_66, 0.182_425_523_806_356_34]);
        assert!((h - 0.475_051_563_692_286_9).abs() < 1e-12, "{h}");
    }

    #[test]
    fn end_point_calibrates_to_perplexity_one_and_a_half() {
        let ds = line(&[0.0, 1.0, 2.0]);
        let s = calibrate_sigma(&ds, 0, 1.5f64.ln(), 1e-12).unwrap();
        // frozen from a 60-digit bisection on H_0(σ) = log 1.5
        assert!((s - 0.909_593_380_709_149_46).abs() < 1e-9, "{s}");
        let h = row_entropy(&row_conditionals(&ds, 0, s).unwrap());
        assert!((h - 1.5f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_row_has_constant_entropy() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert_eq!(calibrate_sigma(&ds, 1, 2f64.ln(), 1e-10).unwrap(), 1.0);
        assert!(matches!(
            calibrate_sigma(&ds, 1, 1.5f64.ln(), 1e-10),
            Err(Error::PerplexityInfeasible { row: Some(1), .. })
        ));
    }

    #[test]
    fn supremum_perplexity_is_infeasible() {
        let ds = line(&[0.0, 1.0, 2.5, 7.0]);
        assert!(matches!(
            calibrate_sigma(&ds, 0, 3f64.ln(), 1e-10),
            Err(Error::PerplexityInfeasible { row: Some(0), .. })
        ));
    }

    #[test]
    fn three_point_symmetrization() {
        // {0, 1, 2} cannot be calibrated at ρn = 1.5: its middle row has constant entropy log 2
        let ds = line(&[0.0, 1.0, 3.0]);
        let aff = calibrate_all(&ds, 0.5, 1e-13).unwrap();
        // 60-digit oracle
        let sig = [1.485_359_770_767_023_9, 0.909_593_380_709_149_46, 1.174_280_005_102_346_2];
        for (got, want) in aff.sigma().iter().zip(sig) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        let want = [
            [0.0, 0.286_574_497_667_511_75, 0.046_758_835_665_821_579],
            [0.286_574_497_667_511_75, 0.0, 1.0 / 6.0],
            [0.046_758_835_665_821_579, 1.0 / 6.0, 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((aff.p(i, j) - want[i][j]).abs() < 1e-11);
                assert_eq!(aff.p(i, j), aff.p(j, i));
            }
        }
        let p10 = aff.conditional_row(0)[1];
        let p01 = aff.conditional_row(1)[0];
        assert!((aff.p(0, 1) - (p10 + p01) / 6.0).abs() < 1e-16);
        let total: f64 = aff.symmetric().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(aff.p(i, i), 0.0);
        }
    }

    #[test]
    fn symmetric_middle_row_blocks_calibration() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            calibrate_all(&ds, 0.5, 1e-10),
            Err(Error::PerplexityInfeasible { row: Some(1), .. })
        ));
    }

    #[test]
    fn duplicates_stay_finite() {
        let ds = line(&[0.0, 0.0, 1.0, 2.5, 4.0, 4.5]);
        let aff = calibrate_all(&ds, 0.5, 1e-10).unwrap();
        assert!(aff.symmetric().iter().all(|v| v.is_finite()));
        assert!((aff.symmetric().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_rho_reports_band() {
        let ds = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            calibrate_all(&ds, 0.99, 1e-10),
            Err(Error::PerplexityInfeasible { row: None, .. })
        ));
    }
}
