//! Student-t output kernel, the KL loss and its gradient.
//!
//! One pass over ordered pairs collects everything the loss, the gradient
//! and the stationarity residual need:
//!
//! ```text
//! Z   = Σ_{i≠j} w_ij,                 w_ij = (1 + |Y_i - Y_j|²)^{-1}
//! L   = Σ p log p + Σ p_ij log(1 + |Y_i - Y_j|²) + log Z
//! A_i = Σ_j p_ij w_ij (Y_i - Y_j),   B_i = Σ_j w_ij² (Y_i - Y_j)
//! ∂L/∂Y_i = 4 (A_i - B_i / Z)
//! ```
//!
//! Rows are processed independently and reduced in index order, so results
//! do not depend on the number of threads.

use rayon::prelude::*;

use crate::affinities::CalibratedAffinities;
use crate::error::{Error, Result};
use crate::types::Embedding;

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// `n x s`, row-major.
    pub grad: Vec<f64>,
    pub q_normalizer: f64,
}

/// Raw sums of one pass; see the module docs.
#[derive(Clone, Debug)]
pub(crate) struct PairPass {
    pub plog: f64,
    pub z: f64,
    pub attract: Vec<f64>,
    pub repulse: Vec<f64>,
}

impl PairPass {
    pub fn loss(&self, plogp: f64, psum: f64) -> f64 {
        plogp + self.plog + psum * self.z.ln()
    }

    /// Unit-factor residual `A - B/Z`, written into `out`.
    pub fn residual_into(&self, out: &mut [f64]) {
        let inv = 1.0 / self.z;
        for ((o, a), b) in out.iter_mut().zip(&self.attract).zip(&self.repulse) {
            *o = a - b * inv;
        }
    }

    /// Gradient `4 (α A - B/Z)` for exaggeration factor `α`.
    pub fn gradient_into(&self, exaggeration: f64, out: &mut [f64]) {
        let inv = 1.0 / self.z;
        for ((o, a), b) in out.iter_mut().zip(&self.attract).zip(&self.repulse) {
            *o = 4.0 * (exaggeration * a - b * inv);
        }
    }
}

struct RowSums<const S: usize> {
    plog: f64,
    z: f64,
    a: [f64; S],
    b: [f64; S],
}

#[inline(always)]
fn row_fixed<const S: usize>(p_row: &[f64], y: &[f64], i: usize) -> RowSums<S> {
    let mut yi = [0.0; S];
    yi.copy_from_slice(&y[i * S..(i + 1) * S]);
    let mut out = RowSums {
        plog: 0.0,
        z: 0.0,
        a: [0.0; S],
        b: [0.0; S],
    };
    for (j, (yj, &pij)) in y.chunks_exact(S).zip(p_row).enumerate() {
        if j == i {
            continue;
        }
        let mut diff = [0.0; S];
        let mut d2 = 0.0;
        for k in 0..S {
            diff[k] = yi[k] - yj[k];
            d2 += diff[k] * diff[k];
        }
        let t = 1.0 + d2;
        let w = 1.0 / t;
        out.z += w;
        if pij > 0.0 {
            out.plog += pij * t.ln();
        }
        let pw = pij * w;
        let ww = w * w;
        for k in 0..S {
            out.a[k] += pw * diff[k];
            out.b[k] += ww * diff[k];
        }
    }
    out
}

fn pass_fixed<const S: usize>(p: &[f64], y: &[f64], n: usize) -> PairPass {
    let rows: Vec<RowSums<S>> = (0..n)
        .into_par_iter()
        .with_min_len(16)
        .map(|i| row_fixed::<S>(&p[i * n..(i + 1) * n], y, i))
        .collect();
    let mut pass = PairPass {
        plog: 0.0,
        z: 0.0,
        attract: Vec::with_capacity(n * S),
        repulse: Vec::with_capacity(n * S),
    };
    for r in rows {
        pass.plog += r.plog;
        pass.z += r.z;
        pass.attract.extend_from_slice(&r.a);
        pass.repulse.extend_from_slice(&r.b);
    }
    pass
}

fn pass_dyn(p: &[f64], y: &[f64], n: usize, s: usize) -> PairPass {
    let rows: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &y[i * s..(i + 1) * s];
            let (mut plog, mut z) = (0.0, 0.0);
            let mut a = vec![0.0; s];
            let mut b = vec![0.0; s];
            let mut diff = vec![0.0; s];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let yj = &y[j * s..(j + 1) * s];
                let mut d2 = 0.0;
                for k in 0..s {
                    diff[k] = yi[k] - yj[k];
                    d2 += diff[k] * diff[k];
                }
                let t = 1.0 + d2;
                let w = 1.0 / t;
                let pij = p[i * n + j];
                z += w;
                if pij > 0.0 {
                    plog += pij * t.ln();
                }
                for k in 0..s {
                    a[k] += pij * w * diff[k];
                    b[k] += w * w * diff[k];
                }
            }
            (plog, z, a, b)
        })
        .collect();
    let mut pass = PairPass {
        plog: 0.0,
        z: 0.0,
        attract: Vec::with_capacity(n * s),
        repulse: Vec::with_capacity(n * s),
    };
    for (plog, z, a, b) in rows {
        pass.plog += plog;
        pass.z += z;
        pass.attract.extend_from_slice(&a);
        pass.repulse.extend_from_slice(&b);
    }
    pass
}

/// One pass over all ordered pairs of a flat `n x s` embedding.
pub(crate) fn pair_pass(p: &[f64], y: &[f64], n: usize, s: usize) -> PairPass {
    match s {
        1 => pass_fixed::<1>(p, y, n),
        2 => pass_fixed::<2>(p, y, n),
        3 => pass_fixed::<3>(p, y, n),
        _ => pass_dyn(p, y, n, s),
    }
}

fn check_sizes(p: &CalibratedAffinities, emb: &Embedding) -> Result<()> {
    if p.n() != emb.n() {
        return Err(Error::SizeMismatch(format!(
            "affinities for {} points, embedding has {}",
            p.n(),
            emb.n()
        )));
    }
    Ok(())
}

/// Normalized Student-t kernel, row-major `n x n` with zero diagonal.
pub fn q_matrix(emb: &Embedding) -> Vec<f64> {
    let n = emb.n();
    let mut q = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2: f64 = emb
                    .row(i)
                    .iter()
                    .zip(emb.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let w = 1.0 / (1.0 + d2);
                q[i * n + j] = w;
                z += w;
            }
        }
    }
    q.iter_mut().for_each(|v| *v /= z);
    q
}

/// `Σ_{i≠j} p_ij log(p_ij / q_ij)`.
pub fn loss(p: &CalibratedAffinities, emb: &Embedding) -> Result<f64> {
    Ok(evaluate(p, emb)?.loss)
}

/// Exact gradient of the loss in `Y`, `n x s` row-major.
pub fn loss_gradient(p: &CalibratedAffinities, emb: &Embedding) -> Result<Vec<f64>> {
    Ok(evaluate(p, emb)?.grad)
}

pub fn evaluate(p: &CalibratedAffinities, emb: &Embedding) -> Result<LossReport> {
    check_sizes(p, emb)?;
    let pass = pair_pass(p.symmetric(), emb.as_flat(), emb.n(), emb.dim());
    let psum: f64 = p.symmetric().iter().sum();
    let mut grad = vec![0.0; emb.n() * emb.dim()];
    pass.gradient_into(1.0, &mut grad);
    Ok(LossReport {
        loss: pass.loss(p.plogp(), psum),
        grad,
        q_normalizer: pass.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[[f64; 2]]) -> Embedding {
        Embedding::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_points_split_evenly() {
        let q = q_matrix(&emb(&[[0.3, -1.0], [4.0, 2.0]]));
        assert_eq!(q, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn equilateral_triangle_is_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let q = q_matrix(&emb(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.0 / 6.0 };
                assert!((q[i * 3 + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn collinear_far_pair() {
        let q = q_matrix(&emb(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]));
        // (1/5) / (2·1/2 + 2·1/2 + 2·1/5)
        assert!((q[2] - 1.0 / 12.0).abs() < 1e-16);
        assert!((q[1] - 0.208_333_333_333_333_33).abs() < 1e-16);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_p_on_equilateral_triangle_has_zero_loss() {
        let n = 3;
        let mut p = vec![1.0 / 6.0; 9];
        for i in 0..n {
            p[i * n + i] = 0.0;
        }
        let p = CalibratedAffinities::from_joint(p, n).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let e = emb(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        let r = evaluate(&p, &e).unwrap();
        assert!(r.loss.abs() < 1e-15);
        assert!(r.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn p_equal_to_q_gives_zero_loss_and_gradient() {
        let e = emb(&[[0.0, 0.0], [1.0, 0.5], [-2.0, 1.0], [0.3, -0.7]]);
        let q = q_matrix(&e);
        let mut sym = q.clone();
        for i in 0..4 {
            for j in 0..i {
                let v = 0.5 * (q[i * 4 + j] + q[j * 4 + i]);
                sym[i * 4 + j] = v;
                sym[j * 4 + i] = v;
            }
        }
        let total: f64 = sym.iter().sum();
        sym.iter_mut().for_each(|v| *v /= total);
        let p = CalibratedAffinities::from_joint(sym, 4).unwrap();
        let r = evaluate(&p, &e).unwrap();
        assert!(r.loss.abs() < 1e-14, "{}", r.loss);
        assert!(r.grad.iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn three_point_loss_matches_brute_force() {
        use crate::affinities::calibrate_all;
        use crate::types::{Dataset, PointSet};
        let ds = Dataset::from_samples(
            PointSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let p = calibrate_all(&ds, 0.5, 1e-13).unwrap();
        let e = emb(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let l = loss(&p, &e).unwrap();
        // nine-term sum at 60 digits
        assert!((l - 0.054_333_872_494_615_528).abs() < 1e-11, "{l}");
    }

    #[test]
    fn translation_leaves_gradient_unchanged() {
        let n = 5;
        let mut sym = vec![0.0; 25];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sym[i * n + j] = 1.0 + ((i + j) % 3) as f64;
                    total += sym[i * n + j];
                }
            }
        }
        sym.iter_mut().for_each(|v| *v /= total);
        let p = CalibratedAffinities::from_joint(sym, n).unwrap();
        let e = emb(&[[0.0, 0.0], [1.0, 0.5], [-2.0, 1.0], [0.3, -0.7], [0.9, 0.9]]);
        let g0 = loss_gradient(&p, &e).unwrap();
        let g1 = loss_gradient(&p, &e.translated(&[10.0, -3.0])).unwrap();
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-13);
        }
        let sums = (0..2).map(|k| (0..n).map(|i| g0[i * 2 + k]).sum::<f64>());
        for s in sums {
            assert!(s.abs() < 1e-8);
        }
    }
}
