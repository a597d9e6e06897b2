use rayon::prelude::*;

use crate::types::PointSet;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full `n x n` matrix of squared Euclidean distances, exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SqDistMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SqDistMatrix {
    pub fn new(points: &PointSet) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            let xi = points.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                // compute with the lower index first so (i, j) and (j, i) agree bitwise
                *slot = if i <= j {
                    sq_dist(xi, points.row(j))
                } else {
                    sq_dist(points.row(j), xi)
                };
            }
        });
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}
