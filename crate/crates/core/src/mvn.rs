//! Multivariate normal draws with a sparse covariance, via a sparse
//! Cholesky factor under a minimum-degree ordering.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::network::FriendshipNetwork;

/// Lower-triangular factor `P A Pᵀ = L Lᵀ`, stored by column.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    /// `perm[j]` is the original index eliminated in position `j`.
    perm: Vec<usize>,
    col_start: Vec<usize>,
    /// Row positions (in permuted order); the diagonal comes first.
    rows: Vec<usize>,
    values: Vec<f64>,
}

/// Greedy minimum-degree elimination. Returns the order and, for each
/// eliminated vertex, its neighbors at elimination time (the column
/// structure of `L`).
fn minimum_degree(n: usize, pattern: Vec<Vec<usize>>) -> (Vec<usize>, Vec<Vec<usize>>) {
    use std::cmp::Reverse;
    let mut graph = pattern;
    let mut eliminated = vec![false; n];
    let mut heap: std::collections::BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((graph[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    let mut structure = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != graph[v].len() {
            continue;
        }
        eliminated[v] = true;
        let clique = std::mem::take(&mut graph[v]);
        // Each clique member loses v and gains the rest of the clique; both
        // lists are sorted, so a linear merge does it.
        for &u in &clique {
            let adj = &graph[u];
            merged.clear();
            let (mut a, mut b) = (0, 0);
            while a < adj.len() || b < clique.len() {
                let next = match (adj.get(a), clique.get(b)) {
                    (Some(&x), Some(&y)) if x == y => {
                        a += 1;
                        b += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        a += 1;
                        x
                    }
                    (Some(_), Some(&y)) | (None, Some(&y)) => {
                        b += 1;
                        y
                    }
                    (Some(&x), None) => {
                        a += 1;
                        x
                    }
                    (None, None) => unreachable!(),
                };
                if next != v && next != u {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut graph[u], &mut merged);
            heap.push(Reverse((graph[u].len(), u)));
        }
        order.push(v);
        structure.push(clique);
    }
    (order, structure)
}

impl SparseCholesky {
    /// Factors the symmetric matrix with diagonal `diag` and strictly
    /// off-diagonal entries `off` (each unordered pair listed once).
    pub fn factor(diag: &[f64], off: &[(usize, usize, f64)]) -> Result<Self> {
        let n = diag.len();
        let mut pattern = vec![Vec::new(); n];
        let mut entries = vec![Vec::new(); n];
        for &(i, j, v) in off {
            if i >= n || j >= n || i == j {
                return invalid(format!("off-diagonal entry ({i}, {j}) outside a {n}x{n} matrix"));
            }
            pattern[i].push(j);
            pattern[j].push(i);
            entries[i].push((j, v));
            entries[j].push((i, v));
        }
        for p in &mut pattern {
            p.sort_unstable();
            p.dedup();
        }
        let (perm, structure) = minimum_degree(n, pattern);
        let mut position = vec![0; n];
        for (j, &v) in perm.iter().enumerate() {
            position[v] = j;
        }

        let mut col_start = vec![0];
        let mut rows = Vec::new();
        for (j, clique) in structure.iter().enumerate() {
            rows.push(j);
            let mut below: Vec<usize> = clique.iter().map(|&u| position[u]).collect();
            below.sort_unstable();
            rows.extend(below);
            col_start.push(rows.len());
        }
        // Columns k < j with a nonzero in row j. Rows within a column are
        // ascending, so `next[k]` always points at row j when k is visited.
        let mut row_users = vec![Vec::new(); n];
        for k in 0..n {
            for &r in &rows[col_start[k] + 1..col_start[k + 1]] {
                row_users[r].push(k);
            }
        }
        let mut next: Vec<usize> = col_start[..n].iter().map(|&c| c + 1).collect();

        let mut values = vec![0.0; rows.len()];
        let mut work = vec![0.0; n];
        for j in 0..n {
            let orig = perm[j];
            work[j] = diag[orig];
            for &(u, v) in &entries[orig] {
                if position[u] > j {
                    work[position[u]] += v;
                }
            }
            for &k in &row_users[j] {
                let at = next[k];
                debug_assert_eq!(rows[at], j);
                let ljk = values[at];
                for idx in at..col_start[k + 1] {
                    work[rows[idx]] -= values[idx] * ljk;
                }
                next[k] += 1;
            }
            let pivot = work[j];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "pivot {pivot:.6e} at index {orig} (elimination step {j} of {n})"
                )));
            }
            let d = pivot.sqrt();
            for idx in col_start[j]..col_start[j + 1] {
                let r = rows[idx];
                values[idx] = if r == j { d } else { work[r] / d };
                work[r] = 0.0;
            }
        }
        Ok(Self { perm, col_start, rows, values })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Nonzeros stored in the factor, diagonal included.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `mean + Pᵀ L z` for standard normal `z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, mean: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            for idx in self.col_start[j]..self.col_start[j + 1] {
                y[self.rows[idx]] += self.values[idx] * z;
            }
        }
        let mut x = vec![0.0; n];
        for (j, &orig) in self.perm.iter().enumerate() {
            x[orig] = mean[orig] + y[j];
        }
        x
    }

    /// Dense `P L Lᵀ Pᵀ`, for checking small factors.
    pub fn reconstruct(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut l = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            for idx in self.col_start[j]..self.col_start[j + 1] {
                l[(self.perm[self.rows[idx]], self.perm[j])] = self.values[idx];
            }
        }
        // Rows and columns are both in original labels, so L here is P L Pᵀ.
        &l * l.transpose()
    }
}

/// Sampler for `N(mean·1, Σ)` where `Σ` has `variance` on the diagonal,
/// `covariance` on network-adjacent pairs and zero elsewhere.
#[derive(Debug, Clone)]
pub struct AdjacencyMvn {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
    factor: SparseCholesky,
}

impl AdjacencyMvn {
    pub fn new(net: &FriendshipNetwork, mean: f64, variance: f64, covariance: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() || !covariance.is_finite() {
            return invalid(format!(
                "need finite mean and covariance and positive variance, got ({mean}, {variance}, {covariance})"
            ));
        }
        let diag = vec![variance; net.n_units()];
        let off: Vec<(usize, usize, f64)> = net.edges().map(|(i, j)| (i, j, covariance)).collect();
        let factor = SparseCholesky::factor(&diag, &off).map_err(|e| match e {
            Error::NotPositiveDefinite(msg) => {
                Error::NotPositiveDefinite(format!("{msg}; {}", smallest_eigenvalue_note(net, variance, covariance)))
            }
            other => other,
        })?;
        Ok(Self { mean, variance, covariance, factor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mean = vec![self.mean; self.factor.dim()];
        self.factor.sample(rng, &mean)
    }
}

/// Smallest eigenvalue of the implied covariance: exact for small networks,
/// the Gershgorin bound otherwise.
fn smallest_eigenvalue_note(net: &FriendshipNetwork, variance: f64, covariance: f64) -> String {
    let n = net.n_units();
    if n <= 1500 {
        let mut m = nalgebra::DMatrix::from_diagonal_element(n, n, variance);
        for (i, j) in net.edges() {
            m[(i, j)] = covariance;
            m[(j, i)] = covariance;
        }
        format!("smallest eigenvalue of the implied covariance is {:.6e}", m.symmetric_eigenvalues().min())
    } else {
        format!(
            "Gershgorin lower bound on the smallest eigenvalue is {:.6e} (max degree {})",
            variance - net.max_degree() as f64 * covariance.abs(),
            net.max_degree()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn factor_matches_dense_matrix() {
        let net = FriendshipNetwork::from_edges(7, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (2, 6), (1, 6)]).unwrap();
        let diag: Vec<f64> = (0..7).map(|i| 3.0 + i as f64 * 0.1).collect();
        let off: Vec<_> = net.edges().map(|(i, j)| (i, j, 0.3 + 0.05 * (i + j) as f64)).collect();
        let f = SparseCholesky::factor(&diag, &off).unwrap();
        let mut dense = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        for &(i, j, v) in &off {
            dense[(i, j)] = v;
            dense[(j, i)] = v;
        }
        assert!((f.reconstruct() - dense).amax() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected_with_eigenvalue() {
        let net = FriendshipNetwork::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let err = AdjacencyMvn::new(&net, 0.0, 1.0, -0.9).unwrap_err();
        match err {
            Error::NotPositiveDefinite(msg) => assert!(msg.contains("smallest eigenvalue"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edgeless_draws_are_independent_normals() {
        let net = FriendshipNetwork::edgeless(4);
        let mvn = AdjacencyMvn::new(&net, 0.7, 3.5, 0.2).unwrap();
        let mut rng = stream_rng(1, 0);
        let m = 20_000;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..m {
            for (i, x) in mvn.sample(&mut rng).into_iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        for i in 0..4 {
            let mean = sum[i] / m as f64;
            let var = sq[i] / m as f64 - mean * mean;
            assert!((mean - 0.7).abs() < 4.0 * (3.5f64 / m as f64).sqrt());
            assert!((var - 3.5).abs() < 4.0 * 3.5 * (2.0 / m as f64).sqrt());
        }
    }
}
