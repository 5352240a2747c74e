//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and eigenvector columns permuted to match.
pub fn sym_eigen_desc(mat: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = mat.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vecs = DMatrix::zeros(eig.eigenvectors.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Clamp eigenvalues below `tol_factor * max` to exactly zero. Negative
/// round-off leakage is removed the same way.
pub fn clamp_eigenvalues(vals: &mut DVector<f64>, tol_factor: f64) {
    let max = vals.iter().cloned().fold(0.0_f64, f64::max);
    let thresh = tol_factor * max;
    for v in vals.iter_mut() {
        if *v < thresh {
            *v = 0.0;
        }
    }
}

/// Median of the pairwise Euclidean distances between the rows of `x`.
///
/// Used as the default Gaussian kernel bandwidth. Memory is O(n^2).
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                let d = x[(i, k)] - x[(j, k)];
                s += d * d;
            }
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    if dists.len() % 2 == 1 {
        *dists
            .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap())
            .1
    } else {
        let hi = *dists
            .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap())
            .1;
        let lo = dists[..mid]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Log-spaced grid of `points` values on `[min, max]` (inclusive endpoints).
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    assert!(min > 0.0 && max >= min && points >= 1);
    if points == 1 {
        return vec![min];
    }
    let (lo, hi) = (min.ln(), max.ln());
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}
