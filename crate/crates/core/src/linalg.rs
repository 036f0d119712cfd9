//! Dense linear-algebra helpers shared by the geometry, subspace and world
//! modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normals;

/// Rows whose residual norm falls below this fraction of the original norm
/// are treated as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Orthonormalize the rows of `m` with modified Gram–Schmidt followed by a
/// second re-orthogonalization pass.
pub fn orthonormalize_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (k, d) = m.shape();
    if k > d {
        return Err(Error::RankDeficient(format!(
            "cannot orthonormalize {k} rows in dimension {d}"
        )));
    }
    let mut out = m.clone();
    for i in 0..k {
        let original = out.row(i).norm();
        for _pass in 0..2 {
            for j in 0..i {
                let proj = out.row(i).dot(&out.row(j));
                let rj = out.row(j).clone_owned();
                let mut ri = out.row_mut(i);
                ri -= rj * proj;
            }
        }
        let norm = out.row(i).norm();
        if !(norm > DEPENDENCE_TOL * original.max(f64::MIN_POSITIVE)) || !norm.is_finite() {
            return Err(Error::RankDeficient(format!(
                "row {i} is linearly dependent on the previous rows"
            )));
        }
        out.row_mut(i).scale_mut(1.0 / norm);
    }
    Ok(out)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &standard_normals(rng, rows * cols))
}

/// `k` orthonormal rows in R^d drawn from the Haar measure (Gram–Schmidt on
/// Gaussian draws). Redraws on the measure-zero dependent case.
pub fn random_orthonormal_rows<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    d: usize,
) -> Result<DMatrix<f64>> {
    if k == 0 || k > d {
        return Err(Error::contract(format!(
            "random frame needs 1 <= k <= d, got k={k}, d={d}"
        )));
    }
    loop {
        match orthonormalize_rows(&gaussian_matrix(rng, k, d)) {
            Ok(frame) => return Ok(frame),
            Err(Error::RankDeficient(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<DMatrix<f64>> {
    random_orthonormal_rows(rng, d, d)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted in
/// nonincreasing order; eigenvectors are the matching columns.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// 2-norm condition number of a symmetric matrix from its spectrum.
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn gram(rows: &DMatrix<f64>) -> DMatrix<f64> {
    rows * rows.transpose()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Largest `|m_ij|` over off-diagonal entries.
pub fn max_offdiag_abs(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

/// Largest `|‖row‖ - 1|`.
pub fn max_row_norm_defect(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| (r.norm() - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn normalize_rows_mut(m: &mut DMatrix<f64>) -> Result<()> {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateProjection {
                norm: n,
                tolerance: 0.0,
            });
        }
        row.scale_mut(1.0 / n);
    }
    Ok(())
}

/// Largest principal angle (radians) between the row spaces of two matrices
/// with orthonormal rows and the same row count.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let cross = a * b.transpose();
    let svd = cross.svd(false, false);
    let smallest = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0);
    smallest.acos()
}

pub fn to_dvector(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
