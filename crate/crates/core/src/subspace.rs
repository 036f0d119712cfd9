//! PCA over feature sets, pseudo-inverse subsphere projection, projection of
//! score vectors, and the correction matrix that maps raw query scores to
//! pseudo-inverse coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg;
use crate::sphere::{UnitVector, DEGENERATE_TOLERANCE};

/// Row-norm defect tolerated in a feature matrix.
pub const FEATURE_UNIT_TOLERANCE: f64 = 1e-6;
/// Largest condition number accepted for `A Aᵀ` or a regularized `R`.
pub const CONDITION_CAP: f64 = 1e8;
/// An eigenvalue at or below this fraction of the top one counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// `k × d` matrix whose rows are the (unit) features of the basis images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        let (k, d) = rows.shape();
        if k == 0 || k > d {
            return Err(Error::contract(format!(
                "feature matrix needs 1 <= k <= d, got {k} x {d}"
            )));
        }
        let defect = linalg::max_row_norm_defect(&rows);
        if defect > FEATURE_UNIT_TOLERANCE {
            return Err(Error::contract(format!(
                "feature rows must be unit vectors (defect {defect:e})"
            )));
        }
        Ok(Self { rows })
    }

    pub fn from_unit_vectors(rows: &[UnitVector]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::contract("feature matrix needs at least one row"))?;
        let d = first.dim();
        let mut m = DMatrix::zeros(rows.len(), d);
        for (i, r) in rows.iter().enumerate() {
            check_dims("feature matrix row", d, r.dim())?;
            m.set_row(i, &r.as_vector().transpose());
        }
        Self::new(m)
    }

    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn gram(&self) -> DMatrix<f64> {
        linalg::gram(&self.rows)
    }

    /// `s = A x`, the cosines between `x` and every row.
    pub fn scores(&self, x: &UnitVector) -> Result<DVector<f64>> {
        check_dims("feature scores", self.dim(), x.dim())?;
        Ok(&self.rows * x.as_vector())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `k × d`, rows are unit principal directions in nonincreasing variance order.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub mean_vector: DVector<f64>,
    pub centered: bool,
}

impl PcaResult {
    pub fn component(&self, i: usize) -> Result<UnitVector> {
        UnitVector::new(self.components.row(i).transpose())
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }
}

/// Top-`k` principal components of a feature cloud.
///
/// With `centered` the covariance of the mean-removed data is used, otherwise
/// the raw second-moment matrix. Each component is flipped so that its first
/// coordinate that is not negligible is positive.
pub fn run_pca(features: &[UnitVector], k: usize, centered: bool) -> Result<PcaResult> {
    let n = features.len();
    if k == 0 {
        return Err(Error::contract("PCA needs k >= 1"));
    }
    if n <= k {
        return Err(Error::RankDeficient(format!(
            "PCA with k={k} needs more than {k} samples, got {n}"
        )));
    }
    let d = features[0].dim();
    if k > d {
        return Err(Error::contract(format!(
            "PCA needs k <= d, got k={k}, d={d}"
        )));
    }
    let mut data = DMatrix::zeros(n, d);
    for (i, f) in features.iter().enumerate() {
        check_dims("PCA sample", d, f.dim())?;
        data.set_row(i, &f.as_vector().transpose());
    }
    let mean_vector: DVector<f64> = data.row_mean().transpose();
    let scale = if centered {
        for mut row in data.row_iter_mut() {
            row -= mean_vector.transpose();
        }
        1.0 / (n - 1) as f64
    } else {
        1.0 / n as f64
    };
    let covariance = linalg::symmetrize(&(data.tr_mul(&data) * scale));
    let (values, vectors) = linalg::symmetric_eigen_desc(&covariance);
    let top = values[0];
    if !(top > 0.0) || values[k - 1] <= RANK_TOLERANCE * top {
        return Err(Error::RankDeficient(format!(
            "feature cloud has fewer than {k} significant directions (eigenvalue {} vs top {top})",
            values[k - 1]
        )));
    }
    let mut components = DMatrix::zeros(k, d);
    for c in 0..k {
        let mut v = vectors.column(c).clone_owned();
        v /= v.norm();
        let max_abs = v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-9 * max_abs) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        components.set_row(c, &v.transpose());
    }
    Ok(PcaResult {
        components,
        explained_variance: values[..k].to_vec(),
        mean_vector,
        centered,
    })
}

fn normalize_or_degenerate(v: DVector<f64>) -> Result<UnitVector> {
    let norm = v.norm();
    if norm <= DEGENERATE_TOLERANCE || !norm.is_finite() {
        return Err(Error::DegenerateProjection {
            norm,
            tolerance: DEGENERATE_TOLERANCE,
        });
    }
    UnitVector::new(v)
}

/// `normalize(A† A x)` with `A† = Aᵀ (A Aᵀ)⁻¹`.
pub fn project_pseudo_inverse(x: &UnitVector, a: &FeatureMatrix) -> Result<UnitVector> {
    let gram = a.gram();
    let condition = linalg::symmetric_condition(&gram);
    if !(condition <= CONDITION_CAP) {
        return Err(Error::RankDeficient(format!(
            "A Aᵀ has condition number {condition:e} above {CONDITION_CAP:e}"
        )));
    }
    let scores = a.scores(x)?;
    let coeffs = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("A Aᵀ is not positive definite".into()))?
        .solve(&scores);
    normalize_or_degenerate(a.rows().tr_mul(&coeffs))
}

/// `normalize(Aᵀ s)`: the subsphere point whose row weights are `s`.
pub fn score_projection(s: &DVector<f64>, a: &FeatureMatrix) -> Result<UnitVector> {
    check_dims("score vector", a.k(), s.len())?;
    normalize_or_degenerate(a.rows().tr_mul(s))
}

/// The correction matrix `R` (pairwise feature cosines of the basis images)
/// together with its regularized inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionMatrix {
    #[serde(with = "crate::io::serde_matrix")]
    pub r: DMatrix<f64>,
    #[serde(with = "crate::io::serde_matrix")]
    pub r_inverse: DMatrix<f64>,
    /// Ridge `λ` actually used in `(R + λI)⁻¹`.
    pub ridge: f64,
    /// Condition number of `R + λI`.
    pub condition_estimate: f64,
}

impl CorrectionMatrix {
    pub fn apply_inverse(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("correction", self.r.nrows(), s.len())?;
        Ok(&self.r_inverse * s)
    }
}

/// Tolerance on `|R_ij − R_ji|` accepted before averaging.
pub const CORRECTION_SYMMETRY_TOLERANCE: f64 = 1e-4;
/// Tolerance on `|R_ii − 1|`.
pub const CORRECTION_DIAGONAL_TOLERANCE: f64 = 1e-3;

/// Symmetrizes the pairwise cosine matrix and inverts `R + λI`, where the
/// ridge climbs from `initial_ridge` through 1e-8, 1e-7, … until the
/// condition number is at most [`CONDITION_CAP`].
pub fn build_correction_matrix(
    pairwise_cosines: &DMatrix<f64>,
    initial_ridge: f64,
) -> Result<CorrectionMatrix> {
    let (rows, cols) = pairwise_cosines.shape();
    if rows != cols || rows == 0 {
        return Err(Error::contract(format!(
            "correction matrix input must be square and non-empty, got {rows} x {cols}"
        )));
    }
    if !(initial_ridge >= 0.0) {
        return Err(Error::contract("ridge must be non-negative"));
    }
    let asym = linalg::max_asymmetry(pairwise_cosines);
    if asym > CORRECTION_SYMMETRY_TOLERANCE {
        return Err(Error::contract(format!(
            "pairwise cosine matrix is not symmetric (max gap {asym:e})"
        )));
    }
    let diag_defect = pairwise_cosines
        .diagonal()
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    if diag_defect > CORRECTION_DIAGONAL_TOLERANCE {
        return Err(Error::contract(format!(
            "pairwise cosine diagonal deviates from 1 by {diag_defect:e}"
        )));
    }
    let r = linalg::symmetrize(pairwise_cosines);
    let identity = DMatrix::<f64>::identity(rows, rows);
    let ladder = std::iter::once(initial_ridge).chain(
        (-8..=8)
            .map(|e| 10f64.powi(e))
            .filter(move |&l| l > initial_ridge),
    );
    for ridge in ladder {
        let regularized = &r + &identity * ridge;
        let condition = linalg::symmetric_condition(&regularized);
        if condition <= CONDITION_CAP {
            if let Some(r_inverse) = regularized.clone().try_inverse() {
                return Ok(CorrectionMatrix {
                    r,
                    r_inverse,
                    ridge,
                    condition_estimate: condition,
                });
            }
        }
    }
    Err(Error::RankDeficient(
        "no ridge in the ladder brought the correction matrix under the condition cap".into(),
    ))
}
