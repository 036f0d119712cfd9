//! Points of the unit hypersphere S^{d-1}, angular distance, uniform
//! sampling, metric projection onto subspheres, and the Monte-Carlo check of
//! the Beta law `cos²(d(U, p(U))) ~ Beta(k/2, (d-k)/2)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg;
use crate::rng::standard_normals;
use crate::stats::{self, BetaDistribution};

/// Norm defect allowed on anything claiming to be a unit vector.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Projections whose pre-normalization norm is at or below this are degenerate.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;
/// Orthogonality required of a basis before it may be used for projection.
pub const PROJECTION_ORTHO_TOLERANCE: f64 = 1e-6;

/// A point on S^{d-1}, d >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    /// Normalizes `coords` onto the sphere.
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::contract(format!(
                "unit vectors need dimension >= 2, got {}",
                coords.len()
            )));
        }
        let norm = coords.norm();
        if !norm.is_finite() {
            return Err(Error::contract("cannot normalize a non-finite vector"));
        }
        if norm <= DEGENERATE_TOLERANCE {
            return Err(Error::DegenerateProjection {
                norm,
                tolerance: DEGENERATE_TOLERANCE,
            });
        }
        Ok(Self(coords / norm))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// The i-th standard basis vector of R^d.
    pub fn axis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return Err(Error::contract(format!("axis {i} out of range for d={d}")));
        }
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> Result<f64> {
        check_dims("inner product", self.dim(), other.dim())?;
        Ok(self.0.dot(&other.0))
    }
}

/// Geodesic distance on the sphere, in radians.
///
/// Evaluated as `2·atan2(‖x−y‖, ‖x+y‖)`, which equals `arccos⟨x, y⟩` but keeps
/// full precision for nearly equal or nearly antipodal points and is never
/// outside `[0, π]`.
pub fn angular_distance(x: &UnitVector, y: &UnitVector) -> Result<f64> {
    check_dims("angular distance", x.dim(), y.dim())?;
    let diff = (&x.0 - &y.0).norm();
    let sum = (&x.0 + &y.0).norm();
    Ok(2.0 * diff.atan2(sum))
}

/// `n` independent uniform points of S^{d-1} (normalized Gaussian draws).
pub fn sample_uniform_sphere<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<UnitVector>> {
    if d < 2 || n < 1 {
        return Err(Error::contract(format!(
            "uniform sampling needs d >= 2 and n >= 1, got d={d}, n={n}"
        )));
    }
    Ok((0..n).map(|_| sample_uniform_point(d, rng)).collect())
}

pub(crate) fn sample_uniform_point<R: Rng + ?Sized>(d: usize, rng: &mut R) -> UnitVector {
    loop {
        if let Ok(v) = UnitVector::new(DVector::from_vec(standard_normals(rng, d))) {
            return v;
        }
    }
}

/// Orthonormal rows spanning the subspace that carries a subsphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsphereBasis {
    rows: DMatrix<f64>,
    tolerance: f64,
}

impl SubsphereBasis {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(rows, UNIT_TOLERANCE)
    }

    /// Validates unit rows and pairwise `|⟨r_i, r_j⟩| <= tolerance`.
    pub fn with_tolerance(rows: DMatrix<f64>, tolerance: f64) -> Result<Self> {
        let (k, d) = rows.shape();
        if k == 0 || k > d {
            return Err(Error::contract(format!(
                "subsphere basis needs 1 <= k <= d, got k={k}, d={d}"
            )));
        }
        if d < 2 {
            return Err(Error::contract("subsphere basis needs d >= 2"));
        }
        let norm_defect = linalg::max_row_norm_defect(&rows);
        if norm_defect > UNIT_TOLERANCE.max(tolerance) {
            return Err(Error::contract(format!(
                "basis rows are not unit vectors (defect {norm_defect:e})"
            )));
        }
        let overlap = linalg::max_offdiag_abs(&linalg::gram(&rows));
        if overlap > tolerance {
            return Err(Error::contract(format!(
                "basis rows are not orthogonal (max overlap {overlap:e} > {tolerance:e})"
            )));
        }
        Ok(Self { rows, tolerance })
    }

    /// The first `k` coordinate axes of R^d.
    pub fn axes(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::contract(format!(
                "axis basis needs 1 <= k <= d, got k={k}, d={d}"
            )));
        }
        Self::new(DMatrix::from_fn(
            k,
            d,
            |r, c| if r == c { 1.0 } else { 0.0 },
        ))
    }

    /// A Haar-random orthonormal k-frame.
    pub fn random<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Self> {
        Self::new(linalg::random_orthonormal_rows(rng, k, d)?)
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

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn row(&self, i: usize) -> UnitVector {
        UnitVector(self.rows.row(i).transpose())
    }

    /// Coordinates `B x` of `x` in the basis.
    pub fn coefficients(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("basis coefficients", self.dim(), x.len())?;
        Ok(&self.rows * x)
    }

    /// Squared norm of the orthogonal projection of `x` onto the span.
    pub fn projection_energy(&self, x: &UnitVector) -> Result<f64> {
        Ok(self.coefficients(x.as_vector())?.norm_squared())
    }
}

/// Metric projection onto the subsphere: `normalize(Bᵀ B x)`.
pub fn project_to_subsphere(x: &UnitVector, basis: &SubsphereBasis) -> Result<UnitVector> {
    if basis.tolerance > PROJECTION_ORTHO_TOLERANCE {
        return Err(Error::contract(format!(
            "projection needs a basis orthonormal within {PROJECTION_ORTHO_TOLERANCE:e}, basis was validated at {:e}",
            basis.tolerance
        )));
    }
    let coeffs = basis.coefficients(x.as_vector())?;
    let lifted = basis.rows.tr_mul(&coeffs);
    let norm = lifted.norm();
    if norm <= DEGENERATE_TOLERANCE {
        return Err(Error::DegenerateProjection {
            norm,
            tolerance: DEGENERATE_TOLERANCE,
        });
    }
    Ok(UnitVector(lifted / norm))
}

/// How the validator picks the k-subsphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    /// A fresh Haar-random orthonormal frame.
    Random,
    /// The first k axes (equivalent in law by rotational symmetry).
    Axes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFitReport {
    pub d: usize,
    pub k: usize,
    pub sample_count: usize,
    /// Mean of `cos²(d(U, V))`.
    pub empirical_mean: f64,
    /// `k / d`.
    pub theoretical_mean: f64,
    pub theoretical_variance: f64,
    /// Mean of `cos(d(U, V))`; differs from `sqrt(k/d)` by Jensen's gap.
    pub mean_cosine: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
}

impl BetaFitReport {
    /// `|empirical − k/d|` in units of the standard error `sqrt(Var/n)`.
    pub fn mean_z_score(&self) -> f64 {
        (self.empirical_mean - self.theoretical_mean).abs()
            / (self.theoretical_variance / self.sample_count as f64).sqrt()
    }

    pub const CSV_HEADER: &'static str =
        "d,k,sample_count,empirical_mean,theoretical_mean,theoretical_variance,mean_cosine,sqrt_theoretical_mean,ks_statistic,p_value";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.d,
            self.k,
            self.sample_count,
            self.empirical_mean,
            self.theoretical_mean,
            self.theoretical_variance,
            self.mean_cosine,
            self.theoretical_mean.sqrt(),
            self.ks_statistic,
            self.p_value
        )
    }
}

const ENERGY_CHUNK: usize = 4096;

/// Samples `n` uniform points and returns `cos²(d(U, p(U)))` for each, where
/// `p` projects onto a k-subsphere chosen per `choice`. The squared cosine is
/// read off as the projection energy `‖B U‖²`.
pub fn projection_energies<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    n: usize,
    choice: BasisChoice,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if d < 2 || k == 0 || k >= d {
        return Err(Error::contract(format!(
            "projection law needs d >= 2 and 1 <= k < d, got d={d}, k={k}"
        )));
    }
    if n == 0 {
        return Err(Error::contract("projection law needs n >= 1"));
    }
    let basis = match choice {
        BasisChoice::Random => SubsphereBasis::random(d, k, rng)?,
        BasisChoice::Axes => SubsphereBasis::axes(d, k)?,
    };
    let mut energies = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let chunk = remaining.min(ENERGY_CHUNK);
        let mut points = DMatrix::<f64>::zeros(d, chunk);
        for j in 0..chunk {
            let u = sample_uniform_point(d, rng);
            points.set_column(j, u.as_vector());
        }
        match choice {
            BasisChoice::Random => {
                let coeffs = basis.rows() * &points;
                energies.extend(coeffs.column_iter().map(|c| c.norm_squared()));
            }
            BasisChoice::Axes => {
                energies.extend(points.column_iter().map(|c| c.rows(0, k).norm_squared()));
            }
        }
        remaining -= chunk;
    }
    Ok(energies)
}

/// Summarizes squared-cosine samples against Beta(k/2, (d−k)/2).
pub fn beta_fit_report(d: usize, k: usize, energies: &[f64]) -> Result<BetaFitReport> {
    let law = BetaDistribution::projection_law(d, k)?;
    let mut sorted = energies.to_vec();
    let ks = stats::ks_statistic(&mut sorted, |x| law.cdf(x))?;
    let mean_cosine = stats::mean(&energies.iter().map(|e| e.sqrt()).collect::<Vec<_>>());
    Ok(BetaFitReport {
        d,
        k,
        sample_count: energies.len(),
        empirical_mean: stats::mean(energies).clamp(0.0, 1.0),
        theoretical_mean: law.mean(),
        theoretical_variance: law.variance(),
        mean_cosine,
        ks_statistic: ks,
        p_value: stats::kolmogorov_p_value(ks, energies.len()),
    })
}

/// Monte-Carlo check that random subsphere projections follow the Beta law.
pub fn validate_projection_beta_law<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<BetaFitReport> {
    if k >= d {
        return Err(Error::contract(format!("need k < d, got k={k}, d={d}")));
    }
    if n < 1000 {
        return Err(Error::contract(format!("need n >= 1000 samples, got {n}")));
    }
    let energies = projection_energies(d, k, n, BasisChoice::Random, rng)?;
    beta_fit_report(d, k, &energies)
}
