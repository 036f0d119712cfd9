//! Orthogonal face sets: `k` images whose features are mutually orthogonal,
//! found by Adam on the inverse model's input sphere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg;
use crate::rng;
use crate::sphere::{sample_uniform_point, UnitVector};
use crate::world::{embedding_noise, invert, EmbeddingModel, SyntheticWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfsConfig {
    pub k: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::convergence_tol")]
    pub convergence_tol: f64,
    #[serde(default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn max_iters() -> usize {
        100
    }
    pub fn convergence_tol() -> f64 {
        1e-3
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl OfsConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            learning_rate: defaults::learning_rate(),
            max_iters: defaults::max_iters(),
            convergence_tol: defaults::convergence_tol(),
            adam_beta1: defaults::beta1(),
            adam_beta2: defaults::beta2(),
            adam_eps: defaults::eps(),
            seed,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 || self.k > d {
            return Err(Error::contract(format!(
                "OFS needs 1 <= k <= d, got k={}, d={d}",
                self.k
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("OFS learning rate must be positive"));
        }
        let betas_ok =
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if !betas_ok || !(self.adam_eps > 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::contract("OFS Adam constants out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfsResult {
    pub images: Vec<DVector<f64>>,
    /// Final input-sphere points, one per row.
    pub latents: DMatrix<f64>,
    pub final_loss: f64,
    /// Number of Adam updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub gram_offdiag_max: f64,
    /// Loss before the first update and after every update.
    pub loss_trace: Vec<f64>,
}

impl OfsResult {
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// `L(Z) = ‖Ŵ Ŵᵀ − I‖_F` with `Ŵ = normalize_rows(J Z + η N)`, where
/// `J = q Gᵀ G qᵀ` is the linear part of `embed ∘ invert`.
pub struct OfsObjective<'a> {
    world: &'a SyntheticWorld,
    model: &'a EmbeddingModel,
    j: DMatrix<f64>,
}

impl<'a> OfsObjective<'a> {
    pub fn new(world: &'a SyntheticWorld, model: &'a EmbeddingModel) -> Result<Self> {
        check_dims("OFS model", world.d(), model.dim())?;
        let gtg = world.generator_map.tr_mul(&world.generator_map);
        let j = &model.q * gtg * model.q.transpose();
        Ok(Self { world, model, j })
    }

    /// Per-row embedding perturbations of the images `invert(z_i)` (zero at `η = 0`).
    pub fn noise_at(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (k, d) = z.shape();
        let mut noise = DMatrix::zeros(k, d);
        if self.model.eta == 0.0 {
            return Ok(noise);
        }
        for i in 0..k {
            let v = UnitVector::new(z.row(i).transpose())?;
            let image = invert(self.model, self.world, &v)?;
            noise.set_row(
                i,
                &(embedding_noise(self.model, &image) * self.model.eta).transpose(),
            );
        }
        Ok(noise)
    }

    /// Loss and its gradient in `Z` with the perturbation held fixed.
    pub fn loss_and_gradient(
        &self,
        z: &DMatrix<f64>,
        noise: &DMatrix<f64>,
    ) -> Result<(f64, DMatrix<f64>)> {
        let k = z.nrows();
        let u = z * self.j.transpose() + noise;
        let norms: Vec<f64> = u.row_iter().map(|r| r.norm()).collect();
        if norms.iter().any(|&n| !(n > 0.0)) {
            return Err(Error::DegenerateProjection {
                norm: 0.0,
                tolerance: 0.0,
            });
        }
        let mut w = u.clone();
        for (i, n) in norms.iter().enumerate() {
            w.row_mut(i).scale_mut(1.0 / n);
        }
        let m = &w * w.transpose() - DMatrix::<f64>::identity(k, k);
        let loss = m.norm();
        if loss == 0.0 {
            return Ok((0.0, DMatrix::zeros(k, z.ncols())));
        }
        let grad_w = (&m * &w) * (2.0 / loss);
        let mut grad_u = grad_w.clone();
        for (i, n) in norms.iter().enumerate() {
            let wi = w.row(i);
            let gi = grad_w.row(i);
            let radial = gi.dot(&wi);
            grad_u.set_row(i, &((gi - wi * radial) / *n));
        }
        Ok((loss, grad_u * &self.j))
    }

    /// Loss of the actual embeddings (perturbation recomputed from `Z`).
    pub fn loss(&self, z: &DMatrix<f64>) -> Result<f64> {
        let noise = self.noise_at(z)?;
        Ok(self.loss_and_gradient(z, &noise)?.0)
    }

    /// Normalized features `Ŵ` of the actual embeddings.
    pub fn features(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut w = z * self.j.transpose() + self.noise_at(z)?;
        linalg::normalize_rows_mut(&mut w)?;
        Ok(w)
    }
}

pub fn generate_ofs(
    world: &SyntheticWorld,
    model: &EmbeddingModel,
    cfg: &OfsConfig,
) -> Result<OfsResult> {
    let d = world.d();
    cfg.validate(d)?;
    let objective = OfsObjective::new(world, model)?;
    let mut r = rng::stream(cfg.seed, "ofs/init");
    let mut z = DMatrix::zeros(cfg.k, d);
    for i in 0..cfg.k {
        z.set_row(i, &sample_uniform_point(d, &mut r).as_vector().transpose());
    }

    let mut first = DMatrix::zeros(cfg.k, d);
    let mut second = DMatrix::zeros(cfg.k, d);
    let mut noise = objective.noise_at(&z)?;
    let (mut loss, mut grad) = objective.loss_and_gradient(&z, &noise)?;
    let mut trace = vec![loss];
    let mut iterations = 0;
    while loss > cfg.convergence_tol && iterations < cfg.max_iters {
        iterations += 1;
        let t = iterations as i32;
        first = first * cfg.adam_beta1 + &grad * (1.0 - cfg.adam_beta1);
        second = second * cfg.adam_beta2 + grad.component_mul(&grad) * (1.0 - cfg.adam_beta2);
        let c1 = 1.0 - cfg.adam_beta1.powi(t);
        let c2 = 1.0 - cfg.adam_beta2.powi(t);
        let step = first.zip_map(&second, |m, v| {
            cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps)
        });
        z -= step;
        linalg::normalize_rows_mut(&mut z)?;
        noise = objective.noise_at(&z)?;
        (loss, grad) = objective.loss_and_gradient(&z, &noise)?;
        trace.push(loss);
    }

    let w = objective.features(&z)?;
    let gram_offdiag_max = linalg::max_offdiag_abs(&(&w * w.transpose()));
    let images = (0..cfg.k)
        .map(|i| invert(model, world, &UnitVector::new(z.row(i).transpose())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(OfsResult {
        images,
        latents: z,
        final_loss: loss,
        iterations,
        converged: loss <= cfg.convergence_tol,
        gram_offdiag_max,
        loss_trace: trace,
    })
}

/// Largest relative gap `‖g_fd − g‖ / ‖g‖` between the analytic gradient and
/// central differences (step `h`) at `z`, with the perturbation frozen at `z`.
pub fn gradient_check(objective: &OfsObjective<'_>, z: &DMatrix<f64>, h: f64) -> Result<f64> {
    let noise = objective.noise_at(z)?;
    let (_, analytic) = objective.loss_and_gradient(z, &noise)?;
    let mut numeric = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        for c in 0..z.ncols() {
            let mut plus = z.clone();
            plus[(i, c)] += h;
            let mut minus = z.clone();
            minus[(i, c)] -= h;
            let lp = objective.loss_and_gradient(&plus, &noise)?.0;
            let lm = objective.loss_and_gradient(&minus, &noise)?.0;
            numeric[(i, c)] = (lp - lm) / (2.0 * h);
        }
    }
    let scale = analytic.norm();
    if scale == 0.0 {
        return Ok(numeric.norm());
    }
    Ok((numeric - &analytic).norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    fn world(d: usize, eta: f64) -> SyntheticWorld {
        build_world(&WorldConfig::new(d, 2 * d, 2, 0.0, eta, 11)).unwrap()
    }

    #[test]
    fn single_image_is_already_orthogonal() {
        let w = world(16, 0.0);
        let res = generate_ofs(&w, &w.models[0], &OfsConfig::new(1, 0)).unwrap();
        assert_eq!(res.final_loss, 0.0);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn exact_world_descends_and_is_deterministic() {
        let w = world(64, 0.0);
        for k in [2, 8, 32] {
            let a = generate_ofs(&w, &w.models[0], &OfsConfig::new(k, 1)).unwrap();
            let b = generate_ofs(&w, &w.models[0], &OfsConfig::new(k, 1)).unwrap();
            assert_eq!(a, b);
            assert!(a.iterations <= 100);
            assert!(a.final_loss < a.loss_trace[0], "k={k}");
            assert!(a.gram_offdiag_max <= a.final_loss + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for eta in [0.0, 0.1] {
            let w = world(16, eta);
            let obj = OfsObjective::new(&w, &w.models[1]).unwrap();
            let mut r = rng::stream(2, "fd");
            for _ in 0..5 {
                let mut z = DMatrix::zeros(6, 16);
                for i in 0..6 {
                    z.set_row(i, &sample_uniform_point(16, &mut r).as_vector().transpose());
                }
                let err = gradient_check(&obj, &z, 1e-6).unwrap();
                assert!(err <= 1e-4, "eta={eta} err={err}");
            }
        }
    }

    #[test]
    fn noisy_full_set_reports_honestly() {
        let w = world(16, 0.1);
        let res = generate_ofs(&w, &w.models[0], &OfsConfig::new(16, 3)).unwrap();
        assert!(res.iterations <= 100);
        assert_eq!(res.loss_trace.len(), res.iterations + 1);
        assert_eq!(res.converged, res.final_loss <= 1e-3);
        assert!(res.final_loss <= res.loss_trace[0]);
        assert!(res
            .latents
            .row_iter()
            .all(|r| (r.norm() - 1.0).abs() < 1e-9));
        assert!(generate_ofs(&w, &w.models[0], &OfsConfig::new(17, 3)).is_err());
    }
}
