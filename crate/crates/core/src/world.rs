//! A synthetic face-recognition ecosystem.
//!
//! Identities live on a shared latent sphere `S^{d-1}`. Images are the latent
//! points lifted into `R^m` by a generator with orthonormal columns. Each
//! embedding model is a private rotation of the latent sphere plus a small,
//! deterministic per-image perturbation, and its inverse maps a feature back
//! through the same rotation. Attributes are fixed subspaces of the latent
//! space.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::SigmoidParams;
use crate::error::{check_dims, Error, Result};
use crate::linalg;
use crate::rng;
use crate::sphere::{sample_uniform_point, SubsphereBasis, UnitVector};

/// Orthonormality tolerance for the generator and model rotations.
pub const WORLD_ORTHO_TOLERANCE: f64 = 1e-8;
/// Scale of the isotropic jitter that pulls attributed identities off the
/// attribute subspace.
pub const ATTRIBUTED_JITTER: f64 = 0.05;
/// Draw budget per requested identity in the unattributed rejection sampler.
pub const REJECTION_BUDGET: usize = 100;

fn default_n_models() -> usize {
    3
}

fn default_attributes() -> Vec<String> {
    vec!["f".to_string()]
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub sigmoid: SigmoidParams,
    /// Acceptance threshold on the confidence scale reported as `default`.
    pub threshold_default: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            sigmoid: SigmoidParams {
                l_scale: 1.0,
                slope: 12.0,
                midpoint: 0.3,
                offset: 0.0,
            },
            threshold_default: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Latent (feature) dimension.
    pub d: usize,
    /// Image dimension.
    pub m: usize,
    /// Dimension of every attribute subspace.
    pub k_f: usize,
    /// Within-identity jitter: image latents are `normalize(z + σ n)`, `n ~ N(0, I/d)`.
    pub sigma_id: f64,
    /// Per-model embedding noise scale.
    pub eta_model: f64,
    #[serde(default = "default_n_models")]
    pub n_models: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_attributes")]
    pub attributes: Vec<String>,
    /// Attribute energy threshold of [`has_attribute`].
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub target: TargetConfig,
}

impl WorldConfig {
    /// A config with the default attribute set, three models and the default target.
    pub fn new(d: usize, m: usize, k_f: usize, sigma_id: f64, eta_model: f64, seed: u64) -> Self {
        Self {
            d,
            m,
            k_f,
            sigma_id,
            eta_model,
            n_models: default_n_models(),
            seed,
            attributes: default_attributes(),
            rho: default_rho(),
            target: TargetConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2 <= self.k_f && self.k_f <= self.d && self.d <= self.m) {
            return Err(Error::Config(format!(
                "world needs 2 <= k_f <= d <= m, got k_f={}, d={}, m={}",
                self.k_f, self.d, self.m
            )));
        }
        if !(self.sigma_id >= 0.0 && self.sigma_id.is_finite())
            || !(self.eta_model >= 0.0 && self.eta_model.is_finite())
        {
            return Err(Error::Config(
                "sigma_id and eta_model must be finite and non-negative".into(),
            ));
        }
        if self.n_models == 0 {
            return Err(Error::Config(
                "world needs at least one embedding model".into(),
            ));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        let mut names = self.attributes.clone();
        names.sort();
        names.dedup();
        if names.len() != self.attributes.len() || names.iter().any(|n| n.is_empty()) {
            return Err(Error::Config(
                "attribute names must be unique and non-empty".into(),
            ));
        }
        self.target
            .sigmoid
            .validate()
            .map_err(|e| Error::Config(format!("target sigmoid: {e}")))?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the config's JSON encoding.
    pub fn fingerprint(&self) -> String {
        crate::io::fingerprint(self)
    }
}

/// One face-recognition model: a rotation of the latent sphere plus
/// deterministic per-image noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    #[serde(with = "crate::io::serde_matrix")]
    pub q: DMatrix<f64>,
    pub eta: f64,
    pub noise_seed: u64,
}

impl EmbeddingModel {
    pub fn new(q: DMatrix<f64>, eta: f64, noise_seed: u64) -> Result<Self> {
        let (r, c) = q.shape();
        if r != c {
            return Err(Error::contract(format!(
                "model rotation must be square, got {r} x {c}"
            )));
        }
        let defect = (q.tr_mul(&q) - DMatrix::identity(r, r)).amax();
        if defect > WORLD_ORTHO_TOLERANCE {
            return Err(Error::contract(format!(
                "model rotation is not orthogonal (defect {defect:e})"
            )));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::contract(
                "model noise scale must be finite and non-negative",
            ));
        }
        Ok(Self { q, eta, noise_seed })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// The same model with a different noise scale.
    pub fn with_eta(&self, eta: f64) -> Self {
        Self {
            eta,
            ..self.clone()
        }
    }
}

/// The black-box face-verification service under attack.
///
/// `query` counts attack queries and `evaluate` counts the evaluation of
/// crafted images; both counters only grow.
#[derive(Debug)]
pub struct TargetOracle {
    pub model: EmbeddingModel,
    pub sigmoid: SigmoidParams,
    pub threshold_default: f64,
    query_counter: AtomicU64,
    eval_counter: AtomicU64,
}

impl Clone for TargetOracle {
    fn clone(&self) -> Self {
        Self {
            model: self.model.clone(),
            sigmoid: self.sigmoid,
            threshold_default: self.threshold_default,
            query_counter: AtomicU64::new(self.query_count()),
            eval_counter: AtomicU64::new(self.eval_count()),
        }
    }
}

impl TargetOracle {
    pub fn new(model: EmbeddingModel, sigmoid: SigmoidParams, threshold_default: f64) -> Self {
        Self {
            model,
            sigmoid,
            threshold_default,
            query_counter: AtomicU64::new(0),
            eval_counter: AtomicU64::new(0),
        }
    }

    fn confidence(
        &self,
        world: &SyntheticWorld,
        img1: &DVector<f64>,
        img2: &DVector<f64>,
    ) -> Result<f64> {
        let e1 = embed(&self.model, world, img1)?;
        let e2 = embed(&self.model, world, img2)?;
        Ok(self.sigmoid.eval(e1.dot(&e2)?.clamp(-1.0, 1.0)))
    }

    /// One counted attack query.
    pub fn query(
        &self,
        world: &SyntheticWorld,
        img1: &DVector<f64>,
        img2: &DVector<f64>,
    ) -> Result<f64> {
        let c = self.confidence(world, img1, img2)?;
        self.query_counter.fetch_add(1, Ordering::Relaxed);
        Ok(c)
    }

    /// One evaluation query, tallied apart from the attack budget.
    pub fn evaluate(
        &self,
        world: &SyntheticWorld,
        img1: &DVector<f64>,
        img2: &DVector<f64>,
    ) -> Result<f64> {
        let c = self.confidence(world, img1, img2)?;
        self.eval_counter.fetch_add(1, Ordering::Relaxed);
        Ok(c)
    }

    pub fn query_count(&self) -> u64 {
        self.query_counter.load(Ordering::Relaxed)
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_counter.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// `m × d`, orthonormal columns.
    pub generator_map: DMatrix<f64>,
    pub attribute_subspaces: BTreeMap<String, SubsphereBasis>,
    pub models: Vec<EmbeddingModel>,
    pub target: TargetOracle,
}

impl SyntheticWorld {
    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn attribute(&self, name: &str) -> Result<&SubsphereBasis> {
        self.attribute_subspaces
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown attribute '{name}'")))
    }

    pub fn model(&self, i: usize) -> Result<&EmbeddingModel> {
        self.models.get(i).ok_or_else(|| {
            Error::Config(format!(
                "model {i} does not exist ({} models)",
                self.models.len()
            ))
        })
    }

    /// The image of a latent point: `G z`.
    pub fn render(&self, latent: &UnitVector) -> Result<DVector<f64>> {
        check_dims("render", self.d(), latent.dim())?;
        Ok(&self.generator_map * latent.as_vector())
    }

    /// `Gᵀ image`, the latent coordinates of an image.
    pub fn latent_coordinates(&self, image: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("image", self.m(), image.len())?;
        Ok(self.generator_map.tr_mul(image))
    }
}

fn model_label(i: usize) -> String {
    format!("world/model/{i}")
}

pub fn build_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let (d, m) = (cfg.d, cfg.m);
    let generator_map =
        linalg::random_orthonormal_rows(&mut rng::stream(cfg.seed, "world/generator"), d, m)?
            .transpose();

    let mut attribute_subspaces = BTreeMap::new();
    for name in &cfg.attributes {
        let mut r = rng::stream(cfg.seed, &format!("world/attribute/{name}"));
        attribute_subspaces.insert(name.clone(), SubsphereBasis::random(d, cfg.k_f, &mut r)?);
    }

    let make_model = |label: &str| -> Result<EmbeddingModel> {
        let q = linalg::random_orthogonal(&mut rng::stream(cfg.seed, label), d)?;
        EmbeddingModel::new(
            q,
            cfg.eta_model,
            rng::derive_seed(cfg.seed, &format!("{label}/noise")),
        )
    };
    let models = (0..cfg.n_models)
        .map(|i| make_model(&model_label(i)))
        .collect::<Result<Vec<_>>>()?;
    let target = TargetOracle::new(
        make_model("world/target")?,
        cfg.target.sigmoid,
        cfg.target.threshold_default,
    );
    Ok(SyntheticWorld {
        config: cfg.clone(),
        generator_map,
        attribute_subspaces,
        models,
        target,
    })
}

/// The unscaled per-image perturbation of `model`: `N(0, I/d)`, keyed by the
/// image bytes.
pub fn embedding_noise(model: &EmbeddingModel, image: &DVector<f64>) -> DVector<f64> {
    let bytes: Vec<u8> = image.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut r = rng::keyed_stream(model.noise_seed, &bytes);
    DVector::from_vec(rng::isotropic_unit_noise(&mut r, model.dim()))
}

/// `normalize(q Gᵀ image + η n(image))`, where the noise is a deterministic
/// function of the image bytes and the model's noise seed.
pub fn embed(
    model: &EmbeddingModel,
    world: &SyntheticWorld,
    image: &DVector<f64>,
) -> Result<UnitVector> {
    check_dims("embedding model", world.d(), model.dim())?;
    let mut v = &model.q * world.latent_coordinates(image)?;
    if model.eta > 0.0 {
        v += embedding_noise(model, image) * model.eta;
    }
    UnitVector::new(v)
}

/// `G qᵀ v`.
pub fn invert(
    model: &EmbeddingModel,
    world: &SyntheticWorld,
    v: &UnitVector,
) -> Result<DVector<f64>> {
    check_dims("inverse model", world.d(), v.dim())?;
    check_dims("inverse model", world.d(), model.dim())?;
    Ok(&world.generator_map * model.q.tr_mul(v.as_vector()))
}

/// Counted target query `g(⟨F_T(img1), F_T(img2)⟩)`.
pub fn query_confidence(
    target: &TargetOracle,
    world: &SyntheticWorld,
    img1: &DVector<f64>,
    img2: &DVector<f64>,
) -> Result<f64> {
    target.query(world, img1, img2)
}

/// Energy of the image's normalized latent in the attribute subspace.
pub fn attribute_energy(
    world: &SyntheticWorld,
    attribute: &str,
    image: &DVector<f64>,
) -> Result<f64> {
    let basis = world.attribute(attribute)?;
    let latent = UnitVector::new(world.latent_coordinates(image)?)?;
    basis.projection_energy(&latent)
}

pub fn has_attribute(
    world: &SyntheticWorld,
    attribute: &str,
    image: &DVector<f64>,
) -> Result<bool> {
    Ok(attribute_energy(world, attribute, image)? >= world.config.rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSample {
    pub identity: usize,
    /// The identity's latent centre.
    pub identity_latent: UnitVector,
    /// This image's latent, jittered around the centre.
    pub latent: UnitVector,
    pub image: DVector<f64>,
}

fn jitter<R: Rng + ?Sized>(z: &UnitVector, scale: f64, rng: &mut R) -> Result<UnitVector> {
    if scale == 0.0 {
        return Ok(z.clone());
    }
    let n = DVector::from_vec(rng::isotropic_unit_noise(rng, z.dim()));
    UnitVector::new(z.as_vector() + n * scale)
}

/// Draws `n_identities` identities with `images_per_identity` images each.
///
/// With an attribute, identities are `normalize(P_V z₀ + 0.05 n)` for uniform
/// `z₀`; without one, uniform identities are kept only if they lack the
/// default attribute (the first configured one).
pub fn sample_population<R: Rng + ?Sized>(
    world: &SyntheticWorld,
    attribute: Option<&str>,
    n_identities: usize,
    images_per_identity: usize,
    rng: &mut R,
) -> Result<Vec<FaceSample>> {
    let d = world.d();
    let centres: Vec<UnitVector> = match attribute {
        Some(name) => {
            let basis = world.attribute(name)?;
            (0..n_identities)
                .map(|_| loop {
                    let z0 = sample_uniform_point(d, rng);
                    let projected = basis.rows().tr_mul(&basis.coefficients(z0.as_vector())?);
                    let n = DVector::from_vec(rng::isotropic_unit_noise(rng, d));
                    if let Ok(z) = UnitVector::new(projected + n * ATTRIBUTED_JITTER) {
                        break Ok(z);
                    }
                })
                .collect::<Result<_>>()?
        }
        None => {
            let excluded = world
                .config
                .attributes
                .first()
                .map(|n| world.attribute(n))
                .transpose()?;
            let budget = REJECTION_BUDGET * n_identities.max(1);
            let mut out = Vec::with_capacity(n_identities);
            let mut draws = 0usize;
            while out.len() < n_identities {
                if draws >= budget {
                    return Err(Error::Config(format!(
                        "rejection sampling drew {draws} latents for {n_identities} unattributed identities; \
                         the attribute subspace is too large relative to d"
                    )));
                }
                draws += 1;
                let z = sample_uniform_point(d, rng);
                let positive = match excluded {
                    Some(b) => b.projection_energy(&z)? >= world.config.rho,
                    None => false,
                };
                if !positive {
                    out.push(z);
                }
            }
            out
        }
    };

    let mut samples = Vec::with_capacity(n_identities * images_per_identity);
    for (identity, z) in centres.into_iter().enumerate() {
        for _ in 0..images_per_identity {
            let latent = jitter(&z, world.config.sigma_id, rng)?;
            let image = world.render(&latent)?;
            samples.push(FaceSample {
                identity,
                identity_latent: z.clone(),
                latent,
                image,
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldHeader {
    fingerprint: String,
    config: WorldConfig,
    d: usize,
    m: usize,
    n_models: usize,
    attributes: Vec<String>,
    model_noise_seeds: Vec<u64>,
    target_noise_seed: u64,
}

/// Writes `world.json` plus one binary matrix per generator, attribute basis
/// and model rotation into `dir`.
pub fn save_world(world: &SyntheticWorld, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = WorldHeader {
        fingerprint: world.fingerprint(),
        config: world.config.clone(),
        d: world.d(),
        m: world.m(),
        n_models: world.models.len(),
        attributes: world.attribute_subspaces.keys().cloned().collect(),
        model_noise_seeds: world.models.iter().map(|m| m.noise_seed).collect(),
        target_noise_seed: world.target.model.noise_seed,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("world.json"), json)?;
    crate::io::save_matrix(&dir.join("generator.bin"), &world.generator_map)?;
    for (name, basis) in &world.attribute_subspaces {
        crate::io::save_matrix(&dir.join(format!("attribute_{name}.bin")), basis.rows())?;
    }
    for (i, model) in world.models.iter().enumerate() {
        crate::io::save_matrix(&dir.join(format!("model_{i}.bin")), &model.q)?;
    }
    crate::io::save_matrix(&dir.join("target.bin"), &world.target.model.q)?;
    Ok(())
}

pub fn load_world(dir: &Path) -> Result<SyntheticWorld> {
    let text = fs::read_to_string(dir.join("world.json"))?;
    let header: WorldHeader =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if header.fingerprint != header.config.fingerprint() {
        return Err(Error::Format(
            "world header fingerprint does not match its config".into(),
        ));
    }
    header.config.validate()?;
    let generator_map = crate::io::load_matrix(&dir.join("generator.bin"))?;
    if generator_map.shape() != (header.m, header.d) {
        return Err(Error::Format("generator matrix has the wrong shape".into()));
    }
    let mut attribute_subspaces = BTreeMap::new();
    for name in &header.attributes {
        let rows = crate::io::load_matrix(&dir.join(format!("attribute_{name}.bin")))?;
        attribute_subspaces.insert(name.clone(), SubsphereBasis::new(rows)?);
    }
    let eta = header.config.eta_model;
    let models = header
        .model_noise_seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            EmbeddingModel::new(
                crate::io::load_matrix(&dir.join(format!("model_{i}.bin")))?,
                eta,
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let target_model = EmbeddingModel::new(
        crate::io::load_matrix(&dir.join("target.bin"))?,
        eta,
        header.target_noise_seed,
    )?;
    let t = header.config.target;
    Ok(SyntheticWorld {
        config: header.config,
        generator_map,
        attribute_subspaces,
        models,
        target: TargetOracle::new(target_model, t.sigmoid, t.threshold_default),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::BetaDistribution;

    fn world(eta: f64, seed: u64) -> SyntheticWorld {
        let mut cfg = WorldConfig::new(64, 128, 16, 0.0, eta, seed);
        cfg.n_models = 3;
        build_world(&cfg).unwrap()
    }

    #[test]
    fn build_is_deterministic_and_valid() {
        let a = world(0.05, 1);
        let b = world(0.05, 1);
        assert_eq!(a.generator_map, b.generator_map);
        assert_eq!(a.models, b.models);
        assert_eq!(a.models.len(), 3);
        let gtg = a.generator_map.tr_mul(&a.generator_map);
        assert!((gtg - DMatrix::identity(64, 64)).amax() < 1e-8);
        for i in 0..3 {
            for j in i + 1..3 {
                assert!((&a.models[i].q - &a.models[j].q).norm() > 0.1);
            }
        }
        let c = world(0.05, 2);
        assert!((&a.models[0].q - &c.models[0].q).norm() > 0.1);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_validation() {
        let mut cfg = WorldConfig::new(64, 32, 16, 0.0, 0.0, 0);
        assert!(matches!(build_world(&cfg), Err(Error::Config(_))));
        cfg.m = 64;
        cfg.k_f = 1;
        assert!(build_world(&cfg).is_err());
        cfg.k_f = 2;
        cfg.eta_model = -0.1;
        assert!(build_world(&cfg).is_err());
        cfg.eta_model = 0.0;
        assert!(build_world(&cfg).is_ok());
    }

    #[test]
    fn exact_inverse_round_trip_and_cross_model_algebra() {
        let w = world(0.0, 3);
        let mut r = rng::stream(0, "t");
        for _ in 0..20 {
            let v = sample_uniform_point(64, &mut r);
            let back = embed(&w.models[0], &w, &invert(&w.models[0], &w, &v).unwrap()).unwrap();
            assert!((back.as_vector() - v.as_vector()).amax() < 1e-8);
            let cross = embed(&w.models[1], &w, &invert(&w.models[0], &w, &v).unwrap()).unwrap();
            let oracle = &w.models[1].q * w.models[0].q.tr_mul(v.as_vector());
            assert!((cross.as_vector() - oracle).amax() < 1e-8);
            let img = w.render(&v).unwrap();
            let e = embed(&w.models[2], &w, &img).unwrap();
            assert!((e.as_vector() - &w.models[2].q * v.as_vector()).amax() < 1e-12);
        }
    }

    #[test]
    fn noisy_embedding_is_a_function_with_bounded_round_trip_error() {
        let w = world(0.05, 4);
        let mut r = rng::stream(1, "t");
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let v = sample_uniform_point(64, &mut r);
            let img = invert(&w.models[0], &w, &v).unwrap();
            let a = embed(&w.models[0], &w, &img).unwrap();
            let b = embed(&w.models[0], &w, &img).unwrap();
            assert_eq!(a, b);
            worst = worst.max(crate::sphere::angular_distance(&a, &v).unwrap());
        }
        assert!(worst <= 0.15, "worst round-trip angle {worst}");
    }

    #[test]
    fn target_queries_are_counted() {
        let w = world(0.0, 5);
        let mut r = rng::stream(2, "t");
        let v = sample_uniform_point(64, &mut r);
        let img = w.render(&v).unwrap();
        let g = w.target.sigmoid;
        assert!((query_confidence(&w.target, &w, &img, &img).unwrap() - g.eval(1.0)).abs() < 1e-12);
        let anti = -img.clone();
        assert!((w.target.query(&w, &img, &anti).unwrap() - g.eval(-1.0)).abs() < 1e-12);
        for _ in 0..8 {
            w.target.query(&w, &img, &img).unwrap();
        }
        assert_eq!(w.target.query_count(), 10);
        w.target.evaluate(&w, &img, &img).unwrap();
        assert_eq!((w.target.query_count(), w.target.eval_count()), (10, 1));
    }

    #[test]
    fn attributed_population_lies_near_the_subspace() {
        let w = world(0.0, 6);
        let mut r = rng::stream(3, "pop");
        let pop = sample_population(&w, Some("f"), 100, 1, &mut r).unwrap();
        let hits = pop
            .iter()
            .filter(|s| has_attribute(&w, "f", &s.image).unwrap())
            .count();
        assert!(hits >= 95, "{hits}");
        // sigma_id = 0: the image is the rendered latent
        for s in &pop {
            assert_eq!(s.image, w.render(&s.latent).unwrap());
        }
    }

    #[test]
    fn uniform_latents_have_expected_attribute_energy() {
        let w = world(0.0, 7);
        let basis = w.attribute("f").unwrap();
        let mut r = rng::stream(4, "u");
        let n = 20_000;
        let energies: Vec<f64> = (0..n)
            .map(|_| {
                basis
                    .projection_energy(&sample_uniform_point(64, &mut r))
                    .unwrap()
            })
            .collect();
        let mean = crate::stats::mean(&energies);
        let law = BetaDistribution::projection_law(64, 16).unwrap();
        assert!((mean - 0.25).abs() < 4.0 * (law.variance() / n as f64).sqrt());
        let positive = energies.iter().filter(|&&e| e >= 0.5).count() as f64 / n as f64;
        let p = law.sf(0.5);
        assert!(
            (positive - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-4,
            "{positive} vs {p}"
        );
    }

    #[test]
    fn unattributed_population_and_attribute_oracle_edges() {
        let w = world(0.0, 8);
        let mut r = rng::stream(5, "neg");
        let pop = sample_population(&w, None, 50, 2, &mut r).unwrap();
        assert_eq!(pop.len(), 100);
        assert!(pop
            .iter()
            .all(|s| !has_attribute(&w, "f", &s.image).unwrap()));
        let basis = w.attribute("f").unwrap();
        let inside = w.render(&basis.row(0)).unwrap();
        assert!(has_attribute(&w, "f", &inside).unwrap());
        // a latent orthogonal to the attribute subspace
        let mut z = DVector::from_fn(64, |i, _| (i as f64).sin());
        z -= basis.rows().tr_mul(&(basis.rows() * &z));
        let outside = w.render(&UnitVector::new(z).unwrap()).unwrap();
        assert!(!has_attribute(&w, "f", &outside).unwrap());
        assert!(sample_population(&w, Some("g"), 1, 1, &mut r).is_err());
    }

    #[test]
    fn rejection_budget_is_enforced() {
        let mut cfg = WorldConfig::new(4, 4, 4, 0.0, 0.0, 0);
        cfg.rho = 0.5;
        let w = build_world(&cfg).unwrap();
        let mut r = rng::stream(0, "x");
        assert!(matches!(
            sample_population(&w, None, 3, 1, &mut r),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let w = world(0.05, 9);
        let dir = tempfile::tempdir().unwrap();
        save_world(&w, dir.path()).unwrap();
        let back = load_world(dir.path()).unwrap();
        assert_eq!(back.generator_map, w.generator_map);
        assert_eq!(back.models, w.models);
        assert_eq!(back.target.model, w.target.model);
        assert_eq!(back.attribute_subspaces, w.attribute_subspaces);
    }
}
