//! White-box, black-box (score-query) and transfer attacks, and the
//! cross-model consistency check of attributed basis images.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    fit_sigmoid, fit_sigmoid_fixed_offset, sigmoid_inverse_checked, SigmoidParams,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::sphere::{angular_distance, UnitVector};
use crate::stats::Histogram;
use crate::subspace::{
    build_correction_matrix, project_pseudo_inverse, run_pca, score_projection, CorrectionMatrix,
    FeatureMatrix,
};
use crate::world::{
    embed, has_attribute, invert, sample_population, EmbeddingModel, FaceSample, SyntheticWorld,
    TargetOracle,
};

/// The basis images `O_i` and their features `A` under the local model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedBasisImages {
    pub images: Vec<DVector<f64>>,
    pub features: FeatureMatrix,
    pub source_attribute: String,
    pub model: EmbeddingModel,
    /// Variance captured by each principal direction.
    pub explained_variance: Vec<f64>,
}

impl AttributedBasisImages {
    pub fn k(&self) -> usize {
        self.images.len()
    }

    /// Re-embeds the images under the basis model.
    pub fn recompute_features(&self, world: &SyntheticWorld) -> Result<FeatureMatrix> {
        features_of(&self.model, world, &self.images)
    }
}

fn features_of(
    model: &EmbeddingModel,
    world: &SyntheticWorld,
    images: &[DVector<f64>],
) -> Result<FeatureMatrix> {
    let rows = images
        .iter()
        .map(|img| embed(model, world, img))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_unit_vectors(&rows)
}

/// PCA over the local features of an attributed dataset. The top `k`
/// directions are inverted into images and re-embedded to form `A`.
pub fn prepare_basis(
    world: &SyntheticWorld,
    local_model: &EmbeddingModel,
    attribute: &str,
    dataset: &[FaceSample],
    k: usize,
) -> Result<AttributedBasisImages> {
    prepare_basis_with(world, local_model, attribute, dataset, k, true)
}

/// [`prepare_basis`] with explicit control over PCA centering.
pub fn prepare_basis_with(
    world: &SyntheticWorld,
    local_model: &EmbeddingModel,
    attribute: &str,
    dataset: &[FaceSample],
    k: usize,
    centered: bool,
) -> Result<AttributedBasisImages> {
    world.attribute(attribute)?;
    let features = dataset
        .iter()
        .map(|s| embed(local_model, world, &s.image))
        .collect::<Result<Vec<_>>>()?;
    let pca = run_pca(&features, k, centered)?;
    let images = (0..k)
        .map(|i| invert(local_model, world, &pca.component(i)?))
        .collect::<Result<Vec<_>>>()?;
    let features = features_of(local_model, world, &images)?;
    Ok(AttributedBasisImages {
        images,
        features,
        source_attribute: attribute.to_string(),
        model: local_model.clone(),
        explained_variance: pca.explained_variance,
    })
}

/// The `k` image pairs `(O_i, target)` queried for one target. It depends
/// on nothing but its arguments, so the whole batch is fixed before any
/// answer is seen.
pub fn target_query_plan<'a>(
    basis: &'a AttributedBasisImages,
    target_image: &'a DVector<f64>,
) -> Vec<(&'a DVector<f64>, &'a DVector<f64>)> {
    basis.images.iter().map(|o| (o, target_image)).collect()
}

/// All `k²` ordered pairs `(O_i, O_j)` of the pre-attack batch, row-major.
pub fn pairwise_query_plan(basis: &AttributedBasisImages) -> Vec<(&DVector<f64>, &DVector<f64>)> {
    basis
        .images
        .iter()
        .flat_map(|a| basis.images.iter().map(move |b| (a, b)))
        .collect()
}

/// Where the confidence → cosine curve comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmoidSource {
    /// Use these parameters as is.
    Known(SigmoidParams),
    /// Fit `(L, k_s, d0)` with a zero offset on the `k²` basis-pair answers
    /// against local cosines.
    FitBasisPairs { seed: u64 },
    /// Fit all four parameters on extra image pairs (queried once, up front)
    /// against local cosines.
    FitHeldOut {
        pairs: Vec<(DVector<f64>, DVector<f64>)>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSourceKind {
    Known,
    BasisPairs,
    HeldOut,
}

/// Everything the attacker learns before seeing a target: the fitted curve
/// and the correction matrix, plus accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxCalibration {
    pub sigmoid: SigmoidParams,
    pub fit_source: FitSourceKind,
    /// Mean absolute residual of the fitted curve; zero for a known curve.
    pub fit_mae: f64,
    #[serde(with = "crate::io::serde_matrix")]
    pub pairwise_confidences: DMatrix<f64>,
    pub correction: CorrectionMatrix,
    /// Confidences that hit the clamp of the inverse curve.
    pub clamp_count: usize,
    /// Counted target queries spent, including held-out fit pairs.
    pub queries_used: u64,
}

/// Runs the pre-attack batch: `k²` basis-pair queries, the curve, and
/// `R_ij = ĝ⁻¹(T(O_i, O_j))` with unit diagonal.
pub fn calibrate_black_box(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    oracle: &TargetOracle,
    source: SigmoidSource,
) -> Result<BlackBoxCalibration> {
    let k = basis.k();
    let plan = pairwise_query_plan(basis);
    let mut confidences = DMatrix::zeros(k, k);
    for (idx, (a, b)) in plan.into_iter().enumerate() {
        confidences[(idx / k, idx % k)] = oracle.query(world, a, b)?;
    }
    let mut queries_used = (k * k) as u64;
    let local_gram = basis.features.gram();

    let (sigmoid, fit_source, fit_mae) = match source {
        SigmoidSource::Known(p) => {
            p.validate()?;
            (p, FitSourceKind::Known, 0.0)
        }
        SigmoidSource::FitBasisPairs { seed } => {
            let pairs: Vec<(f64, f64)> = (0..k * k)
                .map(|idx| {
                    (
                        local_gram[(idx / k, idx % k)],
                        confidences[(idx / k, idx % k)],
                    )
                })
                .collect();
            let fit = fit_sigmoid_fixed_offset(&pairs, seed, 0.0)?;
            (fit.params, FitSourceKind::BasisPairs, fit.mae)
        }
        SigmoidSource::FitHeldOut { pairs, seed } => {
            let mut data = Vec::with_capacity(pairs.len());
            for (a, b) in &pairs {
                let cos = embed(&basis.model, world, a)?.dot(&embed(&basis.model, world, b)?)?;
                data.push((cos, oracle.query(world, a, b)?));
            }
            queries_used += pairs.len() as u64;
            let fit = fit_sigmoid(&data, seed)?;
            (fit.params, FitSourceKind::HeldOut, fit.mae)
        }
    };

    let mut clamp_count = 0;
    let mut r = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                r[(i, j)] = 1.0;
                continue;
            }
            let (s, clamped) = sigmoid_inverse_checked(&sigmoid, confidences[(i, j)]);
            clamp_count += clamped as usize;
            r[(i, j)] = s;
        }
    }
    let correction = build_correction_matrix(&r, 0.0)?;
    Ok(BlackBoxCalibration {
        sigmoid,
        fit_source,
        fit_mae,
        pairwise_confidences: confidences,
        correction,
        clamp_count,
        queries_used,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackMode {
    #[serde(rename = "white_box")]
    WhiteBox,
    #[serde(rename = "black_box_R")]
    BlackBoxR,
    #[serde(rename = "black_box_noR")]
    BlackBoxNoR,
    #[serde(rename = "transfer")]
    Transfer,
}

impl AttackMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::WhiteBox => "white_box",
            AttackMode::BlackBoxR => "black_box_R",
            AttackMode::BlackBoxNoR => "black_box_noR",
            AttackMode::Transfer => "transfer",
        }
    }

    pub fn is_black_box(&self) -> bool {
        matches!(self, AttackMode::BlackBoxR | AttackMode::BlackBoxNoR)
    }
}

impl std::fmt::Display for AttackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white_box" => Ok(AttackMode::WhiteBox),
            "black_box_R" => Ok(AttackMode::BlackBoxR),
            "black_box_noR" => Ok(AttackMode::BlackBoxNoR),
            "transfer" => Ok(AttackMode::Transfer),
            other => Err(Error::Config(format!(
                "unknown attack mode '{other}' (expected white_box, black_box_R, black_box_noR or transfer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target_id: usize,
    pub mode: AttackMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adversarial_image: Option<Vec<f64>>,
    /// Target confidence between the crafted image and the target image.
    pub target_confidence: Option<f64>,
    pub accepted_at: BTreeMap<String, bool>,
    pub attribute_ok: bool,
    /// Crafting queries; the evaluation query is not included.
    pub queries_used: u64,
    /// Whether one evaluation query was spent on this result.
    pub eval_query: bool,
    /// Per-target confidences that hit the clamp of the inverse curve.
    pub clamp_count: usize,
    pub failure: Option<String>,
}

impl AttackResult {
    pub fn accepted(&self, tau_name: &str) -> Option<bool> {
        self.accepted_at.get(tau_name).copied()
    }
}

/// How crafted images are judged: an oracle, named confidence thresholds,
/// and the attribute that must be present.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub oracle: &'a TargetOracle,
    pub thresholds: &'a BTreeMap<String, f64>,
    pub attribute: &'a str,
}

struct Crafted {
    image: Result<DVector<f64>>,
    queries_used: u64,
    clamp_count: usize,
}

fn is_attack_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateProjection { .. } | Error::RankDeficient(_) | Error::Fit(_)
    )
}

fn finish(
    world: &SyntheticWorld,
    evaluator: &Evaluator<'_>,
    target_id: usize,
    target_image: &DVector<f64>,
    mode: AttackMode,
    crafted: Crafted,
) -> Result<AttackResult> {
    let mut result = AttackResult {
        target_id,
        mode,
        adversarial_image: None,
        target_confidence: None,
        accepted_at: evaluator
            .thresholds
            .keys()
            .map(|k| (k.clone(), false))
            .collect(),
        attribute_ok: false,
        queries_used: crafted.queries_used,
        eval_query: false,
        clamp_count: crafted.clamp_count,
        failure: None,
    };
    match crafted.image {
        Ok(image) => {
            let confidence = evaluator.oracle.evaluate(world, target_image, &image)?;
            for (name, tau) in evaluator.thresholds {
                result.accepted_at.insert(name.clone(), confidence >= *tau);
            }
            result.attribute_ok = has_attribute(world, evaluator.attribute, &image)?;
            result.target_confidence = Some(confidence);
            result.eval_query = true;
            result.adversarial_image = Some(image.as_slice().to_vec());
        }
        Err(e) if is_attack_failure(&e) => result.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(result)
}

/// `F⁻¹(p(F(target)))` with the pseudo-inverse projection onto the basis
/// features.
pub fn craft_white_box(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    target_image: &DVector<f64>,
) -> Result<DVector<f64>> {
    let feature = embed(&basis.model, world, target_image)?;
    let projected = project_pseudo_inverse(&feature, &basis.features)?;
    invert(&basis.model, world, &projected)
}

/// White-box attack: the basis model is the target's model.
pub fn white_box_attack(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    target_id: usize,
    target_image: &DVector<f64>,
    evaluator: &Evaluator<'_>,
) -> Result<AttackResult> {
    let crafted = Crafted {
        image: craft_white_box(world, basis, target_image),
        queries_used: 0,
        clamp_count: 0,
    };
    finish(
        world,
        evaluator,
        target_id,
        target_image,
        AttackMode::WhiteBox,
        crafted,
    )
}

/// Transfer attack: craft white-box on the local basis model, judge on a
/// different oracle.
pub fn transfer_attack(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    target_id: usize,
    target_image: &DVector<f64>,
    evaluator: &Evaluator<'_>,
) -> Result<AttackResult> {
    let crafted = Crafted {
        image: craft_white_box(world, basis, target_image),
        queries_used: 0,
        clamp_count: 0,
    };
    finish(
        world,
        evaluator,
        target_id,
        target_image,
        AttackMode::Transfer,
        crafted,
    )
}

/// The crafted image of the black-box attack: `k` score queries, optional
/// correction, projection onto the local features and inversion.
/// Returns the image, the queries spent and the clamp count.
pub fn craft_black_box(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    oracle: &TargetOracle,
    sigmoid: &SigmoidParams,
    correction: Option<&CorrectionMatrix>,
    target_image: &DVector<f64>,
) -> Result<(Result<DVector<f64>>, u64, usize)> {
    let plan = target_query_plan(basis, target_image);
    let confidences = plan
        .iter()
        .map(|(o, t)| oracle.query(world, o, t))
        .collect::<Result<Vec<_>>>()?;
    let mut clamp_count = 0;
    let scores = DVector::from_iterator(
        confidences.len(),
        confidences.iter().map(|&c| {
            let (s, clamped) = sigmoid_inverse_checked(sigmoid, c);
            clamp_count += clamped as usize;
            s
        }),
    );
    let image = (|| {
        let weights = match correction {
            Some(r) => r.apply_inverse(&scores)?,
            None => scores,
        };
        let point = score_projection(&weights, &basis.features)?;
        invert(&basis.model, world, &point)
    })();
    Ok((image, confidences.len() as u64, clamp_count))
}

/// Black-box attack with or without the correction matrix.
#[allow(clippy::too_many_arguments)]
pub fn black_box_attack(
    world: &SyntheticWorld,
    basis: &AttributedBasisImages,
    oracle: &TargetOracle,
    calibration: &BlackBoxCalibration,
    use_correction: bool,
    target_id: usize,
    target_image: &DVector<f64>,
    evaluator: &Evaluator<'_>,
) -> Result<AttackResult> {
    let correction = use_correction.then_some(&calibration.correction);
    let (image, queries_used, clamp_count) = craft_black_box(
        world,
        basis,
        oracle,
        &calibration.sigmoid,
        correction,
        target_image,
    )?;
    let mode = if use_correction {
        AttackMode::BlackBoxR
    } else {
        AttackMode::BlackBoxNoR
    };
    let crafted = Crafted {
        image,
        queries_used,
        clamp_count,
    };
    finish(world, evaluator, target_id, target_image, mode, crafted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisVariant {
    /// PCA basis images of an attributed population, shared by both models.
    Attributed,
    /// Images of random identities, shared by both models.
    RandomFaces,
    /// Independent random pixel vectors for each model.
    RandomVectors,
}

impl std::str::FromStr for BasisVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attributed" => Ok(BasisVariant::Attributed),
            "random_faces" => Ok(BasisVariant::RandomFaces),
            "random_vectors" => Ok(BasisVariant::RandomVectors),
            other => Err(Error::Config(format!("unknown basis variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalBasisReport {
    pub variant: BasisVariant,
    /// Angular distances (radians) under the third model.
    pub angles: Vec<f64>,
    /// Histogram of the angles in degrees over `[0, 180)`.
    pub histogram: Histogram,
    pub threshold_cos: f64,
    /// Fraction of samples whose cosine is at least `threshold_cos`.
    pub fraction_within: f64,
}

fn random_pixels<R: Rng + ?Sized>(
    world: &SyntheticWorld,
    k: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    (0..k)
        .map(|_| DVector::from_vec(rng::standard_normals(rng, world.m())))
        .collect()
}

/// Checks whether score vectors mean the same thing across models.
///
/// For each uniform `s ∈ [−1, 1]^k`, the interpolants
/// `F₁⁻¹(normalize(A₁ᵀ s))` and `F₂⁻¹(normalize(A₂ᵀ s))` are embedded by a
/// third model and their angle recorded.
pub fn validate_universal_basis(
    world: &SyntheticWorld,
    variant: BasisVariant,
    attribute: &str,
    k: usize,
    n_samples: usize,
    threshold_cos: f64,
    seed: u64,
) -> Result<UniversalBasisReport> {
    if world.models.len() < 3 {
        return Err(Error::Config(format!(
            "the basis check needs three models, the world has {}",
            world.models.len()
        )));
    }
    if k == 0 || k > world.d() {
        return Err(Error::contract(format!(
            "basis size must be in 1..=d, got {k}"
        )));
    }
    let (m1, m2, judge) = (&world.models[0], &world.models[1], &world.models[2]);
    let mut r = rng::stream(seed, &format!("universal-basis/{variant:?}"));
    let (images1, images2) = match variant {
        BasisVariant::Attributed => {
            let population =
                sample_population(world, Some(attribute), (4 * k).max(200), 1, &mut r)?;
            let basis = prepare_basis(world, m1, attribute, &population, k)?;
            (basis.images.clone(), basis.images)
        }
        BasisVariant::RandomFaces => {
            let faces = sample_population(world, None, k, 1, &mut r)?;
            let images: Vec<_> = faces.into_iter().map(|f| f.image).collect();
            (images.clone(), images)
        }
        BasisVariant::RandomVectors => {
            let a = random_pixels(world, k, &mut r);
            let b = random_pixels(world, k, &mut r);
            (a, b)
        }
    };
    let a1 = features_of(m1, world, &images1)?;
    let a2 = features_of(m2, world, &images2)?;

    let mut histogram = Histogram::new(0.0, 180.0, 36)?;
    let mut angles = Vec::with_capacity(n_samples);
    let mut within = 0usize;
    for _ in 0..n_samples {
        let s = DVector::from_iterator(k, (0..k).map(|_| r.random_range(-1.0..=1.0)));
        let pair = (|| -> Result<(UnitVector, UnitVector)> {
            let x1 = invert(m1, world, &score_projection(&s, &a1)?)?;
            let x2 = invert(m2, world, &score_projection(&s, &a2)?)?;
            Ok((embed(judge, world, &x1)?, embed(judge, world, &x2)?))
        })();
        let (e1, e2) = match pair {
            Ok(p) => p,
            Err(Error::DegenerateProjection { .. }) => continue,
            Err(e) => return Err(e),
        };
        let angle = angular_distance(&e1, &e2)?;
        if angle.cos() >= threshold_cos {
            within += 1;
        }
        histogram.add(angle.to_degrees());
        angles.push(angle);
    }
    let fraction_within = if angles.is_empty() {
        0.0
    } else {
        within as f64 / angles.len() as f64
    };
    Ok(UniversalBasisReport {
        variant,
        angles,
        histogram,
        threshold_cos,
        fraction_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};

    fn setup(eta: f64, d: usize, k_f: usize, seed: u64) -> (SyntheticWorld, Vec<FaceSample>) {
        let cfg = WorldConfig::new(d, 2 * d, k_f, 0.2, eta, seed);
        let w = build_world(&cfg).unwrap();
        let pop = sample_population(&w, Some("f"), 300, 1, &mut rng::stream(seed, "pop")).unwrap();
        (w, pop)
    }

    fn thresholds() -> BTreeMap<String, f64> {
        BTreeMap::from([("default".to_string(), 0.8)])
    }

    #[test]
    fn exact_inverse_reproduces_pca_components() {
        let (w, pop) = setup(0.0, 32, 8, 1);
        let basis = prepare_basis(&w, &w.models[0], "f", &pop, 8).unwrap();
        let features: Vec<_> = pop
            .iter()
            .map(|s| embed(&w.models[0], &w, &s.image).unwrap())
            .collect();
        let pca = run_pca(&features, 8, true).unwrap();
        assert!((basis.features.rows() - &pca.components).amax() < 1e-8);
        assert_eq!(basis.recompute_features(&w).unwrap(), basis.features);
    }

    #[test]
    fn too_large_basis_is_rank_deficient() {
        let (w, pop) = setup(0.0, 32, 8, 2);
        assert!(matches!(
            prepare_basis(&w, &w.models[0], "f", &pop[..10], 12),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn black_box_with_known_curve_collapses_to_white_box() {
        let (w, pop) = setup(0.0, 32, 8, 3);
        let basis = prepare_basis(&w, &w.target.model, "f", &pop, 8).unwrap();
        let cal = calibrate_black_box(
            &w,
            &basis,
            &w.target,
            SigmoidSource::Known(w.target.sigmoid),
        )
        .unwrap();
        assert_eq!(cal.queries_used, 64);
        assert!((cal.correction.r.clone() - basis.features.gram()).amax() < 1e-10);
        let targets = sample_population(&w, None, 10, 1, &mut rng::stream(3, "t")).unwrap();
        for t in &targets {
            let wb = craft_white_box(&w, &basis, &t.image).unwrap();
            let (bb, q, _) = craft_black_box(
                &w,
                &basis,
                &w.target,
                &cal.sigmoid,
                Some(&cal.correction),
                &t.image,
            )
            .unwrap();
            assert_eq!(q, 8);
            let fw = embed(&w.target.model, &w, &wb).unwrap();
            let fb = embed(&w.target.model, &w, &bb.unwrap()).unwrap();
            assert!(angular_distance(&fw, &fb).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn accounting_and_evaluation() {
        let (w, pop) = setup(0.05, 32, 8, 4);
        let basis = prepare_basis(&w, &w.models[0], "f", &pop, 8).unwrap();
        let cal = calibrate_black_box(
            &w,
            &basis,
            &w.target,
            SigmoidSource::FitBasisPairs { seed: 1 },
        )
        .unwrap();
        let before = w.target.query_count();
        let th = thresholds();
        let ev = Evaluator {
            oracle: &w.target,
            thresholds: &th,
            attribute: "f",
        };
        let t = &sample_population(&w, None, 1, 1, &mut rng::stream(4, "t")).unwrap()[0];
        let r = black_box_attack(&w, &basis, &w.target, &cal, true, 0, &t.image, &ev).unwrap();
        assert_eq!(r.queries_used, 8);
        assert_eq!(w.target.query_count() - before, 8);
        assert!(r.eval_query && r.failure.is_none());
        assert_eq!(r.mode, AttackMode::BlackBoxR);
        let tr = transfer_attack(&w, &basis, 0, &t.image, &ev).unwrap();
        assert_eq!(tr.queries_used, 0);
        assert_eq!(w.target.query_count() - before, 8);
        assert_eq!(w.target.eval_count(), 2);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains("\"black_box_R\""));
        let back: AttackResult = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn query_plan_is_pure() {
        let (w, pop) = setup(0.05, 32, 8, 5);
        let basis = prepare_basis(&w, &w.models[0], "f", &pop, 8).unwrap();
        let t = DVector::from_element(64, 0.1);
        let a: Vec<_> = target_query_plan(&basis, &t)
            .into_iter()
            .map(|(x, y)| (x.clone(), y.clone()))
            .collect();
        let b: Vec<_> = target_query_plan(&basis, &t)
            .into_iter()
            .map(|(x, y)| (x.clone(), y.clone()))
            .collect();
        assert_eq!(a, b);
        assert_eq!(pairwise_query_plan(&basis).len(), 64);
    }

    #[test]
    fn orthogonal_target_is_a_failed_result() {
        let (w, pop) = setup(0.0, 32, 8, 6);
        let basis = prepare_basis(&w, &w.target.model, "f", &pop, 8).unwrap();
        // a target whose feature is orthogonal to every basis feature
        let a = basis.features.rows();
        let mut x = DVector::from_fn(32, |i, _| ((i * 7 % 5) as f64) - 2.0);
        let coeffs = a.clone().pseudo_inverse(1e-12).unwrap() * (a * &x);
        x -= coeffs;
        let target_img = invert(&w.target.model, &w, &UnitVector::new(x).unwrap()).unwrap();
        let th = thresholds();
        let ev = Evaluator {
            oracle: &w.target,
            thresholds: &th,
            attribute: "f",
        };
        let r = white_box_attack(&w, &basis, 7, &target_img, &ev).unwrap();
        assert!(r.failure.is_some());
        assert!(!r.eval_query && r.accepted_at.values().all(|v| !v));
    }

    #[test]
    fn universal_basis_orders_variants() {
        let (w, _) = setup(0.05, 32, 8, 7);
        let att =
            validate_universal_basis(&w, BasisVariant::Attributed, "f", 8, 500, 0.3420, 1).unwrap();
        let rnd = validate_universal_basis(&w, BasisVariant::RandomVectors, "f", 8, 500, 0.3420, 1)
            .unwrap();
        assert!(att.fraction_within >= 0.95, "{}", att.fraction_within);
        assert!(rnd.fraction_within < att.fraction_within);
        assert_eq!(att.histogram.total(), 500);
        let empty =
            validate_universal_basis(&w, BasisVariant::Attributed, "f", 8, 0, 0.3420, 1).unwrap();
        assert_eq!(empty.histogram.total(), 0);
        assert!(empty.angles.is_empty());
    }
}
