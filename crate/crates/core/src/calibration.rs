//! Confidence ↔ cosine conversion through a fitted logistic curve, and
//! decision-threshold selection from genuine/impostor score sets.

mod nelder_mead;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `g(s) = L / (1 + exp(−k_s (s − d0))) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub l_scale: f64,
    pub slope: f64,
    pub midpoint: f64,
    pub offset: f64,
}

impl SigmoidParams {
    pub fn new(l_scale: f64, slope: f64, midpoint: f64, offset: f64) -> Result<Self> {
        let p = Self {
            l_scale,
            slope,
            midpoint,
            offset,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.l_scale, self.slope, self.midpoint, self.offset]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.l_scale > 0.0) || !(self.slope > 0.0) {
            return Err(Error::contract(format!(
                "sigmoid needs finite parameters with L > 0 and slope > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        sigmoid_eval(self, s)
    }

    pub fn inverse(&self, c: f64) -> f64 {
        sigmoid_inverse(self, c)
    }

    /// Half-width of the excluded band at each end of the confidence range.
    pub fn clamp_margin(&self) -> f64 {
        1e-12 * self.l_scale
    }
}

pub fn sigmoid_eval(p: &SigmoidParams, s: f64) -> f64 {
    p.l_scale / (1.0 + (-p.slope * (s - p.midpoint)).exp()) + p.offset
}

/// Total inverse of `g`: the confidence is clamped into `(b + δ, L + b − δ)`
/// with `δ = 1e-12·L`, inverted in closed form, and the cosine clamped to
/// `[−1, 1]`. The flag reports whether either clamp engaged.
pub fn sigmoid_inverse_checked(p: &SigmoidParams, c: f64) -> (f64, bool) {
    let delta = p.clamp_margin();
    let lo = p.offset + delta;
    let hi = p.offset + p.l_scale - delta;
    let (c_in, mut clamped) = if c.is_nan() {
        (p.offset + 0.5 * p.l_scale, true)
    } else if c < lo {
        (lo, true)
    } else if c > hi {
        (hi, true)
    } else {
        (c, false)
    };
    let s = p.midpoint - (p.l_scale / (c_in - p.offset) - 1.0).ln() / p.slope;
    if !(-1.0..=1.0).contains(&s) {
        clamped = true;
    }
    (s.clamp(-1.0, 1.0), clamped)
}

pub fn sigmoid_inverse(p: &SigmoidParams, c: f64) -> f64 {
    sigmoid_inverse_checked(p, c).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub params: SigmoidParams,
    /// Mean absolute residual `|g(cos) − conf|` over the fitted pairs.
    pub mae: f64,
    pub pair_count: usize,
}

pub const MIN_FIT_PAIRS: usize = 20;
pub const MIN_FIT_COSINE_RANGE: f64 = 0.5;
const FIT_RESTARTS: usize = 5;

fn params_from(theta: &[f64], fixed_offset: Option<f64>) -> SigmoidParams {
    SigmoidParams {
        l_scale: theta[0].exp(),
        slope: theta[1].exp(),
        midpoint: theta[2],
        offset: fixed_offset.unwrap_or_else(|| theta[3]),
    }
}

fn mean_abs_error(p: &SigmoidParams, pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .map(|&(s, c)| (sigmoid_eval(p, s) - c).abs())
        .sum::<f64>()
        / pairs.len() as f64
}

/// Least-absolute-deviation fit of `g` to `(cosine, confidence)` pairs.
///
/// Nelder–Mead runs in `(ln L, ln k_s, d0, b)` from `L = 1, b = 0, k_s = 8,
/// d0 = median cosine`, then from five jittered starts drawn from the
/// `seed`-keyed stream; every run is re-polished from its own optimum and the
/// best curve wins.
pub fn fit_sigmoid(pairs: &[(f64, f64)], seed: u64) -> Result<SigmoidFit> {
    fit(pairs, seed, None)
}

/// Same fit with the offset pinned to `offset`, so only `(L, k_s, d0)` move.
pub fn fit_sigmoid_fixed_offset(
    pairs: &[(f64, f64)],
    seed: u64,
    offset: f64,
) -> Result<SigmoidFit> {
    if !offset.is_finite() {
        return Err(Error::Fit("offset must be finite".into()));
    }
    fit(pairs, seed, Some(offset))
}

fn fit(pairs: &[(f64, f64)], seed: u64, fixed_offset: Option<f64>) -> Result<SigmoidFit> {
    if pairs.len() < MIN_FIT_PAIRS {
        return Err(Error::Fit(format!(
            "need at least {MIN_FIT_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(s, c)| !s.is_finite() || !c.is_finite()) {
        return Err(Error::Fit("pairs contain non-finite values".into()));
    }
    let (mut cos_lo, mut cos_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut conf_lo, mut conf_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(s, c) in pairs {
        cos_lo = cos_lo.min(s);
        cos_hi = cos_hi.max(s);
        conf_lo = conf_lo.min(c);
        conf_hi = conf_hi.max(c);
    }
    if cos_hi - cos_lo < MIN_FIT_COSINE_RANGE {
        return Err(Error::Fit(format!(
            "cosines span {:.3}, need at least {MIN_FIT_COSINE_RANGE}",
            cos_hi - cos_lo
        )));
    }
    if conf_hi - conf_lo <= 1e-9 {
        return Err(Error::Fit(
            "confidences are constant; the curve is not identifiable".into(),
        ));
    }

    let mut cosines: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    cosines.sort_by(f64::total_cmp);
    let median = cosines[cosines.len() / 2];
    let dims = if fixed_offset.is_some() { 3 } else { 4 };
    let start = &[0.0, 8f64.ln(), median, 0.0][..dims];
    let steps = &[0.2, 0.3, 0.1, 0.05][..dims];
    let objective = |theta: &[f64]| mean_abs_error(&params_from(theta, fixed_offset), pairs);
    let opts = nelder_mead::Options::default();

    let mut jitter_rng = rng::stream(seed, "sigmoid-fit/restarts");
    let mut starts = vec![start.to_vec()];
    for _ in 0..FIT_RESTARTS {
        starts.push(
            start
                .iter()
                .zip(steps)
                .map(|(x, s)| {
                    let z: f64 = StandardNormal.sample(&mut jitter_rng);
                    x + 2.0 * s * z
                })
                .collect(),
        );
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in starts {
        let mut m = nelder_mead::minimize(objective, &x0, steps, &opts);
        for round in 1..=3 {
            let shrink = 0.1f64.powi(round);
            let polish_steps: Vec<f64> = steps.iter().map(|s| s * shrink).collect();
            let next = nelder_mead::minimize(objective, &m.x, &polish_steps, &opts);
            if next.value < m.value {
                m = next;
            }
        }
        if best.as_ref().is_none_or(|(_, v)| m.value < *v) {
            best = Some((m.x, m.value));
        }
    }
    let (theta, mae) = best.expect("at least one start");
    let params = params_from(&theta, fixed_offset);
    params
        .validate()
        .map_err(|e| Error::Fit(format!("optimizer left the feasible region: {e}")))?;
    Ok(SigmoidFit {
        params,
        mae,
        pair_count: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThresholdCriterion {
    /// Smallest threshold whose false-accept rate is at most the target.
    FarTarget(f64),
    /// Threshold maximizing `(TAR·|genuine| + (1−FAR)·|impostor|) / total`.
    BestAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau: f64,
    pub criterion: ThresholdCriterion,
    pub tar: f64,
    pub far: f64,
    pub accuracy: f64,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Fraction of `sorted_scores` that are `>= tau`.
fn accept_rate(sorted_scores: &[f64], tau: f64) -> f64 {
    let below = sorted_scores.partition_point(|&s| s < tau);
    (sorted_scores.len() - below) as f64 / sorted_scores.len() as f64
}

/// Picks a decision threshold (accept when `score >= τ`).
///
/// Candidates are the midpoints between consecutive distinct pooled scores,
/// plus the lowest score (accept everything) and a value just above the
/// highest (reject everything). Ties go to the larger `τ`.
pub fn calibrate_threshold(
    genuine: &[f64],
    impostor: &[f64],
    criterion: ThresholdCriterion,
) -> Result<ThresholdReport> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::contract(
            "threshold calibration needs non-empty genuine and impostor sets",
        ));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::contract(
            "threshold calibration scores must be finite",
        ));
    }
    if let ThresholdCriterion::FarTarget(alpha) = criterion {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::contract(format!(
                "FAR target {alpha} outside [0, 1]"
            )));
        }
    }
    let gen = sorted(genuine);
    let imp = sorted(impostor);
    let mut pooled: Vec<f64> = gen.iter().chain(&imp).cloned().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();

    let top = *pooled.last().expect("non-empty");
    let mut candidates = vec![pooled[0]];
    candidates.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(top + f64::EPSILON * top.abs().max(1.0) * 4.0);

    let total = (gen.len() + imp.len()) as f64;
    let evaluate = |tau: f64| {
        let tar = accept_rate(&gen, tau);
        let far = accept_rate(&imp, tau);
        let accuracy = (tar * gen.len() as f64 + (1.0 - far) * imp.len() as f64) / total;
        ThresholdReport {
            tau,
            criterion,
            tar,
            far,
            accuracy,
        }
    };

    let chosen = match criterion {
        ThresholdCriterion::BestAccuracy => {
            let mut best = evaluate(candidates[0]);
            for &tau in &candidates[1..] {
                let r = evaluate(tau);
                // candidates ascend, so `>=` prefers the larger τ on ties
                if r.accuracy >= best.accuracy {
                    best = r;
                }
            }
            best
        }
        ThresholdCriterion::FarTarget(alpha) => candidates
            .iter()
            .map(|&tau| evaluate(tau))
            .find(|r| r.far <= alpha)
            .expect("the reject-all candidate has FAR 0"),
    };
    Ok(chosen)
}

/// Genuine/impostor pairs drawn from a stream, used by tests and the harness
/// to exercise calibration without a world.
pub fn synthetic_scores<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    center: f64,
    spread: f64,
) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            center + spread * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: f64, k: f64, d0: f64, b: f64) -> SigmoidParams {
        SigmoidParams::new(l, k, d0, b).unwrap()
    }

    #[test]
    fn eval_examples() {
        let g = p(1.0, 10.0, 0.2, 0.0);
        assert_eq!(g.eval(0.2), 0.5);
        let h = p(2.0, 4.0, -0.1, 0.3);
        assert!((h.eval(-0.1) - 1.3).abs() < 1e-15);
        assert!((h.eval(-0.1 + 50.0 / 4.0) - 2.3).abs() < 1e-9);
    }

    #[test]
    fn monotone_on_grid() {
        let g = p(0.9, 12.0, 0.3, 0.05);
        let values: Vec<f64> = (0..1000)
            .map(|i| g.eval(-1.0 + 2.0 * i as f64 / 999.0))
            .collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn inverse_examples_and_round_trips() {
        let g = p(1.0, 12.0, 0.3, 0.0);
        assert!((g.inverse(0.5) - 0.3).abs() < 1e-15);
        for i in 0..=198 {
            let s = -0.99 + i as f64 * 0.01;
            assert!((g.inverse(g.eval(s)) - s).abs() < 1e-6, "s={s}");
        }
        let (lo, hi) = (g.eval(-1.0), g.eval(1.0));
        for i in 0..=1000 {
            let c = lo + (hi - lo) * i as f64 / 1000.0;
            assert!((g.eval(g.inverse(c)) - c).abs() < 1e-6, "c={c}");
        }
        let (s, clamped) = sigmoid_inverse_checked(&g, 1.0);
        assert!(s.is_finite() && s <= 1.0 && clamped);
        let (s, clamped) = sigmoid_inverse_checked(&g, -3.0);
        assert!(s >= -1.0 && clamped);
        assert!(sigmoid_inverse_checked(&g, f64::NAN).0.is_finite());
    }

    #[test]
    fn params_validation() {
        assert!(SigmoidParams::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(SigmoidParams::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(SigmoidParams::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    fn grid_pairs(g: &SigmoidParams, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                (s, g.eval(s))
            })
            .collect()
    }

    #[test]
    fn noiseless_fit_recovers_the_curve() {
        let truth = p(1.0, 12.0, 0.3, 0.0);
        let fit = fit_sigmoid(&grid_pairs(&truth, 201), 1).unwrap();
        assert!(fit.mae < 1e-4, "mae {}", fit.mae);
        let sup = (0..=2000)
            .map(|i| -1.0 + i as f64 / 1000.0)
            .map(|s| (fit.params.eval(s) - truth.eval(s)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-3, "sup {sup}");
    }

    #[test]
    fn fixed_offset_fit_keeps_the_offset() {
        let truth = p(0.9, 10.0, 0.2, 0.0);
        let fit = fit_sigmoid_fixed_offset(&grid_pairs(&truth, 101), 2, 0.0).unwrap();
        assert_eq!(fit.params.offset, 0.0);
        assert!(fit.mae < 1e-4, "mae {}", fit.mae);
        assert!((fit.params.midpoint - 0.2).abs() < 1e-3);
        assert!(fit_sigmoid_fixed_offset(&grid_pairs(&truth, 101), 2, f64::NAN).is_err());
    }

    #[test]
    fn noisy_fit_stays_near_noise_floor() {
        let truth = p(1.0, 12.0, 0.3, 0.0);
        let mut r = rng::stream(4, "noise");
        let pairs: Vec<(f64, f64)> = grid_pairs(&truth, 400)
            .into_iter()
            .map(|(s, c)| (s, c + r.random_range(-0.01..0.01)))
            .collect();
        let fit = fit_sigmoid(&pairs, 2).unwrap();
        assert!(fit.mae <= 0.02, "mae {}", fit.mae);
    }

    #[test]
    fn degenerate_data_is_a_fit_error() {
        let flat: Vec<(f64, f64)> = (0..50).map(|i| (-1.0 + i as f64 / 25.0, 0.4)).collect();
        assert!(matches!(fit_sigmoid(&flat, 0), Err(Error::Fit(_))));
        let same_cos: Vec<(f64, f64)> = (0..50).map(|i| (0.3, i as f64 / 50.0)).collect();
        assert!(matches!(fit_sigmoid(&same_cos, 0), Err(Error::Fit(_))));
        assert!(matches!(fit_sigmoid(&same_cos[..5], 0), Err(Error::Fit(_))));
    }

    #[test]
    fn fit_is_deterministic_in_seed() {
        let truth = p(0.8, 9.0, 0.1, 0.1);
        let pairs = grid_pairs(&truth, 60);
        assert_eq!(
            fit_sigmoid(&pairs, 3).unwrap(),
            fit_sigmoid(&pairs, 3).unwrap()
        );
    }

    #[test]
    fn separated_scores_put_threshold_in_the_gap() {
        let r = calibrate_threshold(
            &[0.8, 0.9, 0.95],
            &[0.1, 0.2, 0.3],
            ThresholdCriterion::BestAccuracy,
        )
        .unwrap();
        assert!((r.tau - 0.55).abs() < 1e-12);
        assert_eq!((r.tar, r.far, r.accuracy), (1.0, 0.0, 1.0));
    }

    #[test]
    fn identical_distributions_give_chance_accuracy() {
        let s = [0.1, 0.4, 0.7, 0.9];
        let r = calibrate_threshold(&s, &s, ThresholdCriterion::BestAccuracy).unwrap();
        assert!((r.accuracy - 0.5).abs() < 1e-12);
        // ties go to the largest τ: reject everything
        assert_eq!((r.tar, r.far), (0.0, 0.0));
    }

    #[test]
    fn far_target_is_smallest_admissible_threshold() {
        let imp: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let gen = vec![2.0; 10];
        let r = calibrate_threshold(&gen, &imp, ThresholdCriterion::FarTarget(1e-2)).unwrap();
        assert!(r.far <= 1e-2);
        // 10 impostors at or above 0.9895 → FAR exactly 1%
        assert!((r.tau - 0.9895).abs() < 1e-12, "tau {}", r.tau);
        assert_eq!(r.tar, 1.0);
        let zero = calibrate_threshold(&gen, &imp, ThresholdCriterion::FarTarget(0.0)).unwrap();
        assert_eq!(zero.far, 0.0);
        assert!(zero.tau > 0.999);
    }

    #[test]
    fn calibration_preconditions_and_determinism() {
        assert!(calibrate_threshold(&[], &[0.1], ThresholdCriterion::BestAccuracy).is_err());
        assert!(calibrate_threshold(&[0.1], &[0.1], ThresholdCriterion::FarTarget(2.0)).is_err());
        let mut r = rng::stream(1, "scores");
        let gen = synthetic_scores(&mut r, 300, 0.7, 0.1);
        let imp = synthetic_scores(&mut r, 300, 0.1, 0.1);
        let a = calibrate_threshold(&gen, &imp, ThresholdCriterion::BestAccuracy).unwrap();
        let b = calibrate_threshold(&gen, &imp, ThresholdCriterion::BestAccuracy).unwrap();
        assert_eq!(a, b);
        assert!(a.accuracy > 0.97);
    }
}
