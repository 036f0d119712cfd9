//! Attack success rate (ASR), identity matching rate (IMR) and their
//! summaries.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackMode, AttackResult};
use crate::error::{Error, Result};

fn accepted(r: &AttackResult, tau_name: &str) -> Result<bool> {
    r.accepted(tau_name).ok_or_else(|| {
        Error::contract(format!(
            "result for target {} was not evaluated at threshold '{tau_name}'",
            r.target_id
        ))
    })
}

fn rate<F: Fn(&AttackResult) -> Result<bool>>(results: &[AttackResult], hit: F) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::contract("rates need at least one result"));
    }
    let mut hits = 0usize;
    for r in results {
        hits += hit(r)? as usize;
    }
    Ok(hits as f64 / results.len() as f64)
}

/// Fraction of results that are accepted at `tau_name` and carry the
/// attribute. The results are expected to come from attribute-negative
/// targets, so the denominator is all of them.
pub fn compute_asr(results: &[AttackResult], tau_name: &str) -> Result<f64> {
    rate(results, |r| Ok(accepted(r, tau_name)? && r.attribute_ok))
}

/// Fraction of results accepted at `tau_name`, attribute ignored.
pub fn compute_imr(results: &[AttackResult], tau_name: &str) -> Result<f64> {
    rate(results, |r| accepted(r, tau_name))
}

/// Standard error of a binomial proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Run-level facts copied into every summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub mode: AttackMode,
    pub attribute: String,
    pub k: usize,
    pub d: usize,
    pub eta: f64,
    pub seed: u64,
    pub fingerprint: String,
}

/// One summary row per (run, threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mode: AttackMode,
    pub attribute: String,
    pub k: usize,
    pub d: usize,
    pub eta: f64,
    pub tau_name: String,
    pub tau: f64,
    pub asr: f64,
    pub imr: f64,
    pub n: usize,
    pub seed: u64,
    pub asr_se: f64,
    pub imr_se: f64,
    pub fingerprint: String,
}

impl MetricSummary {
    pub const CSV_HEADER: [&'static str; 14] = [
        "mode",
        "attribute",
        "k",
        "d",
        "eta",
        "tau_name",
        "tau",
        "asr",
        "imr",
        "n",
        "seed",
        "asr_se",
        "imr_se",
        "fingerprint",
    ];
}

pub fn summarize(
    results: &[AttackResult],
    ctx: &RunContext,
    tau_name: &str,
    tau: f64,
) -> Result<MetricSummary> {
    let asr = compute_asr(results, tau_name)?;
    let imr = compute_imr(results, tau_name)?;
    let n = results.len();
    Ok(MetricSummary {
        mode: ctx.mode,
        attribute: ctx.attribute.clone(),
        k: ctx.k,
        d: ctx.d,
        eta: ctx.eta,
        tau_name: tau_name.to_string(),
        tau,
        asr,
        imr,
        n,
        seed: ctx.seed,
        asr_se: binomial_se(asr, n),
        imr_se: binomial_se(imr, n),
        fingerprint: ctx.fingerprint.clone(),
    })
}

/// Verification rates of a score set at threshold `tau` (accept when `score >= tau`).
pub fn acceptance_rate(scores: &[f64], tau: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}
