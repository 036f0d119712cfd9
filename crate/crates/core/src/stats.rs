//! Special functions and goodness-of-fit tools for the Beta law of random
//! subsphere projections.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete Beta, modified Lentz evaluation.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete Beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::contract(format!(
            "incomplete beta needs positive shapes, got ({a}, {b})"
        )));
    }
    if x.is_nan() {
        return Err(Error::contract("incomplete beta evaluated at NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side.
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Beta(a, b) distribution with the implemented CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaDistribution {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaDistribution {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::contract(format!(
                "Beta shapes must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Law of the squared cosine between a uniform point of S^{d-1} and its
    /// projection onto a k-dimensional subsphere: Beta(k/2, (d-k)/2).
    pub fn projection_law(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= d {
            return Err(Error::contract(format!(
                "projection law needs 1 <= k < d, got k={k}, d={d}"
            )));
        }
        Self::new(k as f64 / 2.0, (d - k) as f64 / 2.0)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        regularized_incomplete_beta(self.alpha, self.beta, x).expect("shapes validated in new")
    }

    /// Upper tail `P[X >= x]`.
    pub fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
///
/// `samples` is sorted in place.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("KS statistic of an empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::contract("KS statistic of a sample containing NaN"));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered above"));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        d = d.max((f - below).abs()).max((above - f).abs());
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic p-value of the one-sample KS statistic, truncated to the first
/// two terms of the Kolmogorov series with the usual small-sample correction
/// `λ = (√n + 0.12 + 0.11/√n)·D`.
pub fn kolmogorov_p_value(statistic: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * statistic;
    if lambda <= 0.0 {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let p = if lambda < 1.0 {
        // the alternating tail series converges badly here; use the dual
        // theta-function form of the CDF instead, also truncated at two terms
        let pi2 = std::f64::consts::PI.powi(2);
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * ((-pi2 / (8.0 * l2)).exp() + (-9.0 * pi2 / (8.0 * l2)).exp());
        1.0 - cdf
    } else {
        2.0 * ((-2.0 * l2).exp() - (-8.0 * l2).exp())
    };
    p.clamp(0.0, 1.0)
}

/// Fixed-width histogram over `[lo, hi)`; values outside are clamped into the
/// edge bins so no sample is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::contract(format!(
                "histogram needs bins >= 1 and hi > lo, got {bins} bins over [{lo}, {hi})"
            )));
        }
        Ok(Self {
            lo,
            width: (hi - lo) / bins as f64,
            counts: vec![0; bins],
        })
    }

    pub fn from_values(lo: f64, hi: f64, bins: usize, values: &[f64]) -> Result<Self> {
        let mut h = Self::new(lo, hi, bins)?;
        values.iter().for_each(|&v| h.add(v));
        Ok(h)
    }

    pub fn add(&mut self, value: f64) {
        let last = self.counts.len() - 1;
        let idx = ((value - self.lo) / self.width).floor();
        let idx = if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(last)
        };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(bin_left, count)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.lo + i as f64 * self.width, c))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (left, count) in self.rows() {
            out.push_str(&format!("{left},{count}\n"));
        }
        out
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta as OracleBeta, ContinuousCDF};
    use statrs::function::gamma::ln_gamma as oracle_ln_gamma;

    #[test]
    fn ln_gamma_matches_factorials_and_oracle() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
        for &x in &[0.1, 0.7, 3.3, 64.0, 256.5, 1000.0] {
            let rel = (ln_gamma(x) - oracle_ln_gamma(x)).abs() / oracle_ln_gamma(x).abs().max(1.0);
            assert!(rel < 1e-12, "x={x}");
        }
    }

    #[test]
    fn beta_1_3_has_closed_form_cdf() {
        // F(t) = 1 - (1 - t)^3
        let law = BetaDistribution::new(1.0, 3.0).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let exact = 1.0 - (1.0 - t).powi(3);
            assert!((law.cdf(t) - exact).abs() < 1e-13, "t={t}");
        }
    }

    #[test]
    fn incomplete_beta_agrees_with_independent_oracle() {
        for &(a, b) in &[
            (0.5, 0.5),
            (1.0, 31.0),
            (8.0, 24.0),
            (64.0, 192.0),
            (128.0, 128.0),
            (1.5, 2.5),
        ] {
            let oracle = OracleBeta::new(a, b).unwrap();
            let law = BetaDistribution::new(a, b).unwrap();
            for i in 1..100 {
                let t = i as f64 / 100.0;
                assert!(
                    (law.cdf(t) - oracle.cdf(t)).abs() < 1e-10,
                    "a={a} b={b} t={t}"
                );
            }
        }
    }

    #[test]
    fn projection_law_moments() {
        let law = BetaDistribution::projection_law(512, 128).unwrap();
        assert_eq!(law.mean(), 0.25);
        // αβ / ((α+β)²(α+β+1)) with α=64, β=192
        assert!((law.variance() - 64.0 * 192.0 / (256.0 * 256.0 * 257.0)).abs() < 1e-18);
        assert!(BetaDistribution::projection_law(4, 4).is_err());
        assert!(BetaDistribution::projection_law(4, 0).is_err());
    }

    #[test]
    fn ks_statistic_of_perfect_grid_is_half_step() {
        let n = 100;
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&mut xs, |x| x).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_statistic(&mut [], |x| x).is_err());
    }

    #[test]
    fn kolmogorov_p_value_limits() {
        assert_eq!(kolmogorov_p_value(0.0, 1000), 1.0);
        assert!(kolmogorov_p_value(0.2, 1000) < 1e-12);
        // λ ≈ 1.36 is the classical 5% point.
        let n = 10_000;
        let sn = (n as f64).sqrt();
        let d = 1.358 / (sn + 0.12 + 0.11 / sn);
        assert!((kolmogorov_p_value(d, n) - 0.05).abs() < 2e-3);
    }

    #[test]
    fn histogram_clamps_into_edge_bins() {
        let h = Histogram::from_values(0.0, 1.0, 4, &[-0.5, 0.1, 0.3, 0.99, 1.0, 7.0]).unwrap();
        assert_eq!(h.counts, vec![2, 1, 0, 3]);
        assert_eq!(h.total(), 6);
        assert!(h.to_csv().starts_with("bin_left,count\n0,2\n0.25,1\n"));
    }
}
