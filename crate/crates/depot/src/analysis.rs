//! Probability that a randomly drawn auditor committee has a dishonest
//! majority, and the minimum committee size that pushes it under a target.
//!
//! With `n` auditors each answering correctly with probability `p`, the
//! number of correct answers is binomial. The committee fails when at most
//! `n/2` answers are correct. [`dishonest_majority_normal`] evaluates the
//! normal approximation of that tail as the definite integral of
//! N(np, np(1-p)) from 0 to n/2 — no continuity correction, lower bound 0,
//! in closed form through the Gaussian error integral.
//! [`dishonest_majority_exact`] is the exact binomial sum kept alongside as
//! an independent check on the approximation error, which is material in
//! these deep tails (roughly an order of magnitude).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Binomial committee model with the normal-approximation validity flags.
#[derive(Clone, Copy, Debug)]
pub struct MajorityModel {
    pub n: u32,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidityFlags {
    pub n_at_least_30: bool,
    pub mean_at_least_5: bool,
    pub complement_mean_at_least_5: bool,
}

impl ValidityFlags {
    pub fn all(&self) -> bool {
        self.n_at_least_30 && self.mean_at_least_5 && self.complement_mean_at_least_5
    }
}

impl MajorityModel {
    pub fn new(n: u32, p: f64) -> Result<MajorityModel> {
        if n == 0 {
            return Err(Error::Scenario("committee size must be positive".into()));
        }
        check_probability(p, 0.0, 1.0)?;
        Ok(MajorityModel { n, p })
    }

    pub fn mean(&self) -> f64 {
        f64::from(self.n) * self.p
    }

    pub fn std_dev(&self) -> f64 {
        (f64::from(self.n) * self.p * (1.0 - self.p)).sqrt()
    }

    /// The approximation is considered valid when n ≥ 30, np ≥ 5 and
    /// n(1-p) ≥ 5. The probability is still computable otherwise; callers
    /// decide what to do with an invalid model.
    pub fn validity(&self) -> ValidityFlags {
        ValidityFlags {
            n_at_least_30: self.n >= 30,
            mean_at_least_5: self.mean() >= 5.0,
            complement_mean_at_least_5: f64::from(self.n) * (1.0 - self.p) >= 5.0,
        }
    }

    /// Normal density of the correct-answer count at `x`.
    pub fn density(&self, x: f64) -> f64 {
        let mu = self.mean();
        let sigma = self.std_dev();
        let z = (x - mu) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn check_probability(p: f64, lo: f64, hi: f64) -> Result<()> {
    if !p.is_finite() || p <= lo || p >= hi {
        return Err(Error::InvalidProbability { value: p, lo, hi });
    }
    Ok(())
}

/// Standard normal CDF via the complementary error function, accurate in
/// the far tails.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// P(0 ≤ X ≤ n/2) under the normal approximation: Φ((n/2−μ)/σ) − Φ(−μ/σ).
pub fn dishonest_majority_normal(n: u32, p: f64) -> Result<f64> {
    let model = MajorityModel::new(n, p)?;
    let mu = model.mean();
    let sigma = model.std_dev();
    let upper = (f64::from(n) / 2.0 - mu) / sigma;
    let lower = -mu / sigma;
    Ok(phi(upper) - phi(lower))
}

/// P(X ≤ ⌊n/2⌋) for the exact binomial, summed in the log domain for
/// numerical stability.
pub fn dishonest_majority_exact(n: u32, p: f64) -> Result<f64> {
    check_probability(p, 0.0, 1.0)?;
    if n == 0 {
        return Err(Error::Scenario("committee size must be positive".into()));
    }
    let n_f = f64::from(n);
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let ln_n_fact = libm::lgamma(n_f + 1.0);
    let mut sum = 0.0f64;
    for k in 0..=n / 2 {
        let k_f = f64::from(k);
        let ln_term = ln_n_fact - libm::lgamma(k_f + 1.0) - libm::lgamma(n_f - k_f + 1.0)
            + k_f * ln_p
            + (n_f - k_f) * ln_q;
        sum += ln_term.exp();
    }
    Ok(sum.min(1.0))
}

/// Smallest committee size n ≥ 30 with np ≥ 5 and n(1−p) ≥ 5 whose
/// normal-approximation dishonest-majority probability is below `target`.
/// Requires p > 1/2, otherwise no majority guarantee exists.
pub fn min_auditors(p: f64, target: f64) -> Result<u32> {
    check_probability(p, 0.5, 1.0)?;
    check_probability(target, 0.0, 1.0)?;
    let mut n = 30u32;
    loop {
        let model = MajorityModel::new(n, p)?;
        if model.validity().all() && dishonest_majority_normal(n, p)? < target {
            return Ok(n);
        }
        n += 1;
        assert!(n < 10_000_000, "min_auditors failed to converge");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u32,
    pub prob_normal: f64,
    pub prob_exact: f64,
}

/// The (n, probability) series for plotting, under both formulas.
pub fn curve(p: f64, n_min: u32, n_max: u32, step: u32) -> Result<Vec<CurvePoint>> {
    check_probability(p, 0.0, 1.0)?;
    if step == 0 {
        return Err(Error::Scenario("curve step must be positive".into()));
    }
    if n_min == 0 || n_min > n_max {
        return Err(Error::Scenario(format!(
            "bad curve range [{n_min}, {n_max}]"
        )));
    }
    let mut points = Vec::new();
    let mut n = n_min;
    while n <= n_max {
        points.push(CurvePoint {
            n,
            prob_normal: dishonest_majority_normal(n, p)?,
            prob_exact: dishonest_majority_exact(n, p)?,
        });
        n += step;
    }
    Ok(points)
}

/// Header line then one `n,prob_normal,prob_exact` row per point.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("n,prob_normal,prob_exact\n");
    for point in points {
        out.push_str(&format!(
            "{},{:e},{:e}\n",
            point.n, point.prob_normal, point.prob_exact
        ));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim();
    if header != "n,prob_normal,prob_exact" {
        return Err(Error::Decode(format!("unexpected curve header {header:?}")));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| Error::Decode(format!("row {}: missing {name}", i + 2)))
        };
        let n = next("n")?
            .parse::<u32>()
            .map_err(|e| Error::Decode(format!("row {}: {e}", i + 2)))?;
        let prob_normal = next("prob_normal")?
            .parse::<f64>()
            .map_err(|e| Error::Decode(format!("row {}: {e}", i + 2)))?;
        let prob_exact = next("prob_exact")?
            .parse::<f64>()
            .map_err(|e| Error::Decode(format!("row {}: {e}", i + 2)))?;
        points.push(CurvePoint {
            n,
            prob_normal,
            prob_exact,
        });
    }
    Ok(points)
}
