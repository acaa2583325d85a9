//! Scalar activation functions and grid-based checks of the saturating
//! sigmoid classes used by the controllability results.
//!
//! An [`Activation`] carries its value, derivative, saturation limit and a
//! *tail* `limit - eval(s)`. The tail is kept as a separate function because
//! `1 - tanh(s)` rounds to zero in double precision for `s > 19`, while the
//! tail-ratio condition needs it far beyond that.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Step used for central differences when no analytic derivative is given.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Denominators below this are flagged as underflowing.
pub const UNDERFLOW_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("activation reaches its limit at s = {s}")]
    AtLimit { s: f64 },
    #[error("unknown activation `{0}`")]
    Unknown(String),
}

/// An odd, saturating scalar nonlinearity.
#[derive(Clone)]
pub struct Activation {
    name: String,
    eval: ScalarFn,
    deriv: Option<ScalarFn>,
    tail: Option<ScalarFn>,
    limit: f64,
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Activation").field("name", &self.name).field("limit", &self.limit).finish()
    }
}

impl Activation {
    /// Builds an activation from its value function and saturation limit.
    /// Derivative falls back to central differences, tail to `limit - eval`.
    pub fn new<F>(name: impl Into<String>, eval: F, limit: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), eval: Arc::new(eval), deriv: None, tail: None, limit }
    }

    pub fn with_derivative<F>(mut self, deriv: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.deriv = Some(Arc::new(deriv));
        self
    }

    /// Supplies an accurate `limit - eval(s)`.
    pub fn with_tail<F>(mut self, tail: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.tail = Some(Arc::new(tail));
        self
    }

    /// Hyperbolic tangent, limit 1.
    pub fn tanh() -> Self {
        Self::new("tanh", f64::tanh, 1.0)
            .with_derivative(|s| {
                // sech^2, which stays positive where 1 - tanh^2 rounds to 0
                let c = s.cosh();
                1.0 / (c * c)
            })
            .with_tail(|s| 2.0 / ((2.0 * s).exp() + 1.0))
    }

    /// `s / (1 + |s|)`, limit 1. Odd and saturating but with an algebraic tail.
    pub fn softsign() -> Self {
        Self::new("softsign", |s| s / (1.0 + s.abs()), 1.0)
            .with_derivative(|s| {
                let d = 1.0 + s.abs();
                1.0 / (d * d)
            })
            .with_tail(|s| if s >= 0.0 { 1.0 / (1.0 + s) } else { 1.0 - s / (1.0 - s) })
    }

    /// `k * self`, with the limit, derivative and tail scaled alike.
    pub fn scaled(&self, k: f64) -> Self {
        let eval = Arc::clone(&self.eval);
        let mut out = Self::new(format!("{}*{}", k, self.name), move |s| k * eval(s), k * self.limit);
        if let Some(d) = self.deriv.clone() {
            out = out.with_derivative(move |s| k * d(s));
        }
        if let Some(t) = self.tail.clone() {
            out = out.with_tail(move |s| k * t(s));
        }
        out
    }

    /// Looks up one of the built-in activations by name.
    pub fn by_name(name: &str) -> Result<Self, ActivationError> {
        match name {
            "tanh" => Ok(Self::tanh()),
            "softsign" => Ok(Self::softsign()),
            other => Err(ActivationError::Unknown(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(s),
            None => {
                let h = DEFAULT_FD_STEP;
                (self.eval(s + h) - self.eval(s - h)) / (2.0 * h)
            }
        }
    }

    /// `limit - eval(s)`.
    pub fn tail(&self, s: f64) -> f64 {
        match &self.tail {
            Some(t) => t(s),
            None => self.limit - self.eval(s),
        }
    }

    /// `eval(a) - eval(b)` without cancellation when both arguments sit in
    /// the same saturated tail.
    pub fn difference(&self, a: f64, b: f64) -> f64 {
        if a >= 0.0 && b >= 0.0 {
            self.tail(b) - self.tail(a)
        } else if a <= 0.0 && b <= 0.0 {
            // eval(x) = tail(-x) - limit for an odd activation
            self.tail(-a) - self.tail(-b)
        } else {
            self.eval(a) - self.eval(b)
        }
    }

    /// Inverse on the open range `(-limit, limit)` by bisection on the
    /// monotone activation.
    pub fn inverse(&self, v: f64) -> Result<f64, ActivationError> {
        if !(v.abs() < self.limit) || !v.is_finite() {
            return Err(ActivationError::Domain(format!("inverse requires |v| < {}, got {}", self.limit, v)));
        }
        if self.name == "tanh" {
            return Ok(v.atanh());
        }
        let mut hi = 1.0;
        while self.eval(hi) <= v.abs() {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(ActivationError::Domain(format!("no finite preimage for {v}")));
            }
        }
        let (mut lo, mut hi) = (-hi, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.eval(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// The hyperbolic tangent activation.
pub fn make_tanh() -> Activation {
    Activation::tanh()
}

/// Result of a single tail-ratio evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRatio {
    pub value: f64,
    /// Denominator fell below [`UNDERFLOW_THRESHOLD`].
    pub underflow: bool,
}

/// `(limit - σ(a + b s)) / (limit - σ(s))`.
pub fn limit_ratio(act: &Activation, a: f64, b: f64, s: f64) -> Result<LimitRatio, ActivationError> {
    if !(b > 1.0) {
        return Err(ActivationError::Domain(format!("limit ratio requires b > 1, got {b}")));
    }
    let den = act.tail(s);
    if !(den > 0.0) {
        return Err(ActivationError::AtLimit { s });
    }
    let num = act.tail(a + b * s);
    Ok(LimitRatio { value: num / den, underflow: den < UNDERFLOW_THRESHOLD })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub ratio: f64,
    pub underflow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FailureWitness {
    /// `|σ(-s) + σ(s)|` too large.
    Odd { s: f64, defect: f64 },
    /// `σ(s)` reached or exceeded the limit.
    Bound { s: f64, value: f64 },
    /// A ratio that is negative or not finite.
    Ratio { a: f64, b: f64, s: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "witness")]
pub enum AdmissibilityVerdict {
    Admissible,
    Inconclusive,
    Fails(FailureWitness),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub activation: String,
    pub odd_defect: f64,
    /// `max(σ(s) - limit)` over samples; negative when strictly below.
    pub bound_defect: f64,
    pub ratio_samples: Vec<RatioSample>,
    pub ratio_monotone: bool,
    pub verdict: AdmissibilityVerdict,
}

pub const ODD_TOLERANCE: f64 = 1e-10;
pub const RATIO_THRESHOLD: f64 = 1e-6;

/// Grid defaults used when a verdict needs an activation report.
pub fn default_grids() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (vec![-1.0, 0.0, 2.0], vec![1.5, 2.0], vec![5.0, 10.0, 15.0, 20.0])
}

/// Grid check of class membership: oddness, strict bound below the limit,
/// and monotone decay of the tail ratio below [`RATIO_THRESHOLD`].
///
/// A grid cannot prove a limit. Decay that stalls above the threshold, or
/// that is not monotone, yields `Inconclusive`; `Fails` is reserved for
/// concrete counterexamples to oddness or the bound.
pub fn check_admissible(
    act: &Activation,
    a_grid: &[f64],
    b_grid: &[f64],
    s_grid: &[f64],
) -> Result<AdmissibilityReport, ActivationError> {
    if a_grid.is_empty() || b_grid.is_empty() || s_grid.is_empty() {
        return Err(ActivationError::Domain("grids must be nonempty".into()));
    }
    if let Some(b) = b_grid.iter().find(|b| !(**b > 1.0)) {
        return Err(ActivationError::Domain(format!("b grid entries must exceed 1, got {b}")));
    }
    if s_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ActivationError::Domain("s grid must be strictly increasing".into()));
    }

    let mut probes: Vec<f64> = (0..10_000).map(|i| -50.0 + 100.0 * i as f64 / 9_999.0).collect();
    probes.extend_from_slice(s_grid);

    let mut odd = (0.0_f64, 0.0_f64);
    let mut bound = (f64::NEG_INFINITY, 0.0_f64);
    let mut bound_witness = None;
    for &s in &probes {
        let d = (act.eval(-s) + act.eval(s)).abs();
        if d > odd.0 {
            odd = (d, s);
        }
        let tail = act.tail(s);
        if -tail > bound.0 {
            bound = (-tail, s);
        }
        if !(tail > 0.0) && bound_witness.is_none() {
            bound_witness = Some(FailureWitness::Bound { s, value: act.eval(s) });
        }
    }

    let mut samples = Vec::with_capacity(a_grid.len() * b_grid.len() * s_grid.len());
    let mut monotone = true;
    let mut decays = true;
    let mut ratio_witness = None;
    for &a in a_grid {
        for &b in b_grid {
            let mut prev: Option<f64> = None;
            for &s in s_grid {
                let r = match limit_ratio(act, a, b, s) {
                    Ok(r) => r,
                    Err(ActivationError::AtLimit { s }) => {
                        bound_witness.get_or_insert(FailureWitness::Bound { s, value: act.eval(s) });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !(r.value.is_finite() && r.value >= 0.0) && ratio_witness.is_none() {
                    ratio_witness = Some(FailureWitness::Ratio { a, b, s, ratio: r.value });
                }
                if let Some(p) = prev {
                    if !(r.value < p) {
                        monotone = false;
                    }
                }
                prev = Some(r.value);
                samples.push(RatioSample { a, b, s, ratio: r.value, underflow: r.underflow });
            }
            if !prev.is_some_and(|p| p < RATIO_THRESHOLD) {
                decays = false;
            }
        }
    }

    let verdict = if odd.0 > ODD_TOLERANCE {
        AdmissibilityVerdict::Fails(FailureWitness::Odd { s: odd.1, defect: odd.0 })
    } else if let Some(w) = bound_witness {
        AdmissibilityVerdict::Fails(w)
    } else if let Some(w) = ratio_witness {
        AdmissibilityVerdict::Fails(w)
    } else if monotone && decays {
        AdmissibilityVerdict::Admissible
    } else {
        AdmissibilityVerdict::Inconclusive
    };

    Ok(AdmissibilityReport {
        activation: act.name.clone(),
        odd_defect: odd.0,
        bound_defect: bound.0,
        ratio_samples: samples,
        ratio_monotone: monotone,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SmoothClassWitness {
    NonPositiveDerivative { s: f64, deriv: f64 },
    DerivativeAtZero { deriv: f64 },
    Limit { limit: f64 },
    DerivativeIncreases { s: f64, deriv: f64, next_s: f64, next_deriv: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothClassReport {
    pub activation: String,
    pub deriv_at_zero: f64,
    pub limit: f64,
    pub passed: bool,
    pub failures: Vec<SmoothClassWitness>,
}

/// Checks `σ' > 0` on the grid, `σ'(0) = 1`, `limit = 1`, and `σ'`
/// non-increasing along the nonnegative grid points.
pub fn check_smooth_class(act: &Activation, s_grid: &[f64]) -> SmoothClassReport {
    let mut failures = Vec::new();
    for &s in s_grid {
        let d = act.deriv(s);
        if !(d > 0.0) {
            failures.push(SmoothClassWitness::NonPositiveDerivative { s, deriv: d });
        }
    }
    let d0 = act.deriv(0.0);
    if (d0 - 1.0).abs() > 1e-9 {
        failures.push(SmoothClassWitness::DerivativeAtZero { deriv: d0 });
    }
    if act.limit != 1.0 {
        failures.push(SmoothClassWitness::Limit { limit: act.limit });
    }
    let mut nonneg: Vec<f64> = s_grid.iter().copied().filter(|s| *s >= 0.0).collect();
    nonneg.sort_by(f64::total_cmp);
    for w in nonneg.windows(2) {
        let (d, dn) = (act.deriv(w[0]), act.deriv(w[1]));
        if dn > d {
            failures.push(SmoothClassWitness::DerivativeIncreases { s: w[0], deriv: d, next_s: w[1], next_deriv: dn });
        }
    }
    SmoothClassReport {
        activation: act.name.clone(),
        deriv_at_zero: d0,
        limit: act.limit,
        passed: failures.is_empty(),
        failures,
    }
}
