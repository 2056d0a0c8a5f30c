//! Chance-constraint decisions: a moment-only tail-bound fast path that can
//! certify `holds` without any fitting, and a fitted-CDF fallback.
//!
//! Bounds are sufficient-only: `fails` is issued exclusively by the exact
//! degenerate path or the fitted CDF.

use serde::Serialize;
use thiserror::Error;

use crate::fit::{fit_mixture, FitConfig, FitError, FitResult};
use crate::model::Dtmc;
use crate::moments::{derived_stats, reward_moments, MomentError, MomentVector};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("tail offset must be positive, got {0}")]
    NonPositiveOffset(f64),
    #[error("bound order must be at least 2, got {0}")]
    OrderTooSmall(u32),
    #[error("bound order {order} exceeds the {available} available moments")]
    OrderExceedsMoments { order: u32, available: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("threshold must be nonnegative, got {0}")]
    BadThreshold(f64),
    #[error("interval bounds must be ordered, got ({0}, {1})")]
    BadInterval(f64, f64),
    #[error(transparent)]
    Moments(#[from] MomentError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// The event whose probability is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum Requirement {
    /// `Pr(X <= r) >= alpha`
    AtMost { r: f64 },
    /// `Pr(X >= r) >= alpha`
    AtLeast { r: f64 },
    /// `Pr(lo <= X <= hi) >= alpha`
    Within { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChanceConstraint {
    pub requirement: Requirement,
    pub alpha: f64,
}

impl ChanceConstraint {
    pub fn new(requirement: Requirement, alpha: f64) -> Result<Self, CheckError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CheckError::BadAlpha(alpha));
        }
        match requirement {
            Requirement::AtMost { r } | Requirement::AtLeast { r } => {
                if !(r >= 0.0) {
                    return Err(CheckError::BadThreshold(r));
                }
            }
            Requirement::Within { lo, hi } => {
                if !(lo >= 0.0) {
                    return Err(CheckError::BadThreshold(lo));
                }
                if lo > hi {
                    return Err(CheckError::BadInterval(lo, hi));
                }
            }
        }
        Ok(Self { requirement, alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Holds,
    Fails,
    UndeterminedByBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Method {
    /// Zero-variance target decided exactly against the point mass.
    Degenerate,
    /// Certified by a concentration bound of the given order.
    Cantelli { order: u32, optimal_b: f64 },
    FittedCdf,
}

/// One tail-bound attempt, kept in the verdict even when the fitted path
/// decides later.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundAttempt {
    pub order: u32,
    /// Upper bound on the adverse tail.
    pub bound: f64,
    pub certifies: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub decision: Decision,
    pub method: Method,
    /// `[lo, hi]` interval containing the satisfaction probability.
    pub probability_estimate: (f64, f64),
    pub moments_used: usize,
    /// Fitted-path decision within `margin` of alpha: approximation error is
    /// not a proof.
    pub marginal: bool,
    /// The bound was tried and could not certify.
    pub bound_undetermined: bool,
    pub bound_attempts: Vec<BoundAttempt>,
    pub fit: Option<FitResult>,
}

#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub fit: FitConfig,
    /// Bound orders to try, cheapest certificate first.
    pub orders: Vec<u32>,
    /// Width of the `marginal` band around alpha for fitted decisions.
    pub margin: f64,
    /// Stop after the bound phase instead of fitting.
    pub bound_only: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            orders: vec![2, 3],
            margin: 0.02,
            bound_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CantelliBound {
    pub bound: f64,
    pub optimal_b: f64,
}

/// Central moments `E[(X - mu)^j]` for j = 0..order from raw moments.
fn central_moments(raw: &[f64], order: usize) -> Vec<f64> {
    let mu = raw[0];
    let mut central = vec![0.0; order + 1];
    central[0] = 1.0;
    for (j, c) in central.iter_mut().enumerate().skip(1) {
        let mut acc = (-mu).powi(j as i32);
        let mut binom = 1.0;
        for i in 1..=j {
            binom = binom * (j - i + 1) as f64 / i as f64;
            acc += binom * (-mu).powi((j - i) as i32) * raw[i - 1];
        }
        *c = acc;
    }
    central
}

/// `E[(Y + b)^n] / (a + b)^n` for the centered variable Y with the given
/// central moments; `sign` flips Y for the low tail.
fn centered_ratio(central: &[f64], n: usize, a: f64, b: f64, sign: f64) -> f64 {
    let mut num = 0.0;
    let mut binom = 1.0;
    for j in 0..=n {
        if j > 0 {
            binom = binom * (n - j + 1) as f64 / j as f64;
        }
        num += binom * b.powi((n - j) as i32) * central[j] * sign.powi(j as i32);
    }
    num / (a + b).powi(n as i32)
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo < 1e-8 * (1.0 + hi.abs()) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

fn cantelli_core(
    m: &MomentVector,
    a: f64,
    order: u32,
    low_tail: bool,
) -> Result<CantelliBound, CheckError> {
    if !(a > 0.0) {
        return Err(CheckError::NonPositiveOffset(a));
    }
    if order < 2 {
        return Err(CheckError::OrderTooSmall(order));
    }
    if (order as usize) > m.order() {
        return Err(CheckError::OrderExceedsMoments {
            order,
            available: m.order(),
        });
    }
    if order == 2 {
        let var = m.variance;
        let bound = (var / (var + a * a)).clamp(0.0, 1.0);
        let optimal_b = if a > 0.0 { var / a } else { 0.0 };
        return Ok(CantelliBound { bound, optimal_b });
    }
    let n = order as usize;
    let central = central_moments(&m.raw, n);
    let sign = if low_tail { -1.0 } else { 1.0 };
    // Markov on (Y + b)^n needs Y + b >= 0 for odd n; with X >= 0 that means
    // b >= mu on the high tail. Even orders go through |Y + b|.
    let b_lo = if n % 2 == 1 { m.mean() } else { 0.0 };
    let b_hi = b_lo + 200.0 * (a + m.sigma + m.mean() + 1.0);
    let (b_star, val) = golden_min(|b| centered_ratio(&central, n, a, b, sign), b_lo, b_hi);
    let at_lo = centered_ratio(&central, n, a, b_lo, sign);
    let (bound, optimal_b) = if at_lo < val { (at_lo, b_lo) } else { (val, b_star) };
    Ok(CantelliBound {
        bound: bound.clamp(0.0, 1.0),
        optimal_b,
    })
}

/// Upper bound on `Pr(X - E[X] >= a)`. Order 2 is the classic
/// `sigma^2 / (sigma^2 + a^2)`; higher orders minimize
/// `E[(X - mu + b)^n] / (a + b)^n` over the centering offset `b`.
pub fn cantelli_bound(m: &MomentVector, a: f64, order: u32) -> Result<CantelliBound, CheckError> {
    cantelli_core(m, a, order, false)
}

/// Upper bound on `Pr(E[X] - X >= a)`, the reflection of [`cantelli_bound`].
/// Only even orders apply: `mu - X` is unbounded below, so odd-power Markov
/// is invalid there.
pub fn cantelli_lower_bound(
    m: &MomentVector,
    a: f64,
    order: u32,
) -> Result<CantelliBound, CheckError> {
    cantelli_core(m, a, order, true)
}

fn degenerate_verdict(c: &ChanceConstraint, mean: f64, moments_used: usize) -> Verdict {
    let satisfied = match c.requirement {
        Requirement::AtMost { r } => mean <= r,
        Requirement::AtLeast { r } => mean >= r,
        Requirement::Within { lo, hi } => lo <= mean && mean <= hi,
    };
    let p = if satisfied { 1.0 } else { 0.0 };
    Verdict {
        decision: if p >= c.alpha {
            Decision::Holds
        } else {
            Decision::Fails
        },
        method: Method::Degenerate,
        probability_estimate: (p, p),
        moments_used,
        marginal: false,
        bound_undetermined: false,
        bound_attempts: Vec::new(),
        fit: None,
    }
}

/// Decide a chance constraint: exact for point masses, by concentration
/// bound when the moments already certify it, otherwise through the fitted
/// mixture CDF.
pub fn check_chance_constraint(
    d: &Dtmc,
    c: &ChanceConstraint,
    cfg: &CheckConfig,
) -> Result<Verdict, CheckError> {
    let max_order = cfg.orders.iter().copied().max().unwrap_or(2) as usize;
    let k = cfg.fit.moments.max(max_order).max(2);
    let raw = reward_moments(d, k)?.at_initial;
    let m = derived_stats(&raw, cfg.fit.scaling)?;
    let mean = m.mean();

    // Point mass: decide exactly.
    if m.variance <= 1e-12 * mean.mul_add(mean, 1.0) {
        return Ok(degenerate_verdict(c, mean, k));
    }

    // Bound phase. Applicable on the high tail of AtMost and the low tail of
    // AtLeast; intervals always go to the fitted path.
    let mut attempts = Vec::new();
    let mut certified: Option<(u32, f64, f64)> = None; // order, bound, optimal_b
    let tail: Option<(f64, bool)> = match c.requirement {
        Requirement::AtMost { r } if r > mean => Some((r - mean, false)),
        Requirement::AtLeast { r } if r < mean => Some((mean - r, true)),
        _ => None,
    };
    if let Some((a, low_tail)) = tail {
        for &order in &cfg.orders {
            if (order as usize) > k || (low_tail && order % 2 == 1) {
                continue;
            }
            let b = cantelli_core(&m, a, order, low_tail)?;
            let certifies = 1.0 - b.bound >= c.alpha;
            attempts.push(BoundAttempt {
                order,
                bound: b.bound,
                certifies,
            });
            if certifies {
                certified = Some((order, b.bound, b.optimal_b));
                break;
            }
        }
    }
    if let Some((order, bound, optimal_b)) = certified {
        return Ok(Verdict {
            decision: Decision::Holds,
            method: Method::Cantelli { order, optimal_b },
            probability_estimate: ((1.0 - bound).max(0.0), 1.0),
            moments_used: k,
            marginal: false,
            bound_undetermined: false,
            bound_attempts: attempts,
            fit: None,
        });
    }
    if cfg.bound_only {
        let last = attempts.last();
        return Ok(Verdict {
            decision: Decision::UndeterminedByBound,
            method: Method::Cantelli {
                order: last.map(|a| a.order).unwrap_or(0),
                optimal_b: 0.0,
            },
            probability_estimate: (0.0, 1.0),
            moments_used: k,
            marginal: false,
            bound_undetermined: true,
            bound_attempts: attempts,
            fit: None,
        });
    }

    // Fitted path.
    let fit = fit_mixture(&m, &cfg.fit)?;
    let estimate = match c.requirement {
        Requirement::AtMost { r } => fit.mixture.cdf(r),
        Requirement::AtLeast { r } => 1.0 - fit.mixture.cdf(r),
        Requirement::Within { lo, hi } => fit.mixture.cdf(hi) - fit.mixture.cdf(lo),
    }
    .clamp(0.0, 1.0);
    Ok(Verdict {
        decision: if estimate >= c.alpha {
            Decision::Holds
        } else {
            Decision::Fails
        },
        method: Method::FittedCdf,
        probability_estimate: (estimate, estimate),
        moments_used: k,
        marginal: (estimate - c.alpha).abs() < cfg.margin,
        bound_undetermined: !attempts.is_empty(),
        bound_attempts: attempts,
        fit: Some(fit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    const GEOMETRIC: &str =
        "dtmc v1\nstate s0 reward=1\nstate done reward=0 absorbing\ninitial s0\ntrans s0 s0 p=0.5\ntrans s0 done p=0.5\n";
    const DETERMINISTIC: &str =
        "dtmc v1\nstate a reward=1\nstate b reward=2\nstate done reward=0 absorbing\ninitial a\ntrans a b p=1.0\ntrans b done p=1.0\n";

    fn geometric_moments() -> MomentVector {
        let d = parse_model(GEOMETRIC).unwrap();
        let raw = reward_moments(&d, 3).unwrap().at_initial;
        derived_stats(&raw, Default::default()).unwrap()
    }

    #[test]
    fn classic_cantelli_value() {
        // mu = 2, sigma^2 = 2, a = 2 -> 2 / (2 + 4) = 1/3
        let m = derived_stats(&[2.0, 6.0], Default::default()).unwrap();
        let b = cantelli_bound(&m, 2.0, 2).unwrap();
        assert!((b.bound - 1.0 / 3.0).abs() < 1e-12);
        assert!((b.optimal_b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_bound_is_zero() {
        let m = derived_stats(&[3.0, 9.0], Default::default()).unwrap();
        assert_eq!(cantelli_bound(&m, 1.0, 2).unwrap().bound, 0.0);
    }

    #[test]
    fn bound_non_increasing_in_offset() {
        let m = geometric_moments();
        let mut prev = 1.0;
        for a in [1.0, 2.0, 4.0, 8.0] {
            let b = cantelli_bound(&m, a, 2).unwrap().bound;
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn order_must_fit_available_moments() {
        let m = derived_stats(&[2.0, 6.0], Default::default()).unwrap();
        assert!(matches!(
            cantelli_bound(&m, 1.0, 3),
            Err(CheckError::OrderExceedsMoments { .. })
        ));
        assert!(matches!(
            cantelli_bound(&m, 0.0, 2),
            Err(CheckError::NonPositiveOffset(_))
        ));
        assert!(matches!(
            cantelli_bound(&m, 1.0, 1),
            Err(CheckError::OrderTooSmall(_))
        ));
    }

    #[test]
    fn higher_order_bound_is_valid() {
        // Geometric(1/2): Pr(X - 2 >= 3) = Pr(X >= 5) = 2^-4 = 0.0625.
        let m = geometric_moments();
        let b2 = cantelli_bound(&m, 3.0, 2).unwrap().bound;
        let b3 = cantelli_bound(&m, 3.0, 3).unwrap().bound;
        let truth = 0.0625;
        assert!(b2 >= truth, "order 2 bound {b2} below the true tail");
        assert!(b3 >= truth, "order 3 bound {b3} below the true tail");
    }

    #[test]
    fn degenerate_path() {
        let d = parse_model(DETERMINISTIC).unwrap();
        let c = ChanceConstraint::new(Requirement::AtMost { r: 4.0 }, 0.9).unwrap();
        let v = check_chance_constraint(&d, &c, &CheckConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::Holds);
        assert_eq!(v.method, Method::Degenerate);
        assert_eq!(v.probability_estimate, (1.0, 1.0));

        let c = ChanceConstraint::new(Requirement::AtMost { r: 2.0 }, 0.9).unwrap();
        let v = check_chance_constraint(&d, &c, &CheckConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::Fails);
    }

    #[test]
    fn geometric_bound_certifies() {
        // Pr(X <= 5) >= 0.5: Cantelli order 2 gives 1 - 2/11 ~ 0.818.
        let d = parse_model(GEOMETRIC).unwrap();
        let c = ChanceConstraint::new(Requirement::AtMost { r: 5.0 }, 0.5).unwrap();
        let v = check_chance_constraint(&d, &c, &CheckConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::Holds);
        assert!(matches!(v.method, Method::Cantelli { order: 2, .. }));
        assert!((v.probability_estimate.0 - (1.0 - 2.0 / 11.0)).abs() < 1e-12);
    }

    #[test]
    fn geometric_low_threshold_goes_to_fit_and_fails() {
        // Pr(X <= 1) >= 0.9: r* < mu so the bound cannot apply; the true
        // probability is 0.5.
        let d = parse_model(GEOMETRIC).unwrap();
        let c = ChanceConstraint::new(Requirement::AtMost { r: 1.0 }, 0.9).unwrap();
        let v = check_chance_constraint(&d, &c, &CheckConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::Fails);
        assert_eq!(v.method, Method::FittedCdf);
        assert!(v.fit.is_some());
        let est = v.probability_estimate.0;
        assert!(est < 0.9, "estimate {est}");
    }

    #[test]
    fn bound_only_reports_undetermined() {
        let d = parse_model(GEOMETRIC).unwrap();
        let c = ChanceConstraint::new(Requirement::AtMost { r: 5.0 }, 0.99).unwrap();
        let cfg = CheckConfig {
            bound_only: true,
            ..CheckConfig::default()
        };
        let v = check_chance_constraint(&d, &c, &cfg).unwrap();
        assert_eq!(v.decision, Decision::UndeterminedByBound);
        assert!(v.bound_undetermined);
        assert!(!v.bound_attempts.is_empty());
    }

    #[test]
    fn constraint_validation() {
        assert!(ChanceConstraint::new(Requirement::AtMost { r: 1.0 }, 0.0).is_err());
        assert!(ChanceConstraint::new(Requirement::AtMost { r: -1.0 }, 0.5).is_err());
        assert!(ChanceConstraint::new(Requirement::Within { lo: 3.0, hi: 1.0 }, 0.5).is_err());
    }
}
