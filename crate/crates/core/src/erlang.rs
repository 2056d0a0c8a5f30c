//! Erlang and Erlang-mixture densities, CDFs, closed-form moments,
//! differential entropy and quantiles.
//!
//! Densities are assembled in log space and the CDF goes through the
//! regularized incomplete gamma function, so shapes up to 4^9 stay finite.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ErlangError {
    #[error("shape must be a positive integer")]
    BadShape,
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("mixture weights must be nonnegative and sum to 1 (sum = {0})")]
    BadWeights(f64),
    #[error("location must be nonnegative and finite, got {0}")]
    BadLocation(f64),
    #[error("mixture must have at least one component")]
    Empty,
    #[error("probability must lie in (0, 1), got {0}")]
    BadProbability(f64),
    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },
    #[error("grid too short: truncated mass {mass:.3e} exceeds 1e-3")]
    TruncatedMass { mass: f64 },
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const QUANTILE_TOLERANCE: f64 = 1e-10;
const ENTROPY_TOLERANCE: f64 = 1e-8;
/// Upper integration limit for entropy: the 1 - 1e-10 mixture quantile.
const ENTROPY_TAIL: f64 = 1e-10;

/// Erlang density, 0 outside the support; at the origin only the
/// exponential case is positive.
pub fn erlang_pdf(x: f64, shape: u32, rate: f64) -> Result<f64, ErlangError> {
    check_params(shape, rate)?;
    Ok(pdf_unchecked(x, shape, rate))
}

/// Erlang CDF `1 - sum_{j<a} (lx)^j e^{-lx}/j!`, evaluated through the
/// regularized incomplete gamma function to dodge cancellation in the tail.
pub fn erlang_cdf(x: f64, shape: u32, rate: f64) -> Result<f64, ErlangError> {
    check_params(shape, rate)?;
    Ok(cdf_unchecked(x, shape, rate))
}

fn check_params(shape: u32, rate: f64) -> Result<(), ErlangError> {
    if shape == 0 {
        return Err(ErlangError::BadShape);
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(ErlangError::BadRate(rate));
    }
    Ok(())
}

#[inline]
fn pdf_unchecked(x: f64, shape: u32, rate: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if shape == 1 { rate } else { 0.0 };
    }
    let a = shape as f64;
    let ln_f = a * rate.ln() + (a - 1.0) * x.ln() - rate * x - ln_gamma(a);
    ln_f.exp()
}

#[inline]
fn cdf_unchecked(x: f64, shape: u32, rate: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(shape as f64, rate * x)
}

/// A convex mixture of Erlang densities with one shared rate, shifted by a
/// nonnegative location: the distribution of `location + Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErlangMixture {
    pub weights: Vec<f64>,
    pub shapes: Vec<u32>,
    pub rate: f64,
    pub location: f64,
}

impl ErlangMixture {
    pub fn new(
        weights: Vec<f64>,
        shapes: Vec<u32>,
        rate: f64,
        location: f64,
    ) -> Result<Self, ErlangError> {
        let m = Self {
            weights,
            shapes,
            rate,
            location,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ErlangError> {
        if self.weights.is_empty() || self.weights.len() != self.shapes.len() {
            return Err(ErlangError::Empty);
        }
        for &a in &self.shapes {
            if a == 0 {
                return Err(ErlangError::BadShape);
            }
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(ErlangError::BadRate(self.rate));
        }
        if !(self.location >= 0.0) || !self.location.is_finite() {
            return Err(ErlangError::BadLocation(self.location));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ErlangError::BadWeights(sum));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let y = x - self.location;
        self.weights
            .iter()
            .zip(&self.shapes)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &a)| w * pdf_unchecked(y, a, self.rate))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let y = x - self.location;
        if y <= 0.0 {
            return 0.0;
        }
        self.weights
            .iter()
            .zip(&self.shapes)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &a)| w * cdf_unchecked(y, a, self.rate))
            .sum()
    }

    /// Raw moments of the unshifted mixture:
    /// `mu_k = sum_i w_i (a_i+k-1)!/(a_i-1)! / rate^k`.
    pub fn moments(&self, k_max: usize) -> Vec<f64> {
        (1..=k_max)
            .map(|k| {
                self.weights
                    .iter()
                    .zip(&self.shapes)
                    .map(|(&w, &a)| w * rising_factorial(a, k))
                    .sum::<f64>()
                    / self.rate.powi(k as i32)
            })
            .collect()
    }

    /// Raw moments about the origin of the shifted variable
    /// `E[(loc + Y)^k]`, by binomial expansion.
    pub fn shifted_moments(&self, k_max: usize) -> Vec<f64> {
        let unshifted = self.moments(k_max);
        (1..=k_max)
            .map(|k| {
                let mut acc = self.location.powi(k as i32);
                let mut binom = 1.0;
                for j in 1..=k {
                    binom = binom * (k - j + 1) as f64 / j as f64;
                    acc += binom * self.location.powi((k - j) as i32) * unshifted[j - 1];
                }
                acc
            })
            .collect()
    }

    /// Mean of the unshifted mixture.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.shapes)
            .map(|(&w, &a)| w * a as f64)
            .sum::<f64>()
            / self.rate
    }

    /// Integration domain used by [`Self::entropy`]: location-free, entropy
    /// is shift invariant.
    pub fn entropy_domain(&self) -> (f64, f64) {
        let unshifted = Self {
            location: 0.0,
            ..self.clone()
        };
        let hi = unshifted
            .quantile(1.0 - ENTROPY_TAIL)
            .unwrap_or_else(|_| unshifted.bracket_hi());
        (0.0, hi)
    }

    /// Differential entropy in nats by adaptive quadrature of `-f ln f` over
    /// `[0, q]`, `q` the 1 - 1e-10 quantile of the unshifted mixture.
    pub fn entropy(&self) -> Result<f64, ErlangError> {
        let (lo, hi) = self.entropy_domain();
        let unshifted = Self {
            location: 0.0,
            ..self.clone()
        };
        let integrand = |x: f64| {
            let f = unshifted.pdf(x);
            if f > 0.0 {
                -f * f.ln()
            } else {
                0.0
            }
        };
        adaptive_simpson(&integrand, lo, hi, ENTROPY_TOLERANCE)
    }

    fn bracket_hi(&self) -> f64 {
        let max_shape = *self.shapes.iter().max().unwrap_or(&1) as f64;
        (max_shape + 20.0 * max_shape.sqrt() + 20.0) / self.rate
    }

    /// Inverse CDF by bisection to |F(x) - p| <= 1e-10.
    pub fn quantile(&self, p: f64) -> Result<f64, ErlangError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ErlangError::BadProbability(p));
        }
        let mut lo = self.location;
        let mut hi = self.location + self.bracket_hi();
        let mut grow = 0;
        while self.cdf(hi) < p {
            hi = self.location + (hi - self.location) * 2.0;
            grow += 1;
            if grow > 300 {
                break;
            }
        }
        loop {
            let mid = 0.5 * (lo + hi);
            let v = self.cdf(mid);
            if (v - p).abs() <= QUANTILE_TOLERANCE || (hi - lo) <= f64::EPSILON * hi.abs().max(1.0)
            {
                return Ok(mid);
            }
            if v < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}

fn rising_factorial(shape: u32, k: usize) -> f64 {
    // (a+k-1)!/(a-1)! via log-gamma; exact enough at 1e-14 relative even for
    // the largest grid shapes.
    let a = shape as f64;
    (ln_gamma(a + k as f64) - ln_gamma(a)).exp()
}

/// Weighted Erlang family from slicing a target CDF on a `beta` grid:
/// component `j` is Erlang(shape j, scale beta) with weight
/// `F(j beta) - F((j-1) beta)`.
#[derive(Debug, Clone)]
pub struct GridMixture {
    pub mixture: ErlangMixture,
    /// Mass of the target beyond `j_max * beta`, removed by renormalization.
    pub truncated_mass: f64,
}

/// Build the grid approximant of a nondecreasing CDF `F`. Errors when the
/// grid stops short of all but 1e-3 of the target mass.
pub fn theorem3_mixture(
    target_cdf: impl Fn(f64) -> f64,
    beta: f64,
    j_max: u32,
) -> Result<GridMixture, ErlangError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(ErlangError::BadRate(beta));
    }
    if j_max == 0 {
        return Err(ErlangError::Empty);
    }
    let mut weights = Vec::with_capacity(j_max as usize);
    let mut prev = target_cdf(0.0);
    for j in 1..=j_max {
        let cur = target_cdf(j as f64 * beta);
        weights.push((cur - prev).max(0.0));
        prev = cur;
    }
    let truncated = (1.0 - prev).max(0.0);
    if truncated > 1e-3 {
        return Err(ErlangError::TruncatedMass { mass: truncated });
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(ErlangError::BadWeights(sum));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    let mixture = ErlangMixture::new(weights, (1..=j_max).collect(), 1.0 / beta, 0.0)?;
    Ok(GridMixture {
        mixture,
        truncated_mass: truncated,
    })
}

/// Adaptive Simpson quadrature with an absolute tolerance. On failure the
/// achieved tolerance is reported.
pub fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, ErlangError> {
    if a >= b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut leftover_error = 0.0;
    let value = simpson_rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol,
        40,
        &mut leftover_error,
    );
    if leftover_error > tol {
        return Err(ErlangError::Quadrature {
            achieved: leftover_error,
            requested: tol,
        });
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    leftover: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 {
            *leftover += err.abs() / 15.0;
        }
        return left + right + err / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, leftover)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, leftover)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> ErlangMixture {
        ErlangMixture::new(vec![1.0], vec![1], 1.0, 0.0).unwrap()
    }

    #[test]
    fn pdf_oracle_values() {
        // exponential at the origin
        assert!((erlang_pdf(0.0, 1, 2.0).unwrap() - 2.0).abs() < 1e-15);
        // f(1; 2, 1) = e^{-1}
        assert!((erlang_pdf(1.0, 2, 1.0).unwrap() - (-1.0_f64).exp()).abs() < 1e-12);
        // outside the support
        assert_eq!(erlang_pdf(-1.0, 3, 2.0).unwrap(), 0.0);
        // shape > 1 vanishes at the origin
        assert_eq!(erlang_pdf(0.0, 2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pdf_large_shape_stays_finite() {
        let a = 262_144; // 4^9
        let rate = 50.0;
        let x = a as f64 / rate; // near the mode
        let f = erlang_pdf(x, a, rate).unwrap();
        assert!(f.is_finite() && f > 0.0);
    }

    #[test]
    fn cdf_oracle_values() {
        assert_eq!(erlang_cdf(0.0, 5, 1.0).unwrap(), 0.0);
        // F(2; 2, 1) = 1 - 3 e^{-2}
        let expected = 1.0 - 3.0 * (-2.0_f64).exp();
        assert!((erlang_cdf(2.0, 2, 1.0).unwrap() - expected).abs() < 1e-12);
        // exponential special case F(1; 1, 1) = 1 - e^{-1}
        let expected = 1.0 - (-1.0_f64).exp();
        assert!((erlang_cdf(1.0, 1, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cdf_deep_tail_is_clean() {
        // lambda x >> a: the plain Eq-4 sum would cancel catastrophically.
        let v = erlang_cdf(400.0, 3, 1.0).unwrap();
        assert!(v <= 1.0 && v > 1.0 - 1e-12);
    }

    #[test]
    fn param_validation() {
        assert!(matches!(erlang_pdf(1.0, 0, 1.0), Err(ErlangError::BadShape)));
        assert!(matches!(
            erlang_cdf(1.0, 1, 0.0),
            Err(ErlangError::BadRate(_))
        ));
        assert!(ErlangMixture::new(vec![0.6, 0.6], vec![1, 2], 1.0, 0.0).is_err());
        assert!(ErlangMixture::new(vec![1.0], vec![1], 1.0, -0.5).is_err());
    }

    #[test]
    fn mixture_cdf_oracle() {
        let m = ErlangMixture::new(vec![0.5, 0.5], vec![1, 2], 1.0, 0.0).unwrap();
        let e = (-1.0_f64).exp();
        let expected = 0.5 * (1.0 - e) + 0.5 * (1.0 - 2.0 * e);
        assert!((m.cdf(1.0) - expected).abs() < 1e-12);
        assert!((expected - 0.448_180_8).abs() < 1e-7);
    }

    #[test]
    fn mixture_cdf_zero_at_location() {
        let m = ErlangMixture::new(vec![0.3, 0.7], vec![2, 5], 1.5, 4.0).unwrap();
        assert_eq!(m.cdf(4.0), 0.0);
        assert_eq!(m.cdf(3.0), 0.0);
    }

    #[test]
    fn singleton_mixture_reduces_to_erlang() {
        let m = ErlangMixture::new(vec![1.0], vec![3], 2.0, 0.0).unwrap();
        for x in [0.1, 0.5, 1.0, 2.5, 7.0] {
            assert!((m.cdf(x) - erlang_cdf(x, 3, 2.0).unwrap()).abs() < 1e-15);
            assert!((m.pdf(x) - erlang_pdf(x, 3, 2.0).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_moments() {
        let m = ErlangMixture::new(vec![1.0], vec![2], 1.0, 0.0).unwrap();
        let mu = m.moments(2);
        assert!((mu[0] - 2.0).abs() < 1e-12); // a / rate
        assert!((mu[1] - 6.0).abs() < 1e-12); // 3!/1!
        let m = ErlangMixture::new(vec![0.5, 0.5], vec![1, 3], 2.0, 0.0).unwrap();
        assert!((m.moments(1)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_moments_binomial() {
        let m = ErlangMixture::new(vec![1.0], vec![2], 1.0, 3.0).unwrap();
        let mu = m.shifted_moments(2);
        // E[3 + Y] = 5, E[(3+Y)^2] = 9 + 6*2 + 6 = 27
        assert!((mu[0] - 5.0).abs() < 1e-12);
        assert!((mu[1] - 27.0).abs() < 1e-12);
    }

    #[test]
    fn moments_match_quadrature() {
        // closed form vs numerical integration of x^k f(x), shapes up to 81
        let m = ErlangMixture::new(vec![0.2, 0.5, 0.3], vec![3, 27, 81], 4.0, 0.0).unwrap();
        let mu = m.moments(5);
        let hi = m.quantile(1.0 - 1e-12).unwrap() * 2.0;
        for (idx, &expected) in mu.iter().enumerate() {
            let k = (idx + 1) as i32;
            let got =
                adaptive_simpson(&|x: f64| x.powi(k) * m.pdf(x), 0.0, hi, 1e-9 * expected)
                    .unwrap();
            let rel = (got - expected).abs() / expected;
            assert!(rel < 1e-6, "k={k}: {got} vs {expected}");
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let m = ErlangMixture::new(vec![0.4, 0.6], vec![2, 9], 1.3, 0.0).unwrap();
        let hi = m.quantile(1.0 - 1e-12).unwrap() * 2.0;
        let total = adaptive_simpson(&|x| m.pdf(x), 0.0, hi, 1e-9).unwrap();
        assert!((total - 1.0).abs() < 1e-6, "total {total}");
    }

    #[test]
    fn cdf_derivative_matches_pdf() {
        let m = ErlangMixture::new(vec![0.5, 0.5], vec![2, 6], 2.0, 1.0).unwrap();
        let h = 1e-5;
        for x in [1.3, 2.0, 3.5, 5.0] {
            let deriv = (m.cdf(x + h) - m.cdf(x - h)) / (2.0 * h);
            assert!((deriv - m.pdf(x)).abs() < 1e-4, "x={x}");
        }
    }

    #[test]
    fn exponential_entropy() {
        // H(Exp(lambda)) = 1 - ln lambda
        assert!((exp1().entropy().unwrap() - 1.0).abs() < 1e-6);
        let m = ErlangMixture::new(vec![1.0], vec![1], 2.0, 0.0).unwrap();
        assert!((m.entropy().unwrap() - (1.0 - 2.0_f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn entropy_is_shift_invariant() {
        let m0 = ErlangMixture::new(vec![0.5, 0.5], vec![1, 4], 1.0, 0.0).unwrap();
        let m5 = ErlangMixture::new(vec![0.5, 0.5], vec![1, 4], 1.0, 5.0).unwrap();
        assert!((m0.entropy().unwrap() - m5.entropy().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn quantile_oracles() {
        // exponential median = ln 2
        let q = exp1().quantile(0.5).unwrap();
        assert!((q - 2.0_f64.ln()).abs() < 1e-8);
        // inverse property
        let m = ErlangMixture::new(vec![0.3, 0.7], vec![2, 8], 1.7, 0.5).unwrap();
        for x in [1.0, 2.0, 4.0, 8.0] {
            let p = m.cdf(x);
            if p > 0.0 && p < 1.0 {
                assert!((m.quantile(p).unwrap() - x).abs() < 1e-8, "x={x}");
            }
        }
        // p -> 0+ approaches the location
        let q = m.quantile(1e-9).unwrap();
        assert!(q - 0.5 < 0.05 && q >= 0.5);
        assert!(matches!(
            m.quantile(0.0),
            Err(ErlangError::BadProbability(_))
        ));
        assert!(matches!(
            m.quantile(1.0),
            Err(ErlangError::BadProbability(_))
        ));
    }

    #[test]
    fn theorem3_exponential_weights() {
        let g = theorem3_mixture(|x| 1.0 - (-x).exp(), 1.0, 40).unwrap();
        // p_1 = F(1) - F(0) = 1 - e^{-1}; at j_max = 40 the renormalization
        // factor differs from 1 by ~e^{-40}.
        let expected = 1.0 - (-1.0_f64).exp();
        assert!((g.mixture.weights[0] - expected).abs() < 1e-12);
        assert!(g.truncated_mass < 1e-3);
        assert_eq!(g.mixture.shapes[0], 1);
        assert!((g.mixture.rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theorem3_point_mass_selects_single_bin() {
        let c = 2.3;
        let g = theorem3_mixture(|x| if x >= c { 1.0 } else { 0.0 }, 0.5, 10).unwrap();
        // all weight on j = ceil(c / beta) = 5
        for (j, &w) in g.mixture.weights.iter().enumerate() {
            if j + 1 == 5 {
                assert!((w - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn theorem3_rejects_short_grid() {
        let err = theorem3_mixture(|x| 1.0 - (-0.01 * x).exp(), 1.0, 5);
        assert!(matches!(err, Err(ErlangError::TruncatedMass { .. })));
    }
}
