//! Moment-matched Erlang-mixture fitting.
//!
//! Shapes come from a fixed grid; the optimizer works on the weights and the
//! shared rate only, which keeps the inner problem smooth and low
//! dimensional. Each outer iteration re-evaluates the differential entropy
//! (the expensive quadrature) and holds it fixed while a damped Gauss-Newton
//! pass with exact simplex projection drives the squared moment residuals
//! down; the loop stops when the loss `sum_k (mu_k - mu_hat_k)^2 - gamma H`
//! stops moving. Among candidates with equal residuals the entropy term makes
//! the selection prefer the least biased mixture.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::erlang::{ErlangError, ErlangMixture};
use crate::linalg::DenseLu;
use crate::moments::{MomentScaling, MomentVector};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("target distribution is degenerate (variance {0}); decide against the point mass instead")]
    DegenerateTarget(f64),
    #[error("need {needed} target moments, got {got}")]
    NotEnoughMoments { needed: usize, got: usize },
    #[error("shape grid overflow: {rule} with {n} components")]
    ShapeOverflow { rule: String, n: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("objective produced a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Erlang(#[from] ErlangError),
}

/// Fixed shape grids handed to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeRule {
    /// a_i = i
    Dense,
    /// a_i = c * i
    Linear(u32),
    /// a_i = c^i
    Exponential(u32),
}

impl ShapeRule {
    pub fn shapes(&self, n: usize) -> Result<Vec<u32>, FitError> {
        let overflow = || FitError::ShapeOverflow {
            rule: format!("{self:?}"),
            n,
        };
        (1..=n as u32)
            .map(|i| match *self {
                ShapeRule::Dense => Ok(i),
                ShapeRule::Linear(c) => c.checked_mul(i).ok_or_else(overflow),
                ShapeRule::Exponential(c) => c.checked_pow(i).ok_or_else(overflow),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationRule {
    /// `max(0, mu - sigma)`, keeping the shifted problem on [0, inf).
    MeanMinusSigma,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    /// Number of moments to match.
    pub moments: usize,
    /// Mixture size.
    pub components: usize,
    pub shape_rule: ShapeRule,
    /// Entropy weight in the loss.
    pub gamma: f64,
    /// Convergence threshold on |L_prev - L|.
    pub epsilon: f64,
    pub lambda_bounds: (f64, f64),
    pub max_outer_iterations: usize,
    /// Residual-descent steps per outer iteration.
    pub max_inner_iterations: usize,
    pub scaling: MomentScaling,
    pub location_rule: LocationRule,
    pub restarts: usize,
    pub seed: u64,
    /// Worker cap for parallel restarts; results are identical for any value.
    pub threads: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            moments: 3,
            components: 3,
            shape_rule: ShapeRule::Exponential(3),
            gamma: 1.0,
            epsilon: 1e-8,
            lambda_bounds: (0.01, 50.0),
            max_outer_iterations: 500,
            max_inner_iterations: 200,
            scaling: MomentScaling::PerOrder,
            location_rule: LocationRule::MeanMinusSigma,
            restarts: 5,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub mixture: ErlangMixture,
    /// Final loss `sum_k scaled-residual^2 - gamma * entropy`.
    pub loss: f64,
    /// Per-order |target_k - mu_hat_k| in raw (shifted) units.
    pub moment_residuals: Vec<f64>,
    pub entropy: f64,
    pub entropy_domain: (f64, f64),
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Loss of each accepted outer iterate, non-increasing.
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Moments of `X - location` from the raw moments of `X` (binomial
/// re-centering with `mu_0 = 1`).
pub fn shift_target_moments(raw: &[f64], location: f64) -> Vec<f64> {
    (1..=raw.len())
        .map(|k| {
            let mut acc = (-location).powi(k as i32);
            let mut binom = 1.0;
            for j in 1..=k {
                binom = binom * (k - j + 1) as f64 / j as f64;
                acc += binom * (-location).powi((k - j) as i32) * raw[j - 1];
            }
            acc
        })
        .collect()
}

/// The loss at explicit parameters: squared residuals on (optionally
/// standardized) moments minus `gamma` times the differential entropy of the
/// unshifted mixture.
pub fn objective_loss(
    weights: &[f64],
    shapes: &[u32],
    rate: f64,
    shifted_targets: &[f64],
    gamma: f64,
    scaling: MomentScaling,
) -> Result<f64, FitError> {
    let mixture = ErlangMixture::new(weights.to_vec(), shapes.to_vec(), rate, 0.0)?;
    let c = shifted_targets
        .get(1)
        .map(|&m2| m2.max(0.0).sqrt())
        .unwrap_or(1.0);
    let mu_hat = mixture.moments(shifted_targets.len());
    let residual_sq: f64 = shifted_targets
        .iter()
        .zip(&mu_hat)
        .enumerate()
        .map(|(idx, (&t, &m))| {
            let s = scaling.factor(c, idx + 1).max(f64::MIN_POSITIVE);
            let r = (t - m) / s;
            r * r
        })
        .sum();
    let entropy = if gamma != 0.0 { mixture.entropy()? } else { 0.0 };
    let loss = residual_sq - gamma * entropy;
    if !loss.is_finite() {
        return Err(FitError::NonFinite);
    }
    Ok(loss)
}

/// Rising factorials `(a+k-1)!/(a-1)!` for every grid shape and order.
fn moment_products(shapes: &[u32], k_max: usize) -> Vec<Vec<f64>> {
    (1..=k_max)
        .map(|k| {
            shapes
                .iter()
                .map(|&a| {
                    let mut p = 1.0;
                    for j in 0..k {
                        p *= (a as f64) + j as f64;
                    }
                    p
                })
                .collect()
        })
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-based, exact).
fn project_simplex(w: &mut [f64]) {
    let n = w.len();
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
            rho = i + 1;
        }
    }
    debug_assert!(rho > 0);
    let _ = rho;
    let mut sum = 0.0;
    for v in w.iter_mut() {
        *v = (*v - theta).max(0.0);
        sum += *v;
    }
    if sum > 0.0 {
        for v in w.iter_mut() {
            *v /= sum;
        }
    } else {
        for v in w.iter_mut() {
            *v = 1.0 / n as f64;
        }
    }
}

/// Golden-section minimization of a smooth scalar function on [lo, hi].
fn golden_min_scalar(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > 1e-13 * (1.0 + hi.abs()) {
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

/// Determinant by Gaussian elimination with partial pivoting; tiny systems
/// only.
fn determinant(mut m: Vec<f64>, dim: usize) -> f64 {
    let mut det = 1.0;
    for k in 0..dim {
        let mut p = k;
        let mut best = m[k * dim + k].abs();
        for i in k + 1..dim {
            let v = m[i * dim + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..dim {
                m.swap(k * dim + j, p * dim + j);
            }
            det = -det;
        }
        let diag = m[k * dim + k];
        det *= diag;
        for i in k + 1..dim {
            let l = m[i * dim + k] / diag;
            if l != 0.0 {
                for j in k..dim {
                    m[i * dim + j] -= l * m[k * dim + j];
                }
            }
        }
    }
    det
}

/// `min ||A w - t||^2` over the probability simplex by KKT active-set
/// iteration. `a` holds the rows of A; the system is tiny (n <= ~10), a
/// ridge keeps rank-deficient grids solvable. Columns are equilibrated
/// first: grid shapes span many orders of magnitude and the raw Gram matrix
/// would be numerically useless.
fn simplex_least_squares(a_raw: &[Vec<f64>], t: &[f64]) -> Vec<f64> {
    let n = a_raw[0].len();
    let kk = a_raw.len();
    if n == 1 {
        return vec![1.0];
    }
    // scale column i to unit max-norm; w_i = y_i / col_scale_i turns the
    // simplex equality into sum_i y_i / col_scale_i = 1
    let col_scale: Vec<f64> = (0..n)
        .map(|i| {
            (0..kk)
                .map(|k| a_raw[k][i].abs())
                .fold(0.0_f64, f64::max)
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let a: Vec<Vec<f64>> = (0..kk)
        .map(|k| (0..n).map(|i| a_raw[k][i] / col_scale[i]).collect())
        .collect();
    let a = &a;
    // constraint sum_i w_i = 1 in y coordinates
    let c: Vec<f64> = col_scale.iter().map(|&s| 1.0 / s).collect();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| 2.0 * (0..kk).map(|k| a[k][i] * a[k][j]).sum::<f64>())
                .collect()
        })
        .collect();
    let rhs_full: Vec<f64> = (0..n)
        .map(|i| 2.0 * (0..kk).map(|k| a[k][i] * t[k]).sum::<f64>())
        .collect();
    let ridge = 1e-12 * (1.0 + gram.iter().flatten().fold(0.0_f64, |m, &v| m.max(v.abs())));
    let value_raw = |w: &[f64]| -> f64 {
        (0..kk)
            .map(|k| {
                let r = a_raw[k]
                    .iter()
                    .zip(w)
                    .map(|(&ai, &wi)| ai * wi)
                    .sum::<f64>()
                    - t[k];
                r * r
            })
            .sum()
    };
    let to_weights = |y: &[f64]| -> Vec<f64> {
        let mut w: Vec<f64> = y
            .iter()
            .zip(&col_scale)
            .map(|(&yi, &si)| (yi / si).max(0.0))
            .collect();
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            for wi in w.iter_mut() {
                *wi /= sum;
            }
        } else {
            for wi in w.iter_mut() {
                *wi = 1.0 / n as f64;
            }
        }
        w
    };
    let mut active = vec![false; n];
    let mut best = vec![1.0 / n as f64; n];
    let mut best_value = value_raw(&best);
    for _ in 0..3 * n {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        if free.is_empty() {
            break;
        }
        let m = free.len();
        // KKT: [G + ridge  -c; c^T  0] [y_F; mu] = [rhs_F; 1]
        let dim = m + 1;
        let mut kkt = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for (p, &i) in free.iter().enumerate() {
            for (q, &j) in free.iter().enumerate() {
                kkt[p * dim + q] = gram[i][j] + if p == q { ridge } else { 0.0 };
            }
            kkt[p * dim + m] = -c[i];
            kkt[m * dim + p] = c[i];
            rhs[p] = rhs_full[i];
        }
        rhs[m] = 1.0;
        let Ok(lu) = DenseLu::factor(kkt, dim) else {
            break;
        };
        let sol = lu.solve(&rhs);
        let mu = sol[m];
        if let Some((worst, _)) = free
            .iter()
            .enumerate()
            .map(|(p, &i)| (i, sol[p]))
            .filter(|&(_, y)| y < -1e-12)
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        {
            active[worst] = true;
            continue;
        }
        let mut y = vec![0.0; n];
        for (p, &i) in free.iter().enumerate() {
            y[i] = sol[p].max(0.0);
        }
        let w = to_weights(&y);
        let v = value_raw(&w);
        if v < best_value {
            best_value = v;
            best = w;
        }
        // dual feasibility: grad_i >= mu c_i for every clamped component
        let gradient: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| gram[i][j] * y[j]).sum::<f64>() - rhs_full[i])
            .collect();
        match (0..n)
            .filter(|&i| {
                active[i] && gradient[i] - mu * c[i] < -1e-9 * (1.0 + (mu * c[i]).abs())
            })
            .min_by(|&x, &y| {
                (gradient[x] - mu * c[x])
                    .partial_cmp(&(gradient[y] - mu * c[y]))
                    .unwrap()
            })
        {
            Some(release) => active[release] = false,
            None => break,
        }
    }
    best
}

/// Moment-matching subproblem with the entropy term frozen: all closed-form.
struct ResidualModel<'a> {
    products: &'a [Vec<f64>], // [k][i]
    targets_scaled: Vec<f64>,
    scales: Vec<f64>,
    lambda_bounds: (f64, f64),
}

impl ResidualModel<'_> {
    fn n(&self) -> usize {
        self.products[0].len()
    }

    fn k(&self) -> usize {
        self.targets_scaled.len()
    }

    /// Scaled residual vector r_k = mu_hat_k / s_k - t_k / s_k.
    fn residuals(&self, w: &[f64], rate: f64) -> Vec<f64> {
        (0..self.k())
            .map(|kk| {
                let mu: f64 = self.products[kk]
                    .iter()
                    .zip(w)
                    .map(|(&p, &wi)| p * wi)
                    .sum::<f64>()
                    / rate.powi((kk + 1) as i32);
                mu / self.scales[kk] - self.targets_scaled[kk]
            })
            .collect()
    }

    fn value(&self, w: &[f64], rate: f64) -> f64 {
        self.residuals(w, rate).iter().map(|r| r * r).sum()
    }

    /// Jacobian of the scaled residuals, K x (n+1), rate last.
    fn jacobian(&self, w: &[f64], rate: f64) -> Vec<Vec<f64>> {
        let n = self.n();
        (0..self.k())
            .map(|kk| {
                let k = (kk + 1) as i32;
                let pow = rate.powi(k);
                let mut row: Vec<f64> = self.products[kk]
                    .iter()
                    .map(|&p| p / pow / self.scales[kk])
                    .collect();
                let mu: f64 = self.products[kk]
                    .iter()
                    .zip(w)
                    .map(|(&p, &wi)| p * wi)
                    .sum::<f64>();
                row.push(-(k as f64) * mu / rate.powi(k + 1) / self.scales[kk]);
                debug_assert_eq!(row.len(), n + 1);
                row
            })
            .collect()
    }

    fn project(&self, w: &mut [f64], rate: &mut f64) {
        project_simplex(w);
        *rate = rate.clamp(self.lambda_bounds.0, self.lambda_bounds.1);
    }

    /// For a fixed rate the weights solve a convex simplex-constrained least
    /// squares, handled by a small KKT active-set loop.
    fn best_weights_for_rate(&self, rate: f64) -> (Vec<f64>, f64) {
        let kk = self.k();
        // column matrix a[k][i] of scaled per-component moments
        let a: Vec<Vec<f64>> = (0..kk)
            .map(|k| {
                let pow = rate.powi((k + 1) as i32);
                self.products[k]
                    .iter()
                    .map(|&p| p / pow / self.scales[k])
                    .collect()
            })
            .collect();
        let w = simplex_least_squares(&a, &self.targets_scaled);
        let value = self.value(&w, rate);
        (w, value)
    }

    /// Profile value g(rate) = min over simplex weights of the residual.
    fn profile(&self, rate: f64) -> f64 {
        self.best_weights_for_rate(rate).1
    }

    /// Deterministic starting points for the polish phase, best first:
    /// refined local minima of the rate profile, per-vertex rate fits, rates
    /// where a square moment system admits an exact simplex solution, and a
    /// spread of points when the matching set is a plateau. With gamma > 0
    /// the ranking uses the full loss, so plateau candidates compete on
    /// entropy.
    fn starting_candidates(&self, shapes: &[u32], gamma: f64) -> Vec<(Vec<f64>, f64)> {
        let (lo, hi) = self.lambda_bounds;
        let points = 192;
        let rates: Vec<f64> = (0..=points)
            .map(|j| lo * (hi / lo).powf(j as f64 / points as f64))
            .collect();
        let values: Vec<f64> = rates.iter().map(|&r| self.profile(r)).collect();
        let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..=points {
            let left = if i == 0 { f64::INFINITY } else { values[i - 1] };
            let right = if i == points {
                f64::INFINITY
            } else {
                values[i + 1]
            };
            if values[i] <= left && values[i] <= right {
                let a = rates[i.saturating_sub(1)];
                let b = rates[(i + 1).min(points)];
                let (r_star, _) = golden_min_scalar(&|r| self.profile(r), a, b);
                let (w_star, _) = self.best_weights_for_rate(r_star);
                found.push((w_star, r_star));
            }
        }
        // When the matching set is a flat valley (more components than
        // moments), spread candidates across it instead of trusting one
        // arbitrary point.
        let min_value = values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let plateau: Vec<usize> = (0..=points)
            .filter(|&i| values[i] <= min_value + 1e-9 * (1.0 + min_value))
            .collect();
        if plateau.len() >= 4 {
            for f in [0.0, 0.33, 0.66, 1.0] {
                let idx = plateau[((plateau.len() - 1) as f64 * f) as usize];
                let (w, _) = self.best_weights_for_rate(rates[idx]);
                found.push((w, rates[idx]));
            }
        }
        // Single-component fits catch vertex targets the sampled profile can
        // step over.
        let n = self.n();
        for i in 0..n {
            let mut vertex = vec![0.0; n];
            vertex[i] = 1.0;
            let coarse = 48;
            let mut best_j: usize = 0;
            let mut best_v = f64::INFINITY;
            for j in 0..=coarse {
                let r = lo * (hi / lo).powf(j as f64 / coarse as f64);
                let v = self.value(&vertex, r);
                if v < best_v {
                    best_v = v;
                    best_j = j;
                }
            }
            let a = lo * (hi / lo).powf(best_j.saturating_sub(1) as f64 / coarse as f64);
            let b = lo * (hi / lo).powf((best_j + 1).min(coarse) as f64 / coarse as f64);
            let (r_star, _) = golden_min_scalar(&|r| self.value(&vertex, r), a, b);
            let (w_star, _) = self.best_weights_for_rate(r_star);
            found.push((w_star, r_star));
        }
        for r in self.exact_match_rates(&rates) {
            let (w, _) = self.best_weights_for_rate(r);
            found.push((w, r));
        }
        // Rank by the loss the outer loop optimizes.
        let mut ranked: Vec<(f64, Vec<f64>, f64)> = found
            .into_iter()
            .map(|(w, r)| {
                let mut loss = self.value(&w, r);
                if gamma != 0.0 {
                    if let Ok(m) = ErlangMixture::new(w.clone(), shapes.to_vec(), r, 0.0) {
                        if let Ok(h) = m.entropy() {
                            loss -= gamma * h;
                        }
                    }
                }
                (loss, w, r)
            })
            .collect();
        ranked.sort_by(|a, b| (a.0, a.2).partial_cmp(&(b.0, b.2)).unwrap());
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for (_, w, r) in ranked {
            if out.iter().all(|(_, r0)| (r - r0).abs() > 1e-6 * r0.max(1.0)) {
                out.push((w, r));
            }
            if out.len() == 4 {
                break;
            }
        }
        out
    }

    /// For K = n an exact in-grid match makes the augmented moment matrix
    /// `[A(rate), t; 1, 1]` singular; its determinant sign changes bracket
    /// the candidate rates.
    fn exact_match_rates(&self, coarse_rates: &[f64]) -> Vec<f64> {
        let n = self.n();
        let kk = self.k();
        if n != kk {
            return Vec::new();
        }
        let det_at = |rate: f64| -> f64 {
            let dim = kk + 1;
            let mut m = vec![0.0; dim * dim];
            for k in 0..kk {
                let pow = rate.powi((k + 1) as i32);
                for i in 0..n {
                    m[k * dim + i] = self.products[k][i] / pow / self.scales[k];
                }
                m[k * dim + n] = self.targets_scaled[k];
            }
            for j in 0..dim {
                m[kk * dim + j] = 1.0;
            }
            determinant(m, dim)
        };
        let mut roots = Vec::new();
        let refined = 1024;
        let lo = coarse_rates[0];
        let hi = *coarse_rates.last().unwrap();
        let mut prev_r = lo;
        let mut prev_d = det_at(lo);
        for j in 1..=refined {
            let r = lo * (hi / lo).powf(j as f64 / refined as f64);
            let d = det_at(r);
            if prev_d == 0.0 {
                roots.push(prev_r);
            } else if d != 0.0 && d.signum() != prev_d.signum() {
                let (mut a, mut b, mut fa) = (prev_r, r, prev_d);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    let fm = det_at(mid);
                    if fm == 0.0 {
                        a = mid;
                        b = mid;
                        break;
                    }
                    if fm.signum() == fa.signum() {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev_r = r;
            prev_d = d;
        }
        roots
    }

    /// One damped Gauss-Newton trial step with projection; accepted only when
    /// it improves the value. The Jacobian columns are equilibrated so wide
    /// shape grids keep the normal equations solvable.
    fn gauss_newton_step(&self, w: &mut Vec<f64>, rate: &mut f64, value: &mut f64) -> bool {
        let n = self.n();
        let dim = n + 1;
        let res = self.residuals(w, *rate);
        let jac = self.jacobian(w, *rate);
        let col_scale: Vec<f64> = (0..dim)
            .map(|a| {
                (0..self.k())
                    .map(|kk| jac[kk][a].abs())
                    .fold(0.0_f64, f64::max)
                    .max(f64::MIN_POSITIVE)
            })
            .collect();
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for kk in 0..self.k() {
            for a in 0..dim {
                let ja = jac[kk][a] / col_scale[a];
                grad[a] += 2.0 * ja * res[kk];
                for b in 0..dim {
                    hess[a * dim + b] += 2.0 * ja * jac[kk][b] / col_scale[b];
                }
            }
        }
        let mut damping = 1e-12 * (1.0 + hess.iter().fold(0.0_f64, |m, &v| m.max(v.abs())));
        for _ in 0..10 {
            let mut h = hess.clone();
            for a in 0..dim {
                h[a * dim + a] += damping;
            }
            let step = match DenseLu::factor(h, dim) {
                Ok(lu) => lu.solve(&grad.iter().map(|g| -g).collect::<Vec<_>>()),
                Err(_) => return false,
            };
            let mut w_new: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(a, wi)| wi + step[a] / col_scale[a])
                .collect();
            let mut rate_new = *rate + step[n] / col_scale[n];
            self.project(&mut w_new, &mut rate_new);
            let trial = self.value(&w_new, rate_new);
            if trial.is_finite() && trial < *value {
                *w = w_new;
                *rate = rate_new;
                *value = trial;
                return true;
            }
            damping *= 10.0;
        }
        false
    }

    /// Block-coordinate descent on the residual sum of squares: the weight
    /// block is an exact convex solve, the rate block a 1-D golden-section
    /// refinement, with a Gauss-Newton trial step for tail convergence. The
    /// value never increases.
    fn minimize(&self, w: &mut Vec<f64>, rate: &mut f64, budget: usize) {
        let mut value = self.value(w, *rate);
        for _ in 0..budget {
            let before = value;
            let (w_exact, v_exact) = self.best_weights_for_rate(*rate);
            if v_exact < value {
                *w = w_exact;
                value = v_exact;
            }
            // local bracket; repeated iterations can walk the whole range
            let lo = self.lambda_bounds.0.max(*rate / 2.0);
            let hi = self.lambda_bounds.1.min(*rate * 2.0);
            let (r_star, v_star) = golden_min_scalar(&|r| self.value(w, r), lo, hi);
            if v_star < value {
                *rate = r_star;
                value = v_star;
            }
            self.gauss_newton_step(w, rate, &mut value);
            if value < 1e-30 || before - value < 1e-14 * (1.0 + before.abs()) {
                break;
            }
        }
    }
}

struct RestartOutcome {
    weights: Vec<f64>,
    rate: f64,
    loss: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_restart(
    model: &ResidualModel<'_>,
    shapes: &[u32],
    cfg: &FitConfig,
    shifted_mean: f64,
    candidates: &[(Vec<f64>, f64)],
    restart: usize,
) -> Result<RestartOutcome, FitError> {
    let n = model.n();
    let mean_shape = |w: &[f64]| -> f64 {
        w.iter()
            .zip(shapes)
            .map(|(&wi, &a)| wi * a as f64)
            .sum::<f64>()
    };
    // Restart 0: uniform weights, rate matching the shifted target mean (the
    // standard initialization). Restarts 1..: profile-scan candidates, then
    // random jitters.
    let mut weights = vec![1.0 / n as f64; n];
    let mut rate;
    if restart == 0 {
        rate = mean_shape(&weights) / shifted_mean.max(1e-12);
    } else if restart <= candidates.len() {
        let (w, r) = &candidates[restart - 1];
        weights = w.clone();
        rate = *r;
    } else {
        let mut rng = SplitMix64::stream(cfg.seed, restart as u64);
        for w in weights.iter_mut() {
            *w = rng.next_exp();
        }
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        let base = mean_shape(&weights) / shifted_mean.max(1e-12);
        let factor = (3.0_f64).powf(2.0 * rng.next_f64() - 1.0); // in [1/3, 3]
        rate = base * factor;
    }
    rate = rate.clamp(cfg.lambda_bounds.0, cfg.lambda_bounds.1);

    let entropy_of = |w: &[f64], r: f64| -> Result<f64, FitError> {
        if cfg.gamma == 0.0 {
            return Ok(0.0);
        }
        let m = ErlangMixture::new(w.to_vec(), shapes.to_vec(), r, 0.0)?;
        Ok(m.entropy()?)
    };

    let mut entropy = entropy_of(&weights, rate)?;
    let mut loss = model.value(&weights, rate) - cfg.gamma * entropy;
    if !loss.is_finite() {
        return Err(FitError::NonFinite);
    }
    let mut best = (loss, weights.clone(), rate);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_outer_iterations {
        iterations += 1;
        let prev_loss = loss;
        model.minimize(&mut weights, &mut rate, cfg.max_inner_iterations);
        entropy = entropy_of(&weights, rate)?;
        loss = model.value(&weights, rate) - cfg.gamma * entropy;
        if !loss.is_finite() {
            return Err(FitError::NonFinite);
        }
        if loss <= best.0 {
            best = (loss, weights.clone(), rate);
            trace.push(loss);
        }
        if (prev_loss - loss).abs() < cfg.epsilon {
            converged = true;
            break;
        }
    }
    Ok(RestartOutcome {
        weights: best.1,
        rate: best.2,
        loss: best.0,
        iterations,
        converged,
        trace,
    })
}

/// Fit an Erlang mixture to the target moments.
pub fn fit_mixture(target: &MomentVector, cfg: &FitConfig) -> Result<FitResult, FitError> {
    let start = Instant::now();
    if cfg.moments == 0 || cfg.components == 0 {
        return Err(FitError::BadConfig(
            "moments and components must be positive".into(),
        ));
    }
    if cfg.lambda_bounds.0 <= 0.0 || cfg.lambda_bounds.0 >= cfg.lambda_bounds.1 {
        return Err(FitError::BadConfig("lambda bounds must be ordered".into()));
    }
    if target.raw.len() < cfg.moments {
        return Err(FitError::NotEnoughMoments {
            needed: cfg.moments,
            got: target.raw.len(),
        });
    }
    if target.variance <= 0.0 {
        return Err(FitError::DegenerateTarget(target.variance));
    }
    let mut warnings = Vec::new();
    let minimum_components = cfg.moments / 2 + 1;
    if cfg.components < minimum_components {
        warnings.push(format!(
            "{} components may be too few to match {} moments (recommended at least {})",
            cfg.components, cfg.moments, minimum_components
        ));
    }

    let location = match cfg.location_rule {
        LocationRule::MeanMinusSigma => (target.mean() - target.sigma).max(0.0),
        LocationRule::Fixed(loc) => loc.max(0.0),
    };
    let shifted = shift_target_moments(&target.raw[..cfg.moments], location);
    if shifted[0] < 0.0 {
        warnings.push(format!(
            "shifted target mean is negative ({:.3e}); location {} exceeds the mean",
            shifted[0], location
        ));
    }
    let shapes = cfg.shape_rule.shapes(cfg.components)?;
    let products = moment_products(&shapes, cfg.moments);
    let c = shifted
        .get(1)
        .map(|&m2| m2.max(0.0).sqrt())
        .unwrap_or(1.0)
        .max(f64::MIN_POSITIVE);
    let scales: Vec<f64> = (1..=cfg.moments)
        .map(|k| cfg.scaling.factor(c, k).max(f64::MIN_POSITIVE))
        .collect();
    let model = ResidualModel {
        products: &products,
        targets_scaled: shifted.iter().zip(&scales).map(|(&t, &s)| t / s).collect(),
        scales: scales.clone(),
        lambda_bounds: cfg.lambda_bounds,
    };

    let restarts = cfg.restarts.max(1);
    let candidates = model.starting_candidates(&shapes, cfg.gamma);
    let workers = cfg.threads.max(1).min(restarts);
    let mut outcomes: Vec<(usize, RestartOutcome)> = Vec::with_capacity(restarts);
    if workers <= 1 {
        for r in 0..restarts {
            outcomes.push((
                r,
                run_restart(&model, &shapes, cfg, shifted[0], &candidates, r)?,
            ));
        }
    } else {
        let results = std::thread::scope(|scope| {
            let model = &model;
            let shapes = &shapes;
            let candidates = &candidates;
            let shifted_mean = shifted[0];
            let handles: Vec<_> = (0..restarts)
                .map(|r| {
                    scope.spawn(move || {
                        (r, run_restart(model, shapes, cfg, shifted_mean, candidates, r))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("restart worker panicked"))
                .collect::<Vec<_>>()
        });
        for (r, out) in results {
            outcomes.push((r, out?));
        }
    }
    // Lowest loss wins; losses equal to numerical noise count as ties and
    // resolve to the lower rate, then the restart index.
    let min_loss = outcomes
        .iter()
        .map(|(_, o)| o.loss)
        .fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * (1.0 + min_loss.abs());
    let (_, best) = outcomes
        .into_iter()
        .filter(|(_, o)| o.loss <= min_loss + tie)
        .min_by(|(ia, a), (ib, b)| {
            (a.rate, *ia)
                .partial_cmp(&(b.rate, *ib))
                .expect("rates are finite")
        })
        .expect("at least one restart");

    let mut weights = best.weights;
    // kill projection float drift so the simplex constraint holds exactly
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
    let rate = best.rate.clamp(cfg.lambda_bounds.0, cfg.lambda_bounds.1);
    let at_low = (rate - cfg.lambda_bounds.0).abs() < 1e-12;
    let at_high = (rate - cfg.lambda_bounds.1).abs() < 1e-12;
    let residual_value = model.value(&weights, rate);
    if (at_low || at_high) && residual_value > 1e-4 {
        warnings.push(format!(
            "rate pinned at {} bound with residual {:.3e}; the grid may not reach the target",
            if at_low { "lower" } else { "upper" },
            residual_value
        ));
    }

    let mixture = ErlangMixture::new(weights.clone(), shapes.clone(), rate, location)?;
    let unshifted = ErlangMixture {
        location: 0.0,
        ..mixture.clone()
    };
    let entropy = unshifted.entropy()?;
    let entropy_domain = unshifted.entropy_domain();
    let mu_hat = unshifted.moments(cfg.moments);
    let moment_residuals: Vec<f64> = shifted
        .iter()
        .zip(&mu_hat)
        .map(|(&t, &m)| (t - m).abs())
        .collect();
    let loss = residual_value - cfg.gamma * entropy;
    Ok(FitResult {
        mixture,
        loss,
        moment_residuals,
        entropy,
        entropy_domain,
        iterations: best.iterations,
        converged: best.converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        loss_trace: best.trace,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::derived_stats;

    #[test]
    fn shift_is_identity_at_zero() {
        let raw = vec![2.0, 6.0, 20.0];
        assert_eq!(shift_target_moments(&raw, 0.0), raw);
    }

    #[test]
    fn shift_recenters_by_binomial() {
        // mu = (2, 6), loc = 1 -> E[X-1] = 1, E[(X-1)^2] = 6 - 4 + 1 = 3
        let shifted = shift_target_moments(&[2.0, 6.0], 1.0);
        assert!((shifted[0] - 1.0).abs() < 1e-12);
        assert!((shifted[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shift_point_mass_to_zero() {
        let shifted = shift_target_moments(&[3.0, 9.0, 27.0], 3.0);
        for s in shifted {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn shape_rules() {
        assert_eq!(ShapeRule::Dense.shapes(4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(ShapeRule::Linear(3).shapes(3).unwrap(), vec![3, 6, 9]);
        assert_eq!(ShapeRule::Exponential(3).shapes(3).unwrap(), vec![3, 9, 27]);
        assert!(ShapeRule::Exponential(4).shapes(40).is_err());
    }

    #[test]
    fn loss_zero_on_own_moments() {
        let m = ErlangMixture::new(vec![0.4, 0.6], vec![2, 5], 1.5, 0.0).unwrap();
        let targets = m.moments(3);
        let loss = objective_loss(
            &m.weights,
            &m.shapes,
            m.rate,
            &targets,
            0.0,
            MomentScaling::PerOrder,
        )
        .unwrap();
        assert!(loss.abs() < 1e-20);
    }

    #[test]
    fn gamma_shifts_loss_by_entropy() {
        let m = ErlangMixture::new(vec![0.5, 0.5], vec![1, 4], 2.0, 0.0).unwrap();
        let targets = m.moments(2);
        let l0 = objective_loss(&m.weights, &m.shapes, m.rate, &targets, 0.0, MomentScaling::Raw)
            .unwrap();
        let l1 = objective_loss(&m.weights, &m.shapes, m.rate, &targets, 1.0, MomentScaling::Raw)
            .unwrap();
        let h = m.entropy().unwrap();
        assert!((l1 - (l0 - h)).abs() < 1e-10);
    }

    #[test]
    fn exp_moments_give_zero_loss() {
        // Exp(1) raw moments are (1, 2).
        let loss = objective_loss(&[1.0], &[1], 1.0, &[1.0, 2.0], 0.0, MomentScaling::PerOrder)
            .unwrap();
        assert!(loss.abs() < 1e-24);
    }

    #[test]
    fn simplex_ls_recovers_vertex() {
        // A w = t has the exact simplex solution w = e_1 at rate 2.
        let products = moment_products(&[3, 9, 27], 3);
        let rate: f64 = 2.0;
        let a: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                products[k]
                    .iter()
                    .map(|&p| p / rate.powi((k + 1) as i32))
                    .collect()
            })
            .collect();
        let t = vec![a[0][0], a[1][0], a[2][0]];
        let w = simplex_least_squares(&a, &t);
        assert!((w[0] - 1.0).abs() < 1e-8, "{w:?}");
    }

    #[test]
    fn inner_solver_converges_from_nearby_start() {
        let products = moment_products(&[3, 9, 27], 3);
        let gen = ErlangMixture::new(vec![1.0, 0.0, 0.0], vec![3, 9, 27], 2.0, 0.0).unwrap();
        let shifted = gen.moments(3);
        let c = shifted[1].sqrt();
        let scales: Vec<f64> = (1..=3).map(|k| MomentScaling::PerOrder.factor(c, k)).collect();
        let model = ResidualModel {
            products: &products,
            targets_scaled: shifted.iter().zip(&scales).map(|(&t, &s)| t / s).collect(),
            scales: scales.clone(),
            lambda_bounds: (0.01, 50.0),
        };
        let mut w = vec![1.0, 0.0, 0.0];
        let mut rate = 1.9;
        model.minimize(&mut w, &mut rate, 200);
        assert!(model.value(&w, rate) < 1e-12, "value {:e}", model.value(&w, rate));
        assert!((rate - 2.0).abs() < 1e-6, "rate {rate}");
    }

    #[test]
    fn recovers_in_grid_erlang() {
        // Targets from Erlang(shape 3, rate 2) on the (3, 9, 27) grid.
        let gen = ErlangMixture::new(vec![1.0, 0.0, 0.0], vec![3, 9, 27], 2.0, 0.0).unwrap();
        let target = derived_stats(&gen.moments(3), MomentScaling::PerOrder).unwrap();
        let cfg = FitConfig {
            gamma: 0.0,
            location_rule: LocationRule::Fixed(0.0),
            ..FitConfig::default()
        };
        let result = fit_mixture(&target, &cfg).unwrap();
        assert!(
            result.moment_residuals.iter().all(|&r| r < 1e-6),
            "residuals {:?}",
            result.moment_residuals
        );
        assert!(
            (result.mixture.rate - 2.0).abs() < 1e-3,
            "rate {}",
            result.mixture.rate
        );
        assert!(result.mixture.weights[0] > 0.999, "{:?}", result.mixture.weights);
    }

    #[test]
    fn degenerate_target_rejected() {
        let target = derived_stats(&[3.0, 9.0, 27.0], MomentScaling::PerOrder).unwrap();
        assert!(matches!(
            fit_mixture(&target, &FitConfig::default()),
            Err(FitError::DegenerateTarget(_))
        ));
    }

    #[test]
    fn returned_mixture_respects_constraints() {
        let target = derived_stats(&[2.0, 6.0, 26.0], MomentScaling::PerOrder).unwrap();
        let result = fit_mixture(&target, &FitConfig::default()).unwrap();
        let sum: f64 = result.mixture.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(result.mixture.weights.iter().all(|&w| w >= 0.0));
        assert!(result.mixture.rate >= 0.01 && result.mixture.rate <= 50.0);
        assert!(result.mixture.location >= 0.0);
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let target = derived_stats(&[2.0, 6.0, 26.0], MomentScaling::PerOrder).unwrap();
        let result = fit_mixture(&target, &FitConfig::default()).unwrap();
        for pair in result.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace {:?}", result.loss_trace);
        }
    }

    #[test]
    fn parallel_restarts_match_serial() {
        let target = derived_stats(&[2.0, 6.0, 26.0], MomentScaling::PerOrder).unwrap();
        let serial = fit_mixture(&target, &FitConfig { threads: 1, ..FitConfig::default() }).unwrap();
        let parallel =
            fit_mixture(&target, &FitConfig { threads: 4, ..FitConfig::default() }).unwrap();
        assert_eq!(serial.mixture, parallel.mixture);
        assert_eq!(serial.loss, parallel.loss);
    }

    #[test]
    fn warns_on_too_few_components() {
        let target = derived_stats(&[2.0, 6.0, 26.0, 150.0, 1200.0], MomentScaling::PerOrder)
            .unwrap();
        let cfg = FitConfig {
            moments: 5,
            components: 2,
            ..FitConfig::default()
        };
        let result = fit_mixture(&target, &cfg).unwrap();
        assert!(!result.warnings.is_empty());
    }
}
