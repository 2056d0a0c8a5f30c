//! Exact raw moments of the cumulative reward to absorption.
//!
//! The k-th moment vector `u_k` over transient states solves
//!
//! ```text
//! (I - P_CC) u_k = r^k + sum_{i=1..k-1} C(k,i) r^{k-i} .* (P_CC u_i)
//! ```
//!
//! so all K moments share one factorization of `I - P_CC`.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{bicgstab, Csr, DenseLu, LinalgError, DENSE_LIMIT};
use crate::model::{Dtmc, StateId};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("moment order must be at least 1")]
    ZeroOrder,
    #[error("singular moment system: the chain does not absorb with probability 1 ({0})")]
    NonAbsorbing(#[from] LinalgError),
    #[error("inconsistent moments: mu2 = {mu2} < mu1^2 = {mu1_sq}")]
    Inconsistent { mu2: f64, mu1_sq: f64 },
    #[error("derived statistics need at least two moments, got {0}")]
    NeedTwoMoments(usize),
}

/// How standardized moments are scaled. `c = sqrt(mu_2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentScaling {
    /// `mu_k / c^k`: dimensionless at every order.
    #[default]
    PerOrder,
    /// `mu_k / c` for k >= 3, the form stated alongside the optimizer.
    PaperLiteral,
    /// No scaling.
    Raw,
}

impl MomentScaling {
    /// Divisor applied to the k-th raw moment.
    pub fn factor(self, c: f64, k: usize) -> f64 {
        match self {
            MomentScaling::PerOrder => c.powi(k as i32),
            MomentScaling::PaperLiteral => {
                if k >= 3 {
                    c
                } else {
                    1.0
                }
            }
            MomentScaling::Raw => 1.0,
        }
    }
}

/// Raw moments `mu_1..mu_K` with derived statistics.
#[derive(Debug, Clone, Serialize)]
pub struct MomentVector {
    pub raw: Vec<f64>,
    pub variance: f64,
    pub sigma: f64,
    /// Standardized moments for k = 3..K under `scaling`.
    pub standardized: Vec<f64>,
    pub scaling: MomentScaling,
}

impl MomentVector {
    pub fn order(&self) -> usize {
        self.raw.len()
    }

    pub fn mean(&self) -> f64 {
        self.raw[0]
    }
}

/// The linear system restricted to transient states, plus the solutions
/// `u_k(x)` for every transient state.
pub struct RewardMoments {
    /// Transient state ids in declaration order.
    pub transient: Vec<StateId>,
    /// `per_state[k-1][j]` is the k-th moment started from `transient[j]`.
    pub per_state: Vec<Vec<f64>>,
    /// Raw moments at the initial state (all zero when it is absorbing).
    pub at_initial: Vec<f64>,
}

enum Solver {
    Dense(DenseLu),
    Iterative(Csr),
}

impl Solver {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Solver::Dense(lu) => Ok(lu.solve(rhs)),
            Solver::Iterative(p_cc) => bicgstab(
                |x, y| {
                    // y = (I - P_CC) x
                    p_cc.matvec(x, y);
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi = xi - *yi;
                    }
                },
                rhs,
                1e-12,
                20 * rhs.len().max(100),
            ),
        }
    }
}

fn build_solver(p_cc_rows: &[Vec<(usize, f64)>]) -> Result<Solver, MomentError> {
    let n = p_cc_rows.len();
    if n <= DENSE_LIMIT {
        let mut a = vec![0.0; n * n];
        for (i, row) in p_cc_rows.iter().enumerate() {
            a[i * n + i] = 1.0;
            for &(j, p) in row {
                a[i * n + j] -= p;
            }
        }
        Ok(Solver::Dense(DenseLu::factor(a, n)?))
    } else {
        Ok(Solver::Iterative(Csr::from_rows(p_cc_rows)))
    }
}

fn binomial_row(k: usize) -> Vec<f64> {
    let mut row = vec![1.0; k + 1];
    for i in 1..=k {
        row[i] = row[i - 1] * (k - i + 1) as f64 / i as f64;
    }
    row
}

fn moments_with_rewards(
    d: &Dtmc,
    rewards: &[f64],
    k_max: usize,
) -> Result<RewardMoments, MomentError> {
    if k_max == 0 {
        return Err(MomentError::ZeroOrder);
    }
    let transient = d.transient_states();
    let nt = transient.len();
    if nt == 0 {
        return Ok(RewardMoments {
            transient,
            per_state: vec![Vec::new(); k_max],
            at_initial: vec![0.0; k_max],
        });
    }
    let mut dense_index = vec![usize::MAX; d.n_states()];
    for (j, &s) in transient.iter().enumerate() {
        dense_index[s] = j;
    }
    // P restricted to transient rows and columns; absorbing columns drop out
    // because u_i vanishes there.
    let p_cc_rows: Vec<Vec<(usize, f64)>> = transient
        .iter()
        .map(|&s| {
            d.rows[s]
                .iter()
                .filter(|&&(t, p)| p > 0.0 && !d.absorbing[t])
                .map(|&(t, p)| (dense_index[t], p))
                .collect()
        })
        .collect();
    let solver = build_solver(&p_cc_rows)?;
    let p_cc = Csr::from_rows(&p_cc_rows);
    let r: Vec<f64> = transient.iter().map(|&s| rewards[s]).collect();

    // r^j tables for j = 1..K
    let mut r_pow = vec![vec![1.0; nt]];
    for j in 1..=k_max {
        let prev = &r_pow[j - 1];
        r_pow.push(prev.iter().zip(&r).map(|(p, ri)| p * ri).collect());
    }

    let mut per_state: Vec<Vec<f64>> = Vec::with_capacity(k_max);
    let mut propagated: Vec<Vec<f64>> = Vec::with_capacity(k_max); // P_CC u_i
    for k in 1..=k_max {
        let binom = binomial_row(k);
        let mut rhs = r_pow[k].clone();
        for i in 1..k {
            let w = &propagated[i - 1];
            let coeff = binom[i];
            let rp = &r_pow[k - i];
            for t in 0..nt {
                rhs[t] += coeff * rp[t] * w[t];
            }
        }
        let u_k = solver.solve(&rhs)?;
        let mut w_k = vec![0.0; nt];
        p_cc.matvec(&u_k, &mut w_k);
        per_state.push(u_k);
        propagated.push(w_k);
    }

    let at_initial = if d.absorbing[d.initial] {
        vec![0.0; k_max]
    } else {
        let j0 = dense_index[d.initial];
        per_state.iter().map(|u| u[j0]).collect()
    };
    Ok(RewardMoments {
        transient,
        per_state,
        at_initial,
    })
}

/// Raw moments `mu_1..mu_K` of the cumulative reward to absorption, at the
/// initial state and per transient state. Exactly K solves against one
/// factorization.
pub fn reward_moments(d: &Dtmc, k_max: usize) -> Result<RewardMoments, MomentError> {
    moments_with_rewards(d, &d.state_rewards, k_max)
}

/// Expected number of steps to absorption (the hitting-time system), i.e. the
/// first moment under unit rewards.
pub fn expected_steps(d: &Dtmc) -> Result<f64, MomentError> {
    let unit = vec![1.0; d.n_states()];
    Ok(moments_with_rewards(d, &unit, 1)?.at_initial[0])
}

/// Fill variance, sigma and standardized moments from raw moments.
pub fn derived_stats(raw: &[f64], scaling: MomentScaling) -> Result<MomentVector, MomentError> {
    if raw.len() < 2 {
        return Err(MomentError::NeedTwoMoments(raw.len()));
    }
    let mu1 = raw[0];
    let mu2 = raw[1];
    let var = mu2 - mu1 * mu1;
    if var < -1e-9 * mu2.abs().max(1.0) {
        return Err(MomentError::Inconsistent {
            mu2,
            mu1_sq: mu1 * mu1,
        });
    }
    let variance = var.max(0.0);
    let c = mu2.max(0.0).sqrt();
    let standardized = raw
        .iter()
        .enumerate()
        .skip(2)
        .map(|(idx, &mu)| {
            let k = idx + 1;
            if c == 0.0 {
                0.0
            } else {
                mu / scaling.factor(c, k)
            }
        })
        .collect();
    Ok(MomentVector {
        raw: raw.to_vec(),
        variance,
        sigma: variance.sqrt(),
        standardized,
        scaling,
    })
}

/// Convenience: raw moments at the initial state with derived statistics.
pub fn moment_vector(d: &Dtmc, k_max: usize, scaling: MomentScaling) -> Result<MomentVector, MomentError> {
    let raw = reward_moments(d, k_max)?.at_initial;
    derived_stats(&raw, scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    const GEOMETRIC: &str =
        "dtmc v1\nstate s0 reward=1\nstate done reward=0 absorbing\ninitial s0\ntrans s0 s0 p=0.5\ntrans s0 done p=0.5\n";

    #[test]
    fn geometric_first_two_moments() {
        let d = parse_model(GEOMETRIC).unwrap();
        let m = reward_moments(&d, 2).unwrap();
        // u1 = 1 + 0.5 u1 and u2 = 1 + 2*0.5*u1 + 0.5 u2.
        assert!((m.at_initial[0] - 2.0).abs() < 1e-10);
        assert!((m.at_initial[1] - 6.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_chain_is_point_mass() {
        let text = "dtmc v1\nstate a reward=1\nstate b reward=2\nstate done reward=0 absorbing\ninitial a\ntrans a b p=1.0\ntrans b done p=1.0\n";
        let d = parse_model(text).unwrap();
        let m = reward_moments(&d, 3).unwrap();
        assert!((m.at_initial[0] - 3.0).abs() < 1e-12);
        assert!((m.at_initial[1] - 9.0).abs() < 1e-12);
        assert!((m.at_initial[2] - 27.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_zero_moments() {
        let text = "dtmc v1\nstate s0 reward=0\nstate done reward=0 absorbing\ninitial s0\ntrans s0 s0 p=0.3\ntrans s0 done p=0.7\n";
        let d = parse_model(text).unwrap();
        let m = reward_moments(&d, 4).unwrap();
        assert!(m.at_initial.iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn zero_order_rejected() {
        let d = parse_model(GEOMETRIC).unwrap();
        assert!(matches!(reward_moments(&d, 0), Err(MomentError::ZeroOrder)));
    }

    #[test]
    fn non_absorbing_class_is_singular() {
        // Two transient states looping forever; validation would flag this,
        // the solver must too.
        let text = "dtmc v1\nstate a reward=1\nstate b reward=1\nstate done reward=0 absorbing\ninitial a\ntrans a b p=1.0\ntrans b a p=1.0\n";
        let d = parse_model(text).unwrap();
        assert!(matches!(
            reward_moments(&d, 1),
            Err(MomentError::NonAbsorbing(_))
        ));
    }

    #[test]
    fn derived_stats_variance_sigma() {
        let m = derived_stats(&[2.0, 6.0], MomentScaling::PerOrder).unwrap();
        assert!((m.variance - 2.0).abs() < 1e-12);
        assert!((m.sigma - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derived_stats_point_mass() {
        let m = derived_stats(&[3.0, 9.0, 27.0], MomentScaling::PerOrder).unwrap();
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.sigma, 0.0);
        // standardized third moment = 27 / 27 = 1 under per-order scaling
        assert!((m.standardized[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derived_stats_all_zero() {
        let m = derived_stats(&[0.0, 0.0, 0.0], MomentScaling::PerOrder).unwrap();
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.standardized[0], 0.0);
    }

    #[test]
    fn derived_stats_rejects_inconsistent() {
        assert!(matches!(
            derived_stats(&[2.0, 3.0], MomentScaling::PerOrder),
            Err(MomentError::Inconsistent { .. })
        ));
    }

    #[test]
    fn paper_literal_scaling() {
        let m = derived_stats(&[2.0, 4.0, 16.0], MomentScaling::PaperLiteral).unwrap();
        // c = 2, k=3 scaled by c once
        assert!((m.standardized[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn state_order_permutation_invariant() {
        let a = "dtmc v1\nstate x reward=0.5\nstate y reward=2\nstate z reward=0 absorbing\ninitial x\ntrans x y p=0.6\ntrans x z p=0.4\ntrans y x p=0.3\ntrans y z p=0.7\n";
        // same chain, states declared in a different order
        let b = "dtmc v1\nstate z reward=0 absorbing\nstate y reward=2\nstate x reward=0.5\ninitial x\ntrans x y p=0.6\ntrans x z p=0.4\ntrans y x p=0.3\ntrans y z p=0.7\n";
        let ma = reward_moments(&parse_model(a).unwrap(), 3).unwrap();
        let mb = reward_moments(&parse_model(b).unwrap(), 3).unwrap();
        for k in 0..3 {
            let rel = (ma.at_initial[k] - mb.at_initial[k]).abs() / ma.at_initial[k].abs();
            assert!(rel < 1e-10, "k={k}: {} vs {}", ma.at_initial[k], mb.at_initial[k]);
        }
    }

    #[test]
    fn expected_steps_geometric() {
        let d = parse_model(GEOMETRIC).unwrap();
        // T ~ geometric(1/2) counting the visits to s0: E[T] = 2.
        assert!((expected_steps(&d).unwrap() - 2.0).abs() < 1e-12);
    }
}
