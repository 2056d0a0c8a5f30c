//! Monte Carlo baseline: reward simulation, empirical CDFs and the
//! Kolmogorov-Smirnov distance.
//!
//! Each run draws from a stream keyed by `(seed, run index)`, so the sample
//! set is identical no matter how runs are sharded across workers.

use thiserror::Error;

use crate::erlang::ErlangMixture;
use crate::model::Dtmc;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("run count must be at least 1")]
    NoRuns,
    #[error("empty sample set")]
    EmptySamples,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub runs: u64,
    pub seed: u64,
    /// Runs hitting this cap are counted as truncated and excluded.
    pub max_steps: u64,
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            runs: 1_000_000,
            seed: 0,
            max_steps: 1_000_000,
            threads: 1,
        }
    }
}

/// Sorted cumulative-reward samples with their provenance.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    pub samples: Vec<f64>,
    pub run_count: u64,
    pub seed: u64,
    pub truncated_runs: u64,
}

impl EmpiricalDistribution {
    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// k-th raw moment of the samples.
    pub fn raw_moment(&self, k: u32) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().map(|&x| x.powi(k as i32)).sum::<f64>() / self.samples.len() as f64
    }
}

struct WalkTable {
    /// Per state: (cumulative probability, target), last entry padded to
    /// swallow float residue.
    rows: Vec<Vec<(f64, u32)>>,
    rewards: Vec<f64>,
    absorbing: Vec<bool>,
}

impl WalkTable {
    fn new(d: &Dtmc) -> Self {
        let rows = d
            .rows
            .iter()
            .map(|row| {
                let mut cum = 0.0;
                let mut out: Vec<(f64, u32)> = row
                    .iter()
                    .map(|&(t, p)| {
                        cum += p;
                        (cum, t as u32)
                    })
                    .collect();
                if let Some(last) = out.last_mut() {
                    last.0 = f64::INFINITY;
                }
                out
            })
            .collect();
        Self {
            rows,
            rewards: d.state_rewards.clone(),
            absorbing: d.absorbing.clone(),
        }
    }

    /// One run from `initial`; `None` when the step cap was hit.
    #[inline]
    fn walk(&self, initial: usize, rng: &mut SplitMix64, max_steps: u64) -> Option<f64> {
        let mut state = initial;
        let mut total = 0.0;
        let mut steps = 0u64;
        while !self.absorbing[state] {
            if steps >= max_steps {
                return None;
            }
            total += self.rewards[state];
            let u = rng.next_f64();
            let row = &self.rows[state];
            let mut next = row[row.len() - 1].1;
            for &(cum, t) in row {
                if u < cum {
                    next = t;
                    break;
                }
            }
            state = next as usize;
            steps += 1;
        }
        Some(total)
    }
}

/// Walk the chain `cfg.runs` times accumulating transient-state rewards until
/// absorption. Reproducible for a given seed, independent of `threads`.
pub fn simulate_rewards(d: &Dtmc, cfg: &SimConfig) -> Result<EmpiricalDistribution, SimError> {
    if cfg.runs == 0 {
        return Err(SimError::NoRuns);
    }
    let table = WalkTable::new(d);
    let initial = d.initial;
    let workers = cfg.threads.max(1).min(cfg.runs as usize);
    let chunk = cfg.runs.div_ceil(workers as u64);
    let mut samples: Vec<f64> = Vec::with_capacity(cfg.runs as usize);
    let mut truncated = 0u64;
    if workers <= 1 {
        for run in 0..cfg.runs {
            let mut rng = SplitMix64::stream(cfg.seed, run);
            match table.walk(initial, &mut rng, cfg.max_steps) {
                Some(x) => samples.push(x),
                None => truncated += 1,
            }
        }
    } else {
        let parts = std::thread::scope(|scope| {
            let table = &table;
            let handles: Vec<_> = (0..workers as u64)
                .map(|w| {
                    scope.spawn(move || {
                        let lo = w * chunk;
                        let hi = ((w + 1) * chunk).min(cfg.runs);
                        let mut local = Vec::with_capacity((hi - lo) as usize);
                        let mut local_truncated = 0u64;
                        for run in lo..hi {
                            let mut rng = SplitMix64::stream(cfg.seed, run);
                            match table.walk(initial, &mut rng, cfg.max_steps) {
                                Some(x) => local.push(x),
                                None => local_truncated += 1,
                            }
                        }
                        (local, local_truncated)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation worker panicked"))
                .collect::<Vec<_>>()
        });
        for (local, local_truncated) in parts {
            samples.extend(local);
            truncated += local_truncated;
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EmpiricalDistribution {
        samples,
        run_count: cfg.runs,
        seed: cfg.seed,
        truncated_runs: truncated,
    })
}

/// Right-continuous empirical CDF: the fraction of samples <= x.
pub fn empirical_cdf(e: &EmpiricalDistribution, x: f64) -> Result<f64, SimError> {
    if e.samples.is_empty() {
        return Err(SimError::EmptySamples);
    }
    let count = e.samples.partition_point(|&s| s <= x);
    Ok(count as f64 / e.samples.len() as f64)
}

/// Exact KS distance between sorted samples and a continuous CDF: the sup is
/// attained at a sample point, approaching from either side.
pub fn ks_against_cdf(sorted_samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted_samples.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted_samples.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi.abs()).max(lo.abs());
    }
    d
}

/// KS distance between the empirical distribution and a mixture CDF.
pub fn ks_statistic(e: &EmpiricalDistribution, m: &ErlangMixture) -> Result<f64, SimError> {
    if e.samples.is_empty() {
        return Err(SimError::EmptySamples);
    }
    Ok(ks_against_cdf(&e.samples, |x| m.cdf(x)))
}
