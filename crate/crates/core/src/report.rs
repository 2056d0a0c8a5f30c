//! Machine-readable run reports.
//!
//! One JSON document per invocation on standard output; the human summary
//! goes to standard error. Identical inputs and seeds produce byte-identical
//! reports except for the timing fields.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checker::Verdict;
use crate::fit::FitResult;
use crate::moments::MomentVector;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_moments_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_opt_s: Option<f64>,
    pub t_total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub k: usize,
    pub n: usize,
    pub t_opt_s: f64,
    pub t_total_s: f64,
    pub iterations: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ks: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Validation {
        clean: bool,
        violations: Vec<String>,
    },
    Moments {
        moments: MomentVector,
    },
    Fit {
        fit: FitResult,
    },
    Verdict {
        property: String,
        verdict: Verdict,
    },
    Simulation {
        runs: u64,
        seed: u64,
        samples: usize,
        truncated_runs: u64,
        mean: f64,
        min: f64,
        max: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        output: Option<String>,
    },
    Compare {
        d_ks: f64,
        samples: usize,
    },
    Grid {
        rows: Vec<GridRow>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub payload: Payload,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: String, payload: Payload) -> Self {
        Self {
            tool: "distmc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            inputs: Vec::new(),
            seed: None,
            payload,
            timings: Timings::default(),
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
