//! Distributional model checking for Markov reward processes.
//!
//! The pipeline: parse a DTMC, reduce the property to cumulative reward to
//! absorption, compute exact raw moments of that reward, approximate the full
//! distribution by a moment-matched Erlang mixture, and decide chance
//! constraints `Pr(X <= r*) >= alpha` either by a moment-only tail bound or by
//! evaluating the fitted CDF.

pub mod checker;
pub mod cli;
pub mod erlang;
pub mod fit;
mod linalg;
pub mod model;
pub mod moments;
pub mod report;
pub mod rng;
pub mod sim;
