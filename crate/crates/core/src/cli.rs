//! Command-line surface tying the pipeline together.
//!
//! Exit codes: 0 success / property holds, 1 validation failure / property
//! fails, 2 marginal or undetermined verdict, 64 usage or input error,
//! 70 internal numeric failure.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checker::{
    check_chance_constraint, ChanceConstraint, CheckConfig, Decision, Method, Requirement,
};
use crate::erlang::ErlangMixture;
use crate::fit::{fit_mixture, FitConfig, LocationRule, ShapeRule};
use crate::model::{parse_model, validate, Dtmc};
use crate::moments::{derived_stats, reward_moments, MomentScaling};
use crate::report::{digest_bytes, GridRow, InputDigest, Payload, Report, Timings};
use crate::sim::{ks_against_cdf, simulate_rewards, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILS: i32 = 1;
pub const EXIT_UNDETERMINED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_NUMERIC: i32 = 70;

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "DISTMC_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "distmc",
    version,
    about = "Distributional model checking for Markov reward processes",
    disable_help_subcommand = true
)]
struct Cli {
    /// Seed for simulation and fit restarts (default: $DISTMC_SEED or 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap for simulation shards and fit restarts.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// Moments to match.
    #[arg(short = 'k', long, default_value_t = 3)]
    k: usize,
    /// Mixture components.
    #[arg(short = 'n', long, default_value_t = 3)]
    n: usize,
    /// Shape grid: `dense`, `linear:<c>` or `exp:<c>`.
    #[arg(long, default_value = "exp:3")]
    shapes: String,
    /// Entropy weight in the loss.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Convergence threshold on loss differences.
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    /// Random restarts.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Residual scaling: `per-order`, `paper-literal` or `raw`.
    #[arg(long, default_value = "per-order")]
    scaling: String,
    /// Location shift: `auto` (mean minus sigma, clamped at 0) or a number.
    #[arg(long, default_value = "auto")]
    location: String,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check model well-formedness and report every violation.
    Validate { model: PathBuf },
    /// Exact raw moments of the cumulative reward to absorption.
    Moments {
        model: PathBuf,
        #[arg(short = 'k', long, default_value_t = 3)]
        k: usize,
    },
    /// Fit an Erlang mixture to the reward moments.
    Fit {
        model: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        /// Write the fitted mixture as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide a chance constraint like `P[X <= 10] >= 0.9`.
    Check {
        model: PathBuf,
        #[arg(long)]
        property: String,
        /// Tail-bound orders to try, ascending.
        #[arg(long, default_value = "2,3")]
        orders: String,
        /// Marginal band around alpha for fitted decisions.
        #[arg(long, default_value_t = 0.02)]
        margin: f64,
        /// Stop after the bound phase instead of fitting.
        #[arg(long)]
        bound_only: bool,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Monte Carlo simulation of cumulative rewards.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        runs: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_steps: u64,
        /// Write samples as a single-column CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KS distance between a fitted mixture and a sample file.
    Compare {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Sweep (K, n) and emit the accuracy/runtime matrix.
    Grid {
        model: PathBuf,
        #[arg(long, default_value = "3..5")]
        k_range: String,
        #[arg(long, default_value = "3..9")]
        n_range: String,
        /// Sample CSV for the KS column.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn numeric<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numeric(e.to_string())
}

/// Run the CLI against explicit arguments, returning the exit code. The
/// report goes to `out`, the human summary to `err`.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let command_echo = args.iter().skip(1).cloned().collect::<Vec<_>>().join(" ");
    match dispatch(&cli, command_echo) {
        Ok((report, summary, code)) => {
            let _ = writeln!(out, "{}", report.to_json());
            let _ = write!(err, "{summary}");
            code
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn load_model(path: &Path, inputs: &mut Vec<InputDigest>) -> Result<Dtmc, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    inputs.push(InputDigest {
        path: path.display().to_string(),
        sha256: digest_bytes(&bytes),
    });
    let text = String::from_utf8(bytes)
        .map_err(|_| usage(format!("{} is not valid UTF-8", path.display())))?;
    parse_model(&text).map_err(usage)
}

fn parse_shape_rule(s: &str) -> Result<ShapeRule, CliError> {
    if s == "dense" {
        return Ok(ShapeRule::Dense);
    }
    if let Some(c) = s.strip_prefix("linear:") {
        return c
            .parse::<u32>()
            .map(ShapeRule::Linear)
            .map_err(|_| usage(format!("bad linear shape factor `{c}`")));
    }
    if let Some(c) = s.strip_prefix("exp:") {
        return c
            .parse::<u32>()
            .map(ShapeRule::Exponential)
            .map_err(|_| usage(format!("bad exponential shape base `{c}`")));
    }
    Err(usage(format!(
        "unknown shape rule `{s}` (expected dense, linear:<c> or exp:<c>)"
    )))
}

fn parse_scaling(s: &str) -> Result<MomentScaling, CliError> {
    match s {
        "per-order" => Ok(MomentScaling::PerOrder),
        "paper-literal" => Ok(MomentScaling::PaperLiteral),
        "raw" => Ok(MomentScaling::Raw),
        other => Err(usage(format!("unknown scaling `{other}`"))),
    }
}

fn build_fit_config(
    args: &FitArgs,
    seed: u64,
    threads: usize,
) -> Result<FitConfig, CliError> {
    let location_rule = if args.location == "auto" {
        LocationRule::MeanMinusSigma
    } else {
        let v = args
            .location
            .parse::<f64>()
            .map_err(|_| usage(format!("bad location `{}`", args.location)))?;
        LocationRule::Fixed(v)
    };
    Ok(FitConfig {
        moments: args.k,
        components: args.n,
        shape_rule: parse_shape_rule(&args.shapes)?,
        gamma: args.gamma,
        epsilon: args.epsilon,
        scaling: parse_scaling(&args.scaling)?,
        location_rule,
        restarts: args.restarts,
        seed,
        threads,
        ..FitConfig::default()
    })
}

/// `P[X <= r] >= a`, `P[X >= r] >= a` or `P[r1 <= X <= r2] >= a`,
/// whitespace-insensitive.
pub fn parse_property(text: &str) -> Result<ChanceConstraint, String> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let inner = compact
        .strip_prefix("P[")
        .ok_or_else(|| format!("property must start with `P[`: `{text}`"))?;
    let close = inner
        .find(']')
        .ok_or_else(|| format!("missing `]` in `{text}`"))?;
    let event = &inner[..close];
    let alpha_part = inner[close + 1..]
        .strip_prefix(">=")
        .ok_or_else(|| format!("expected `>= <alpha>` after `]` in `{text}`"))?;
    let alpha: f64 = alpha_part
        .parse()
        .map_err(|_| format!("bad probability level `{alpha_part}`"))?;
    let requirement = if let Some(rest) = event.strip_prefix("X<=") {
        let r: f64 = rest.parse().map_err(|_| format!("bad threshold `{rest}`"))?;
        Requirement::AtMost { r }
    } else if let Some(rest) = event.strip_prefix("X>=") {
        let r: f64 = rest.parse().map_err(|_| format!("bad threshold `{rest}`"))?;
        Requirement::AtLeast { r }
    } else if let Some(mid) = event.find("<=X<=") {
        let lo: f64 = event[..mid]
            .parse()
            .map_err(|_| format!("bad lower bound `{}`", &event[..mid]))?;
        let hi: f64 = event[mid + 5..]
            .parse()
            .map_err(|_| format!("bad upper bound `{}`", &event[mid + 5..]))?;
        Requirement::Within { lo, hi }
    } else {
        return Err(format!("unrecognized event `{event}`"));
    };
    ChanceConstraint::new(requirement, alpha).map_err(|e| e.to_string())
}

type CmdOutput = (Report, String, i32);

fn dispatch(cli: &Cli, command_echo: String) -> Result<CmdOutput, CliError> {
    let seed = cli
        .seed
        .or_else(|| std::env::var(SEED_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let threads = cli.threads.max(1);
    let t0 = Instant::now();
    match &cli.cmd {
        Cmd::Validate { model } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let report_data = validate(&d);
            let clean = report_data.is_clean();
            let violations: Vec<String> =
                report_data.violations.iter().map(|v| v.to_string()).collect();
            let mut summary = format!(
                "{}: {}\n",
                model.display(),
                if clean { "well-formed" } else { "violations found" }
            );
            for v in &violations {
                let _ = writeln!(summary, "  - {v}");
            }
            let mut report = Report::new(command_echo, Payload::Validation { clean, violations });
            report.inputs = inputs;
            report.timings.t_total_s = t0.elapsed().as_secs_f64();
            Ok((report, summary, if clean { EXIT_OK } else { EXIT_FAILS }))
        }
        Cmd::Moments { model, k } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let tm = Instant::now();
            let raw = reward_moments(&d, *k).map_err(numeric)?.at_initial;
            let t_moments = tm.elapsed().as_secs_f64();
            let moments = if raw.len() >= 2 {
                derived_stats(&raw, MomentScaling::PerOrder).map_err(numeric)?
            } else {
                crate::moments::MomentVector {
                    raw,
                    variance: 0.0,
                    sigma: 0.0,
                    standardized: vec![],
                    scaling: MomentScaling::PerOrder,
                }
            };
            let summary = format!(
                "mu_1..mu_{} = {:?}, sigma = {:.6}\n",
                k, moments.raw, moments.sigma
            );
            let mut report = Report::new(command_echo, Payload::Moments { moments });
            report.inputs = inputs;
            report.timings = Timings {
                t_moments_s: Some(t_moments),
                t_opt_s: None,
                t_total_s: t0.elapsed().as_secs_f64(),
            };
            Ok((report, summary, EXIT_OK))
        }
        Cmd::Fit { model, fit, out } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let cfg = build_fit_config(fit, seed, threads)?;
            let tm = Instant::now();
            let raw = reward_moments(&d, cfg.moments.max(2))
                .map_err(numeric)?
                .at_initial;
            let t_moments = tm.elapsed().as_secs_f64();
            let target = derived_stats(&raw, cfg.scaling).map_err(numeric)?;
            let result = fit_mixture(&target, &cfg).map_err(numeric)?;
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&result.mixture)
                    .expect("mixture serialization cannot fail");
                std::fs::write(path, json)
                    .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
            }
            let summary = format!(
                "fit: loss {:.6e}, residuals {:?}, {} iterations, converged = {}\n",
                result.loss, result.moment_residuals, result.iterations, result.converged
            );
            let warnings = result.warnings.clone();
            let t_opt = result.wall_time_s;
            let mut report = Report::new(command_echo, Payload::Fit { fit: result });
            report.inputs = inputs;
            report.seed = Some(seed);
            report.warnings = warnings;
            report.timings = Timings {
                t_moments_s: Some(t_moments),
                t_opt_s: Some(t_opt),
                t_total_s: t0.elapsed().as_secs_f64(),
            };
            Ok((report, summary, EXIT_OK))
        }
        Cmd::Check {
            model,
            property,
            orders,
            margin,
            bound_only,
            fit,
        } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let constraint = parse_property(property).map_err(usage)?;
            let parsed_orders: Vec<u32> = orders
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|_| usage(format!("bad orders list `{orders}`")))?;
            let cfg = CheckConfig {
                fit: build_fit_config(fit, seed, threads)?,
                orders: parsed_orders,
                margin: *margin,
                bound_only: *bound_only,
            };
            let verdict = check_chance_constraint(&d, &constraint, &cfg).map_err(numeric)?;
            let code = match verdict.decision {
                Decision::Holds if verdict.marginal => EXIT_UNDETERMINED,
                Decision::Fails if verdict.marginal => EXIT_UNDETERMINED,
                Decision::Holds => EXIT_OK,
                Decision::Fails => EXIT_FAILS,
                Decision::UndeterminedByBound => EXIT_UNDETERMINED,
            };
            let method_desc = match &verdict.method {
                Method::Degenerate => "degenerate".to_string(),
                Method::Cantelli { order, .. } => format!("cantelli({order})"),
                Method::FittedCdf => "fitted_cdf".to_string(),
            };
            let summary = format!(
                "{property}: {:?} by {method_desc}, estimate [{:.6}, {:.6}]{}\n",
                verdict.decision,
                verdict.probability_estimate.0,
                verdict.probability_estimate.1,
                if verdict.marginal { " (marginal)" } else { "" }
            );
            let t_opt = verdict.fit.as_ref().map(|f| f.wall_time_s);
            let warnings = verdict
                .fit
                .as_ref()
                .map(|f| f.warnings.clone())
                .unwrap_or_default();
            let mut report = Report::new(
                command_echo,
                Payload::Verdict {
                    property: property.clone(),
                    verdict,
                },
            );
            report.inputs = inputs;
            report.seed = Some(seed);
            report.warnings = warnings;
            report.timings = Timings {
                t_moments_s: None,
                t_opt_s: t_opt,
                t_total_s: t0.elapsed().as_secs_f64(),
            };
            Ok((report, summary, code))
        }
        Cmd::Simulate {
            model,
            runs,
            max_steps,
            out,
        } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let cfg = SimConfig {
                runs: *runs,
                seed,
                max_steps: *max_steps,
                threads,
            };
            let e = simulate_rewards(&d, &cfg).map_err(numeric)?;
            let mut warnings = Vec::new();
            if e.truncated_runs as f64 > 0.001 * *runs as f64 {
                warnings.push(format!(
                    "{} of {} runs hit the {}-step cap and were excluded",
                    e.truncated_runs, runs, max_steps
                ));
            }
            if let Some(path) = out {
                let mut csv = String::with_capacity(e.samples.len() * 8);
                for s in &e.samples {
                    let _ = writeln!(csv, "{s}");
                }
                std::fs::write(path, csv)
                    .map_err(|er| usage(format!("cannot write {}: {er}", path.display())))?;
            }
            let summary = format!(
                "simulated {} runs (seed {}): mean {:.6}, {} truncated\n",
                runs,
                seed,
                e.mean(),
                e.truncated_runs
            );
            let payload = Payload::Simulation {
                runs: *runs,
                seed,
                samples: e.samples.len(),
                truncated_runs: e.truncated_runs,
                mean: e.mean(),
                min: e.samples.first().copied().unwrap_or(f64::NAN),
                max: e.samples.last().copied().unwrap_or(f64::NAN),
                output: out.as_ref().map(|p| p.display().to_string()),
            };
            let mut report = Report::new(command_echo, payload);
            report.inputs = inputs;
            report.seed = Some(seed);
            report.warnings = warnings;
            report.timings.t_total_s = t0.elapsed().as_secs_f64();
            Ok((report, summary, EXIT_OK))
        }
        Cmd::Compare { mixture, samples } => {
            let mut inputs = Vec::new();
            let mixture_bytes = std::fs::read(mixture)
                .map_err(|e| usage(format!("cannot read {}: {e}", mixture.display())))?;
            inputs.push(InputDigest {
                path: mixture.display().to_string(),
                sha256: digest_bytes(&mixture_bytes),
            });
            let m: ErlangMixture = serde_json::from_slice(&mixture_bytes)
                .map_err(|e| usage(format!("bad mixture file: {e}")))?;
            m.validate().map_err(usage)?;
            let sorted = read_samples(samples, &mut inputs)?;
            if sorted.is_empty() {
                return Err(usage("sample file is empty"));
            }
            let d_ks = ks_against_cdf(&sorted, |x| m.cdf(x));
            let summary = format!("D_KS = {d_ks:.6} over {} samples\n", sorted.len());
            let mut report = Report::new(
                command_echo,
                Payload::Compare {
                    d_ks,
                    samples: sorted.len(),
                },
            );
            report.inputs = inputs;
            report.timings.t_total_s = t0.elapsed().as_secs_f64();
            Ok((report, summary, EXIT_OK))
        }
        Cmd::Grid {
            model,
            k_range,
            n_range,
            samples,
            fit,
        } => {
            let mut inputs = Vec::new();
            let d = load_model(model, &mut inputs)?;
            let (k_lo, k_hi) = parse_range(k_range)?;
            let (n_lo, n_hi) = parse_range(n_range)?;
            let sorted = match samples {
                Some(path) => Some(read_samples(path, &mut inputs)?),
                None => None,
            };
            let mut rows = Vec::new();
            let mut summary = String::from("  K   n      T_opt    T_total  iters        loss    D_KS\n");
            for k in k_lo..=k_hi {
                for n in n_lo..=n_hi {
                    let cell0 = Instant::now();
                    let mut cfg = build_fit_config(fit, seed, threads)?;
                    cfg.moments = k;
                    cfg.components = n;
                    let raw = reward_moments(&d, k.max(2)).map_err(numeric)?.at_initial;
                    let target = derived_stats(&raw, cfg.scaling).map_err(numeric)?;
                    let result = fit_mixture(&target, &cfg).map_err(numeric)?;
                    let d_ks = sorted
                        .as_ref()
                        .map(|s| ks_against_cdf(s, |x| result.mixture.cdf(x)));
                    let row = GridRow {
                        k,
                        n,
                        t_opt_s: result.wall_time_s,
                        t_total_s: cell0.elapsed().as_secs_f64(),
                        iterations: result.iterations,
                        loss: result.loss,
                        d_ks,
                    };
                    let _ = writeln!(
                        summary,
                        "{:3} {:3} {:10.3} {:10.3} {:6} {:11.4e}  {}",
                        k,
                        n,
                        row.t_opt_s,
                        row.t_total_s,
                        row.iterations,
                        row.loss,
                        d_ks.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
                    );
                    rows.push(row);
                }
            }
            let mut report = Report::new(command_echo, Payload::Grid { rows });
            report.inputs = inputs;
            report.seed = Some(seed);
            report.timings.t_total_s = t0.elapsed().as_secs_f64();
            Ok((report, summary, EXIT_OK))
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = s.split("..").collect();
    if parts.len() != 2 {
        return Err(usage(format!("bad range `{s}` (expected `lo..hi`)")));
    }
    let lo: usize = parts[0]
        .parse()
        .map_err(|_| usage(format!("bad range bound `{}`", parts[0])))?;
    let hi: usize = parts[1]
        .parse()
        .map_err(|_| usage(format!("bad range bound `{}`", parts[1])))?;
    if lo == 0 || lo > hi {
        return Err(usage(format!("bad range `{s}`")));
    }
    Ok((lo, hi))
}

fn read_samples(path: &Path, inputs: &mut Vec<InputDigest>) -> Result<Vec<f64>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    inputs.push(InputDigest {
        path: path.display().to_string(),
        sha256: digest_bytes(&bytes),
    });
    let text = String::from_utf8(bytes)
        .map_err(|_| usage(format!("{} is not valid UTF-8", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "reward" {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| usage(format!("{}:{}: bad sample `{line}`", path.display(), i + 1)))?;
        values.push(v);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_grammar() {
        let c = parse_property("P[X <= 10] >= 0.9").unwrap();
        assert_eq!(c.requirement, Requirement::AtMost { r: 10.0 });
        assert_eq!(c.alpha, 0.9);
        let c = parse_property("P[ X >= 2.5e-1 ] >= 0.5").unwrap();
        assert_eq!(c.requirement, Requirement::AtLeast { r: 0.25 });
        let c = parse_property("P[1 <= X <= 4] >= 0.75").unwrap();
        assert_eq!(c.requirement, Requirement::Within { lo: 1.0, hi: 4.0 });
        // whitespace-insensitive
        assert_eq!(
            parse_property("P[X<=10]>=0.9").unwrap(),
            parse_property("  P [ X <= 10 ]  >= 0.9 ").unwrap()
        );
        assert!(parse_property("P[X < 10] >= 0.9").is_err());
        assert!(parse_property("P[X <= 10] >= 1.5").is_err());
        assert!(parse_property("[X <= 10] >= 0.9").is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("3..5").unwrap(), (3, 5));
        assert!(parse_range("5..3").is_err());
        assert!(parse_range("3").is_err());
        assert!(parse_range("0..2").is_err());
    }

    #[test]
    fn shape_rule_parsing() {
        assert_eq!(parse_shape_rule("dense").unwrap(), ShapeRule::Dense);
        assert_eq!(parse_shape_rule("linear:2").unwrap(), ShapeRule::Linear(2));
        assert_eq!(
            parse_shape_rule("exp:3").unwrap(),
            ShapeRule::Exponential(3)
        );
        assert!(parse_shape_rule("cubic").is_err());
    }
}
