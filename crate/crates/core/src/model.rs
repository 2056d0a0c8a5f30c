//! DTMC models and the transformations that reduce every verification
//! problem to cumulative reward to absorption.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

pub type StateId = usize;

/// Row-sum tolerance for stochasticity checks.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// A discrete-time Markov chain with state rewards.
///
/// Transition-reward annotations parsed from a model file are carried in
/// `transition_rewards` until [`normalize_transition_rewards`] eliminates
/// them; everything downstream of the loader sees state rewards only.
///
/// Values are immutable after construction; all transforms return new chains.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    /// State names in declaration order; all matrices index by this order.
    pub states: Vec<String>,
    pub initial: StateId,
    /// Sparse outgoing rows, each sorted by target id.
    pub rows: Vec<Vec<(StateId, f64)>>,
    pub state_rewards: Vec<f64>,
    pub labels: Vec<BTreeSet<String>>,
    pub absorbing: Vec<bool>,
    /// Reward annotations on transitions, keyed by `(from, to)`.
    pub transition_rewards: BTreeMap<(StateId, StateId), f64>,
}

impl Dtmc {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.absorbing[s]
    }

    /// Transient state ids in declaration order.
    pub fn transient_states(&self) -> Vec<StateId> {
        (0..self.n_states()).filter(|&s| !self.absorbing[s]).collect()
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s == name)
    }

    pub fn probability(&self, from: StateId, to: StateId) -> f64 {
        self.rows[from]
            .iter()
            .find(|&&(t, _)| t == to)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    fn push_state(&mut self, name: String, reward: f64, absorbing: bool) -> StateId {
        let id = self.states.len();
        self.states.push(name);
        self.state_rewards.push(reward);
        self.labels.push(BTreeSet::new());
        self.absorbing.push(absorbing);
        self.rows.push(Vec::new());
        id
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}, col {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("line {line}: unknown state `{name}`")]
    UnknownState { line: usize, name: String },
    #[error("line {line}: duplicate state `{name}`")]
    DuplicateState { line: usize, name: String },
    #[error("line {line}: negative probability {value}")]
    NegativeProbability { line: usize, value: f64 },
    #[error("line {line}: negative reward {value}")]
    NegativeReward { line: usize, value: f64 },
    #[error("line {line}: duplicate transition {from} -> {to}")]
    DuplicateTransition {
        line: usize,
        from: String,
        to: String,
    },
    #[error("row not stochastic: state `{state}` sums to {sum}")]
    RowNotStochastic { state: String, sum: f64 },
    #[error("missing `dtmc v1` header")]
    MissingHeader,
    #[error("no initial state declared")]
    NoInitial,
    #[error("line {line}: initial state already declared")]
    DuplicateInitial { line: usize },
    #[error("model declares no states")]
    NoStates,
}

struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            col: s + 1,
        });
    }
    tokens
}

fn parse_float(tok: &Token<'_>, line: usize, what: &str) -> Result<f64, ParseError> {
    tok.text.parse::<f64>().map_err(|_| ParseError::Syntax {
        line,
        col: tok.col,
        message: format!("expected {what}, found `{}`", tok.text),
    })
}

fn key_value<'a>(
    tok: &'a Token<'a>,
    key: &str,
    line: usize,
) -> Result<Option<&'a str>, ParseError> {
    match tok.text.strip_prefix(key) {
        Some(rest) => match rest.strip_prefix('=') {
            Some(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(ParseError::Syntax {
                line,
                col: tok.col,
                message: format!("expected `{key}=<value>`"),
            }),
        },
        None => Ok(None),
    }
}

/// Parse a model file. The grammar is line oriented:
///
/// ```text
/// dtmc v1
/// state <name> reward=<float> [absorbing] [labels=a,b]
/// initial <name>
/// trans <from> <to> p=<float> [reward=<float>]
/// ```
///
/// `#` starts a comment. Absorbing states get their unit self-loop implicitly
/// unless the file spells it out. Rows of non-absorbing states must sum to 1.
pub fn parse_model(text: &str) -> Result<Dtmc, ParseError> {
    let mut lines: Vec<(usize, Vec<Token<'_>>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(line);
        if !tokens.is_empty() {
            lines.push((idx + 1, tokens));
        }
    }
    let Some((_, header)) = lines.first() else {
        return Err(ParseError::MissingHeader);
    };
    if header.len() != 2 || header[0].text != "dtmc" || header[1].text != "v1" {
        return Err(ParseError::MissingHeader);
    }

    let mut d = Dtmc {
        states: Vec::new(),
        initial: 0,
        rows: Vec::new(),
        state_rewards: Vec::new(),
        labels: Vec::new(),
        absorbing: Vec::new(),
        transition_rewards: BTreeMap::new(),
    };

    // First pass: state declarations, so transitions may reference states in
    // any order.
    for (line, tokens) in lines.iter().skip(1) {
        if tokens[0].text != "state" {
            continue;
        }
        if tokens.len() < 3 {
            return Err(ParseError::Syntax {
                line: *line,
                col: tokens[0].col,
                message: "expected `state <name> reward=<float> [absorbing] [labels=..]`".into(),
            });
        }
        let name = tokens[1].text;
        if d.state_index(name).is_some() {
            return Err(ParseError::DuplicateState {
                line: *line,
                name: name.to_string(),
            });
        }
        let reward_str = key_value(&tokens[2], "reward", *line)?.ok_or(ParseError::Syntax {
            line: *line,
            col: tokens[2].col,
            message: "expected `reward=<float>`".into(),
        })?;
        let reward = parse_float(
            &Token {
                text: reward_str,
                col: tokens[2].col,
            },
            *line,
            "reward value",
        )?;
        if reward < 0.0 {
            return Err(ParseError::NegativeReward {
                line: *line,
                value: reward,
            });
        }
        if !reward.is_finite() {
            return Err(ParseError::Syntax {
                line: *line,
                col: tokens[2].col,
                message: "reward must be finite".into(),
            });
        }
        let mut absorbing = false;
        let mut labels = BTreeSet::new();
        for tok in &tokens[3..] {
            if tok.text == "absorbing" {
                absorbing = true;
            } else if let Some(list) = key_value(tok, "labels", *line)? {
                labels.extend(list.split(',').filter(|l| !l.is_empty()).map(String::from));
            } else {
                return Err(ParseError::Syntax {
                    line: *line,
                    col: tok.col,
                    message: format!("unexpected token `{}`", tok.text),
                });
            }
        }
        let id = d.push_state(name.to_string(), reward, absorbing);
        d.labels[id] = labels;
    }
    if d.states.is_empty() {
        return Err(ParseError::NoStates);
    }

    // Second pass: initial + transitions.
    let mut initial: Option<StateId> = None;
    for (line, tokens) in lines.iter().skip(1) {
        match tokens[0].text {
            "state" => {}
            "initial" => {
                if tokens.len() != 2 {
                    return Err(ParseError::Syntax {
                        line: *line,
                        col: tokens[0].col,
                        message: "expected `initial <name>`".into(),
                    });
                }
                if initial.is_some() {
                    return Err(ParseError::DuplicateInitial { line: *line });
                }
                initial = Some(d.state_index(tokens[1].text).ok_or_else(|| {
                    ParseError::UnknownState {
                        line: *line,
                        name: tokens[1].text.to_string(),
                    }
                })?);
            }
            "trans" => {
                if tokens.len() < 4 || tokens.len() > 5 {
                    return Err(ParseError::Syntax {
                        line: *line,
                        col: tokens[0].col,
                        message: "expected `trans <from> <to> p=<float> [reward=<float>]`".into(),
                    });
                }
                let from = d.state_index(tokens[1].text).ok_or_else(|| {
                    ParseError::UnknownState {
                        line: *line,
                        name: tokens[1].text.to_string(),
                    }
                })?;
                let to = d.state_index(tokens[2].text).ok_or_else(|| {
                    ParseError::UnknownState {
                        line: *line,
                        name: tokens[2].text.to_string(),
                    }
                })?;
                let p_str = key_value(&tokens[3], "p", *line)?.ok_or(ParseError::Syntax {
                    line: *line,
                    col: tokens[3].col,
                    message: "expected `p=<float>`".into(),
                })?;
                let p = parse_float(
                    &Token {
                        text: p_str,
                        col: tokens[3].col,
                    },
                    *line,
                    "probability",
                )?;
                if p < 0.0 {
                    return Err(ParseError::NegativeProbability {
                        line: *line,
                        value: p,
                    });
                }
                if d.rows[from].iter().any(|&(t, _)| t == to) {
                    return Err(ParseError::DuplicateTransition {
                        line: *line,
                        from: d.states[from].clone(),
                        to: d.states[to].clone(),
                    });
                }
                d.rows[from].push((to, p));
                if tokens.len() == 5 {
                    let r_str =
                        key_value(&tokens[4], "reward", *line)?.ok_or(ParseError::Syntax {
                            line: *line,
                            col: tokens[4].col,
                            message: "expected `reward=<float>`".into(),
                        })?;
                    let r = parse_float(
                        &Token {
                            text: r_str,
                            col: tokens[4].col,
                        },
                        *line,
                        "transition reward",
                    )?;
                    if r < 0.0 {
                        return Err(ParseError::NegativeReward {
                            line: *line,
                            value: r,
                        });
                    }
                    d.transition_rewards.insert((from, to), r);
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    line: *line,
                    col: tokens[0].col,
                    message: format!("unknown directive `{other}`"),
                });
            }
        }
    }
    d.initial = initial.ok_or(ParseError::NoInitial)?;

    // Implicit self-loops for declared-absorbing states.
    for s in 0..d.n_states() {
        if d.absorbing[s] && d.rows[s].is_empty() {
            d.rows[s].push((s, 1.0));
        }
        d.rows[s].sort_by_key(|&(t, _)| t);
    }

    // Stochasticity is enforced at load time so downstream consumers never
    // see a malformed matrix.
    for s in 0..d.n_states() {
        let sum: f64 = d.rows[s].iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(ParseError::RowNotStochastic {
                state: d.states[s].clone(),
                sum,
            });
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single well-formedness violation.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowNotStochastic { state: String, sum: f64 },
    BadProbability { from: String, to: String, value: f64 },
    AbsorbingStructure { state: String },
    NegativeReward { state: String, value: f64 },
    NonFiniteReward { state: String },
    NonAbsorbingRecurrentClass { state: String },
    NoAbsorbingState,
    AnnotationWithoutEdge { from: String, to: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowNotStochastic { state, sum } => {
                write!(f, "row not stochastic: state `{state}` sums to {sum}")
            }
            Violation::BadProbability { from, to, value } => {
                write!(f, "probability {value} on {from} -> {to} outside [0,1]")
            }
            Violation::AbsorbingStructure { state } => write!(
                f,
                "absorbing state `{state}` must have exactly one self-loop with probability 1"
            ),
            Violation::NegativeReward { state, value } => {
                write!(f, "negative reward {value} on state `{state}`")
            }
            Violation::NonFiniteReward { state } => {
                write!(f, "non-finite reward on state `{state}`")
            }
            Violation::NonAbsorbingRecurrentClass { state } => write!(
                f,
                "non-absorbing recurrent class: state `{state}` cannot reach absorption"
            ),
            Violation::NoAbsorbingState => write!(f, "model has no absorbing state"),
            Violation::AnnotationWithoutEdge { from, to } => write!(
                f,
                "transition-reward annotation on missing edge {from} -> {to}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every model invariant; violations are report entries, not failures.
pub fn validate(d: &Dtmc) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = d.n_states();
    for s in 0..n {
        let sum: f64 = d.rows[s].iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            report.violations.push(Violation::RowNotStochastic {
                state: d.states[s].clone(),
                sum,
            });
        }
        for &(t, p) in &d.rows[s] {
            if !(0.0..=1.0 + ROW_TOLERANCE).contains(&p) {
                report.violations.push(Violation::BadProbability {
                    from: d.states[s].clone(),
                    to: d.states[t].clone(),
                    value: p,
                });
            }
        }
        if d.absorbing[s] {
            let ok = d.rows[s].len() == 1
                && d.rows[s][0].0 == s
                && (d.rows[s][0].1 - 1.0).abs() <= ROW_TOLERANCE;
            if !ok {
                report.violations.push(Violation::AbsorbingStructure {
                    state: d.states[s].clone(),
                });
            }
        }
        let r = d.state_rewards[s];
        if !r.is_finite() {
            report.violations.push(Violation::NonFiniteReward {
                state: d.states[s].clone(),
            });
        } else if r < 0.0 {
            report.violations.push(Violation::NegativeReward {
                state: d.states[s].clone(),
                value: r,
            });
        }
    }
    for (&(from, to), _) in &d.transition_rewards {
        if !d.rows[from].iter().any(|&(t, _)| t == to) {
            report.violations.push(Violation::AnnotationWithoutEdge {
                from: d.states[from].clone(),
                to: d.states[to].clone(),
            });
        }
    }
    if !d.absorbing.iter().any(|&a| a) {
        report.violations.push(Violation::NoAbsorbingState);
        return report;
    }
    // Absorption with probability 1 <=> every state reaches the absorbing set,
    // checked by reverse BFS from that set.
    let mut reaches = d.absorbing.clone();
    let mut reverse: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for s in 0..n {
        for &(t, p) in &d.rows[s] {
            if p > 0.0 && t != s {
                reverse[t].push(s);
            }
        }
    }
    let mut queue: Vec<StateId> = (0..n).filter(|&s| reaches[s]).collect();
    while let Some(t) = queue.pop() {
        for &s in &reverse[t] {
            if !reaches[s] {
                reaches[s] = true;
                queue.push(s);
            }
        }
    }
    for s in 0..n {
        if !reaches[s] {
            report.violations.push(Violation::NonAbsorbingRecurrentClass {
                state: d.states[s].clone(),
            });
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("no state satisfies the target predicate")]
    NoTargetState,
    #[error("discretization step must be positive, got {0}")]
    NonPositiveDelta(f64),
}

/// Replace every reward-annotated transition `(s, p/r, s')` by `(s, p, q)` and
/// `(q, 1, s')` with a fresh state `q` carrying state reward `r`. The output
/// has only state rewards; cumulative reward to absorption is identical in
/// law to the input's.
pub fn normalize_transition_rewards(d: &Dtmc) -> Dtmc {
    if d.transition_rewards.is_empty() {
        return d.clone();
    }
    let mut out = d.clone();
    out.transition_rewards.clear();
    for (i, (&(from, to), &r)) in d.transition_rewards.iter().enumerate() {
        if r == 0.0 {
            continue; // a zero annotation contributes nothing
        }
        let Some(pos) = out.rows[from].iter().position(|&(t, _)| t == to) else {
            continue;
        };
        let p = out.rows[from][pos].1;
        let name = format!("{}_{}_rw{}", d.states[from], d.states[to], i);
        let q = out.push_state(name, r, false);
        out.rows[from].remove(pos);
        out.rows[from].push((q, p));
        out.rows[from].sort_by_key(|&(t, _)| t);
        out.rows[q].push((to, 1.0));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReachMode {
    /// Cumulative reward becomes the indicator of reaching the target set, so
    /// the first moment is the reachability probability.
    Probability,
    /// Rewards are kept; target states absorb.
    Reward,
}

/// Make every state satisfying `phi` absorbing so that reaching the target
/// reduces to absorption.
pub fn reach_to_absorption(
    d: &Dtmc,
    phi: impl Fn(&BTreeSet<String>) -> bool,
    mode: ReachMode,
) -> Result<Dtmc, TransformError> {
    let targets: Vec<StateId> = (0..d.n_states()).filter(|&s| phi(&d.labels[s])).collect();
    if targets.is_empty() {
        return Err(TransformError::NoTargetState);
    }
    let mut out = normalize_transition_rewards(d);
    let is_target = {
        let mut mask = vec![false; out.n_states()];
        for &t in &targets {
            mask[t] = true;
        }
        mask
    };
    match mode {
        ReachMode::Reward => {
            for &t in &targets {
                out.rows[t] = vec![(t, 1.0)];
                out.absorbing[t] = true;
            }
        }
        ReachMode::Probability => {
            // Reward 1 exactly on entry into the target set, 0 elsewhere.
            for r in out.state_rewards.iter_mut() {
                *r = 0.0;
            }
            if is_target[out.initial] {
                // A run that starts in the target set reaches it with
                // certainty; route through a fresh start so the entry edge
                // still pays out.
                let old = out.initial;
                let fresh = out.push_state("start_pre".into(), 0.0, false);
                out.rows[fresh].push((old, 1.0));
                out.initial = fresh;
            }
            for &t in &targets {
                out.rows[t] = vec![(t, 1.0)];
                out.absorbing[t] = true;
            }
            for s in 0..out.n_states() {
                if is_target.get(s).copied().unwrap_or(false) {
                    continue;
                }
                for &(t, _) in &out.rows[s].clone() {
                    if is_target.get(t).copied().unwrap_or(false) {
                        out.transition_rewards.insert((s, t), 1.0);
                    }
                }
            }
            out = normalize_transition_rewards(&out);
        }
    }
    Ok(out)
}

/// Discretize rewards with step `delta`: each state with reward `r > 0`
/// becomes a chain of `k = ceil(r/delta)` states all carrying reward `delta`;
/// zero-reward states keep reward 0 exactly. The output reward dominates the
/// input's and exceeds it by less than `delta` per original step.
pub fn discretize_rewards(d: &Dtmc, delta: f64) -> Result<Dtmc, TransformError> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(TransformError::NonPositiveDelta(delta));
    }
    let mut out = d.clone();
    for s in 0..d.n_states() {
        if d.absorbing[s] {
            out.state_rewards[s] = 0.0;
            continue;
        }
        let r = d.state_rewards[s];
        if r == 0.0 {
            continue;
        }
        let q = r / delta;
        // Exact multiples of delta should not gain an extra step through
        // floating-point noise.
        let k = if (q - q.round()).abs() <= 1e-9 * q.max(1.0) {
            q.round() as usize
        } else {
            q.ceil() as usize
        }
        .max(1);
        out.state_rewards[s] = delta;
        if k == 1 {
            continue;
        }
        let original_row = std::mem::take(&mut out.rows[s]);
        let mut prev = s;
        for j in 1..k {
            let name = format!("{}_d{}", d.states[s], j);
            let c = out.push_state(name, delta, false);
            out.rows[prev].push((c, 1.0));
            prev = c;
        }
        out.rows[prev] = original_row;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> &'static str {
        "dtmc v1\nstate s0 reward=3\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=1.0\n"
    }

    #[test]
    fn parses_two_state_file() {
        let d = parse_model(two_state()).unwrap();
        assert_eq!(d.n_states(), 2);
        assert_eq!(d.state_rewards[0], 3.0);
        assert_eq!(d.initial, 0);
        // implicit self-loop on the absorbing state
        assert_eq!(d.rows[1], vec![(1, 1.0)]);
        let total: usize = d.rows.iter().map(|r| r.len()).sum();
        assert_eq!(total, 2);
        assert!(validate(&d).is_clean());
    }

    #[test]
    fn rejects_non_stochastic_row() {
        let text = "dtmc v1\nstate s0 reward=1\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=0.9\n";
        match parse_model(text) {
            Err(ParseError::RowNotStochastic { state, sum }) => {
                assert_eq!(state, "s0");
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn keeps_transition_reward_annotation() {
        let text = "dtmc v1\nstate s0 reward=0\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=0.5 reward=2.0\ntrans s0 s0 p=0.5\n";
        let d = parse_model(text).unwrap();
        assert_eq!(d.transition_rewards.get(&(0, 1)), Some(&2.0));
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = "dtmc v1\nstate s0 reward=banana\n";
        match parse_model(text) {
            Err(ParseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 2);
                assert!(col > 1);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        let text = "dtmc v1\nstate s0 reward=1\ninitial s0\ntrans s0 missing p=1.0\n";
        assert!(matches!(
            parse_model(text),
            Err(ParseError::UnknownState { line: 4, .. })
        ));
        let text = "dtmc v1\nstate s0 reward=1\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=0.5\ntrans s0 s1 p=0.5\n";
        assert!(matches!(
            parse_model(text),
            Err(ParseError::DuplicateTransition { line: 6, .. })
        ));
        let text = "dtmc v1\nstate s0 reward=-1\n";
        assert!(matches!(
            parse_model(text),
            Err(ParseError::NegativeReward { line: 2, .. })
        ));
    }

    #[test]
    fn validate_flags_unreachable_absorption() {
        // s0 -> s1 -> s0 cycle next to a proper absorbing component.
        let mut d = parse_model(two_state()).unwrap();
        d.push_state("c0".into(), 1.0, false);
        d.push_state("c1".into(), 1.0, false);
        d.rows[2] = vec![(3, 1.0)];
        d.rows[3] = vec![(2, 1.0)];
        let report = validate(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonAbsorbingRecurrentClass { .. })));
    }

    #[test]
    fn validate_flags_negative_reward() {
        let mut d = parse_model(two_state()).unwrap();
        d.state_rewards[0] = -1.0;
        let report = validate(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NegativeReward { .. })));
    }

    #[test]
    fn normalize_is_identity_without_annotations() {
        let d = parse_model(two_state()).unwrap();
        assert_eq!(normalize_transition_rewards(&d), d);
    }

    #[test]
    fn normalize_inserts_fresh_state() {
        let text = "dtmc v1\nstate s0 reward=0\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=0.5 reward=2.0\ntrans s0 s0 p=0.5\n";
        let d = parse_model(text).unwrap();
        let out = normalize_transition_rewards(&d);
        assert_eq!(out.n_states(), 3);
        assert!(out.transition_rewards.is_empty());
        let q = 2;
        assert_eq!(out.state_rewards[q], 2.0);
        assert_eq!(out.probability(0, q), 0.5);
        assert_eq!(out.probability(q, 1), 1.0);
        assert!(validate(&out).is_clean());
    }

    #[test]
    fn discretize_splits_fractional_reward() {
        let text = "dtmc v1\nstate s0 reward=2.5\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=1.0\n";
        let d = parse_model(text).unwrap();
        let out = discretize_rewards(&d, 1.0).unwrap();
        // k = 3: two intermediate states inserted, all rewards 1.
        assert_eq!(out.n_states(), 4);
        for s in out.transient_states() {
            assert_eq!(out.state_rewards[s], 1.0);
        }
        assert!(validate(&out).is_clean());
        // chain: s0 -> d1 -> d2 -> s1
        assert_eq!(out.probability(0, 2), 1.0);
        assert_eq!(out.probability(2, 3), 1.0);
        assert_eq!(out.probability(3, 1), 1.0);
    }

    #[test]
    fn discretize_exact_multiples_stay_exact() {
        let text = "dtmc v1\nstate s0 reward=0.2\nstate s1 reward=0 absorbing\ninitial s0\ntrans s0 s1 p=1.0\n";
        let d = parse_model(text).unwrap();
        let out = discretize_rewards(&d, 0.1).unwrap();
        // 0.2/0.1 must give exactly two steps despite float division noise.
        assert_eq!(out.n_states(), 3);
        assert!((out.state_rewards[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn discretize_rejects_bad_delta() {
        let d = parse_model(two_state()).unwrap();
        assert!(matches!(
            discretize_rewards(&d, 0.0),
            Err(TransformError::NonPositiveDelta(_))
        ));
    }

    #[test]
    fn reach_reward_mode_identity_when_target_absorbing() {
        let text = "dtmc v1\nstate s0 reward=1\nstate goal reward=0 absorbing labels=goal\ninitial s0\ntrans s0 goal p=1.0\n";
        let d = parse_model(text).unwrap();
        let out = reach_to_absorption(&d, |l| l.contains("goal"), ReachMode::Reward).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn reach_requires_target() {
        let d = parse_model(two_state()).unwrap();
        assert!(matches!(
            reach_to_absorption(&d, |l| l.contains("nope"), ReachMode::Probability),
            Err(TransformError::NoTargetState)
        ));
    }
}
