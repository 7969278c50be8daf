//! Tabular MDP, policy, and value-function containers.
//!
//! Conventions used throughout the crate:
//!
//! * transitions and rewards are indexed `[state][action][next_state]`;
//!   the reward on a step is a deterministic function of that triple and
//!   is received on arrival at `next_state`;
//! * terminal states are absorbing: they self-loop with probability 1 and
//!   reward 0 under every action, and any value function assigns them 0;
//! * with `discount == 1`, construction requires that every state is
//!   absorbed within `horizon` steps with probability 1 under any action
//!   sequence, so undiscounted returns are finite and exactly enumerable.
//!
//! Validation reports violations as data rather than failing on the first
//! problem; `TabularMdp::new` rejects any instance with a non-empty report.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite MDP with transition-attached deterministic rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Discount factor in (0, 1].
    pub discount: f64,
    /// Enumeration/sampling cutoff in steps.
    pub horizon: usize,
    /// Per-state terminal flag.
    pub terminal: Vec<bool>,
    /// Probability tensor `[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Reward tensor `[s][a][s']`, received on arrival at `s'`.
    pub reward: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    /// Build a validated MDP; every violation is reported at once.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        horizon: usize,
        terminal: Vec<bool>,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, MdpError> {
        let mdp = Self { num_states, num_actions, discount, horizon, terminal, transition, reward };
        let report = mdp.validate();
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(MdpError::Invalid(report))
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_mdp(self)
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Indices of non-terminal states.
    pub fn non_terminal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| !self.terminal[s]).collect()
    }
}

/// One invariant violation, with the coordinates where it was observed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { detail: String },
    BadDiscount { value: f64 },
    ZeroHorizon,
    NonFinite { field: String, state: usize, action: usize, next_state: usize },
    NegativeProbability { state: usize, action: usize, next_state: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
    TerminalNotAbsorbing { state: usize, action: usize, self_loop_prob: f64 },
    TerminalRewardNonzero { state: usize, action: usize, value: f64 },
    NonTerminatingUndiscounted { state: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { detail } => write!(f, "shape: {detail}"),
            Violation::BadDiscount { value } => {
                write!(f, "discount {value} outside (0, 1]")
            }
            Violation::ZeroHorizon => write!(f, "horizon must be positive"),
            Violation::NonFinite { field, state, action, next_state } => {
                write!(f, "non-finite {field} entry at ({state}, {action}, {next_state})")
            }
            Violation::NegativeProbability { state, action, next_state, value } => {
                write!(f, "negative probability {value} at ({state}, {action}, {next_state})")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "transition row ({state}, {action}) sums to {sum}, expected 1")
            }
            Violation::TerminalNotAbsorbing { state, action, self_loop_prob } => {
                write!(
                    f,
                    "terminal state {state} has self-loop probability {self_loop_prob} under action {action}, expected 1"
                )
            }
            Violation::TerminalRewardNonzero { state, action, value } => {
                write!(f, "terminal state {state} has self-loop reward {value} under action {action}, expected 0")
            }
            Violation::NonTerminatingUndiscounted { state } => {
                write!(f, "non-terminating under discount=1: state {state} can avoid absorption for the full horizon")
            }
        }
    }
}

/// Every violation found in an MDP; empty means valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        write!(f, "{} violation(s): ", self.violations.len())?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check every MDP invariant and return the full list of violations.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut v = Vec::new();
    let n = mdp.num_states;
    let a = mdp.num_actions;

    if n == 0 {
        v.push(Violation::Shape { detail: "num_states must be positive".into() });
    }
    if a == 0 {
        v.push(Violation::Shape { detail: "num_actions must be positive".into() });
    }
    if mdp.horizon == 0 {
        v.push(Violation::ZeroHorizon);
    }
    if !(mdp.discount > 0.0 && mdp.discount <= 1.0) || !mdp.discount.is_finite() {
        v.push(Violation::BadDiscount { value: mdp.discount });
    }
    if mdp.terminal.len() != n {
        v.push(Violation::Shape {
            detail: format!("terminal has {} entries, expected {n}", mdp.terminal.len()),
        });
    }
    for (name, tensor) in [("transition", &mdp.transition), ("reward", &mdp.reward)] {
        if tensor.len() != n {
            v.push(Violation::Shape {
                detail: format!("{name} has {} states, expected {n}", tensor.len()),
            });
            continue;
        }
        for (s, per_action) in tensor.iter().enumerate() {
            if per_action.len() != a {
                v.push(Violation::Shape {
                    detail: format!("{name}[{s}] has {} actions, expected {a}", per_action.len()),
                });
                continue;
            }
            for (act, row) in per_action.iter().enumerate() {
                if row.len() != n {
                    v.push(Violation::Shape {
                        detail: format!(
                            "{name}[{s}][{act}] has {} entries, expected {n}",
                            row.len()
                        ),
                    });
                }
            }
        }
    }
    if !v.is_empty() {
        // index-level checks below assume consistent shapes
        return ValidationReport { violations: v };
    }

    for s in 0..n {
        for act in 0..a {
            let mut sum = 0.0;
            for sp in 0..n {
                let p = mdp.transition[s][act][sp];
                let r = mdp.reward[s][act][sp];
                if !p.is_finite() {
                    v.push(Violation::NonFinite {
                        field: "transition".into(),
                        state: s,
                        action: act,
                        next_state: sp,
                    });
                    continue;
                }
                if !r.is_finite() {
                    v.push(Violation::NonFinite {
                        field: "reward".into(),
                        state: s,
                        action: act,
                        next_state: sp,
                    });
                }
                if p < 0.0 {
                    v.push(Violation::NegativeProbability {
                        state: s,
                        action: act,
                        next_state: sp,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                v.push(Violation::RowSum { state: s, action: act, sum });
            }
            if mdp.terminal[s] {
                let self_loop = mdp.transition[s][act][s];
                if (self_loop - 1.0).abs() > ROW_SUM_TOL {
                    v.push(Violation::TerminalNotAbsorbing {
                        state: s,
                        action: act,
                        self_loop_prob: self_loop,
                    });
                }
                let r = mdp.reward[s][act][s];
                if r != 0.0 {
                    v.push(Violation::TerminalRewardNonzero { state: s, action: act, value: r });
                }
            }
        }
    }

    if mdp.discount == 1.0 && v.is_empty() {
        v.extend(undiscounted_termination_violations(mdp));
    }

    ValidationReport { violations: v }
}

/// States that can avoid absorption for `horizon` consecutive steps.
///
/// `alive` shrinks monotonically per breadth step, so the iteration stops
/// at a fixpoint (states on non-terminal cycles) or after `horizon` steps,
/// whichever comes first.
fn undiscounted_termination_violations(mdp: &TabularMdp) -> Vec<Violation> {
    let n = mdp.num_states;
    let mut alive: Vec<bool> = (0..n).map(|s| !mdp.terminal[s]).collect();
    for _ in 0..mdp.horizon {
        let next: Vec<bool> = (0..n)
            .map(|s| {
                !mdp.terminal[s]
                    && (0..mdp.num_actions).any(|a| {
                        (0..n).any(|sp| mdp.transition[s][a][sp] > 0.0 && alive[sp])
                    })
            })
            .collect();
        if next == alive {
            break;
        }
        alive = next;
    }
    alive
        .iter()
        .enumerate()
        .filter(|&(_, &x)| x)
        .map(|(s, _)| Violation::NonTerminatingUndiscounted { state: s })
        .collect()
}

/// Row-stochastic action distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    /// Probability matrix `[s][a]`.
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let num_actions = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || num_actions == 0 {
            return Err(MdpError::Shape("policy must have at least one state and action".into()));
        }
        for (s, row) in probs.iter().enumerate() {
            if row.len() != num_actions {
                return Err(MdpError::Shape(format!(
                    "policy row {s} has {} entries, expected {num_actions}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (a, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(MdpError::NegativePolicyProb { state: s, action: a });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MdpError::PolicyRowSum { state: s, sum });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states] }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }
}

/// Softmax-parameterized policy; the object of policy-gradient analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxPolicy {
    /// Parameter matrix θ indexed `[s][a]`.
    pub params: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn new(params: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let num_actions = params.first().map_or(0, Vec::len);
        if params.is_empty() || num_actions == 0 {
            return Err(MdpError::Shape("softmax policy must have at least one state and action".into()));
        }
        for (s, row) in params.iter().enumerate() {
            if row.len() != num_actions {
                return Err(MdpError::Shape(format!(
                    "softmax row {s} has {} entries, expected {num_actions}",
                    row.len()
                )));
            }
            for (a, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(MdpError::NonFiniteParam { state: s, action: a });
                }
            }
        }
        Ok(Self { params })
    }

    pub fn num_states(&self) -> usize {
        self.params.len()
    }

    pub fn num_actions(&self) -> usize {
        self.params.first().map_or(0, Vec::len)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn to_policy(&self) -> Policy {
        let probs = self
            .params
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            })
            .collect();
        Policy { probs }
    }

    /// Gradient of π(a|s) with respect to every parameter, as a matrix
    /// shaped like θ. Entry `[s][b]` is `π(a|s)(1(a=b) − π(b|s))`; rows
    /// other than `s` are zero.
    pub fn gradient(&self, s: usize, a: usize) -> Result<Vec<Vec<f64>>, MdpError> {
        if s >= self.num_states() {
            return Err(MdpError::StateOutOfRange { state: s, num_states: self.num_states() });
        }
        if a >= self.num_actions() {
            return Err(MdpError::ActionOutOfRange { action: a, num_actions: self.num_actions() });
        }
        let policy = self.to_policy();
        let mut grad = vec![vec![0.0; self.num_actions()]; self.num_states()];
        let pa = policy.prob(s, a);
        for b in 0..self.num_actions() {
            let indicator = if a == b { 1.0 } else { 0.0 };
            grad[s][b] = pa * (indicator - policy.prob(s, b));
        }
        Ok(grad)
    }
}

/// State-value estimate with terminal entries pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    values: Vec<f64>,
    terminal: Vec<bool>,
}

impl ValueFunction {
    /// Wrap a value vector for `mdp`, rejecting nonzero terminal entries.
    pub fn new(values: Vec<f64>, mdp: &TabularMdp) -> Result<Self, MdpError> {
        if values.len() != mdp.num_states {
            return Err(MdpError::ValueLength { expected: mdp.num_states, got: values.len() });
        }
        for (s, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(MdpError::Shape(format!("value at state {s} is not finite")));
            }
            if mdp.terminal[s] && x != 0.0 {
                return Err(MdpError::TerminalValueNonzero { state: s, value: x });
            }
        }
        Ok(Self { values, terminal: mdp.terminal.clone() })
    }

    pub fn zeros(mdp: &TabularMdp) -> Self {
        Self { values: vec![0.0; mdp.num_states], terminal: mdp.terminal.clone() }
    }

    pub(crate) fn from_parts(values: Vec<f64>, terminal: Vec<bool>) -> Self {
        Self { values, terminal }
    }

    #[inline]
    pub fn value(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid MDP: {0}")]
    Invalid(ValidationReport),
    #[error("non-finite softmax parameter at ({state}, {action})")]
    NonFiniteParam { state: usize, action: usize },
    #[error("state index {state} out of range ({num_states} states)")]
    StateOutOfRange { state: usize, num_states: usize },
    #[error("action index {action} out of range ({num_actions} actions)")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("policy row {state} sums to {sum}, expected 1")]
    PolicyRowSum { state: usize, sum: f64 },
    #[error("negative or non-finite policy probability at ({state}, {action})")]
    NegativePolicyProb { state: usize, action: usize },
    #[error("value function has {got} entries, MDP has {expected} states")]
    ValueLength { expected: usize, got: usize },
    #[error("value at terminal state {state} must be 0, got {value}")]
    TerminalValueNonzero { state: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Load an MDP from its JSON document and validate it.
pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp, MdpError> {
    let mdp = load_mdp_unchecked(path)?;
    let report = mdp.validate();
    if report.is_valid() {
        Ok(mdp)
    } else {
        Err(MdpError::Invalid(report))
    }
}

/// Load an MDP without validating; used by tooling that reports
/// violations as data.
pub fn load_mdp_unchecked(path: impl AsRef<Path>) -> Result<TabularMdp, MdpError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Save an MDP as pretty-printed JSON. Finite doubles round-trip exactly.
pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<(), MdpError> {
    let mut text = serde_json::to_string_pretty(mdp)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy, MdpError> {
    let text = std::fs::read_to_string(path)?;
    let policy: Policy = serde_json::from_str(&text)?;
    Policy::new(policy.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use approx::assert_abs_diff_eq;

    /// Two states, one action: state 0 steps to the terminal state 1.
    fn tiny_mdp() -> TabularMdp {
        TabularMdp::new(
            2,
            1,
            0.9,
            5,
            vec![false, true],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 0.0]]],
        )
        .unwrap()
    }

    #[test]
    fn well_formed_mdp_yields_empty_report() {
        assert!(tiny_mdp().validate().is_valid());
    }

    #[test]
    fn bad_row_sum_names_coordinates() {
        let mut mdp = tiny_mdp();
        mdp.transition[0][0] = vec![0.0, 0.9];
        let report = mdp.validate();
        assert_eq!(
            report.violations,
            vec![Violation::RowSum { state: 0, action: 0, sum: 0.9 }]
        );
    }

    #[test]
    fn terminal_must_absorb_with_zero_reward() {
        let mut mdp = tiny_mdp();
        mdp.transition[1][0] = vec![1.0, 0.0];
        let report = mdp.validate();
        assert!(report
            .violations
            .contains(&Violation::TerminalNotAbsorbing { state: 1, action: 0, self_loop_prob: 0.0 }));

        let mut mdp = tiny_mdp();
        mdp.reward[1][0][1] = 0.5;
        assert!(mdp
            .validate()
            .violations
            .contains(&Violation::TerminalRewardNonzero { state: 1, action: 0, value: 0.5 }));
    }

    #[test]
    fn undiscounted_cycle_unreachable_from_terminal_is_rejected() {
        // 0 -> 1 <-> 2 cycle, state 3 terminal but unreachable from the cycle
        let t = |target: usize| {
            let mut row = vec![0.0; 4];
            row[target] = 1.0;
            row
        };
        let mdp = TabularMdp {
            num_states: 4,
            num_actions: 1,
            discount: 1.0,
            horizon: 10,
            terminal: vec![false, false, false, true],
            transition: vec![vec![t(1)], vec![t(2)], vec![t(1)], vec![t(3)]],
            reward: vec![vec![vec![0.0; 4]]; 4],
        };
        let report = mdp.validate();
        for s in 0..3 {
            assert!(
                report.violations.contains(&Violation::NonTerminatingUndiscounted { state: s }),
                "state {s} missing from {report}"
            );
        }
    }

    #[test]
    fn undiscounted_slow_chain_must_fit_horizon() {
        // deterministic 4-step chain with horizon 3: too slow
        let t = |target: usize| {
            let mut row = vec![0.0; 5];
            row[target] = 1.0;
            row
        };
        let mdp = TabularMdp {
            num_states: 5,
            num_actions: 1,
            discount: 1.0,
            horizon: 3,
            terminal: vec![false, false, false, false, true],
            transition: vec![vec![t(1)], vec![t(2)], vec![t(3)], vec![t(4)], vec![t(4)]],
            reward: vec![vec![vec![0.0; 5]]; 5],
        };
        let report = mdp.validate();
        assert!(report
            .violations
            .contains(&Violation::NonTerminatingUndiscounted { state: 0 }));
        // state 1 is absorbed within 3 steps, so only state 0 violates
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let sp = SoftmaxPolicy::new(vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(sp.to_policy().row(0), &[0.5, 0.5]);

        let sp = SoftmaxPolicy::new(vec![vec![3.7, 3.7, 3.7]]).unwrap();
        for &p in sp.to_policy().row(0) {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_hand_value() {
        let sp = SoftmaxPolicy::new(vec![vec![2.0f64.ln(), 0.0]]).unwrap();
        let p = sp.to_policy();
        assert_abs_diff_eq!(p.prob(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.prob(0, 1), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite_params() {
        let err = SoftmaxPolicy::new(vec![vec![0.0, f64::NAN]]).unwrap_err();
        match err {
            MdpError::NonFiniteParam { state: 0, action: 1 } => {}
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn gradient_hand_value_and_zero_sum() {
        let sp = SoftmaxPolicy::new(vec![vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        let g = sp.gradient(0, 0).unwrap();
        assert_abs_diff_eq!(g[0][0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0][1], -0.25, epsilon = 1e-15);
        assert_eq!(g[1], vec![0.0, 0.0]);

        // probabilities sum to one, so gradients over actions cancel
        for s in 0..2 {
            let mut total = vec![vec![0.0; 2]; 2];
            for a in 0..2 {
                let g = sp.gradient(s, a).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        total[i][j] += g[i][j];
                    }
                }
            }
            for row in &total {
                for &x in row {
                    assert!(x.abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = CounterRng::new(20240, 0);
        for _ in 0..100 {
            let ns = 1 + rng.below(3);
            let na = 2 + rng.below(3);
            let params: Vec<Vec<f64>> =
                (0..ns).map(|_| (0..na).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();
            let sp = SoftmaxPolicy::new(params.clone()).unwrap();
            let s = rng.below(ns);
            let a = rng.below(na);
            let grad = sp.gradient(s, a).unwrap();
            let h = 1e-6;
            for b in 0..na {
                let mut up = params.clone();
                up[s][b] += h;
                let mut dn = params.clone();
                dn[s][b] -= h;
                let fd = (SoftmaxPolicy::new(up).unwrap().to_policy().prob(s, a)
                    - SoftmaxPolicy::new(dn).unwrap().to_policy().prob(s, a))
                    / (2.0 * h);
                assert!(
                    (grad[s][b] - fd).abs() < 1e-6,
                    "grad {} fd {fd} at ({s}, {a}, {b})",
                    grad[s][b]
                );
            }
        }
    }

    #[test]
    fn gradient_index_errors() {
        let sp = SoftmaxPolicy::new(vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(sp.gradient(1, 0), Err(MdpError::StateOutOfRange { .. })));
        assert!(matches!(sp.gradient(0, 2), Err(MdpError::ActionOutOfRange { .. })));
    }

    #[test]
    fn value_function_pins_terminals_to_zero() {
        let mdp = tiny_mdp();
        assert!(ValueFunction::new(vec![1.0, 0.0], &mdp).is_ok());
        assert!(matches!(
            ValueFunction::new(vec![1.0, 0.5], &mdp),
            Err(MdpError::TerminalValueNonzero { state: 1, .. })
        ));
    }

    #[test]
    fn mdp_json_round_trip_is_byte_identical() {
        let dir = std::env::temp_dir().join(format!("hcalab-mdp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.json");
        let p2 = dir.join("b.json");

        let mut mdp = tiny_mdp();
        mdp.reward[0][0][1] = 0.1 + 0.2; // not exactly representable, still must round-trip
        save_mdp(&mdp, &p1).unwrap();
        let loaded = load_mdp(&p1).unwrap();
        assert_eq!(loaded, mdp);
        save_mdp(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_json_fields_are_rejected() {
        let text = r#"{"num_states":1,"num_actions":1,"discount":0.9,"horizon":1,
            "terminal":[true],"transition":[[[1.0]]],"reward":[[[0.0]]],"extra":1}"#;
        assert!(serde_json::from_str::<TabularMdp>(text).is_err());
    }
}
