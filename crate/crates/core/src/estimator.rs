//! Per-action advantage estimators evaluated on a single trajectory.
//!
//! Three families are implemented, each as a pure function of the
//! trajectory plus exact oracle inputs, returning the full vector of
//! per-action estimates at a time step:
//!
//! * `mc_advantage`: the sampled action receives the importance-weighted
//!   discounted sum of the next N TD errors; all other actions receive 0.
//! * `hca_advantage`: reward-based hindsight credit. Every action is
//!   scored by its one-step expected-reward edge plus future rewards
//!   reweighted by how much more (or less) likely the realized future
//!   state is under that action.
//! * `delta_hca_advantage`: the TD-error variant. The k=0 term keeps the
//!   Monte-Carlo indicator; for k >= 1 the indicator is replaced by the
//!   posterior probability of the action given the state reached k steps
//!   later. For N=1 the two estimators coincide exactly.
//!
//! Zero-probability actions are handled asymmetrically on purpose: the
//! Monte-Carlo entry for an action the policy cannot take is 0 (the
//! indicator kills the term before the division), while the hindsight
//! estimators raise an error because their ratios are undefined there.

use crate::mdp::{Policy, ValueFunction};
use crate::oracle::{OracleBundle, OracleError};
use crate::trajectory::{td_error_at, Trajectory, TrajectoryError};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Mc,
    Hca,
    DeltaHca,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Mc => write!(f, "mc"),
            EstimatorKind::Hca => write!(f, "hca"),
            EstimatorKind::DeltaHca => write!(f, "delta_hca"),
        }
    }
}

/// Shared inputs for every estimator evaluation.
///
/// `v_hat` is the value estimate under test and is deliberately separate
/// from `oracle.v`: the unbiasedness results hold for arbitrary `v_hat`,
/// while the oracle supplies the exact hindsight table and reward means.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInputs<'a> {
    pub policy: &'a Policy,
    pub v_hat: &'a ValueFunction,
    pub oracle: &'a OracleBundle,
    /// Lookahead N >= 1.
    pub n_steps: usize,
    pub discount: f64,
}

impl<'a> EstimatorInputs<'a> {
    pub fn new(
        policy: &'a Policy,
        v_hat: &'a ValueFunction,
        oracle: &'a OracleBundle,
        n_steps: usize,
        discount: f64,
    ) -> Result<Self, EstimatorError> {
        if n_steps == 0 {
            return Err(EstimatorError::ZeroLookahead);
        }
        Ok(Self { policy, v_hat, oracle, n_steps, discount })
    }
}

/// Per-action advantage estimates at one time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageEstimate {
    pub per_action: Vec<f64>,
    pub t: usize,
    pub estimator: EstimatorKind,
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator lookahead must be at least 1")]
    ZeroLookahead,
    #[error("time {t} out of range: trajectory effective length {len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("action {action} has zero probability at state {state}; the hindsight ratio is undefined")]
    ZeroActionProbability { state: usize, action: usize },
    #[error("sampled action {action} has zero probability at state {state}; trajectory is off-policy")]
    OffPolicyAction { state: usize, action: usize },
    #[error("lookahead {needed} exceeds oracle hindsight depth {available}")]
    OracleDepth { needed: usize, available: usize },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn check_time(traj: &Trajectory, t: usize) -> Result<(), EstimatorError> {
    if t >= traj.effective_length() {
        return Err(EstimatorError::TimeOutOfRange { t, len: traj.effective_length() });
    }
    Ok(())
}

/// N-step Monte-Carlo advantage estimate: the sampled action gets
/// `(sum_{k<N} gamma^k delta_{t+k}) / pi(A_t|S_t)`, every other action 0.
pub fn mc_advantage(
    traj: &Trajectory,
    t: usize,
    inputs: &EstimatorInputs,
) -> Result<AdvantageEstimate, EstimatorError> {
    check_time(traj, t)?;
    let s_t = traj.state_at(t)?;
    let a_t = traj.action_at(t)?;
    let pi_sel = inputs.policy.prob(s_t, a_t);
    if pi_sel <= 0.0 {
        return Err(EstimatorError::OffPolicyAction { state: s_t, action: a_t });
    }
    let mut sum = 0.0;
    let mut weight = 1.0;
    for k in 0..inputs.n_steps {
        sum += weight * td_error_at(traj, inputs.v_hat, inputs.discount, t + k)?;
        weight *= inputs.discount;
    }
    let mut per_action = vec![0.0; inputs.policy.num_actions()];
    per_action[a_t] = sum / pi_sel;
    Ok(AdvantageEstimate { per_action, t, estimator: EstimatorKind::Mc })
}

/// Reward-based hindsight advantage estimate with the future sum
/// truncated at `cutoff` steps. Terms past absorption contribute zero.
pub fn hca_advantage(
    traj: &Trajectory,
    t: usize,
    inputs: &EstimatorInputs,
    cutoff: usize,
) -> Result<AdvantageEstimate, EstimatorError> {
    check_time(traj, t)?;
    let s_t = traj.state_at(t)?;
    let num_actions = inputs.policy.num_actions();
    for a in 0..num_actions {
        if inputs.policy.prob(s_t, a) <= 0.0 {
            return Err(EstimatorError::ZeroActionProbability { state: s_t, action: a });
        }
    }
    let available = inputs.oracle.num_steps();
    if cutoff > available {
        return Err(EstimatorError::OracleDepth { needed: cutoff, available });
    }
    let mut per_action: Vec<f64> = (0..num_actions)
        .map(|a| inputs.oracle.r_sa[s_t][a] - inputs.oracle.r_s[s_t])
        .collect();
    let mut weight = 1.0;
    for k in 1..=cutoff {
        weight *= inputs.discount;
        let reward = traj.reward_at_arrival(t + k)?;
        if reward == 0.0 {
            continue;
        }
        let s_k = traj.state_at(t + k)?;
        let posterior = inputs.oracle.hindsight.row(k, s_t, s_k)?;
        for (a, entry) in per_action.iter_mut().enumerate() {
            *entry += weight * (posterior[a] / inputs.policy.prob(s_t, a) - 1.0) * reward;
        }
    }
    Ok(AdvantageEstimate { per_action, t, estimator: EstimatorKind::Hca })
}

/// TD-error hindsight advantage estimate. The k=0 term is exactly the
/// Monte-Carlo term; for k >= 1 the indicator is replaced by the
/// posterior action probability given the realized state `k` steps out.
pub fn delta_hca_advantage(
    traj: &Trajectory,
    t: usize,
    inputs: &EstimatorInputs,
) -> Result<AdvantageEstimate, EstimatorError> {
    check_time(traj, t)?;
    let s_t = traj.state_at(t)?;
    let a_t = traj.action_at(t)?;
    let num_actions = inputs.policy.num_actions();
    for a in 0..num_actions {
        if inputs.policy.prob(s_t, a) <= 0.0 {
            return Err(EstimatorError::ZeroActionProbability { state: s_t, action: a });
        }
    }
    if inputs.n_steps >= 2 {
        let needed = inputs.n_steps - 1;
        let available = inputs.oracle.num_steps();
        if needed > available {
            return Err(EstimatorError::OracleDepth { needed, available });
        }
    }
    let delta0 = td_error_at(traj, inputs.v_hat, inputs.discount, t)?;
    let mut per_action = vec![0.0; num_actions];
    per_action[a_t] = delta0 / inputs.policy.prob(s_t, a_t);
    let mut weight = 1.0;
    for k in 1..inputs.n_steps {
        weight *= inputs.discount;
        let delta = td_error_at(traj, inputs.v_hat, inputs.discount, t + k)?;
        if delta == 0.0 {
            continue;
        }
        let s_k = traj.state_at(t + k)?;
        let posterior = inputs.oracle.hindsight.row(k, s_t, s_k)?;
        for (a, entry) in per_action.iter_mut().enumerate() {
            *entry += weight * posterior[a] / inputs.policy.prob(s_t, a) * delta;
        }
    }
    Ok(AdvantageEstimate { per_action, t, estimator: EstimatorKind::DeltaHca })
}

/// Dispatch on the estimator kind. The reward-based hindsight estimator
/// uses `cutoff = n_steps`, which matches the truncation of the others in
/// comparative experiments.
pub fn evaluate(
    kind: EstimatorKind,
    traj: &Trajectory,
    t: usize,
    inputs: &EstimatorInputs,
) -> Result<AdvantageEstimate, EstimatorError> {
    match kind {
        EstimatorKind::Mc => mc_advantage(traj, t, inputs),
        EstimatorKind::Hca => hca_advantage(traj, t, inputs, inputs.n_steps),
        EstimatorKind::DeltaHca => delta_hca_advantage(traj, t, inputs),
    }
}

/// The undiscounted per-step terms `X_0..X_{N-1}` whose weighted sum is
/// the estimator entry for `action`: `X_0` carries the indicator for both
/// families, and `X_k` (k >= 1) carries the indicator for Monte-Carlo or
/// the hindsight posterior for the TD-error variant. Used by the variance
/// decomposition.
pub fn estimator_terms(
    kind: EstimatorKind,
    traj: &Trajectory,
    t: usize,
    inputs: &EstimatorInputs,
    action: usize,
) -> Result<Vec<f64>, EstimatorError> {
    check_time(traj, t)?;
    let s_t = traj.state_at(t)?;
    let a_t = traj.action_at(t)?;
    let pi_a = inputs.policy.prob(s_t, action);
    if pi_a <= 0.0 {
        return Err(EstimatorError::ZeroActionProbability { state: s_t, action });
    }
    let mut terms = Vec::with_capacity(inputs.n_steps);
    for k in 0..inputs.n_steps {
        let delta = td_error_at(traj, inputs.v_hat, inputs.discount, t + k)?;
        let weight = match (kind, k) {
            (EstimatorKind::Mc, _) | (EstimatorKind::DeltaHca, 0) => {
                if a_t == action {
                    1.0 / pi_a
                } else {
                    0.0
                }
            }
            (EstimatorKind::DeltaHca, _) => {
                if delta == 0.0 {
                    // the term is zero regardless of the posterior; skip
                    // the lookup so padded terminal reads never occur
                    0.0
                } else {
                    let s_k = traj.state_at(t + k)?;
                    inputs.oracle.hindsight.get(k, s_t, s_k, action)? / pi_a
                }
            }
            (EstimatorKind::Hca, _) => {
                return Err(EstimatorError::Oracle(OracleError::InvariantFailed(
                    "per-term decomposition is defined for the TD-error estimators only".into(),
                )))
            }
        };
        terms.push(weight * delta);
    }
    Ok(terms)
}
