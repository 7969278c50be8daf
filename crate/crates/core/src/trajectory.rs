//! Trajectory sampling, exhaustive enumeration, and TD-error sequences.
//!
//! Trajectories are produced two ways: seeded counter-based sampling
//! (reproducible per `(seed, trajectory index, step)`), and exhaustive
//! enumeration that pairs every positive-probability trajectory with its
//! exact probability so expectations can be computed without sampling
//! error.
//!
//! A trajectory stops at the first terminal state or at the requested
//! depth. Absorbed trajectories are padded conceptually rather than
//! physically: accessors past the stored steps return the absorbing state
//! and zero reward, so estimator sums need no boundary branches. Reading
//! past the end of a trajectory that was cut off by the horizon without
//! absorbing is an error.

use crate::mdp::{Policy, TabularMdp, ValueFunction};
use crate::rng::{categorical, keyed_unit};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

/// Default bound on the number of enumerated trajectories.
pub const ENUMERATION_CAP: usize = 10_000_000;
/// Tolerance for the total probability of a full enumeration.
pub const ENUM_PROB_TOL: f64 = 1e-10;

/// One transition: the action taken, the reward received on arrival, and
/// the state arrived at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A realized state-action-reward sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start_state: usize,
    steps: Vec<Step>,
    absorbed: bool,
}

impl Trajectory {
    /// Validate a hand-built trajectory against the MDP: every step must
    /// have positive probability and absorption must match the terminal
    /// flags.
    pub fn new(start_state: usize, steps: Vec<Step>, mdp: &TabularMdp) -> Result<Self, TrajectoryError> {
        if start_state >= mdp.num_states {
            return Err(TrajectoryError::StateOutOfRange { state: start_state });
        }
        let mut s = start_state;
        for (i, step) in steps.iter().enumerate() {
            if mdp.terminal[s] {
                return Err(TrajectoryError::StepAfterAbsorption { index: i });
            }
            if step.action >= mdp.num_actions || step.next_state >= mdp.num_states {
                return Err(TrajectoryError::StateOutOfRange { state: step.next_state });
            }
            if mdp.transition[s][step.action][step.next_state] <= 0.0 {
                return Err(TrajectoryError::ImpossibleStep {
                    index: i,
                    state: s,
                    action: step.action,
                    next_state: step.next_state,
                });
            }
            s = step.next_state;
        }
        let absorbed = mdp.terminal[s];
        Ok(Self { start_state, steps, absorbed })
    }

    pub(crate) fn from_parts(start_state: usize, steps: Vec<Step>, absorbed: bool) -> Self {
        Self { start_state, steps, absorbed }
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Steps until absorption or cutoff.
    pub fn effective_length(&self) -> usize {
        self.steps.len()
    }

    /// Whether the trajectory ended in a terminal state (as opposed to
    /// being cut off by the horizon).
    pub fn is_absorbed(&self) -> bool {
        self.absorbed
    }

    /// State occupied at time `t`; past the stored steps this is the
    /// absorbing state when the trajectory absorbed.
    pub fn state_at(&self, t: usize) -> Result<usize, TrajectoryError> {
        if t == 0 {
            return Ok(self.start_state);
        }
        if t <= self.steps.len() {
            return Ok(self.steps[t - 1].next_state);
        }
        if self.absorbed {
            Ok(self.steps.last().map_or(self.start_state, |s| s.next_state))
        } else {
            Err(TrajectoryError::PastTruncation { t, len: self.steps.len() })
        }
    }

    /// Action taken at time `t`; undefined past the stored steps.
    pub fn action_at(&self, t: usize) -> Result<usize, TrajectoryError> {
        self.steps
            .get(t)
            .map(|s| s.action)
            .ok_or(TrajectoryError::TimeOutOfRange { t, len: self.steps.len() })
    }

    /// Reward received on arrival at time `t >= 1`; zero past absorption.
    pub fn reward_at_arrival(&self, t: usize) -> Result<f64, TrajectoryError> {
        if t == 0 || (t > self.steps.len() && !self.absorbed) {
            return Err(TrajectoryError::PastTruncation { t, len: self.steps.len() });
        }
        Ok(self.steps.get(t - 1).map_or(0.0, |s| s.reward))
    }
}

/// A trajectory paired with its exact probability under the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory {
    pub trajectory: Trajectory,
    pub probability: f64,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("state index {state} out of range")]
    StateOutOfRange { state: usize },
    #[error("time {t} out of range: trajectory has {len} steps")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("time {t} reads past a horizon-truncated trajectory of {len} steps")]
    PastTruncation { t: usize, len: usize },
    #[error("step {index} continues past an absorbing state")]
    StepAfterAbsorption { index: usize },
    #[error("step {index} has zero probability: ({state}, {action}) -> {next_state}")]
    ImpossibleStep { index: usize, state: usize, action: usize, next_state: usize },
    #[error("enumeration exceeded {cap} trajectories; shrink the instance or depth")]
    EnumerationCapExceeded { cap: usize },
    #[error("value function has {got} entries, expected {expected}")]
    ValueLength { expected: usize, got: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Sample one trajectory of at most `horizon` steps.
///
/// Draws are keyed by `(seed, index, step)`, so a batch of samples can be
/// generated in any order, on any number of workers, with identical
/// results.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &Policy,
    start_state: usize,
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<Trajectory, TrajectoryError> {
    if start_state >= mdp.num_states {
        return Err(TrajectoryError::StateOutOfRange { state: start_state });
    }
    let mut steps = Vec::new();
    let mut s = start_state;
    for t in 0..horizon {
        if mdp.terminal[s] {
            break;
        }
        let u_action = keyed_unit(seed, index, 2 * t as u64);
        let a = categorical(policy.row(s), u_action);
        let u_next = keyed_unit(seed, index, 2 * t as u64 + 1);
        let sp = categorical(&mdp.transition[s][a], u_next);
        steps.push(Step { action: a, reward: mdp.reward[s][a][sp], next_state: sp });
        s = sp;
    }
    Ok(Trajectory::from_parts(start_state, steps, mdp.terminal[s]))
}

/// Enumerate every positive-probability trajectory from `start_state` up
/// to `depth` steps (stopping early at terminal states), with exact
/// probabilities. Fails once more than `cap` trajectories are produced.
///
/// The first step keeps one branch per action, since conditioned
/// functionals read the action taken at the enumeration root. Later steps
/// pool actions that produce the same reward and successor (recording the
/// smallest pooled action index): the state/reward future is identical,
/// so pooling changes no root-conditioned estimate while keeping
/// action-independent stretches from multiplying the enumeration.
pub fn enumerate_trajectories(
    mdp: &TabularMdp,
    policy: &Policy,
    start_state: usize,
    depth: usize,
    cap: usize,
) -> Result<Vec<WeightedTrajectory>, TrajectoryError> {
    if start_state >= mdp.num_states {
        return Err(TrajectoryError::StateOutOfRange { state: start_state });
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    expand(mdp, policy, start_state, start_state, depth, true, 1.0, &mut prefix, &mut out, cap)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    mdp: &TabularMdp,
    policy: &Policy,
    start: usize,
    state: usize,
    remaining: usize,
    first_step: bool,
    prob: f64,
    prefix: &mut Vec<Step>,
    out: &mut Vec<WeightedTrajectory>,
    cap: usize,
) -> Result<(), TrajectoryError> {
    if remaining == 0 || mdp.terminal[state] {
        if out.len() >= cap {
            return Err(TrajectoryError::EnumerationCapExceeded { cap });
        }
        out.push(WeightedTrajectory {
            trajectory: Trajectory::from_parts(start, prefix.clone(), mdp.terminal[state]),
            probability: prob,
        });
        return Ok(());
    }
    if first_step {
        for a in 0..mdp.num_actions {
            let pa = policy.prob(state, a);
            if pa == 0.0 {
                continue;
            }
            for sp in 0..mdp.num_states {
                let pt = mdp.transition[state][a][sp];
                if pt == 0.0 {
                    continue;
                }
                prefix.push(Step { action: a, reward: mdp.reward[state][a][sp], next_state: sp });
                expand(mdp, policy, start, sp, remaining - 1, false, prob * pa * pt, prefix, out, cap)?;
                prefix.pop();
            }
        }
        return Ok(());
    }
    // pooled branches: per successor, group actions by exact reward
    for sp in 0..mdp.num_states {
        let mut groups: Vec<(u64, f64, usize)> = Vec::new(); // (reward bits, mass, action)
        for a in 0..mdp.num_actions {
            let mass = policy.prob(state, a) * mdp.transition[state][a][sp];
            if mass == 0.0 {
                continue;
            }
            let bits = mdp.reward[state][a][sp].to_bits();
            match groups.iter_mut().find(|(b, _, _)| *b == bits) {
                Some(entry) => entry.1 += mass,
                None => groups.push((bits, mass, a)),
            }
        }
        for (bits, mass, action) in groups {
            prefix.push(Step { action, reward: f64::from_bits(bits), next_state: sp });
            expand(mdp, policy, start, sp, remaining - 1, false, prob * mass, prefix, out, cap)?;
            prefix.pop();
        }
    }
    Ok(())
}

/// TD errors `delta_t = R_{t+1} + gamma v_hat(S_{t+1}) - v_hat(S_t)` for
/// every stored step.
pub fn td_errors(
    traj: &Trajectory,
    v_hat: &ValueFunction,
    gamma: f64,
) -> Result<Vec<f64>, TrajectoryError> {
    (0..traj.effective_length())
        .map(|t| td_error_at(traj, v_hat, gamma, t))
        .collect()
}

/// TD error at time `t`, exactly zero past absorption.
pub fn td_error_at(
    traj: &Trajectory,
    v_hat: &ValueFunction,
    gamma: f64,
    t: usize,
) -> Result<f64, TrajectoryError> {
    if t >= traj.effective_length() {
        if traj.is_absorbed() {
            return Ok(0.0);
        }
        return Err(TrajectoryError::PastTruncation { t, len: traj.effective_length() });
    }
    let s = traj.state_at(t)?;
    let step = traj.steps()[t];
    Ok(step.reward + gamma * v_hat.value(step.next_state) - v_hat.value(s))
}

/// Write trajectories as JSON lines: `{"start": s, "steps": [[a, r, s'], ...], "prob": p}`.
/// The probability field is omitted for unweighted trajectories.
pub fn write_jsonl<W: Write>(
    out: &mut W,
    trajectories: &[WeightedTrajectory],
) -> Result<(), TrajectoryError> {
    for wt in trajectories {
        let steps: Vec<serde_json::Value> = wt
            .trajectory
            .steps()
            .iter()
            .map(|s| serde_json::json!([s.action, s.reward, s.next_state]))
            .collect();
        let line = serde_json::json!({
            "start": wt.trajectory.start_state(),
            "steps": steps,
            "prob": wt.probability,
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}
