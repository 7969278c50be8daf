//! Exact ground-truth quantities for a fixed MDP and policy.
//!
//! Everything here is closed-form dynamic programming, no sampling:
//! state/action values and advantages, one-step expected rewards, k-step
//! state distributions, and the hindsight table giving the posterior
//! probability of the first action given the state reached k steps later.
//!
//! The hindsight table is stored densely with a reachability mask. An
//! entry `(k, s, s')` is reachable when the k-step marginal carries mass
//! above [`REACH_EPS`]; enumerated probabilities are finite products of
//! row entries, so true zeros are exact and the threshold only guards
//! against accumulated rounding.

use crate::mdp::{Policy, TabularMdp, ValueFunction};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Tolerance for k-step distribution rows summing to one.
pub const KSTEP_SUM_TOL: f64 = 1e-10;
/// Tolerance for the Bayes identity linking hindsight and k-step tables.
pub const BAYES_TOL: f64 = 1e-12;
/// Mass below which a conditioning event (k, s, s') counts as unreachable.
pub const REACH_EPS: f64 = 1e-15;
/// Certified bound on the Bellman residual of a solved value function.
pub const BELLMAN_TOL: f64 = 1e-10;

/// Posterior action probabilities `p_k(a|s,s')`, densely stored with a
/// per-`(k, s, s')` reachability mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HindsightTable {
    /// `probs[k-1][s][s'][a]`; rows behind an unreachable mask are zero
    /// and must not be read.
    probs: Vec<Vec<Vec<Vec<f64>>>>,
    reachable: Vec<Vec<Vec<bool>>>,
    num_steps: usize,
}

impl HindsightTable {
    /// Lookahead depth: entries exist for `k` in `1..=num_steps`.
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn is_reachable(&self, k: usize, s: usize, next: usize) -> bool {
        k >= 1 && k <= self.num_steps && self.reachable[k - 1][s][next]
    }

    /// `p_k(a | s, s')` for a reachable conditioning event.
    pub fn get(&self, k: usize, s: usize, next: usize, a: usize) -> Result<f64, OracleError> {
        if k < 1 || k > self.num_steps {
            return Err(OracleError::KstepOutOfRange { k, num_steps: self.num_steps });
        }
        if !self.reachable[k - 1][s][next] {
            return Err(OracleError::UnreachableConditioningEvent { k, state: s, next });
        }
        Ok(self.probs[k - 1][s][next][a])
    }

    /// Full action row for a reachable conditioning event.
    pub fn row(&self, k: usize, s: usize, next: usize) -> Result<&[f64], OracleError> {
        if k < 1 || k > self.num_steps {
            return Err(OracleError::KstepOutOfRange { k, num_steps: self.num_steps });
        }
        if !self.reachable[k - 1][s][next] {
            return Err(OracleError::UnreachableConditioningEvent { k, state: s, next });
        }
        Ok(&self.probs[k - 1][s][next])
    }

    pub(crate) fn from_parts(
        probs: Vec<Vec<Vec<Vec<f64>>>>,
        reachable: Vec<Vec<Vec<bool>>>,
    ) -> Self {
        let num_steps = probs.len();
        Self { probs, reachable, num_steps }
    }

    pub(crate) fn probs_mut(&mut self) -> &mut Vec<Vec<Vec<Vec<f64>>>> {
        &mut self.probs
    }
}

/// Every exact quantity the estimators and analyses consume.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleBundle {
    /// Exact state values under the policy.
    pub v: ValueFunction,
    /// Action values `[s][a]`.
    pub q: Vec<Vec<f64>>,
    /// Advantages `q - v`, `[s][a]`.
    pub adv: Vec<Vec<f64>>,
    /// One-step expected reward `[s][a]`.
    pub r_sa: Vec<Vec<f64>>,
    /// Policy-averaged one-step expected reward `[s]`.
    pub r_s: Vec<f64>,
    /// `p_k(s'|s,a)` indexed `[k-1][s][a][s']`.
    pub kstep_joint: Vec<Vec<Vec<Vec<f64>>>>,
    /// `p_k(s'|s)` indexed `[k-1][s][s']`.
    pub kstep_marginal: Vec<Vec<Vec<f64>>>,
    pub hindsight: HindsightTable,
}

impl OracleBundle {
    /// Compute the full bundle with lookahead depth `num_steps`, then
    /// certify its internal identities (distribution normalization and
    /// the Bayes link between the joint, marginal, and hindsight tables).
    pub fn build(
        mdp: &TabularMdp,
        policy: &Policy,
        num_steps: usize,
    ) -> Result<Self, OracleError> {
        check_compatible(mdp, policy)?;
        let (r_sa, r_s) = expected_rewards(mdp, policy);
        let v = solve_value(mdp, policy)?;
        let (q, adv) = q_and_advantage(mdp, policy, &v);
        let (kstep_joint, kstep_marginal) = kstep_distributions(mdp, policy, num_steps)?;
        let hindsight = hindsight_probabilities(&kstep_joint, &kstep_marginal, policy);
        let bundle =
            Self { v, q, adv, r_sa, r_s, kstep_joint, kstep_marginal, hindsight };
        let violations = bundle.invariant_violations(policy);
        if let Some(first) = violations.into_iter().next() {
            return Err(OracleError::InvariantFailed(first));
        }
        Ok(bundle)
    }

    pub fn num_steps(&self) -> usize {
        self.hindsight.num_steps()
    }

    /// Re-check the bundle identities; used by the verification gate and
    /// after deliberate perturbation. Empty means consistent.
    pub fn invariant_violations(&self, policy: &Policy) -> Vec<String> {
        let mut out = Vec::new();
        let num_states = self.r_s.len();
        let num_actions = policy.num_actions();

        for (ki, per_state) in self.kstep_joint.iter().enumerate() {
            for (s, per_action) in per_state.iter().enumerate() {
                for (a, row) in per_action.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > KSTEP_SUM_TOL {
                        out.push(format!(
                            "kstep_joint[k={}][s={s}][a={a}] sums to {sum}",
                            ki + 1
                        ));
                    }
                }
            }
        }
        for (ki, per_state) in self.kstep_marginal.iter().enumerate() {
            for (s, row) in per_state.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > KSTEP_SUM_TOL {
                    out.push(format!("kstep_marginal[k={}][s={s}] sums to {sum}", ki + 1));
                }
            }
        }
        for k in 1..=self.hindsight.num_steps() {
            for s in 0..num_states {
                for next in 0..num_states {
                    if !self.hindsight.is_reachable(k, s, next) {
                        continue;
                    }
                    let row = self.hindsight.row(k, s, next).expect("reachable row");
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > KSTEP_SUM_TOL {
                        out.push(format!(
                            "hindsight[k={k}][s={s}][s'={next}] sums to {sum}"
                        ));
                    }
                    for a in 0..num_actions {
                        let lhs = row[a] * self.kstep_marginal[k - 1][s][next];
                        let rhs = policy.prob(s, a) * self.kstep_joint[k - 1][s][a][next];
                        if (lhs - rhs).abs() > BAYES_TOL {
                            out.push(format!(
                                "Bayes identity fails at (k={k}, s={s}, s'={next}, a={a}): \
                                 p_k(a|s,s')p_k(s'|s)={lhs} vs pi(a|s)p_k(s'|s,a)={rhs}"
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("policy shape ({policy_states} states, {policy_actions} actions) does not match MDP ({mdp_states}, {mdp_actions})")]
    PolicyShapeMismatch {
        mdp_states: usize,
        mdp_actions: usize,
        policy_states: usize,
        policy_actions: usize,
    },
    #[error("k={k} outside hindsight lookahead 1..={num_steps}")]
    KstepOutOfRange { k: usize, num_steps: usize },
    #[error("lookahead {requested} exceeds MDP horizon {horizon}")]
    LookaheadExceedsHorizon { requested: usize, horizon: usize },
    #[error("unreachable conditioning event (k={k}, state={state}, next={next})")]
    UnreachableConditioningEvent { k: usize, state: usize, next: usize },
    #[error("value solve hit a singular system; the termination check was bypassed")]
    SingularSystem,
    #[error("value solve residual {residual} exceeds {BELLMAN_TOL} after refinement")]
    ResidualNotMet { residual: f64 },
    #[error("oracle invariant failed: {0}")]
    InvariantFailed(String),
}

fn check_compatible(mdp: &TabularMdp, policy: &Policy) -> Result<(), OracleError> {
    if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(OracleError::PolicyShapeMismatch {
            mdp_states: mdp.num_states,
            mdp_actions: mdp.num_actions,
            policy_states: policy.num_states(),
            policy_actions: policy.num_actions(),
        });
    }
    Ok(())
}

/// One-step expected rewards: `r_sa[s][a] = E[R | s, a]` and its policy
/// average `r_s[s]`.
pub fn expected_rewards(mdp: &TabularMdp, policy: &Policy) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = mdp.num_states;
    let mut r_sa = vec![vec![0.0; mdp.num_actions]; n];
    let mut r_s = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let mut acc = 0.0;
            for sp in 0..n {
                acc += mdp.transition[s][a][sp] * mdp.reward[s][a][sp];
            }
            r_sa[s][a] = acc;
            r_s[s] += policy.prob(s, a) * acc;
        }
    }
    (r_sa, r_s)
}

/// Policy-averaged transition matrix `P[s][s'] = sum_a pi(a|s) T[s][a][s']`.
fn policy_transition(mdp: &TabularMdp, policy: &Policy) -> Vec<Vec<f64>> {
    let n = mdp.num_states;
    let mut p = vec![vec![0.0; n]; n];
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for sp in 0..n {
                p[s][sp] += pa * mdp.transition[s][a][sp];
            }
        }
    }
    p
}

/// Exact policy values by direct linear solve of the Bellman system on
/// the non-terminal states, with iterative refinement until the residual
/// certifies below [`BELLMAN_TOL`].
pub fn solve_value(mdp: &TabularMdp, policy: &Policy) -> Result<ValueFunction, OracleError> {
    check_compatible(mdp, policy)?;
    let free = mdp.non_terminal_states();
    let mut values = vec![0.0; mdp.num_states];
    if !free.is_empty() {
        let p_pi = policy_transition(mdp, policy);
        let (_, r_pi) = expected_rewards(mdp, policy);
        let m = DMatrix::from_fn(free.len(), free.len(), |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - mdp.discount * p_pi[free[i]][free[j]]
        });
        let b = DVector::from_fn(free.len(), |i, _| r_pi[free[i]]);
        let lu = m.clone().lu();
        let mut x = lu.solve(&b).ok_or(OracleError::SingularSystem)?;
        for _ in 0..4 {
            let res = &b - &m * &x;
            if res.amax() <= 1e-14 {
                break;
            }
            let dx = lu.solve(&res).ok_or(OracleError::SingularSystem)?;
            x += dx;
        }
        for (i, &s) in free.iter().enumerate() {
            values[s] = x[i];
        }
    }
    let v = ValueFunction::from_parts(values, mdp.terminal.clone());
    let residual = bellman_residual(mdp, policy, &v);
    if residual > BELLMAN_TOL {
        return Err(OracleError::ResidualNotMet { residual });
    }
    Ok(v)
}

/// Action values and advantages against a supplied value function.
/// With the exact values, advantages average to zero under the policy.
pub fn q_and_advantage(
    mdp: &TabularMdp,
    _policy: &Policy,
    v: &ValueFunction,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = mdp.num_states;
    let mut q = vec![vec![0.0; mdp.num_actions]; n];
    let mut adv = vec![vec![0.0; mdp.num_actions]; n];
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let mut acc = 0.0;
            for sp in 0..n {
                let t = mdp.transition[s][a][sp];
                if t == 0.0 {
                    continue;
                }
                acc += t * (mdp.reward[s][a][sp] + mdp.discount * v.value(sp));
            }
            q[s][a] = acc;
            adv[s][a] = acc - v.value(s);
        }
    }
    (q, adv)
}

/// k-step state distributions for `k = 1..=num_steps`.
///
/// The joint table propagates one policy-averaged step at a time from the
/// action-conditioned first step; the marginal is the policy average of
/// the joint.
#[allow(clippy::type_complexity)]
pub fn kstep_distributions(
    mdp: &TabularMdp,
    policy: &Policy,
    num_steps: usize,
) -> Result<(Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<f64>>>), OracleError> {
    check_compatible(mdp, policy)?;
    if num_steps > mdp.horizon {
        return Err(OracleError::LookaheadExceedsHorizon {
            requested: num_steps,
            horizon: mdp.horizon,
        });
    }
    let n = mdp.num_states;
    let p_pi = policy_transition(mdp, policy);
    let mut joint = Vec::with_capacity(num_steps);
    let mut marginal = Vec::with_capacity(num_steps);
    for k in 1..=num_steps {
        let step: Vec<Vec<Vec<f64>>> = if k == 1 {
            mdp.transition.clone()
        } else {
            let prev: &Vec<Vec<Vec<f64>>> = &joint[k - 2];
            (0..n)
                .map(|s| {
                    (0..mdp.num_actions)
                        .map(|a| {
                            let mut row = vec![0.0; n];
                            for mid in 0..n {
                                let w = prev[s][a][mid];
                                if w == 0.0 {
                                    continue;
                                }
                                for sp in 0..n {
                                    row[sp] += w * p_pi[mid][sp];
                                }
                            }
                            row
                        })
                        .collect()
                })
                .collect()
        };
        let marg: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let mut row = vec![0.0; n];
                for a in 0..mdp.num_actions {
                    let pa = policy.prob(s, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for sp in 0..n {
                        row[sp] += pa * step[s][a][sp];
                    }
                }
                row
            })
            .collect();
        joint.push(step);
        marginal.push(marg);
    }
    Ok((joint, marginal))
}

/// Posterior first-action probabilities from the k-step tables via the
/// Bayes identity `p_k(a|s,s') p_k(s'|s) = pi(a|s) p_k(s'|s,a)`.
pub fn hindsight_probabilities(
    kstep_joint: &[Vec<Vec<Vec<f64>>>],
    kstep_marginal: &[Vec<Vec<f64>>],
    policy: &Policy,
) -> HindsightTable {
    let num_steps = kstep_joint.len();
    let n = kstep_marginal.first().map_or(0, Vec::len);
    let num_actions = policy.num_actions();
    let mut probs = vec![vec![vec![vec![0.0; num_actions]; n]; n]; num_steps];
    let mut reachable = vec![vec![vec![false; n]; n]; num_steps];
    for ki in 0..num_steps {
        for s in 0..n {
            for next in 0..n {
                let mass = kstep_marginal[ki][s][next];
                if mass <= REACH_EPS {
                    continue;
                }
                reachable[ki][s][next] = true;
                for a in 0..num_actions {
                    probs[ki][s][next][a] =
                        policy.prob(s, a) * kstep_joint[ki][s][a][next] / mass;
                }
            }
        }
    }
    HindsightTable::from_parts(probs, reachable)
}

/// Expected TD error per state under `v_hat`:
/// `E[R + gamma v_hat(S') - v_hat(s) | s]`.
pub fn expected_td_per_state(mdp: &TabularMdp, policy: &Policy, v_hat: &ValueFunction) -> Vec<f64> {
    let n = mdp.num_states;
    let mut out = vec![0.0; n];
    for s in 0..n {
        let mut acc = 0.0;
        for a in 0..mdp.num_actions {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for sp in 0..n {
                let t = mdp.transition[s][a][sp];
                if t == 0.0 {
                    continue;
                }
                acc += pa * t * (mdp.reward[s][a][sp] + mdp.discount * v_hat.value(sp));
            }
        }
        out[s] = acc - v_hat.value(s);
    }
    out
}

/// Max-norm Bellman residual of `v_hat`; zero exactly when `v_hat` is the
/// true value function.
pub fn bellman_residual(mdp: &TabularMdp, policy: &Policy, v_hat: &ValueFunction) -> f64 {
    expected_td_per_state(mdp, policy, v_hat)
        .into_iter()
        .fold(0.0, |m, x| m.max(x.abs()))
}
