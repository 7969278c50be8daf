//! Controlled error injection into the value estimate and the hindsight
//! table, with bias/variance sweeps over a perturbation grid.
//!
//! The point is exploratory: value-function perturbation never breaks the
//! mean equality between the TD-error estimators (it holds for any value
//! estimate), while hindsight perturbation voids the guarantees, so
//! sweeps report those curves without asserting anything about them.
//! At `epsilon = 0` the perturbed objects are returned bit-for-bit.

use crate::analysis::{exact_moments_over, AnalysisError};
use crate::estimator::{EstimatorInputs, EstimatorKind};
use crate::mdp::{Policy, TabularMdp, ValueFunction};
use crate::oracle::OracleBundle;
use crate::rng::CounterRng;
use crate::trajectory::{enumerate_trajectories, ENUMERATION_CAP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    ValueFunction,
    HindsightTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    AdditiveNoise,
    SystematicShift,
}

/// One perturbation: what to hit, how, and how hard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub epsilon: f64,
    pub target: PerturbTarget,
    pub mode: PerturbMode,
    pub seed: u64,
}

impl PerturbSpec {
    fn check(&self) -> Result<(), PerturbError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(PerturbError::BadEpsilon { epsilon: self.epsilon });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("epsilon {epsilon} must be non-negative and finite")]
    BadEpsilon { epsilon: f64 },
    #[error("spec targets {got:?}, operation expects {expected:?}")]
    TargetMismatch { expected: PerturbTarget, got: PerturbTarget },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
}

/// Perturb non-terminal value entries; terminal entries stay zero.
/// Additive noise draws uniformly from `[-eps, eps]` per state; the
/// systematic shift adds `eps` everywhere.
pub fn perturb_value(v: &ValueFunction, spec: &PerturbSpec) -> Result<ValueFunction, PerturbError> {
    spec.check()?;
    if spec.target != PerturbTarget::ValueFunction {
        return Err(PerturbError::TargetMismatch {
            expected: PerturbTarget::ValueFunction,
            got: spec.target,
        });
    }
    if spec.epsilon == 0.0 {
        return Ok(v.clone());
    }
    let terminal = v.terminal_mask().to_vec();
    let mut rng = CounterRng::new(spec.seed, 0);
    let values = v
        .values()
        .iter()
        .zip(&terminal)
        .map(|(&x, &is_terminal)| {
            if is_terminal {
                // keep the draw sequence aligned with the state index
                if spec.mode == PerturbMode::AdditiveNoise {
                    let _ = rng.next_unit();
                }
                0.0
            } else {
                match spec.mode {
                    PerturbMode::AdditiveNoise => x + rng.uniform(-spec.epsilon, spec.epsilon),
                    PerturbMode::SystematicShift => x + spec.epsilon,
                }
            }
        })
        .collect();
    Ok(ValueFunction::from_parts(values, terminal))
}

/// Perturb the hindsight table: per reachable conditioning event, add
/// noise (or a shift) to each action entry, clip at zero, and
/// renormalize. The reachability mask and every other bundle field are
/// untouched. A row whose mass is entirely clipped falls back to uniform.
pub fn perturb_hindsight(
    bundle: &OracleBundle,
    spec: &PerturbSpec,
) -> Result<OracleBundle, PerturbError> {
    spec.check()?;
    if spec.target != PerturbTarget::HindsightTable {
        return Err(PerturbError::TargetMismatch {
            expected: PerturbTarget::HindsightTable,
            got: spec.target,
        });
    }
    let mut out = bundle.clone();
    if spec.epsilon == 0.0 {
        return Ok(out);
    }
    let num_steps = bundle.num_steps();
    let num_states = bundle.r_s.len();
    let mut rng = CounterRng::new(spec.seed, 1);
    let probs = out.hindsight.probs_mut();
    for k in 1..=num_steps {
        for s in 0..num_states {
            for next in 0..num_states {
                if !bundle.hindsight.is_reachable(k, s, next) {
                    continue;
                }
                let row = &mut probs[k - 1][s][next];
                for p in row.iter_mut() {
                    let bump = match spec.mode {
                        PerturbMode::AdditiveNoise => rng.uniform(-spec.epsilon, spec.epsilon),
                        PerturbMode::SystematicShift => spec.epsilon,
                    };
                    *p = (*p + bump).max(0.0);
                }
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    for p in row.iter_mut() {
                        *p /= total;
                    }
                } else {
                    let uniform = 1.0 / row.len() as f64;
                    row.fill(uniform);
                }
            }
        }
    }
    Ok(out)
}

/// One row of a perturbation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub target: PerturbTarget,
    pub mode: PerturbMode,
    pub estimator: EstimatorKind,
    pub state: usize,
    pub action: usize,
    /// Exact estimator mean minus the true advantage.
    pub bias: f64,
    pub variance: f64,
}

/// Evaluate exact bias/variance per estimator over a perturbation grid.
///
/// Each grid point perturbs either the value estimate or the hindsight
/// table, leaving the other input at its baseline. Output rows are sorted
/// by epsilon (stable in grid order); an `epsilon = 0` point reproduces
/// the unperturbed moments bit-for-bit.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    mdp: &TabularMdp,
    policy: &Policy,
    state: usize,
    oracle: &OracleBundle,
    v_hat: &ValueFunction,
    n_steps: usize,
    estimators: &[EstimatorKind],
    grid: &[PerturbSpec],
) -> Result<Vec<SweepRow>, PerturbError> {
    let trajs = enumerate_trajectories(mdp, policy, state, n_steps, ENUMERATION_CAP)?;
    let mut rows = Vec::new();
    let mut ordered: Vec<&PerturbSpec> = grid.iter().collect();
    ordered.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    for spec in ordered {
        spec.check()?;
        let (value, bundle) = match spec.target {
            PerturbTarget::ValueFunction => (perturb_value(v_hat, spec)?, None),
            PerturbTarget::HindsightTable => {
                (v_hat.clone(), Some(perturb_hindsight(oracle, spec)?))
            }
        };
        let active_oracle = bundle.as_ref().unwrap_or(oracle);
        let inputs = EstimatorInputs {
            policy,
            v_hat: &value,
            oracle: active_oracle,
            n_steps,
            discount: mdp.discount,
        };
        for &kind in estimators {
            let moments = exact_moments_over(&trajs, state, &inputs, kind)?;
            for action in 0..policy.num_actions() {
                rows.push(SweepRow {
                    epsilon: spec.epsilon,
                    target: spec.target,
                    mode: spec.mode,
                    estimator: kind,
                    state,
                    action,
                    bias: moments.mean[action] - oracle.adv[state][action],
                    variance: moments.variance[action],
                });
            }
        }
    }
    Ok(rows)
}
