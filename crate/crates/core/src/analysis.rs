//! Exact and empirical moments of the estimators, variance
//! decompositions, cross-action covariance identities, and the variance
//! of the policy-gradient update.
//!
//! Conditioning on being in state `s` at time `t` is realized by
//! enumerating trajectories from `s` at `t = 0`; by the Markov property
//! the conditional law is the same at any `t`. Exact-mode quantities are
//! probability-weighted sums over that enumeration and carry no sampling
//! error; empirical mode estimates the same quantities from seeded
//! samples with standard errors attached.

use crate::estimator::{
    estimator_terms, evaluate, AdvantageEstimate, EstimatorError, EstimatorInputs, EstimatorKind,
};
use crate::mdp::{SoftmaxPolicy, TabularMdp};
use crate::oracle::{bellman_residual, OracleError, BELLMAN_TOL};
use crate::trajectory::{
    enumerate_trajectories, td_error_at, TrajectoryError, WeightedTrajectory, ENUMERATION_CAP,
    ENUM_PROB_TOL,
};
use serde::Serialize;
use thiserror::Error;

/// Slack applied to every exact-mode identity check.
pub const EXACT_TOL: f64 = 1e-10;

/// What a report conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Conditioning {
    pub state: usize,
    pub t: usize,
    pub n_steps: usize,
    pub estimator: EstimatorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    Exact,
    Empirical,
}

/// Mean, variance, and cross-action covariance of one estimator at one
/// conditioning cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub conditioning: Conditioning,
    pub mode: MomentMode,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Symmetric `[action][action]` matrix whose diagonal equals
    /// `variance`.
    pub covariance: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_stderr: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_stderr: Option<Vec<f64>>,
}

/// Per-action split of an estimator's variance into per-step terms and
/// pairwise cross-covariances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub action: usize,
    /// `Var(X_k)` for the undiscounted per-step terms, `k = 0..N-1`.
    pub per_k_variance: Vec<f64>,
    /// `Cov(X_k, X_j)` for `k != j`; the diagonal is zero by convention.
    pub cross_terms: Vec<Vec<f64>>,
    /// Variance of the estimator entry, computed directly.
    pub total: f64,
    /// Discount-weighted reassembly of the terms and cross terms; equals
    /// `total` up to rounding.
    pub assembled: f64,
}

/// Comparison of exact cross-action covariances against their closed
/// forms, with the exact value function certified first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCheckReport {
    pub state: usize,
    pub n_steps: usize,
    pub bellman_residual: f64,
    pub mc_covariance: Vec<Vec<f64>>,
    /// Closed form `-adv(a) adv(a')` off the diagonal.
    pub mc_predicted: Vec<Vec<f64>>,
    pub delta_covariance: Vec<Vec<f64>>,
    /// Closed form: discounted hindsight-weighted squared-TD expectation
    /// minus the advantage product, off the diagonal.
    pub delta_predicted: Vec<Vec<f64>>,
    pub max_mc_error: f64,
    pub max_delta_error: f64,
    /// Minimum over action pairs of `cov_delta - cov_mc`; non-negative up
    /// to rounding.
    pub min_ordering_slack: f64,
}

/// Step size and parameters of the softmax policy-gradient update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgConfig {
    pub step_size: f64,
    pub params: SoftmaxPolicy,
}

impl PgConfig {
    pub fn new(step_size: f64, params: SoftmaxPolicy) -> Result<Self, AnalysisError> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(AnalysisError::BadStepSize { step_size });
        }
        Ok(Self { step_size, params })
    }
}

/// Variance of the all-actions policy-gradient update at one state,
/// computed along two routes that must agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateVarianceReport {
    pub state: usize,
    pub estimator: EstimatorKind,
    /// Direct enumeration of the update, per parameter coordinate.
    pub per_coordinate_variance: Vec<Vec<f64>>,
    /// Reassembly from per-action variances and covariances.
    pub assembled_variance: Vec<Vec<f64>>,
    /// The per-action-variance part of the assembly.
    pub variance_part: Vec<Vec<f64>>,
    /// The cross-action-covariance part of the assembly.
    pub covariance_part: Vec<Vec<f64>>,
    pub total_trace: f64,
    pub max_route_error: f64,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("samples disagree on action count or estimator")]
    InconsistentSamples,
    #[error("estimator lookahead {requested} exceeds MDP horizon {horizon}")]
    LookaheadExceedsHorizon { requested: usize, horizon: usize },
    #[error("trajectory set is not a full enumeration from state {state}: total probability {total}")]
    BadEnumeration { state: usize, total: f64 },
    #[error("Bellman residual {residual} exceeds {BELLMAN_TOL}; this check requires the exact value function")]
    PreconditionViolated { residual: f64 },
    #[error("policy does not match softmax(params) at ({state}, {action})")]
    PolicyMismatch { state: usize, action: usize },
    #[error("estimator {0} does not support this analysis")]
    UnsupportedEstimator(EstimatorKind),
    #[error("step size {step_size} must be positive and finite")]
    BadStepSize { step_size: f64 },
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn enumerate_for(
    mdp: &TabularMdp,
    state: usize,
    inputs: &EstimatorInputs,
) -> Result<Vec<WeightedTrajectory>, AnalysisError> {
    if inputs.n_steps > mdp.horizon {
        return Err(AnalysisError::LookaheadExceedsHorizon {
            requested: inputs.n_steps,
            horizon: mdp.horizon,
        });
    }
    Ok(enumerate_trajectories(mdp, inputs.policy, state, inputs.n_steps, ENUMERATION_CAP)?)
}

fn check_enumeration(
    trajs: &[WeightedTrajectory],
    state: usize,
) -> Result<(), AnalysisError> {
    let total: f64 = trajs.iter().map(|wt| wt.probability).sum();
    if (total - 1.0).abs() > ENUM_PROB_TOL
        || trajs.iter().any(|wt| wt.trajectory.start_state() != state)
    {
        return Err(AnalysisError::BadEnumeration { state, total });
    }
    Ok(())
}

/// Exact estimator moments at `state`, by internal enumeration.
pub fn exact_moments(
    mdp: &TabularMdp,
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<MomentReport, AnalysisError> {
    let trajs = enumerate_for(mdp, state, inputs)?;
    exact_moments_over(&trajs, state, inputs, kind)
}

/// Exact estimator moments over a pre-enumerated trajectory set, so one
/// enumeration can serve many (estimator, value-estimate, N) cells.
pub fn exact_moments_over(
    trajs: &[WeightedTrajectory],
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<MomentReport, AnalysisError> {
    check_enumeration(trajs, state)?;
    let num_actions = inputs.policy.num_actions();
    let mut estimates = Vec::with_capacity(trajs.len());
    let mut mean = vec![0.0; num_actions];
    for wt in trajs {
        let est = evaluate(kind, &wt.trajectory, 0, inputs)?;
        for (m, x) in mean.iter_mut().zip(&est.per_action) {
            *m += wt.probability * x;
        }
        estimates.push(est.per_action);
    }
    let mut covariance = vec![vec![0.0; num_actions]; num_actions];
    for (wt, est) in trajs.iter().zip(&estimates) {
        for a in 0..num_actions {
            let da = est[a] - mean[a];
            for b in a..num_actions {
                covariance[a][b] += wt.probability * da * (est[b] - mean[b]);
            }
        }
    }
    for a in 0..num_actions {
        for b in 0..a {
            covariance[a][b] = covariance[b][a];
        }
    }
    let variance = (0..num_actions).map(|a| covariance[a][a]).collect();
    Ok(MomentReport {
        conditioning: Conditioning { state, t: 0, n_steps: inputs.n_steps, estimator: kind },
        mode: MomentMode::Exact,
        mean,
        variance,
        covariance,
        sample_count: None,
        mean_stderr: None,
        variance_stderr: None,
    })
}

/// Sample moments with standard errors: `s/sqrt(n)` for means and the
/// fourth-moment asymptotic formula for variances.
pub fn empirical_moments(
    samples: &[AdvantageEstimate],
    conditioning: Conditioning,
) -> Result<MomentReport, AnalysisError> {
    let n = samples.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { got: n });
    }
    let num_actions = samples[0].per_action.len();
    if samples
        .iter()
        .any(|s| s.per_action.len() != num_actions || s.estimator != conditioning.estimator)
    {
        return Err(AnalysisError::InconsistentSamples);
    }
    let nf = n as f64;
    let mut mean = vec![0.0; num_actions];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.per_action) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut covariance = vec![vec![0.0; num_actions]; num_actions];
    let mut fourth = vec![0.0; num_actions];
    for s in samples {
        for a in 0..num_actions {
            let da = s.per_action[a] - mean[a];
            fourth[a] += da.powi(4) / nf;
            for b in a..num_actions {
                covariance[a][b] += da * (s.per_action[b] - mean[b]) / (nf - 1.0);
            }
        }
    }
    for a in 0..num_actions {
        for b in 0..a {
            covariance[a][b] = covariance[b][a];
        }
    }
    let variance: Vec<f64> = (0..num_actions).map(|a| covariance[a][a]).collect();
    let mean_stderr = variance.iter().map(|v| (v.max(0.0) / nf).sqrt()).collect();
    let variance_stderr = (0..num_actions)
        .map(|a| {
            let v = variance[a];
            let var_of_var = fourth[a] / nf - v * v * (nf - 3.0) / (nf * (nf - 1.0));
            var_of_var.max(0.0).sqrt()
        })
        .collect();
    Ok(MomentReport {
        conditioning,
        mode: MomentMode::Empirical,
        mean,
        variance,
        covariance,
        sample_count: Some(n),
        mean_stderr: Some(mean_stderr),
        variance_stderr: Some(variance_stderr),
    })
}

/// Split each action's estimator variance into per-step terms and cross
/// terms. With the exact value function every cross term vanishes.
pub fn variance_decomposition(
    mdp: &TabularMdp,
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<Vec<DecompositionReport>, AnalysisError> {
    let trajs = enumerate_for(mdp, state, inputs)?;
    variance_decomposition_over(&trajs, state, inputs, kind)
}

pub fn variance_decomposition_over(
    trajs: &[WeightedTrajectory],
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<Vec<DecompositionReport>, AnalysisError> {
    if !matches!(kind, EstimatorKind::Mc | EstimatorKind::DeltaHca) {
        return Err(AnalysisError::UnsupportedEstimator(kind));
    }
    let moments = exact_moments_over(trajs, state, inputs, kind)?;
    let n = inputs.n_steps;
    let num_actions = inputs.policy.num_actions();
    let mut out = Vec::with_capacity(num_actions);
    for action in 0..num_actions {
        let mut term_mean = vec![0.0; n];
        let mut all_terms = Vec::with_capacity(trajs.len());
        for wt in trajs {
            let terms = estimator_terms(kind, &wt.trajectory, 0, inputs, action)?;
            for (m, x) in term_mean.iter_mut().zip(&terms) {
                *m += wt.probability * x;
            }
            all_terms.push(terms);
        }
        let mut cov = vec![vec![0.0; n]; n];
        for (wt, terms) in trajs.iter().zip(&all_terms) {
            for k in 0..n {
                let dk = terms[k] - term_mean[k];
                for j in k..n {
                    cov[k][j] += wt.probability * dk * (terms[j] - term_mean[j]);
                }
            }
        }
        for k in 0..n {
            for j in 0..k {
                cov[k][j] = cov[j][k];
            }
        }
        let per_k_variance: Vec<f64> = (0..n).map(|k| cov[k][k]).collect();
        let mut cross_terms = cov;
        for (k, row) in cross_terms.iter_mut().enumerate() {
            row[k] = 0.0;
        }
        let mut assembled = 0.0;
        let gamma = inputs.discount;
        for k in 0..n {
            assembled += gamma.powi(2 * k as i32) * per_k_variance[k];
            for j in k + 1..n {
                assembled += 2.0 * gamma.powi((k + j) as i32) * cross_terms[k][j];
            }
        }
        out.push(DecompositionReport {
            action,
            per_k_variance,
            cross_terms,
            total: moments.variance[action],
            assembled,
        });
    }
    Ok(out)
}

/// Exact cross-action covariances of both TD-error estimators against
/// their closed forms. Requires the exact value function; the residual is
/// certified before anything is enumerated.
pub fn cross_action_covariance_check(
    mdp: &TabularMdp,
    state: usize,
    inputs: &EstimatorInputs,
) -> Result<CovarianceCheckReport, AnalysisError> {
    let trajs = enumerate_for(mdp, state, inputs)?;
    cross_action_covariance_check_over(&trajs, mdp, state, inputs)
}

pub fn cross_action_covariance_check_over(
    trajs: &[WeightedTrajectory],
    mdp: &TabularMdp,
    state: usize,
    inputs: &EstimatorInputs,
) -> Result<CovarianceCheckReport, AnalysisError> {
    let residual = bellman_residual(mdp, inputs.policy, inputs.v_hat);
    if residual > BELLMAN_TOL {
        return Err(AnalysisError::PreconditionViolated { residual });
    }
    let mc = exact_moments_over(trajs, state, inputs, EstimatorKind::Mc)?;
    let dh = exact_moments_over(trajs, state, inputs, EstimatorKind::DeltaHca)?;
    let num_actions = inputs.policy.num_actions();
    let adv = &inputs.oracle.adv[state];

    let mut mc_predicted = vec![vec![0.0; num_actions]; num_actions];
    for a in 0..num_actions {
        for b in 0..num_actions {
            if a != b {
                mc_predicted[a][b] = -adv[a] * adv[b];
            }
        }
    }

    // E[ p_k(a|s,S_k) p_k(a'|s,S_k) / (pi_a pi_a') * delta_k^2 ] summed
    // with squared discount weights over k = 1..N-1
    let mut weighted = vec![vec![0.0; num_actions]; num_actions];
    let gamma = inputs.discount;
    for wt in trajs {
        let mut g2k = 1.0;
        for k in 1..inputs.n_steps {
            g2k *= gamma * gamma;
            let delta = td_error_at(&wt.trajectory, inputs.v_hat, gamma, k)?;
            if delta == 0.0 {
                continue;
            }
            let s_k = wt.trajectory.state_at(k)?;
            let row = inputs.oracle.hindsight.row(k, state, s_k)?;
            let w = wt.probability * g2k * delta * delta;
            for a in 0..num_actions {
                let ra = row[a] / inputs.policy.prob(state, a);
                for b in a..num_actions {
                    weighted[a][b] += w * ra * row[b] / inputs.policy.prob(state, b);
                }
            }
        }
    }
    let mut delta_predicted = vec![vec![0.0; num_actions]; num_actions];
    for a in 0..num_actions {
        for b in 0..num_actions {
            if a != b {
                let sum = if b >= a { weighted[a][b] } else { weighted[b][a] };
                delta_predicted[a][b] = sum - adv[a] * adv[b];
            }
        }
    }

    let mut max_mc_error: f64 = 0.0;
    let mut max_delta_error: f64 = 0.0;
    let mut min_ordering_slack = f64::INFINITY;
    for a in 0..num_actions {
        for b in 0..num_actions {
            if a == b {
                continue;
            }
            max_mc_error = max_mc_error.max((mc.covariance[a][b] - mc_predicted[a][b]).abs());
            max_delta_error =
                max_delta_error.max((dh.covariance[a][b] - delta_predicted[a][b]).abs());
            min_ordering_slack =
                min_ordering_slack.min(dh.covariance[a][b] - mc.covariance[a][b]);
        }
    }
    if num_actions < 2 {
        min_ordering_slack = 0.0;
    }
    Ok(CovarianceCheckReport {
        state,
        n_steps: inputs.n_steps,
        bellman_residual: residual,
        mc_covariance: mc.covariance,
        mc_predicted,
        delta_covariance: dh.covariance,
        delta_predicted,
        max_mc_error,
        max_delta_error,
        min_ordering_slack,
    })
}

/// Variance of the all-actions update `sum_a est(a) grad pi(a|s)` per
/// parameter coordinate, by direct enumeration and by reassembly from
/// the per-action moment matrix. The two routes must agree.
pub fn pg_update_variance(
    mdp: &TabularMdp,
    pg: &PgConfig,
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<UpdateVarianceReport, AnalysisError> {
    let trajs = enumerate_for(mdp, state, inputs)?;
    pg_update_variance_over(&trajs, pg, state, inputs, kind)
}

pub fn pg_update_variance_over(
    trajs: &[WeightedTrajectory],
    pg: &PgConfig,
    state: usize,
    inputs: &EstimatorInputs,
    kind: EstimatorKind,
) -> Result<UpdateVarianceReport, AnalysisError> {
    let num_states = inputs.policy.num_states();
    let num_actions = inputs.policy.num_actions();
    let derived = pg.params.to_policy();
    for s in 0..num_states {
        for a in 0..num_actions {
            if (derived.prob(s, a) - inputs.policy.prob(s, a)).abs() > 1e-12 {
                return Err(AnalysisError::PolicyMismatch { state: s, action: a });
            }
        }
    }
    // only the parameter row of `state` can move; grads[a] is that row
    let mut grads = Vec::with_capacity(num_actions);
    for a in 0..num_actions {
        let full = pg.params.gradient(state, a)?;
        grads.push(full[state].clone());
    }

    // direct route: per-trajectory update rows
    let mut rows = Vec::with_capacity(trajs.len());
    let mut mean_row = vec![0.0; num_actions];
    for wt in trajs {
        let est = evaluate(kind, &wt.trajectory, 0, inputs)?;
        let mut row = vec![0.0; num_actions];
        for (coord, r) in row.iter_mut().enumerate() {
            for a in 0..num_actions {
                *r += est.per_action[a] * grads[a][coord];
            }
        }
        for (m, x) in mean_row.iter_mut().zip(&row) {
            *m += wt.probability * x;
        }
        rows.push(row);
    }
    let mut direct_row = vec![0.0; num_actions];
    for (wt, row) in trajs.iter().zip(&rows) {
        for (coord, d) in direct_row.iter_mut().enumerate() {
            let dx = row[coord] - mean_row[coord];
            *d += wt.probability * dx * dx;
        }
    }

    // assembly route from the per-action moment matrix
    let moments = exact_moments_over(trajs, state, inputs, kind)?;
    let mut variance_row = vec![0.0; num_actions];
    let mut covariance_row = vec![0.0; num_actions];
    for coord in 0..num_actions {
        for a in 0..num_actions {
            variance_row[coord] += grads[a][coord] * grads[a][coord] * moments.variance[a];
            for b in a + 1..num_actions {
                covariance_row[coord] +=
                    2.0 * grads[a][coord] * grads[b][coord] * moments.covariance[a][b];
            }
        }
    }

    let expand = |row: &[f64]| {
        let mut m = vec![vec![0.0; num_actions]; num_states];
        m[state].copy_from_slice(row);
        m
    };
    let assembled_row: Vec<f64> =
        variance_row.iter().zip(&covariance_row).map(|(v, c)| v + c).collect();
    let max_route_error = direct_row
        .iter()
        .zip(&assembled_row)
        .map(|(d, a)| (d - a).abs())
        .fold(0.0f64, f64::max);
    let total_trace = direct_row.iter().sum();
    Ok(UpdateVarianceReport {
        state,
        estimator: kind,
        per_coordinate_variance: expand(&direct_row),
        assembled_variance: expand(&assembled_row),
        variance_part: expand(&variance_row),
        covariance_part: expand(&covariance_row),
        total_trace,
        max_route_error,
    })
}
