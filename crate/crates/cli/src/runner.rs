//! The `run` subcommand: build the configured instance, compute the
//! selected analyses cell by cell, and write `report.json`, per-table
//! CSVs, and `manifest.json`. Exact-mode outputs are byte-reproducible
//! across runs and worker counts.

use crate::config::{AnalysisKind, EstimatorSpec, ExperimentConfig, ModeSpec};
use crate::error::CliError;
use hcalab_core::analysis::{
    cross_action_covariance_check_over, empirical_moments, exact_moments_over,
    pg_update_variance_over, variance_decomposition_over, Conditioning, CovarianceCheckReport,
    DecompositionReport, MomentReport, PgConfig, UpdateVarianceReport,
};
use hcalab_core::estimator::{evaluate, hca_advantage, EstimatorInputs, EstimatorKind};
use hcalab_core::mdp::{Policy, SoftmaxPolicy, TabularMdp, ValueFunction};
use hcalab_core::oracle::OracleBundle;
use hcalab_core::perturb::{sweep, PerturbSpec, SweepRow};
use hcalab_core::trajectory::{
    enumerate_trajectories, sample_trajectory, WeightedTrajectory, ENUMERATION_CAP,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Serialize)]
struct MomentCell {
    mdp_id: String,
    state: usize,
    estimator: EstimatorKind,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    report: MomentReport,
}

#[derive(Debug, Serialize)]
struct DecompositionCell {
    mdp_id: String,
    state: usize,
    estimator: EstimatorKind,
    n: usize,
    reports: Vec<DecompositionReport>,
}

#[derive(Debug, Serialize)]
struct CovarianceCell {
    mdp_id: String,
    n: usize,
    report: CovarianceCheckReport,
}

#[derive(Debug, Serialize)]
struct UpdateVarianceCell {
    mdp_id: String,
    estimator: EstimatorKind,
    n: usize,
    report: UpdateVarianceReport,
}

#[derive(Debug, Serialize)]
struct EnvironmentSummary {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    horizon: usize,
}

#[derive(Debug, Serialize)]
struct RunReport {
    mdp_id: String,
    environment: EnvironmentSummary,
    states: Vec<usize>,
    moments: Vec<MomentCell>,
    decompositions: Vec<DecompositionCell>,
    covariance_checks: Vec<CovarianceCell>,
    update_variance: Vec<UpdateVarianceCell>,
    sweep: Vec<SweepRow>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool_version: &'static str,
    config_hash: String,
    mdp_id: String,
    mode: String,
    seeds: ManifestSeeds,
}

#[derive(Debug, Serialize)]
struct ManifestSeeds {
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<u64>,
}

pub struct RunOverrides {
    pub output_dir: Option<std::path::PathBuf>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

pub fn run(config_path: &Path, overrides: RunOverrides) -> Result<(), CliError> {
    let raw = std::fs::read(config_path)
        .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", config_path.display())))?;
    let mut config: ExperimentConfig = serde_json::from_slice(&raw)
        .map_err(|e| CliError::Schema(format!("{}: {e}", config_path.display())))?;
    if let (ModeSpec::Sampled(s), Some(samples)) = (&mut config.mode, overrides.samples) {
        s.samples = samples;
    }
    if let (ModeSpec::Sampled(s), Some(seed)) = (&mut config.mode, overrides.seed) {
        s.seed = seed;
    }
    config.validate()?;

    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let output_dir = overrides
        .output_dir
        .or_else(|| config.output_dir.clone().map(|p| if p.is_absolute() { p } else { base_dir.join(p) }))
        .ok_or_else(|| CliError::Schema("no output directory (config output_dir or --output-dir)".into()))?;

    let (mdp_id, mdp) = config.environment.build(base_dir)?;
    let (policy, params) = config.policy.build(&mdp)?;
    if policy.num_states() != mdp.num_states {
        return Err(CliError::Schema("policy/MDP shape mismatch".into()));
    }
    let n_max = config
        .estimators
        .iter()
        .map(|e| e.n.max(e.k.unwrap_or(0)))
        .max()
        .expect("non-empty estimators");
    if n_max > mdp.horizon {
        return Err(CliError::Schema(format!(
            "estimator lookahead {n_max} exceeds the MDP horizon {}",
            mdp.horizon
        )));
    }
    let oracle = OracleBundle::build(&mdp, &policy, n_max)?;
    let v_hat = config.v_hat.build(&mdp, &oracle.v);

    let states: Vec<usize> = match &config.states {
        Some(listed) => {
            for &s in listed {
                if s >= mdp.num_states {
                    return Err(CliError::Schema(format!("state {s} out of range")));
                }
                if mdp.terminal[s] {
                    return Err(CliError::Schema(format!(
                        "state {s} is terminal; conditioning there is degenerate"
                    )));
                }
            }
            listed.clone()
        }
        None => mdp.non_terminal_states(),
    };

    let report = build_report(
        &config, &mdp_id, &mdp, &policy, params.as_ref(), &oracle, &v_hat, &states,
    )?;

    std::fs::create_dir_all(&output_dir)?;
    write_json(&output_dir.join("report.json"), &report)?;
    write_csvs(&output_dir, &report, matches!(config.mode, ModeSpec::Sampled(_)))?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("sha256:{:x}", Sha256::digest(&raw)),
        mdp_id: report.mdp_id.clone(),
        mode: match config.mode {
            ModeSpec::Exact => "exact".to_string(),
            ModeSpec::Sampled(s) => format!("sampled:{}", s.samples),
        },
        seeds: ManifestSeeds {
            sampling: match config.mode {
                ModeSpec::Sampled(s) => Some(s.seed),
                ModeSpec::Exact => None,
            },
            perturbation: config.perturbation.as_ref().map(|p| p.seed),
        },
    };
    write_json(&output_dir.join("manifest.json"), &manifest)?;
    println!("wrote {}", output_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    config: &ExperimentConfig,
    mdp_id: &str,
    mdp: &TabularMdp,
    policy: &Policy,
    params: Option<&SoftmaxPolicy>,
    oracle: &OracleBundle,
    v_hat: &ValueFunction,
    states: &[usize],
) -> Result<RunReport, CliError> {
    let mut report = RunReport {
        mdp_id: mdp_id.to_string(),
        environment: EnvironmentSummary {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            discount: mdp.discount,
            horizon: mdp.horizon,
        },
        states: states.to_vec(),
        moments: Vec::new(),
        decompositions: Vec::new(),
        covariance_checks: Vec::new(),
        update_variance: Vec::new(),
        sweep: Vec::new(),
    };

    // moment cells may fan out across workers; assembly stays in config order
    if config.analyses.contains(&AnalysisKind::Moments) {
        let cells: Vec<(usize, EstimatorSpec)> = states
            .iter()
            .flat_map(|&s| config.estimators.iter().map(move |e| (s, *e)))
            .collect();
        report.moments = cells
            .par_iter()
            .map(|(s, est)| moment_cell(config, mdp_id, mdp, policy, oracle, v_hat, *s, est))
            .collect::<Result<Vec<_>, CliError>>()?;
    }

    let cap = config.enumeration_cap.unwrap_or(ENUMERATION_CAP);
    for &s in states {
        let depth = config.estimators.iter().map(|e| e.n).max().unwrap();
        let trajs = if config
            .analyses
            .iter()
            .any(|a| matches!(a, AnalysisKind::Decomposition | AnalysisKind::CovarianceCheck | AnalysisKind::UpdateVariance))
        {
            enumerate_trajectories(mdp, policy, s, depth, cap)?
        } else {
            Vec::new()
        };
        if config.analyses.contains(&AnalysisKind::Decomposition) {
            for est in &config.estimators {
                if est.kind == EstimatorKind::Hca {
                    continue; // no per-term split for the reward estimator
                }
                let inputs = EstimatorInputs::new(policy, v_hat, oracle, est.n, mdp.discount)?;
                let reports = variance_decomposition_over(&trajs, s, &inputs, est.kind)?;
                report.decompositions.push(DecompositionCell {
                    mdp_id: mdp_id.to_string(),
                    state: s,
                    estimator: est.kind,
                    n: est.n,
                    reports,
                });
            }
        }
        if config.analyses.contains(&AnalysisKind::CovarianceCheck) {
            let mut n_values: Vec<usize> = config.estimators.iter().map(|e| e.n).collect();
            n_values.sort_unstable();
            n_values.dedup();
            for n in n_values {
                let inputs = EstimatorInputs::new(policy, v_hat, oracle, n, mdp.discount)?;
                let check = cross_action_covariance_check_over(&trajs, mdp, s, &inputs)?;
                report.covariance_checks.push(CovarianceCell {
                    mdp_id: mdp_id.to_string(),
                    n,
                    report: check,
                });
            }
        }
        if config.analyses.contains(&AnalysisKind::UpdateVariance) {
            let params = params.ok_or_else(|| {
                CliError::Schema("update_variance needs softmax parameters".into())
            })?;
            let pg = PgConfig::new(config.step_size, params.clone())
                .map_err(|e| CliError::Schema(e.to_string()))?;
            for est in &config.estimators {
                if est.kind == EstimatorKind::Hca {
                    continue;
                }
                let inputs = EstimatorInputs::new(policy, v_hat, oracle, est.n, mdp.discount)?;
                let update = pg_update_variance_over(&trajs, &pg, s, &inputs, est.kind)?;
                report.update_variance.push(UpdateVarianceCell {
                    mdp_id: mdp_id.to_string(),
                    estimator: est.kind,
                    n: est.n,
                    report: update,
                });
            }
        }
        if config.analyses.contains(&AnalysisKind::PerturbationSweep) {
            let p = config.perturbation.as_ref().expect("validated");
            let grid: Vec<PerturbSpec> = p
                .epsilons
                .iter()
                .map(|&epsilon| PerturbSpec {
                    epsilon,
                    target: p.target,
                    mode: p.mode,
                    seed: p.seed,
                })
                .collect();
            let kinds: Vec<EstimatorKind> = config.estimators.iter().map(|e| e.kind).collect();
            let n = config.estimators.iter().map(|e| e.n).max().unwrap();
            let rows = sweep(mdp, policy, s, oracle, v_hat, n, &kinds, &grid)?;
            report.sweep.extend(rows);
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn moment_cell(
    config: &ExperimentConfig,
    mdp_id: &str,
    mdp: &TabularMdp,
    policy: &Policy,
    oracle: &OracleBundle,
    v_hat: &ValueFunction,
    s: usize,
    est: &EstimatorSpec,
) -> Result<MomentCell, CliError> {
    let inputs = EstimatorInputs::new(policy, v_hat, oracle, est.n, mdp.discount)?;
    let report = match config.mode {
        ModeSpec::Exact => {
            let depth = est.n.max(est.k.unwrap_or(0));
            let cap = config.enumeration_cap.unwrap_or(ENUMERATION_CAP);
            let trajs: Vec<WeightedTrajectory> =
                enumerate_trajectories(mdp, policy, s, depth, cap)?;
            match est.k {
                // an explicit cutoff overrides the dispatcher's k = n
                Some(k) if est.kind == EstimatorKind::Hca => {
                    hca_moments_over(&trajs, s, &inputs, k)?
                }
                _ => exact_moments_over(&trajs, s, &inputs, est.kind)?,
            }
        }
        ModeSpec::Sampled(mode) => {
            let samples: Vec<_> = (0..mode.samples as u64)
                .map(|i| -> Result<_, CliError> {
                    let traj = sample_trajectory(mdp, policy, s, mdp.horizon, mode.seed, i)?;
                    match est.k {
                        Some(k) if est.kind == EstimatorKind::Hca => {
                            Ok(hca_advantage(&traj, 0, &inputs, k)?)
                        }
                        _ => Ok(evaluate(est.kind, &traj, 0, &inputs)?),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let conditioning =
                Conditioning { state: s, t: 0, n_steps: est.n, estimator: est.kind };
            empirical_moments(&samples, conditioning)?
        }
    };
    Ok(MomentCell {
        mdp_id: mdp_id.to_string(),
        state: s,
        estimator: est.kind,
        n: est.n,
        k: est.k,
        report,
    })
}

/// Exact moments of the reward-hindsight estimator at an explicit cutoff.
fn hca_moments_over(
    trajs: &[WeightedTrajectory],
    s: usize,
    inputs: &EstimatorInputs,
    cutoff: usize,
) -> Result<MomentReport, CliError> {
    let num_actions = inputs.policy.num_actions();
    let estimates: Vec<Vec<f64>> = trajs
        .iter()
        .map(|wt| Ok(hca_advantage(&wt.trajectory, 0, inputs, cutoff)?.per_action))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut mean = vec![0.0; num_actions];
    for (wt, est) in trajs.iter().zip(&estimates) {
        for (m, x) in mean.iter_mut().zip(est) {
            *m += wt.probability * x;
        }
    }
    let mut covariance = vec![vec![0.0; num_actions]; num_actions];
    for (wt, est) in trajs.iter().zip(&estimates) {
        for a in 0..num_actions {
            for b in a..num_actions {
                covariance[a][b] += wt.probability * (est[a] - mean[a]) * (est[b] - mean[b]);
            }
        }
    }
    for a in 0..num_actions {
        for b in 0..a {
            covariance[a][b] = covariance[b][a];
        }
    }
    Ok(MomentReport {
        conditioning: Conditioning {
            state: s,
            t: 0,
            n_steps: inputs.n_steps,
            estimator: EstimatorKind::Hca,
        },
        mode: hcalab_core::analysis::MomentMode::Exact,
        variance: (0..num_actions).map(|a| covariance[a][a]).collect(),
        mean,
        covariance,
        sample_count: None,
        mean_stderr: None,
        variance_stderr: None,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Other(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_csvs(dir: &Path, report: &RunReport, empirical: bool) -> Result<(), CliError> {
    let mut moments = String::from("mdp_id,state,action,n,estimator,statistic,value,stderr\n");
    for cell in &report.moments {
        let r = &cell.report;
        for a in 0..r.mean.len() {
            let mean_se = r.mean_stderr.as_ref().map(|v| v[a]);
            let var_se = r.variance_stderr.as_ref().map(|v| v[a]);
            push_stat(&mut moments, cell, a, "mean", r.mean[a], mean_se);
            push_stat(&mut moments, cell, a, "variance", r.variance[a], var_se);
            for (b, &cov) in r.covariance[a].iter().enumerate() {
                if b != a {
                    push_stat(&mut moments, cell, a, &format!("covariance_a{b}"), cov, None);
                }
            }
        }
    }
    std::fs::write(dir.join("moments.csv"), moments)?;

    if !report.decompositions.is_empty() {
        let mut out = String::from(
            "mdp_id,state,action,n,estimator,k,term_variance,max_abs_cross,total,assembled\n",
        );
        for cell in &report.decompositions {
            for r in &cell.reports {
                let max_cross = r
                    .cross_terms
                    .iter()
                    .flatten()
                    .fold(0.0f64, |m, x| m.max(x.abs()));
                for (k, term) in r.per_k_variance.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{},{k},{term},{max_cross},{},{}\n",
                        cell.mdp_id, cell.state, r.action, cell.n, cell.estimator, r.total, r.assembled
                    ));
                }
            }
        }
        std::fs::write(dir.join("decomposition.csv"), out)?;
    }

    if !report.covariance_checks.is_empty() {
        let mut out = String::from(
            "mdp_id,state,n,bellman_residual,max_mc_error,max_delta_error,min_ordering_slack\n",
        );
        for cell in &report.covariance_checks {
            let r = &cell.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cell.mdp_id,
                r.state,
                cell.n,
                r.bellman_residual,
                r.max_mc_error,
                r.max_delta_error,
                r.min_ordering_slack
            ));
        }
        std::fs::write(dir.join("covariance.csv"), out)?;
    }

    if !report.update_variance.is_empty() {
        let mut out =
            String::from("mdp_id,state,estimator,n,total_trace,max_route_error\n");
        for cell in &report.update_variance {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.mdp_id,
                cell.report.state,
                cell.estimator,
                cell.n,
                cell.report.total_trace,
                cell.report.max_route_error
            ));
        }
        std::fs::write(dir.join("update_variance.csv"), out)?;
    }

    if !report.sweep.is_empty() {
        let mut out = String::from("epsilon,target,mode,estimator,state,action,bias,variance\n");
        for row in &report.sweep {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.epsilon,
                match row.target {
                    hcalab_core::perturb::PerturbTarget::ValueFunction => "value_function",
                    hcalab_core::perturb::PerturbTarget::HindsightTable => "hindsight_table",
                },
                match row.mode {
                    hcalab_core::perturb::PerturbMode::AdditiveNoise => "additive_noise",
                    hcalab_core::perturb::PerturbMode::SystematicShift => "systematic_shift",
                },
                row.estimator,
                row.state,
                row.action,
                row.bias,
                row.variance
            ));
        }
        std::fs::write(dir.join("sweep.csv"), out)?;
    }
    let _ = empirical;
    Ok(())
}

fn push_stat(
    out: &mut String,
    cell: &MomentCell,
    action: usize,
    statistic: &str,
    value: f64,
    stderr: Option<f64>,
) {
    let se = stderr.map(|x| x.to_string()).unwrap_or_default();
    out.push_str(&format!(
        "{},{},{action},{},{},{statistic},{value},{se}\n",
        cell.mdp_id, cell.state, cell.n, cell.estimator
    ));
}
