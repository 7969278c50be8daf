//! Experiment and verification config schemas.
//!
//! Configs are single JSON documents, schema-validated before any
//! computation; unknown fields are rejected. Every seed is explicit so
//! any run can be reproduced from its manifest.

use crate::error::CliError;
use hcalab_core::envs::{chain_mdp, figure1_mdp, random_mdp, RandomMdpConfig};
use hcalab_core::mdp::{load_mdp, Policy, SoftmaxPolicy, TabularMdp, ValueFunction};
use hcalab_core::perturb::{PerturbMode, PerturbTarget};
use hcalab_core::rng::CounterRng;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Figure1,
    Chain(ChainParams),
    Random(RandomMdpConfig),
    File(FileRef),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub length: usize,
    pub slip: f64,
    pub reward_at_end: f64,
    pub discount: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: PathBuf,
}

impl EnvironmentSpec {
    /// Build the MDP; `base_dir` anchors relative file paths.
    pub fn build(&self, base_dir: &Path) -> Result<(String, TabularMdp), CliError> {
        match self {
            EnvironmentSpec::Figure1 => {
                let (mdp, _) = figure1_mdp();
                Ok(("figure1".to_string(), mdp))
            }
            EnvironmentSpec::Chain(p) => {
                let mdp = chain_mdp(p.length, p.slip, p.reward_at_end, p.discount, p.horizon)
                    .map_err(|e| CliError::Schema(e.to_string()))?;
                Ok((format!("chain-{}", p.length), mdp))
            }
            EnvironmentSpec::Random(config) => {
                let mdp = random_mdp(config).map_err(|e| CliError::Schema(e.to_string()))?;
                Ok((format!("random-{}", config.seed), mdp))
            }
            EnvironmentSpec::File(f) => {
                let path = if f.path.is_absolute() { f.path.clone() } else { base_dir.join(&f.path) };
                let mdp = load_mdp(&path).map_err(|e| CliError::Schema(e.to_string()))?;
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "file".to_string());
                Ok((id, mdp))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Uniform,
    Softmax(SoftmaxParams),
    Explicit(ExplicitPolicy),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxParams {
    pub params: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl PolicySpec {
    /// The policy plus, when available, the softmax parameters behind it
    /// (needed by the update-variance analysis).
    pub fn build(
        &self,
        mdp: &TabularMdp,
    ) -> Result<(Policy, Option<SoftmaxPolicy>), CliError> {
        match self {
            PolicySpec::Uniform => {
                let params =
                    SoftmaxPolicy::new(vec![vec![0.0; mdp.num_actions]; mdp.num_states])
                        .map_err(|e| CliError::Schema(e.to_string()))?;
                Ok((Policy::uniform(mdp.num_states, mdp.num_actions), Some(params)))
            }
            PolicySpec::Softmax(sp) => {
                let params = SoftmaxPolicy::new(sp.params.clone())
                    .map_err(|e| CliError::Schema(e.to_string()))?;
                let policy = params.to_policy();
                check_policy_shape(&policy, mdp)?;
                Ok((policy, Some(params)))
            }
            PolicySpec::Explicit(ep) => {
                let policy = Policy::new(ep.probs.clone())
                    .map_err(|e| CliError::Schema(e.to_string()))?;
                check_policy_shape(&policy, mdp)?;
                Ok((policy, None))
            }
        }
    }
}

fn check_policy_shape(policy: &Policy, mdp: &TabularMdp) -> Result<(), CliError> {
    if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(CliError::Schema(format!(
            "policy shape ({}, {}) does not match MDP ({}, {})",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VHatSpec {
    Exact,
    Zero,
    Random(RandomVHat),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomVHat {
    pub seed: u64,
    pub scale: f64,
}

impl Default for VHatSpec {
    fn default() -> Self {
        VHatSpec::Exact
    }
}

impl VHatSpec {
    pub fn build(&self, mdp: &TabularMdp, exact: &ValueFunction) -> ValueFunction {
        match self {
            VHatSpec::Exact => exact.clone(),
            VHatSpec::Zero => ValueFunction::zeros(mdp),
            VHatSpec::Random(r) => random_value_function(mdp, r.seed, r.scale),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, VHatSpec::Exact)
    }
}

pub fn random_value_function(mdp: &TabularMdp, seed: u64, scale: f64) -> ValueFunction {
    let mut rng = CounterRng::new(seed, 3);
    let values = (0..mdp.num_states)
        .map(|s| if mdp.terminal[s] { 0.0 } else { rng.uniform(-scale, scale) })
        .collect();
    ValueFunction::new(values, mdp).expect("terminal entries are zero by construction")
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Exact,
    Sampled(SampledMode),
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampledMode {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Moments,
    Decomposition,
    CovarianceCheck,
    UpdateVariance,
    PerturbationSweep,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: hcalab_core::estimator::EstimatorKind,
    pub n: usize,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub target: PerturbTarget,
    pub mode: PerturbMode,
    pub epsilons: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub policy: PolicySpec,
    pub estimators: Vec<EstimatorSpec>,
    pub analyses: Vec<AnalysisKind>,
    pub mode: ModeSpec,
    #[serde(default)]
    pub v_hat: VHatSpec,
    #[serde(default)]
    pub states: Option<Vec<usize>>,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    /// Bound on enumerated trajectories per conditioning state.
    #[serde(default)]
    pub enumeration_cap: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_step_size() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.estimators.is_empty() {
            return Err(CliError::Schema("estimators must be non-empty".into()));
        }
        for est in &self.estimators {
            if est.n == 0 {
                return Err(CliError::Schema("estimator lookahead n must be positive".into()));
            }
            if est.k.is_some() && est.kind != hcalab_core::estimator::EstimatorKind::Hca {
                return Err(CliError::Schema(
                    "the k cutoff applies to the hca estimator only".into(),
                ));
            }
        }
        if self.analyses.is_empty() {
            return Err(CliError::Schema("analyses must be non-empty".into()));
        }
        if let ModeSpec::Sampled(s) = self.mode {
            if s.samples < 2 {
                return Err(CliError::Schema("sampled mode needs at least 2 samples".into()));
            }
            if self.analyses.iter().any(|a| *a != AnalysisKind::Moments) {
                return Err(CliError::Schema(
                    "sampled mode supports the moments analysis only".into(),
                ));
            }
        }
        if self.analyses.contains(&AnalysisKind::CovarianceCheck) && !self.v_hat.is_exact() {
            return Err(CliError::Schema(
                "covariance_check requires v_hat = \"exact\"".into(),
            ));
        }
        if self.analyses.contains(&AnalysisKind::UpdateVariance)
            && matches!(self.policy, PolicySpec::Explicit(_))
        {
            return Err(CliError::Schema(
                "update_variance needs a softmax-parameterized (or uniform) policy".into(),
            ));
        }
        if self.analyses.contains(&AnalysisKind::PerturbationSweep) {
            match &self.perturbation {
                None => {
                    return Err(CliError::Schema(
                        "perturbation_sweep requires a perturbation section".into(),
                    ))
                }
                Some(p) => {
                    if p.epsilons.is_empty() {
                        return Err(CliError::Schema("perturbation epsilons must be non-empty".into()));
                    }
                    if p.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
                        return Err(CliError::Schema(
                            "perturbation epsilons must be non-negative and finite".into(),
                        ));
                    }
                }
            }
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(CliError::Schema("step_size must be positive and finite".into()));
        }
        if self.enumeration_cap == Some(0) {
            return Err(CliError::Schema("enumeration_cap must be positive".into()));
        }
        Ok(())
    }
}

/// One entry of a verification suite.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyInstanceSpec {
    Figure1,
    Chain(ChainParams),
    Random(RandomMdpConfig),
    File(FileRef),
    RandomSuite(RandomSuite),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSuite {
    pub count: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptHindsight {
    pub epsilon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub instances: Vec<VerifyInstanceSpec>,
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_random_v_hats")]
    pub random_v_hats: usize,
    #[serde(default)]
    pub v_hat: VHatSpec,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Deliberately corrupt every hindsight table before checking; the
    /// gate must then fail. A self-test knob, not an experiment setting.
    #[serde(default)]
    pub corrupt_hindsight: Option<CorruptHindsight>,
}

fn default_n_values() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}

fn default_random_v_hats() -> usize {
    3
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.instances.is_empty() {
            return Err(CliError::Schema("instances must be non-empty".into()));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(CliError::Schema("n_values must be positive".into()));
        }
        Ok(())
    }

    /// Expand the suite into concrete (id, mdp, softmax-params) triples.
    pub fn build_instances(
        &self,
        base_dir: &Path,
    ) -> Result<Vec<(String, TabularMdp, SoftmaxPolicy)>, CliError> {
        let mut out = Vec::new();
        for spec in &self.instances {
            match spec {
                VerifyInstanceSpec::Figure1 => {
                    let (mdp, _) = figure1_mdp();
                    let params =
                        SoftmaxPolicy::new(vec![vec![0.0; mdp.num_actions]; mdp.num_states])
                            .map_err(|e| CliError::Schema(e.to_string()))?;
                    out.push(("figure1".to_string(), mdp, params));
                }
                VerifyInstanceSpec::Chain(p) => {
                    let mdp = chain_mdp(p.length, p.slip, p.reward_at_end, p.discount, p.horizon)
                        .map_err(|e| CliError::Schema(e.to_string()))?;
                    let params =
                        SoftmaxPolicy::new(vec![vec![0.0; mdp.num_actions]; mdp.num_states])
                            .map_err(|e| CliError::Schema(e.to_string()))?;
                    out.push((format!("chain-{}", p.length), mdp, params));
                }
                VerifyInstanceSpec::Random(config) => {
                    let mdp = random_mdp(config).map_err(|e| CliError::Schema(e.to_string()))?;
                    let params = suite_params(&mdp, config.seed);
                    out.push((format!("random-{}", config.seed), mdp, params));
                }
                VerifyInstanceSpec::File(f) => {
                    let path =
                        if f.path.is_absolute() { f.path.clone() } else { base_dir.join(&f.path) };
                    let mdp = load_mdp(&path).map_err(|e| CliError::Schema(e.to_string()))?;
                    let params =
                        SoftmaxPolicy::new(vec![vec![0.0; mdp.num_actions]; mdp.num_states])
                            .map_err(|e| CliError::Schema(e.to_string()))?;
                    let id = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "file".to_string());
                    out.push((id, mdp, params));
                }
                VerifyInstanceSpec::RandomSuite(suite) => {
                    for i in 0..suite.count as u64 {
                        let config = RandomMdpConfig {
                            num_states: 4 + (i as usize % 3),
                            num_actions: if i % 5 == 0 { 3 } else { 2 },
                            branching: 2,
                            reward_scale: 1.5,
                            terminal_mass: [0.0, 0.1, 0.25, 0.4][i as usize % 4],
                            discount: [1.0, 0.95, 0.9, 0.5][i as usize % 4],
                            horizon: 6,
                            seed: suite.base_seed + i,
                        };
                        let mdp =
                            random_mdp(&config).map_err(|e| CliError::Schema(e.to_string()))?;
                        let params = if i % 2 == 0 {
                            SoftmaxPolicy::new(vec![vec![0.0; mdp.num_actions]; mdp.num_states])
                                .map_err(|e| CliError::Schema(e.to_string()))?
                        } else {
                            suite_params(&mdp, config.seed)
                        };
                        out.push((format!("suite-{i:02}"), mdp, params));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn suite_params(mdp: &TabularMdp, seed: u64) -> SoftmaxPolicy {
    let mut rng = CounterRng::new(seed, 7);
    SoftmaxPolicy::new(
        (0..mdp.num_states)
            .map(|_| (0..mdp.num_actions).map(|_| rng.uniform(-0.8, 0.8)).collect())
            .collect(),
    )
    .expect("finite draws")
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}
