//! The `oracle` subcommand: compute the exact quantities for an MDP and
//! dump them as one JSON document for cross-implementation regression.

use crate::error::CliError;
use hcalab_core::mdp::{load_mdp, load_policy, Policy};
use hcalab_core::oracle::OracleBundle;
use std::path::Path;

pub fn oracle(
    mdp_path: &Path,
    policy_path: Option<&Path>,
    n_steps: Option<usize>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let mdp = load_mdp(mdp_path).map_err(|e| CliError::Schema(format!("{}: {e}", mdp_path.display())))?;
    let policy = match policy_path {
        Some(p) => load_policy(p).map_err(|e| CliError::Schema(format!("{}: {e}", p.display())))?,
        None => Policy::uniform(mdp.num_states, mdp.num_actions),
    };
    if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(CliError::Schema(format!(
            "policy shape ({}, {}) does not match MDP ({}, {})",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    let depth = n_steps.unwrap_or(mdp.horizon);
    if depth == 0 || depth > mdp.horizon {
        return Err(CliError::Schema(format!(
            "n_steps must lie in 1..={}",
            mdp.horizon
        )));
    }
    let bundle = OracleBundle::build(&mdp, &policy, depth)?;
    let mut text = serde_json::to_string_pretty(&bundle)
        .map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
