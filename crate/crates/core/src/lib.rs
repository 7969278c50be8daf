//! Tabular-MDP laboratory for advantage estimation.
//!
//! The crate compares three per-action advantage estimators on small,
//! exactly solvable MDPs:
//!
//! * the N-step Monte-Carlo estimator (importance-weighted TD-error sum),
//! * the hindsight-credit estimator built from rewards, and
//! * its TD-error variant, which reweights each future TD error by the
//!   posterior probability that the credited action was taken given the
//!   state reached k steps later.
//!
//! Everything the estimators condition on (values, advantages, k-step
//! distributions, hindsight tables) is computed in closed form by
//! [`oracle`], and all means/variances can be evaluated exactly by
//! exhaustive trajectory enumeration ([`trajectory`], [`analysis`]), so
//! the unbiasedness and variance-ordering claims are checkable to
//! floating-point tolerance rather than by sampling alone.

// index-heavy dynamic programming reads better with explicit loops
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod envs;
pub mod estimator;
pub mod mdp;
pub mod oracle;
pub mod perturb;
pub mod rng;
pub mod trajectory;

pub use analysis::{
    cross_action_covariance_check, empirical_moments, exact_moments, pg_update_variance,
    variance_decomposition, Conditioning, CovarianceCheckReport, DecompositionReport,
    MomentMode, MomentReport, PgConfig, UpdateVarianceReport,
};
pub use envs::{chain_mdp, figure1_mdp, random_mdp, RandomMdpConfig};
pub use estimator::{
    delta_hca_advantage, hca_advantage, mc_advantage, AdvantageEstimate, EstimatorInputs,
    EstimatorKind,
};
pub use mdp::{validate_mdp, Policy, SoftmaxPolicy, TabularMdp, ValidationReport, ValueFunction};
pub use oracle::{
    bellman_residual, expected_rewards, expected_td_per_state, hindsight_probabilities,
    kstep_distributions, q_and_advantage, solve_value, HindsightTable, OracleBundle,
};
pub use perturb::{perturb_hindsight, perturb_value, sweep, PerturbMode, PerturbSpec,
    PerturbTarget, SweepRow};
pub use trajectory::{
    enumerate_trajectories, sample_trajectory, td_errors, Step, Trajectory, WeightedTrajectory,
};
