//! Canonical test environments.
//!
//! * `figure1_mdp`: a five-state, two-path instance on which the
//!   Monte-Carlo advantage estimator has zero variance while reward-based
//!   hindsight crediting has variance 1 per action. The state one step
//!   out identifies the action taken, the state two steps out does not,
//!   and both paths carry total reward zero — construction hard-asserts
//!   these structural facts so a wrong reconstruction cannot silently
//!   poison downstream checks.
//! * `chain_mdp`: a position chain where the two actions advance by one
//!   or two cells and a slip probability mixes their effects, so the
//!   hindsight posterior decays toward the policy as the lookahead grows.
//! * `random_mdp`: seeded generator for small validated instances; with
//!   discount 1 the support graph is a strictly forward DAG so every
//!   trajectory absorbs within the horizon.

use crate::mdp::{MdpError, Policy, TabularMdp};
use crate::oracle::{expected_rewards, hindsight_probabilities, kstep_distributions};
use crate::rng::CounterRng;
use crate::trajectory::{enumerate_trajectories, ENUMERATION_CAP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unsatisfiable generator config: {0}")]
    UnsatisfiableConfig(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// The two-path counterexample instance with its uniform policy.
///
/// States: A=0, B=1, C=2, D=3, terminal=4. Action 0 moves A to B, action
/// 1 moves A to C, everything downstream is action-independent. Rewards:
/// +1 on both arcs out of A, -1 on both arcs into D, zero elsewhere;
/// discount 1, horizon 4.
pub fn figure1_mdp() -> (TabularMdp, Policy) {
    let n = 5;
    let one_hot = |i: usize| {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        row
    };
    let mut reward = vec![vec![vec![0.0; n]; 2]; n];
    reward[0][0][1] = 1.0; // A -> B
    reward[0][1][2] = 1.0; // A -> C
    reward[1][0][3] = -1.0; // B -> D
    reward[1][1][3] = -1.0;
    reward[2][0][3] = -1.0; // C -> D
    reward[2][1][3] = -1.0;
    let mdp = TabularMdp::new(
        n,
        2,
        1.0,
        4,
        vec![false, false, false, false, true],
        vec![
            vec![one_hot(1), one_hot(2)],
            vec![one_hot(3), one_hot(3)],
            vec![one_hot(3), one_hot(3)],
            vec![one_hot(4), one_hot(4)],
            vec![one_hot(4), one_hot(4)],
        ],
        reward,
    )
    .expect("hard-coded instance must validate");
    let policy = Policy::uniform(n, 2);

    // Structural self-check: both paths carry zero total reward, the
    // first-step expected reward is action-independent, the state one
    // step out identifies the action, and the state two steps out does
    // not. A reconstruction that breaks any of these is unusable.
    let paths = enumerate_trajectories(&mdp, &policy, 0, mdp.horizon, ENUMERATION_CAP)
        .expect("two-path enumeration");
    assert_eq!(paths.len(), 2, "expected exactly two trajectories from A");
    for wt in &paths {
        let total: f64 = wt.trajectory.steps().iter().map(|s| s.reward).sum();
        assert_eq!(total, 0.0, "path reward must telescope to zero");
        assert_eq!(wt.probability, 0.5);
    }
    let (r_sa, _) = expected_rewards(&mdp, &policy);
    assert_eq!(r_sa[0][0], r_sa[0][1], "first-step expected reward must not identify the action");
    let (joint, marginal) = kstep_distributions(&mdp, &policy, 2).expect("two-step lookahead");
    let hindsight = hindsight_probabilities(&joint, &marginal, &policy);
    assert_eq!(hindsight.row(1, 0, 1).expect("A->B reachable"), &[1.0, 0.0]);
    assert_eq!(hindsight.row(1, 0, 2).expect("A->C reachable"), &[0.0, 1.0]);
    assert_eq!(hindsight.row(2, 0, 3).expect("A->D reachable"), &[0.5, 0.5]);

    (mdp, policy)
}

/// Seeded random-MDP generator configuration.
///
/// `branching` successor states are drawn per `(s, a)`; `terminal_mass`
/// is routed straight to the terminal state. With `discount == 1` the
/// successors are restricted to strictly larger indices, so the instance
/// terminates within `num_states - 1` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub branching: usize,
    pub reward_scale: f64,
    pub terminal_mass: f64,
    pub discount: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl RandomMdpConfig {
    fn check(&self) -> Result<(), EnvError> {
        if self.num_states < 2 {
            return Err(EnvError::UnsatisfiableConfig(
                "need at least one transient and one terminal state".into(),
            ));
        }
        if self.num_actions == 0 || self.branching == 0 {
            return Err(EnvError::UnsatisfiableConfig("num_actions and branching must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.terminal_mass) {
            return Err(EnvError::UnsatisfiableConfig("terminal_mass must lie in [0, 1]".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(EnvError::UnsatisfiableConfig("discount must lie in (0, 1]".into()));
        }
        if self.reward_scale < 0.0 || !self.reward_scale.is_finite() {
            return Err(EnvError::UnsatisfiableConfig("reward_scale must be non-negative".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::UnsatisfiableConfig("horizon must be positive".into()));
        }
        if self.discount == 1.0 && self.horizon < self.num_states - 1 {
            return Err(EnvError::UnsatisfiableConfig(format!(
                "discount 1 needs horizon >= {} for {} states",
                self.num_states - 1,
                self.num_states
            )));
        }
        Ok(())
    }
}

/// Generate a validated MDP, deterministic in the seed.
pub fn random_mdp(config: &RandomMdpConfig) -> Result<TabularMdp, EnvError> {
    config.check()?;
    let n = config.num_states;
    let terminal_state = n - 1;
    let mut rng = CounterRng::new(config.seed, 0);
    let mut transition = vec![vec![vec![0.0; n]; config.num_actions]; n];
    let mut reward = vec![vec![vec![0.0; n]; config.num_actions]; n];

    for s in 0..n {
        for a in 0..config.num_actions {
            if s == terminal_state {
                transition[s][a][s] = 1.0;
                continue;
            }
            let candidates: Vec<usize> = if config.discount == 1.0 {
                // strictly forward targets keep the support graph acyclic
                (s + 1..n).collect()
            } else {
                (0..n).collect()
            };
            let mut pool = candidates;
            let picks = config.branching.min(pool.len());
            let mut row = vec![0.0; n];
            let mut total = 0.0;
            for _ in 0..picks {
                let idx = rng.below(pool.len());
                let target = pool.swap_remove(idx);
                // shifted-exponential weights keep every chosen entry
                // well away from the reachability threshold
                let w = 1.0 - (1.0 - rng.next_unit()).ln();
                row[target] += w;
                total += w;
            }
            let branch_mass = 1.0 - config.terminal_mass;
            for sp in 0..n {
                transition[s][a][sp] = branch_mass * row[sp] / total;
            }
            transition[s][a][terminal_state] += config.terminal_mass;
            // exact renormalization absorbs rounding slack
            let sum: f64 = transition[s][a].iter().sum();
            for p in &mut transition[s][a] {
                *p /= sum;
            }
            for sp in 0..n {
                if transition[s][a][sp] > 0.0 && config.reward_scale > 0.0 {
                    reward[s][a][sp] = rng.uniform(-config.reward_scale, config.reward_scale);
                }
            }
        }
    }

    let mut terminal = vec![false; n];
    terminal[terminal_state] = true;
    Ok(TabularMdp::new(
        n,
        config.num_actions,
        config.discount,
        config.horizon,
        terminal,
        transition,
        reward,
    )?)
}

/// Position chain with actions advancing one or two cells and a slip
/// probability executing the other action's move instead. The final cell
/// is terminal; arriving there pays `reward_at_end`.
pub fn chain_mdp(
    length: usize,
    slip: f64,
    reward_at_end: f64,
    discount: f64,
    horizon: usize,
) -> Result<TabularMdp, EnvError> {
    if length < 2 {
        return Err(EnvError::UnsatisfiableConfig("chain needs length >= 2".into()));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(EnvError::UnsatisfiableConfig("slip must lie in [0, 1)".into()));
    }
    let n = length;
    let end = n - 1;
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    let mut reward = vec![vec![vec![0.0; n]; 2]; n];
    for p in 0..n {
        for a in 0..2 {
            if p == end {
                transition[p][a][p] = 1.0;
                continue;
            }
            let intended = (p + a + 1).min(end);
            let slipped = (p + (1 - a) + 1).min(end);
            transition[p][a][intended] += 1.0 - slip;
            transition[p][a][slipped] += slip;
            for sp in 0..n {
                if sp == end && transition[p][a][sp] > 0.0 {
                    reward[p][a][sp] = reward_at_end;
                }
            }
        }
    }
    let mut terminal = vec![false; n];
    terminal[end] = true;
    Ok(TabularMdp::new(n, 2, discount, horizon, terminal, transition, reward)?)
}
