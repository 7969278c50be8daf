//! Acceptance suite: every release-gating check, one test per criterion,
//! each printing a pass line with its runtime (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Exact-mode identities are asserted with slack 1e-10 (1e-12 where the
//! quantities are plain re-walks of the same arithmetic); sampling checks
//! are diagnostics at four standard errors with a second-seed retry.

use hcalab_core::analysis::{
    cross_action_covariance_check_over, empirical_moments, exact_moments_over,
    pg_update_variance_over, variance_decomposition_over, Conditioning, PgConfig,
};
use hcalab_core::envs::{figure1_mdp, random_mdp, RandomMdpConfig};
use hcalab_core::estimator::{evaluate, EstimatorInputs, EstimatorKind};
use hcalab_core::mdp::{load_mdp, Policy, SoftmaxPolicy, TabularMdp, ValueFunction};
use hcalab_core::oracle::{bellman_residual, OracleBundle};
use hcalab_core::perturb::{sweep, PerturbMode, PerturbSpec, PerturbTarget};
use hcalab_core::rng::CounterRng;
use hcalab_core::trajectory::{
    enumerate_trajectories, sample_trajectory, WeightedTrajectory, ENUMERATION_CAP,
};
use std::time::Instant;

const EXACT_TOL: f64 = 1e-10;
const CROSS_CHECK_TOL: f64 = 1e-12;
const N_MAX: usize = 5;

struct Instance {
    id: String,
    mdp: TabularMdp,
    policy: Policy,
    params: SoftmaxPolicy,
}

/// Fifty seeded instances spanning 4-6 states, 2-3 actions, discounted
/// and undiscounted dynamics, uniform and softmax policies.
fn suite_instances() -> Vec<Instance> {
    let mut out = Vec::new();
    for i in 0..50u64 {
        let num_states = 4 + (i as usize % 3);
        let num_actions = if i % 5 == 0 { 3 } else { 2 };
        let discount = [1.0, 0.95, 0.9, 0.5][i as usize % 4];
        let config = RandomMdpConfig {
            num_states,
            num_actions,
            branching: 2,
            reward_scale: 1.5,
            terminal_mass: [0.0, 0.1, 0.25, 0.4][i as usize % 4],
            discount,
            horizon: 6,
            seed: 0xACC0 + i,
        };
        let mdp = random_mdp(&config).expect("suite config is satisfiable");
        let params = if i % 2 == 0 {
            SoftmaxPolicy::new(vec![vec![0.0; num_actions]; num_states]).unwrap()
        } else {
            let mut rng = CounterRng::new(0xACC0 + i, 7);
            SoftmaxPolicy::new(
                (0..num_states)
                    .map(|_| (0..num_actions).map(|_| rng.uniform(-0.8, 0.8)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let policy = params.to_policy();
        out.push(Instance { id: format!("random-{i:02}"), mdp, policy, params });
    }
    out
}

fn random_value_function(mdp: &TabularMdp, seed: u64) -> ValueFunction {
    let mut rng = CounterRng::new(seed, 3);
    let values = (0..mdp.num_states)
        .map(|s| if mdp.terminal[s] { 0.0 } else { rng.uniform(-2.0, 2.0) })
        .collect();
    ValueFunction::new(values, mdp).unwrap()
}

fn enumerate_state(
    mdp: &TabularMdp,
    policy: &Policy,
    state: usize,
    depth: usize,
) -> Vec<WeightedTrajectory> {
    enumerate_trajectories(mdp, policy, state, depth, ENUMERATION_CAP).expect("suite scale")
}

#[test]
fn criterion_01_figure1_reproduction() {
    let started = Instant::now();
    let fixture_path =
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/figure1.json");
    let mdp = load_mdp(&fixture_path).expect("committed fixture loads");
    let (built, policy) = figure1_mdp();
    assert_eq!(mdp, built, "fixture must match the builtin instance");

    let oracle = OracleBundle::build(&mdp, &policy, 3).unwrap();
    let v = oracle.v.clone();
    let inputs = EstimatorInputs::new(&policy, &v, &oracle, 3, mdp.discount).unwrap();
    let trajs = enumerate_state(&mdp, &policy, 0, 3);

    let mc = exact_moments_over(&trajs, 0, &inputs, EstimatorKind::Mc).unwrap();
    let hca = exact_moments_over(&trajs, 0, &inputs, EstimatorKind::Hca).unwrap();
    let dh = exact_moments_over(&trajs, 0, &inputs, EstimatorKind::DeltaHca).unwrap();
    for a in 0..2 {
        assert!(mc.variance[a].abs() <= 1e-12, "Var(mc)[{a}] = {}", mc.variance[a]);
        assert!((hca.variance[a] - 1.0).abs() <= 1e-12, "Var(hca)[{a}] = {}", hca.variance[a]);
        assert!(dh.variance[a].abs() <= 1e-12, "Var(delta)[{a}] = {}", dh.variance[a]);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("[acceptance] criterion 01 figure1 reproduction: PASS ({elapsed:?})");
}

#[test]
fn criterion_02_mean_equality_for_arbitrary_value_estimates() {
    let started = Instant::now();
    let mut cells = 0usize;
    for instance in suite_instances() {
        let Instance { mdp, policy, .. } = &instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        let mut v_hats = vec![oracle.v.clone()];
        for j in 0..3 {
            v_hats.push(random_value_function(mdp, 0xBEE5 + 101 * j));
        }
        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            for v_hat in &v_hats {
                for n in 1..=N_MAX {
                    let inputs =
                        EstimatorInputs::new(policy, v_hat, &oracle, n, mdp.discount).unwrap();
                    let mc =
                        exact_moments_over(&trajs, s, &inputs, EstimatorKind::Mc).unwrap();
                    let dh =
                        exact_moments_over(&trajs, s, &inputs, EstimatorKind::DeltaHca).unwrap();
                    for a in 0..mdp.num_actions {
                        let gap = (mc.mean[a] - dh.mean[a]).abs();
                        assert!(
                            gap <= EXACT_TOL,
                            "{}: mean gap {gap} at (s={s}, a={a}, n={n})",
                            instance.id
                        );
                        cells += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!("[acceptance] criterion 02 mean equality ({cells} cells): PASS ({elapsed:?})");
}

#[test]
fn criterion_03_variance_ordering_with_exact_values() {
    let started = Instant::now();
    let mut cells = 0usize;
    for instance in suite_instances() {
        let Instance { mdp, policy, .. } = &instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        let v = oracle.v.clone();
        assert!(bellman_residual(mdp, policy, &v) <= 1e-10, "{}: residual", instance.id);
        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            for n in 1..=N_MAX {
                let inputs = EstimatorInputs::new(policy, &v, &oracle, n, mdp.discount).unwrap();
                let mc = exact_moments_over(&trajs, s, &inputs, EstimatorKind::Mc).unwrap();
                let dh = exact_moments_over(&trajs, s, &inputs, EstimatorKind::DeltaHca).unwrap();
                for a in 0..mdp.num_actions {
                    assert!(
                        dh.variance[a] <= mc.variance[a] + EXACT_TOL,
                        "{}: Var(delta)={} > Var(mc)={} at (s={s}, a={a}, n={n})",
                        instance.id,
                        dh.variance[a],
                        mc.variance[a]
                    );
                    cells += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60 s");
    println!("[acceptance] criterion 03 variance ordering ({cells} cells): PASS ({elapsed:?})");
}

#[test]
fn criterion_04_cross_terms_vanish_and_variance_reassembles() {
    let started = Instant::now();
    for instance in suite_instances() {
        let Instance { mdp, policy, .. } = &instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        let v = oracle.v.clone();
        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            let inputs = EstimatorInputs::new(policy, &v, &oracle, N_MAX, mdp.discount).unwrap();
            for kind in [EstimatorKind::Mc, EstimatorKind::DeltaHca] {
                for report in
                    variance_decomposition_over(&trajs, s, &inputs, kind).unwrap()
                {
                    for row in &report.cross_terms {
                        for &x in row {
                            assert!(
                                x.abs() <= EXACT_TOL,
                                "{}: cross term {x} ({kind}, s={s}, a={})",
                                instance.id,
                                report.action
                            );
                        }
                    }
                    // with vanishing cross terms the diagonal must carry
                    // the whole variance
                    let mut diagonal = 0.0;
                    let mut weight = 1.0;
                    let g2 = mdp.discount * mdp.discount;
                    for &term in &report.per_k_variance {
                        diagonal += weight * term;
                        weight *= g2;
                    }
                    assert!(
                        (report.total - diagonal).abs() <= EXACT_TOL,
                        "{}: total {} vs per-step sum {diagonal} ({kind}, s={s}, a={})",
                        instance.id,
                        report.total,
                        report.action
                    );
                    assert!((report.total - report.assembled).abs() <= EXACT_TOL);
                }
            }
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 04 uncorrelated decomposition: PASS ({elapsed:?})");
}

#[test]
fn criterion_05_covariance_identities_and_two_action_update_ordering() {
    let started = Instant::now();
    for instance in suite_instances() {
        let Instance { mdp, policy, params, .. } = &instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        let v = oracle.v.clone();
        let pg = PgConfig::new(0.1, params.clone()).unwrap();
        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            let inputs = EstimatorInputs::new(policy, &v, &oracle, N_MAX, mdp.discount).unwrap();
            let report =
                cross_action_covariance_check_over(&trajs, mdp, s, &inputs).unwrap();
            assert!(
                report.max_mc_error <= EXACT_TOL,
                "{}: mc covariance error {} at s={s}",
                instance.id,
                report.max_mc_error
            );
            assert!(
                report.max_delta_error <= EXACT_TOL,
                "{}: delta covariance error {} at s={s}",
                instance.id,
                report.max_delta_error
            );
            assert!(
                report.min_ordering_slack >= -EXACT_TOL,
                "{}: delta covariance below mc covariance by {} at s={s}",
                instance.id,
                -report.min_ordering_slack
            );
            if mdp.num_actions == 2 {
                let mc =
                    pg_update_variance_over(&trajs, &pg, s, &inputs, EstimatorKind::Mc).unwrap();
                let dh =
                    pg_update_variance_over(&trajs, &pg, s, &inputs, EstimatorKind::DeltaHca)
                        .unwrap();
                assert!(
                    dh.total_trace <= mc.total_trace + EXACT_TOL,
                    "{}: update trace {} > {} at s={s}",
                    instance.id,
                    dh.total_trace,
                    mc.total_trace
                );
            }
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 05 covariance identities: PASS ({elapsed:?})");
}

#[test]
fn criterion_06_update_variance_assembly_matches_direct_enumeration() {
    let started = Instant::now();
    let instances = suite_instances();
    let mut checked = 0usize;
    // twenty softmax-parameterized instances, arbitrary value estimates
    for instance in instances.iter().filter(|i| !i.params.params.iter().flatten().all(|&x| x == 0.0)).take(20) {
        let Instance { mdp, policy, params, .. } = instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        let pg = PgConfig::new(0.05, params.clone()).unwrap();
        let v_hats = [oracle.v.clone(), random_value_function(mdp, 0xE6 + checked as u64)];
        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            for v_hat in &v_hats {
                let inputs =
                    EstimatorInputs::new(policy, v_hat, &oracle, N_MAX, mdp.discount).unwrap();
                for kind in [EstimatorKind::Mc, EstimatorKind::DeltaHca] {
                    let report =
                        pg_update_variance_over(&trajs, &pg, s, &inputs, kind).unwrap();
                    assert!(
                        report.max_route_error <= EXACT_TOL,
                        "{}: route gap {} ({kind}, s={s})",
                        instance.id,
                        report.max_route_error
                    );
                    for (i, row) in report.per_coordinate_variance.iter().enumerate() {
                        for &x in row {
                            assert!(x >= -1e-12);
                            // only the conditioned state's row can move
                            if i != s {
                                assert_eq!(x, 0.0);
                            }
                        }
                    }
                }
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 20, "need twenty softmax instances");
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 06 update-variance assembly: PASS ({elapsed:?})");
}

/// Policy-averaged one-step model, derived directly from the tensors.
fn policy_avg(mdp: &TabularMdp, policy: &Policy) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = mdp.num_states;
    let mut p = vec![vec![0.0; n]; n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let pa = policy.prob(s, a);
            for sp in 0..n {
                p[s][sp] += pa * mdp.transition[s][a][sp];
                r[s] += pa * mdp.transition[s][a][sp] * mdp.reward[s][a][sp];
            }
        }
    }
    (p, r)
}

/// Expected TD error per state, recomputed from scratch in test code.
fn resid_vec(mdp: &TabularMdp, policy: &Policy, v_hat: &ValueFunction) -> Vec<f64> {
    let (p, r) = policy_avg(mdp, policy);
    (0..mdp.num_states)
        .map(|s| {
            let mut acc = r[s] - v_hat.value(s);
            for sp in 0..mdp.num_states {
                acc += mdp.discount * p[s][sp] * v_hat.value(sp);
            }
            acc
        })
        .collect()
}

/// First-step expected TD error conditioned on the action.
fn first_step_td(mdp: &TabularMdp, v_hat: &ValueFunction, s: usize, a: usize) -> f64 {
    let mut acc = -v_hat.value(s);
    for sp in 0..mdp.num_states {
        acc += mdp.transition[s][a][sp]
            * (mdp.reward[s][a][sp] + mdp.discount * v_hat.value(sp));
    }
    acc
}

#[test]
fn criterion_07_oracle_cross_checks() {
    let started = Instant::now();
    for instance in suite_instances() {
        let Instance { mdp, policy, .. } = &instance;
        let oracle = OracleBundle::build(mdp, policy, N_MAX).unwrap();
        // Bayes identity and normalization at build tolerance
        assert!(oracle.invariant_violations(policy).is_empty(), "{}", instance.id);

        for s in mdp.non_terminal_states() {
            let trajs = enumerate_state(mdp, policy, s, N_MAX);
            // k-step tables against brute-force path sums
            for k in 1..=N_MAX {
                for a in 0..mdp.num_actions {
                    for sp in 0..mdp.num_states {
                        let mut joint = 0.0;
                        let mut marginal = 0.0;
                        for wt in &trajs {
                            if wt.trajectory.state_at(k).unwrap() != sp {
                                continue;
                            }
                            marginal += wt.probability;
                            if wt.trajectory.action_at(0).unwrap() == a {
                                joint += wt.probability;
                            }
                        }
                        joint /= policy.prob(s, a);
                        assert!(
                            (oracle.kstep_joint[k - 1][s][a][sp] - joint).abs()
                                <= CROSS_CHECK_TOL,
                            "{}: joint mismatch at (k={k}, s={s}, a={a}, s'={sp})",
                            instance.id
                        );
                        if a == 0 {
                            assert!(
                                (oracle.kstep_marginal[k - 1][s][sp] - marginal).abs()
                                    <= CROSS_CHECK_TOL,
                                "{}: marginal mismatch at (k={k}, s={s}, s'={sp})",
                                instance.id
                            );
                        }
                    }
                }
            }
            // enumerated estimator means against closed-form dynamic programming
            let v_hat = random_value_function(mdp, 0xD1CE + s as u64);
            let resid = resid_vec(mdp, policy, &v_hat);
            let n = 3;
            let inputs = EstimatorInputs::new(policy, &v_hat, &oracle, n, mdp.discount).unwrap();
            let mc = exact_moments_over(&trajs, s, &inputs, EstimatorKind::Mc).unwrap();
            let dh = exact_moments_over(&trajs, s, &inputs, EstimatorKind::DeltaHca).unwrap();
            for a in 0..mdp.num_actions {
                let mut mc_dp = first_step_td(mdp, &v_hat, s, a);
                let mut weight = 1.0;
                for k in 1..n {
                    weight *= mdp.discount;
                    let mut term = 0.0;
                    for x in 0..mdp.num_states {
                        term += oracle.kstep_joint[k - 1][s][a][x] * resid[x];
                    }
                    mc_dp += weight * term;
                }
                assert!(
                    (mc.mean[a] - mc_dp).abs() <= CROSS_CHECK_TOL,
                    "{}: mc mean {} vs dp {mc_dp} (s={s}, a={a})",
                    instance.id,
                    mc.mean[a]
                );

                let mut dh_dp = first_step_td(mdp, &v_hat, s, a);
                let mut weight = 1.0;
                for k in 1..n {
                    weight *= mdp.discount;
                    let mut term = 0.0;
                    for x in 0..mdp.num_states {
                        let mass = oracle.kstep_marginal[k - 1][s][x];
                        if mass <= 1e-15 {
                            continue;
                        }
                        term += mass * oracle.hindsight.get(k, s, x, a).unwrap()
                            / policy.prob(s, a)
                            * resid[x];
                    }
                    dh_dp += weight * term;
                }
                assert!(
                    (dh.mean[a] - dh_dp).abs() <= CROSS_CHECK_TOL,
                    "{}: delta mean {} vs dp {dh_dp} (s={s}, a={a})",
                    instance.id,
                    dh.mean[a]
                );
            }
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 07 oracle cross-checks: PASS ({elapsed:?})");
}

fn sampling_consistent(
    mdp: &TabularMdp,
    policy: &Policy,
    oracle: &OracleBundle,
    state: usize,
    seed: u64,
) -> Result<(), String> {
    let v = oracle.v.clone();
    let n = 3;
    let samples_per_cell = 100_000;
    let inputs = EstimatorInputs::new(policy, &v, oracle, n, mdp.discount).unwrap();
    let trajs = enumerate_state(mdp, policy, state, n);
    for kind in [EstimatorKind::Mc, EstimatorKind::Hca, EstimatorKind::DeltaHca] {
        let exact = exact_moments_over(&trajs, state, &inputs, kind).unwrap();
        let samples: Vec<_> = (0..samples_per_cell)
            .map(|i| {
                let traj = sample_trajectory(mdp, policy, state, mdp.horizon, seed, i).unwrap();
                evaluate(kind, &traj, 0, &inputs).unwrap()
            })
            .collect();
        let conditioning = Conditioning { state, t: 0, n_steps: n, estimator: kind };
        let empirical = empirical_moments(&samples, conditioning).unwrap();
        for a in 0..mdp.num_actions {
            let mean_gap = (empirical.mean[a] - exact.mean[a]).abs();
            let mean_bound = 4.0 * empirical.mean_stderr.as_ref().unwrap()[a] + 1e-12;
            if mean_gap > mean_bound {
                return Err(format!(
                    "mean gap {mean_gap} > {mean_bound} ({kind}, a={a}, seed {seed})"
                ));
            }
            let var_gap = (empirical.variance[a] - exact.variance[a]).abs();
            let var_bound = 4.0 * empirical.variance_stderr.as_ref().unwrap()[a] + 1e-12;
            if var_gap > var_bound {
                return Err(format!(
                    "variance gap {var_gap} > {var_bound} ({kind}, a={a}, seed {seed})"
                ));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_08_sampling_agrees_with_exact_moments() {
    let started = Instant::now();
    let (fig_mdp, fig_policy) = figure1_mdp();
    let mut cases = vec![("figure1".to_string(), fig_mdp, fig_policy)];
    for instance in suite_instances().into_iter().take(5) {
        cases.push((instance.id, instance.mdp, instance.policy));
    }
    for (id, mdp, policy) in cases {
        let oracle = OracleBundle::build(&mdp, &policy, 3).unwrap();
        let state = mdp.non_terminal_states()[0];
        // diagnostic at 4 standard errors; retry once with a fresh seed
        // before declaring a defect
        if let Err(first) = sampling_consistent(&mdp, &policy, &oracle, state, 0x5A17) {
            eprintln!("[acceptance] {id}: first sampling pass failed ({first}), retrying");
            sampling_consistent(&mdp, &policy, &oracle, state, 0x5A18)
                .unwrap_or_else(|second| panic!("{id}: sampling inconsistent twice: {second}"));
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 08 sampling consistency: PASS ({elapsed:?})");
}

#[test]
fn criterion_09_single_step_estimators_coincide_exactly() {
    let started = Instant::now();
    let instances = suite_instances();
    let mut triples = 0usize;
    let mut rng = CounterRng::new(0x91, 0);
    'outer: for round in 0.. {
        for (idx, instance) in instances.iter().enumerate() {
            let Instance { mdp, policy, .. } = instance;
            let oracle = OracleBundle::build(mdp, policy, 1).unwrap();
            let v_hat = random_value_function(mdp, 0x0917 + triples as u64);
            let inputs = EstimatorInputs::new(policy, &v_hat, &oracle, 1, mdp.discount).unwrap();
            let start = mdp.non_terminal_states()[0];
            let traj = sample_trajectory(
                mdp,
                policy,
                start,
                mdp.horizon,
                0x7210 + round,
                idx as u64,
            )
            .unwrap();
            if traj.effective_length() == 0 {
                continue;
            }
            let t = rng.below(traj.effective_length());
            let mc = evaluate(EstimatorKind::Mc, &traj, t, &inputs).unwrap();
            let dh = evaluate(EstimatorKind::DeltaHca, &traj, t, &inputs).unwrap();
            assert_eq!(
                mc.per_action, dh.per_action,
                "{}: N=1 estimates differ at t={t}",
                instance.id
            );
            triples += 1;
            if triples >= 1000 {
                break 'outer;
            }
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 09 single-step degeneracy ({triples} triples): PASS ({elapsed:?})");
}

#[test]
fn criterion_10_perturbation_gate() {
    let started = Instant::now();
    let (mdp, policy) = figure1_mdp();
    let oracle = OracleBundle::build(&mdp, &policy, 3).unwrap();
    let v = oracle.v.clone();
    let estimators = [EstimatorKind::Mc, EstimatorKind::DeltaHca];
    let epsilons = [0.0, 0.01, 0.05, 0.1];
    let grid: Vec<PerturbSpec> = epsilons
        .iter()
        .map(|&epsilon| PerturbSpec {
            epsilon,
            target: PerturbTarget::ValueFunction,
            mode: PerturbMode::AdditiveNoise,
            seed: 0xF00D,
        })
        .collect();
    let rows = sweep(&mdp, &policy, 0, &oracle, &v, 3, &estimators, &grid).unwrap();

    // the zero-epsilon rows must equal the unperturbed moments bit-for-bit
    let trajs = enumerate_state(&mdp, &policy, 0, 3);
    let inputs = EstimatorInputs::new(&policy, &v, &oracle, 3, mdp.discount).unwrap();
    for row in rows.iter().filter(|r| r.epsilon == 0.0) {
        let base = exact_moments_over(&trajs, 0, &inputs, row.estimator).unwrap();
        assert_eq!(row.bias, base.mean[row.action] - oracle.adv[0][row.action]);
        assert_eq!(row.variance, base.variance[row.action]);
    }
    // the mean equality survives value perturbation at every epsilon
    for &epsilon in &epsilons {
        for action in 0..2 {
            let mc = rows
                .iter()
                .find(|r| {
                    r.epsilon == epsilon && r.action == action && r.estimator == EstimatorKind::Mc
                })
                .unwrap();
            let dh = rows
                .iter()
                .find(|r| {
                    r.epsilon == epsilon
                        && r.action == action
                        && r.estimator == EstimatorKind::DeltaHca
                })
                .unwrap();
            assert!(
                (mc.bias - dh.bias).abs() <= EXACT_TOL,
                "bias gap {} at epsilon {epsilon}",
                (mc.bias - dh.bias).abs()
            );
        }
    }
    let elapsed = started.elapsed();
    println!("[acceptance] criterion 10 perturbation gate: PASS ({elapsed:?})");
}
