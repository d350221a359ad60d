//! Exact evaluation checked against path enumeration, a dense (s,a)
//! Markov-chain product, and simulation.

use fairstep_core::datagen::random_spec;
use fairstep_core::mdp::{
    action_marginal, eqopt_conditional, expected_reward_profile, forward_occupancy, value_functions,
};
use fairstep_core::rng::StreamRng;
use fairstep_core::sim::sample_episode;
use fairstep_core::{Policy, ProblemSpec};

fn random_policy(spec: &ProblemSpec, seed: u64) -> Policy {
    let space = spec.space();
    let n = spec.group_count() * space.horizon() * space.features();
    let mut rng = StreamRng::new(seed, 17);
    Policy::new(spec.group_count(), space, (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

/// rho[h][s][a] by summing the probability of every length-H path.
fn enumerate_paths(spec: &ProblemSpec, policy: &Policy, g: usize) -> Vec<Vec<[f64; 2]>> {
    let space = spec.space();
    let (h_max, s_count) = (space.horizon(), space.states());
    let kernel = &spec.groups()[g].kernel;
    let mut rho = vec![vec![[0.0; 2]; s_count]; h_max];
    let paths = (s_count * 2).pow(h_max as u32);
    for code in 0..paths {
        let mut c = code;
        let mut steps = Vec::new();
        for _ in 0..h_max {
            let sa = c % (s_count * 2);
            c /= s_count * 2;
            steps.push((sa / 2, sa % 2));
        }
        let mut p = kernel.initial()[steps[0].0];
        for (h, &(s, a)) in steps.iter().enumerate() {
            if h > 0 {
                let (ps, pa) = steps[h - 1];
                p *= kernel.prob(ps, pa, s);
            }
            p *= policy.action_prob(g, h, s / 2, a);
        }
        for (h, &(s, a)) in steps.iter().enumerate() {
            rho[h][s][a] += p;
        }
    }
    // each path is counted once per step, so rho[h] is already the marginal
    rho
}

#[test]
fn forward_recursion_matches_path_enumeration() {
    for seed in 0..5 {
        let spec = random_spec(seed, 2, 2, 3).unwrap();
        let policy = random_policy(&spec, seed);
        let occ = forward_occupancy(&policy, &spec.kernels()).unwrap();
        for g in 0..2 {
            let rho = enumerate_paths(&spec, &policy, g);
            for h in 0..3 {
                for s in 0..4 {
                    for a in 0..2 {
                        let (x, y) = spec.space().decompose(s);
                        assert!((occ.rho(g, x, y, a, h) - rho[h][s][a]).abs() < 1e-14);
                    }
                }
            }
        }
    }
}

#[test]
fn forward_recursion_matches_dense_chain_product() {
    let spec = random_spec(42, 3, 4, 6).unwrap();
    let policy = random_policy(&spec, 4);
    let occ = forward_occupancy(&policy, &spec.kernels()).unwrap();
    let s_count = spec.space().states();
    let n = 2 * s_count;
    for g in 0..3 {
        let k = &spec.groups()[g].kernel;
        let mut v: Vec<f64> = (0..n)
            .map(|i| k.initial()[i / 2] * policy.action_prob(g, 0, i / 4, i % 2))
            .collect();
        for h in 0..6 {
            for i in 0..n {
                assert!((v[i] - occ.step(g, h)[i]).abs() < 1e-14);
            }
            if h + 1 == 6 {
                break;
            }
            // M[(s,a) -> (s',a')] = p(s'|s,a) pi_{h+1}(a'|x')
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    let m = k.prob(i / 2, i % 2, j / 2) * policy.action_prob(g, h + 1, j / 4, j % 2);
                    next[j] += v[i] * m;
                }
            }
            v = next;
        }
    }
}

#[test]
fn initial_value_equals_total_reward() {
    let spec = random_spec(7, 2, 3, 5).unwrap();
    let policy = random_policy(&spec, 1);
    let model = spec.planning_model();
    let values = value_functions(&policy, &model.kernels, &model.rewards).unwrap();
    let occ = forward_occupancy(&policy, &model.kernels).unwrap();
    let profile = expected_reward_profile(&occ, &model.rewards, &model.proportions).unwrap();
    let total: f64 = (0..2)
        .map(|g| model.proportions[g] * values.initial_value(g, &model.kernels[g]))
        .sum();
    assert!((total - profile.iter().sum::<f64>()).abs() < 1e-13);
}

#[test]
fn simulation_agrees_with_exact_evaluation() {
    let spec = random_spec(11, 2, 3, 4).unwrap();
    let policy = random_policy(&spec, 2);
    let occ = forward_occupancy(&policy, &spec.kernels()).unwrap();
    let n = 40_000;
    let batch = sample_episode(&spec, &policy, &[n, n], None, 5, 1).unwrap();
    for g in 0..2 {
        for h in 0..4 {
            let steps: Vec<_> = batch.groups[g].iter().map(|t| t.steps[h]).collect();
            let accept = steps.iter().filter(|s| s.action == 1).count() as f64 / n as f64;
            let p = action_marginal(&occ, g, h);
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((accept - p).abs() < 4.0 * sd, "accept {g} {h}");
            let qualified: Vec<_> = steps.iter().filter(|s| s.state % 2 == 1).collect();
            let c = eqopt_conditional(&occ, g, h).unwrap();
            let m = qualified.len() as f64;
            let est = qualified.iter().filter(|s| s.action == 1).count() as f64 / m;
            assert!((est - c).abs() < 4.0 * (c * (1.0 - c) / m).sqrt(), "conditional {g} {h}");
        }
    }
}
