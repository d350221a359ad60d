use fairstep_core::datagen::random_spec;
use fairstep_core::mdp::{action_marginal, eqopt_conditional, forward_occupancy};
use fairstep_core::rng::StreamRng;
use fairstep_core::solver::{
    brute_force_oracle, solve_constrained, solve_penalty, Fairness, OracleTarget, SolveProblem, SolveStatus,
};
use fairstep_core::{PlanningModel, Policy};

fn recheck(model: &PlanningModel, policy: &Policy, fairness: Fairness) -> Vec<f64> {
    let occ = forward_occupancy(policy, &model.kernels).unwrap();
    (0..model.space.horizon())
        .map(|h| {
            let v: Vec<f64> = (0..model.group_count())
                .map(|g| match fairness {
                    Fairness::DemographicParity => action_marginal(&occ, g, h),
                    Fairness::EqualOpportunity => eqopt_conditional(&occ, g, h).unwrap(),
                })
                .collect();
            (v[0] - v[1]).abs()
        })
        .collect()
}

#[test]
fn constrained_solver_tracks_grid_oracle() {
    let mut worst: f64 = 0.0;
    for seed in 0..6u64 {
        let model = random_spec(500 + seed, 2, 2, 2).unwrap().planning_model();
        let mut rng = StreamRng::new(seed, 3);
        let bounds: Vec<f64> = (0..2).map(|_| 0.01 + 0.1 * rng.uniform()).collect();
        for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
            let target = OracleTarget::Constrained {
                fairness,
                bounds: bounds.clone(),
            };
            let oracle = brute_force_oracle(&model, 0.1, &target, 0.1).unwrap();
            let solved = solve_constrained(&SolveProblem::constrained(model.clone(), fairness, bounds.clone(), 0.1)).unwrap();
            assert_eq!(solved.status, SolveStatus::Feasible);
            for (gap, b) in recheck(&model, &solved.policy, fairness).iter().zip(&bounds) {
                assert!(*gap <= b + 1e-4);
            }
            worst = worst.max(oracle.objective - solved.objective);
            assert!(solved.objective >= oracle.objective - 0.02, "{seed} {fairness:?}: {} vs {}", solved.objective, oracle.objective);
        }
    }
    println!("largest shortfall against the 0.1 grid: {worst:.2e}");
}

#[test]
fn penalty_solver_tracks_grid_oracle() {
    for seed in 0..4u64 {
        let model = random_spec(700 + seed, 2, 2, 2).unwrap().planning_model();
        for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
            let target = OracleTarget::Penalized { fairness, lambda: 1.0 };
            let oracle = brute_force_oracle(&model, 0.1, &target, 0.1).unwrap();
            let solved = solve_penalty(&SolveProblem::penalized(model.clone(), fairness, 1.0, 0.1)).unwrap();
            assert!(solved.surrogate >= oracle.surrogate - 0.02, "{} vs {}", solved.surrogate, oracle.surrogate);
        }
    }
}

#[test]
fn bucket_search_agrees_with_naive_pair_scan() {
    let grid = fairstep_core::solver::grid_values(0.25, 0.1).unwrap();
    for seed in 0..3u64 {
        let model = random_spec(900 + seed, 2, 2, 2).unwrap().planning_model();
        for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
            let bounds = vec![0.03, 0.08];
            let target = OracleTarget::Constrained {
                fairness,
                bounds: bounds.clone(),
            };
            let oracle = brute_force_oracle(&model, 0.1, &target, 0.25).unwrap();
            let per_group: Vec<Vec<f64>> = (0..grid.len().pow(4))
                .map(|mut c| {
                    (0..4)
                        .map(|_| {
                            let v = grid[c % grid.len()];
                            c /= grid.len();
                            v
                        })
                        .collect()
                })
                .collect();
            let mut best = f64::NEG_INFINITY;
            for a in &per_group {
                for b in &per_group {
                    let params: Vec<f64> = a.iter().chain(b).copied().collect();
                    let policy = Policy::new(2, model.space, params).unwrap();
                    let gaps = recheck(&model, &policy, fairness);
                    if gaps.iter().zip(&bounds).all(|(g, b)| *g <= b + 1e-12) {
                        best = best.max(model.total_reward(&policy).unwrap());
                    }
                }
            }
            assert!((oracle.objective - best).abs() < 1e-12, "{} vs {best}", oracle.objective);
        }
    }
}
