use super::gradient::{dp_constraint_gradients, eqopt_constraint_gradients, objective_gradient};
use super::*;
use crate::datagen::random_spec;
use crate::mdp::{
    action_marginal, eqopt_conditional, forward_occupancy, GroupModel, ProblemSpec, RewardModel, StateSpace,
    TransitionKernel,
};
use alloc::vec;
use alloc::vec::Vec;

fn model(seed: u64, groups: usize, features: usize, horizon: usize) -> PlanningModel {
    random_spec(seed, groups, features, horizon).unwrap().planning_model()
}

fn theta(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = crate::rng::StreamRng::new(seed, 99);
    (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()
}

fn params(m: &PlanningModel) -> usize {
    m.group_count() * m.space.horizon() * m.space.features()
}

#[test]
fn adjoint_matches_central_differences() {
    let m = model(3, 2, 3, 4);
    let x = theta(1, params(&m), 0.1, 0.9);
    let (_, grad) = objective_gradient(&m, &x);
    let f = |t: &[f64]| gradient::forward(&m, t).objective;
    for i in 0..x.len() {
        let mut up = x.clone();
        let mut down = x.clone();
        up[i] += 1e-6;
        down[i] -= 1e-6;
        let fd = (f(&up) - f(&down)) / 2e-6;
        assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
    }
    for (ps, _, g) in dp_constraint_gradients(&m, &x) {
        let value = |t: &[f64]| {
            let occ = forward_occupancy(&Policy::new(2, m.space, t.to_vec()).unwrap(), &m.kernels).unwrap();
            action_marginal(&occ, ps.first, ps.h) - action_marginal(&occ, ps.second, ps.h)
        };
        for i in 0..x.len() {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += 1e-6;
            down[i] -= 1e-6;
            let fd = (value(&up) - value(&down)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }
    let reference = x.clone();
    for (ps, v, g) in eqopt_constraint_gradients(&m, &x, &reference) {
        let occ = forward_occupancy(&Policy::new(2, m.space, x.clone()).unwrap(), &m.kernels).unwrap();
        let ratio = eqopt_conditional(&occ, ps.first, ps.h).unwrap() - eqopt_conditional(&occ, ps.second, ps.h).unwrap();
        // at the reference point the normalized cross product is the ratio gap
        assert!((v - ratio).abs() < 1e-12);
        assert_eq!(g.len(), x.len());
    }
}

#[test]
fn vacuous_bounds_match_unconstrained() {
    for seed in 0..4 {
        let m = model(seed, 2, 2, 3);
        let eta = 0.1;
        let free = solve_unconstrained(&m, eta).unwrap();
        for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
            let p = SolveProblem::constrained(m.clone(), fairness, vec![1.0; 3], eta);
            let r = solve_constrained(&p).unwrap();
            assert_eq!(r.status, SolveStatus::Feasible);
            assert!((r.objective - free.objective).abs() < 1e-6, "{} vs {}", r.objective, free.objective);
            assert!(r.policy.in_class(eta));
        }
    }
}

#[test]
fn identical_groups_give_symmetric_optimum() {
    let base = random_spec(8, 1, 3, 3).unwrap();
    let mut g1 = base.groups()[0].clone();
    g1.proportion = 0.5;
    let mut g2 = g1.clone();
    g2.id = "twin".into();
    let spec = ProblemSpec::new(base.space(), vec![g1, g2]).unwrap();
    let m = spec.planning_model();
    let free = solve_unconstrained(&m, 0.05).unwrap();
    let p = SolveProblem::constrained(m.clone(), Fairness::DemographicParity, vec![0.0; 3], 0.05);
    let r = solve_constrained(&p).unwrap();
    assert_eq!(r.status, SolveStatus::Feasible);
    assert!(r.objective >= free.objective - 1e-6);
    assert_eq!(fairness_gaps(&m, &free.policy, Fairness::DemographicParity), vec![0.0; 3]);
}

#[test]
fn all_accept_is_always_feasible() {
    let m = model(5, 3, 2, 3);
    for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
        let mut p = SolveProblem::constrained(m.clone(), fairness, vec![0.0; 3], 0.2);
        p.settings.restarts = 2;
        let r = solve_constrained(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Feasible);
        assert!(r.max_violation <= p.settings.feasibility_tolerance);
    }
}

#[test]
fn penalty_limits() {
    let m = model(11, 2, 2, 3);
    let free = solve_unconstrained(&m, 0.1).unwrap();
    for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
        let r = solve_penalty(&SolveProblem::penalized(m.clone(), fairness, 0.0, 0.1)).unwrap();
        assert!((r.objective - free.objective).abs() < 1e-6);
    }
    let base = random_spec(2, 1, 2, 3).unwrap();
    let mut g1 = base.groups()[0].clone();
    g1.proportion = 0.5;
    let spec = ProblemSpec::new(base.space(), vec![g1.clone(), g1]).unwrap();
    let sym = spec.planning_model();
    for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
        let r = solve_penalty(&SolveProblem::penalized(sym.clone(), fairness, 1e6, 0.1)).unwrap();
        assert!(r.max_violation <= 1e-3, "{}", r.max_violation);
    }
}

#[test]
fn restarts_are_deterministic() {
    let m = model(21, 2, 3, 4);
    let p = SolveProblem::constrained(m, Fairness::EqualOpportunity, vec![0.05; 4], 0.1);
    assert_eq!(solve_constrained(&p).unwrap(), solve_constrained(&p).unwrap());
}

#[test]
fn unconstrained_matches_backward_induction_when_y_is_fixed() {
    // every state is qualified, so x determines the state
    let space = StateSpace::new(3, 4).unwrap();
    let s = space.states();
    let mut groups = Vec::new();
    let mut rng = crate::rng::StreamRng::new(4, 4);
    for g in 0..2 {
        let mut init = vec![0.0; s];
        for x in 0..3 {
            init[space.state(x, 1)] = 1.0 / 3.0;
        }
        let mut table = vec![0.0; s * 2 * s];
        for row in 0..s * 2 {
            let w: Vec<f64> = (0..3).map(|_| rng.uniform() + 0.1).collect();
            let t: f64 = w.iter().sum();
            for x in 0..3 {
                table[row * s + space.state(x, 1)] = w[x] / t;
            }
        }
        let reward = RewardModel::new(s, (0..2 * s).map(|_| rng.uniform()).collect()).unwrap();
        groups.push(GroupModel {
            id: alloc::format!("{g}"),
            proportion: 0.5,
            kernel: TransitionKernel::for_group(g, s, init, table).unwrap(),
            reward,
        });
    }
    let spec = ProblemSpec::new(space, groups).unwrap();
    let m = spec.planning_model();
    let r = solve_unconstrained(&m, 0.0).unwrap();
    let mut want = 0.0;
    for g in 0..2 {
        let k = &m.kernels[g];
        let mut v = vec![0.0; s];
        for _h in (0..4).rev() {
            let next: Vec<f64> = (0..s)
                .map(|st| {
                    (0..2)
                        .map(|a| m.rewards[g][st * 2 + a] + k.row(st, a).iter().zip(&v).map(|(p, w)| p * w).sum::<f64>())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            v = next;
        }
        want += m.proportions[g] * k.initial().iter().zip(&v).map(|(p, w)| p * w).sum::<f64>();
    }
    assert!((r.objective - want).abs() < 1e-12);
    assert!(r.policy.params().iter().all(|&p| p == 0.0 || p == 1.0));
}

#[test]
fn unconstrained_matches_endpoint_enumeration() {
    for seed in 0..5 {
        let m = model(100 + seed, 2, 2, 2);
        let r = solve_unconstrained(&m, 0.1).unwrap();
        let o = brute_force_oracle(&m, 0.1, &OracleTarget::Unconstrained, 1.0).unwrap();
        assert!((r.objective - o.objective).abs() < 1e-12);
    }
}

#[test]
fn sweeps_agree_with_enumeration_on_moderate_instances() {
    // 2 x 9 = 18 parameters per group, past the enumeration limit
    let m = model(9, 1, 2, 9);
    let r = solve_unconstrained(&m, 0.05).unwrap();
    let (lo, hi) = (0.05, 0.95);
    let n = 18;
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let t: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { hi } else { lo }).collect();
        best = best.max(gradient::forward(&m, &t).objective);
    }
    assert!(r.objective >= best - 1e-9, "{} < {best}", r.objective);
}

#[test]
fn oracle_grid_and_budget() {
    assert_eq!(grid_values(0.5, 0.1).unwrap(), vec![0.1, 0.5, 0.9]);
    assert_eq!(grid_values(1.0, 0.0).unwrap(), vec![0.0, 1.0]);
    let m = model(1, 1, 1, 1);
    let o = brute_force_oracle(&m, 0.1, &OracleTarget::Unconstrained, 0.5).unwrap();
    let best = [0.1, 0.5, 0.9]
        .iter()
        .map(|&p| gradient::forward(&m, &[p]).objective)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(o.objective, best);
    let big = model(1, 2, 3, 2);
    assert_eq!(
        brute_force_oracle(&big, 0.1, &OracleTarget::Unconstrained, 0.5).unwrap_err(),
        Error::BudgetExceeded {
            parameters: 12,
            limit: ORACLE_PARAMETER_LIMIT
        }
    );
}

#[test]
fn oracle_respects_bound_by_independent_check() {
    let m = model(31, 2, 2, 2);
    let target = OracleTarget::Constrained {
        fairness: Fairness::DemographicParity,
        bounds: vec![0.05, 0.05],
    };
    let o = brute_force_oracle(&m, 0.0, &target, 0.1).unwrap();
    let occ = forward_occupancy(&o.policy, &m.kernels).unwrap();
    for h in 0..2 {
        assert!((action_marginal(&occ, 0, h) - action_marginal(&occ, 1, h)).abs() <= 0.05 + 1e-12);
    }
}

#[test]
fn degenerate_eqopt_is_refused() {
    let space = StateSpace::new(1, 2).unwrap();
    let unqualified = |g| {
        let kernel = TransitionKernel::for_group(g, 2, vec![1.0, 0.0], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        GroupModel {
            id: alloc::format!("{g}"),
            proportion: 0.5,
            kernel,
            reward: RewardModel::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap(),
        }
    };
    let m = ProblemSpec::new(space, vec![unqualified(0), unqualified(1)]).unwrap().planning_model();
    let p = SolveProblem::constrained(m, Fairness::EqualOpportunity, vec![0.1, 0.1], 0.1);
    assert!(matches!(solve_constrained(&p), Err(Error::DegenerateConditioning { group: 0, step: 0, .. })));
}

#[test]
fn invalid_problems_rejected() {
    let m = model(1, 2, 2, 2);
    assert!(solve_unconstrained(&m, 0.5).is_err());
    let p = SolveProblem::constrained(m.clone(), Fairness::DemographicParity, vec![0.1], 0.1);
    assert!(matches!(solve_constrained(&p), Err(Error::Shape { .. })));
    let p = SolveProblem::penalized(m.clone(), Fairness::DemographicParity, -1.0, 0.1);
    assert!(solve_penalty(&p).is_err());
    let p = SolveProblem::penalized(m, Fairness::DemographicParity, 1.0, 0.1);
    assert!(solve_constrained(&p).is_err());
}

#[test]
fn zero_qualify_row_is_not_degenerate_inside_box() {
    // from (x=0, y=1) accepting always leads to y = 0, rejecting keeps y = 1
    let space = StateSpace::new(1, 3).unwrap();
    let group = |g| {
        let kernel = TransitionKernel::for_group(
            g,
            2,
            vec![0.0, 1.0],
            vec![0.5, 0.5, 0.5, 0.5, 0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        GroupModel {
            id: alloc::format!("{g}"),
            proportion: 0.5,
            kernel,
            reward: RewardModel::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap(),
        }
    };
    let m = ProblemSpec::new(space, vec![group(0), group(1)]).unwrap().planning_model();
    let p = SolveProblem::constrained(m.clone(), Fairness::EqualOpportunity, vec![0.1; 3], 0.1);
    assert!(solve_constrained(&p).is_ok());
    let p = SolveProblem::constrained(m, Fairness::EqualOpportunity, vec![0.1; 3], 0.0);
    assert!(matches!(solve_constrained(&p), Err(Error::DegenerateConditioning { step: 1, .. })));
}
