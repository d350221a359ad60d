//! Solves the synthetic two-group instance with and without a
//! demographic-parity constraint and prints how return trades against the
//! per-step gap.

use fairstep_core::datagen::{build_synthetic, SyntheticConfig};
use fairstep_core::solver::{fairness_gaps, solve_constrained, solve_unconstrained, Fairness, SolveProblem};

fn main() -> Result<(), fairstep_core::Error> {
    let spec = build_synthetic(&SyntheticConfig::default())?;
    let model = spec.planning_model();
    let horizon = spec.space().horizon();

    let free = solve_unconstrained(&model, 0.0)?;
    let worst = |gaps: Vec<f64>| gaps.into_iter().fold(0.0, f64::max);
    println!(
        "unconstrained  return {:.4}  worst DP gap {:.4}",
        free.objective,
        worst(fairness_gaps(&model, &free.policy, Fairness::DemographicParity))
    );
    for bound in [0.2, 0.1, 0.05, 0.0] {
        let problem = SolveProblem::constrained(model.clone(), Fairness::DemographicParity, vec![bound; horizon], 0.0);
        let r = solve_constrained(&problem)?;
        println!(
            "bound {bound:.2}     return {:.4}  worst DP gap {:.4}  {:?}",
            r.objective,
            worst(fairness_gaps(&model, &r.policy, Fairness::DemographicParity)),
            r.status
        );
    }
    Ok(())
}
