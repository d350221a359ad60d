//! Structural report on a problem instance.

use anyhow::Result;
use fairstep_core::datagen::kernel_report;
use fairstep_core::mdp::{eqopt_parts, forward_occupancy};
use fairstep_core::metrics::{violation_dp, violation_eqopt};
use fairstep_core::{Policy, ProblemSpec};
use serde::Serialize;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GroupCheck {
    pub id: String,
    pub proportion: f64,
    pub min_kernel_entry: f64,
    pub zero_transitions: usize,
    /// `P(y_h = 1)` under the all-accept policy, per step.
    pub qualified_mass: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Report {
    pub features: usize,
    pub horizon: usize,
    pub groups: Vec<GroupCheck>,
    /// Every transition has positive probability, so every state is
    /// reachable from every state-action pair.
    pub strictly_positive: bool,
    pub all_accept_dp_violation: f64,
    /// `None` when some group has no qualified mass at a step.
    pub all_accept_eqopt_violation: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn verify(spec: &ProblemSpec) -> Result<Report> {
    let space = spec.space();
    let all_accept = Policy::constant(spec.group_count(), space, 1.0)?;
    let occ = forward_occupancy(&all_accept, &spec.kernels())?;
    let kernels = kernel_report(spec);
    let mut warnings = Vec::new();
    let groups: Vec<GroupCheck> = spec
        .groups()
        .iter()
        .zip(&kernels)
        .enumerate()
        .map(|(g, (m, k))| {
            let qualified_mass: Vec<f64> = (0..space.horizon()).map(|h| eqopt_parts(&occ, g, h).1).collect();
            if let Some((s, a, n)) = k.zeros.first() {
                warnings.push(format!(
                    "group {:?} has {} zero transitions, first at (s {s}, a {a}) -> s' {n}",
                    m.id,
                    k.zeros.len()
                ));
            }
            GroupCheck {
                id: m.id.clone(),
                proportion: m.proportion,
                min_kernel_entry: k.min_entry,
                zero_transitions: k.zeros.len(),
                qualified_mass,
            }
        })
        .collect();
    let dp = violation_dp(&all_accept, spec)?.mean;
    let eqopt = match violation_eqopt(&all_accept, spec) {
        Ok(v) => Some(v.mean),
        Err(e) => {
            warnings.push(format!("equal opportunity is undefined: {e}"));
            None
        }
    };
    if spec.group_count() < 2 {
        warnings.push("fairness constraints need at least two groups".into());
    }
    Ok(Report {
        features: space.features(),
        horizon: space.horizon(),
        strictly_positive: kernels.iter().all(|k| k.strictly_positive()),
        groups,
        all_accept_dp_violation: dp,
        all_accept_eqopt_violation: eqopt,
        warnings,
    })
}
