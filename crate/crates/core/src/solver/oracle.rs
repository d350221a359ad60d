//! Exhaustive grid search over tiny instances.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::gradient::forward;
use super::{check_conditioning, check_eta, max_excess, step_gaps, Diagnostics, Fairness, SolveResult, SolveStatus};
use crate::error::{Error, Result};
use crate::mdp::{PlanningModel, Policy};

/// Largest total parameter count the oracle will enumerate.
pub const ORACLE_PARAMETER_LIMIT: usize = 8;

const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleTarget {
    Unconstrained,
    Constrained { fairness: Fairness, bounds: Vec<f64> },
    Penalized { fairness: Fairness, lambda: f64 },
}

/// `{i * step} ∪ {eta, 1 - eta}`, clamped to the box, sorted, deduplicated.
pub fn grid_values(step: f64, eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::OutOfRange {
            what: "grid step",
            value: step,
        });
    }
    let (lo, hi) = (eta, 1.0 - eta);
    let count = libm::floor(1.0 / step + 1e-9) as usize;
    let mut values: Vec<f64> = (0..=count).map(|i| (i as f64 * step).clamp(lo, hi)).collect();
    values.push(lo);
    values.push(hi);
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| crate::math::abs(*a - *b) <= 1e-12);
    Ok(values)
}

struct Candidate {
    code: u64,
    value: f64,
    /// Per-step statistic: `P(a=1)`, `P(a=1|y=1)`, or `(n, D)` pairs.
    stats: Vec<f64>,
}

fn decode(code: u64, n: usize, grid: &[f64]) -> Vec<f64> {
    let base = grid.len() as u64;
    let mut c = code;
    (0..n)
        .map(|_| {
            let v = grid[(c % base) as usize];
            c /= base;
            v
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Statistic {
    None,
    Accept,
    Conditional,
    CrossParts,
}

fn enumerate_group(model: &PlanningModel, g: usize, grid: &[f64], stat: Statistic) -> Result<Vec<Candidate>> {
    let space = model.space;
    let single = PlanningModel::new(
        space,
        vec![1.0],
        vec![model.kernels[g].clone()],
        vec![model.rewards[g].clone()],
    )?;
    let n = space.horizon() * space.features();
    let total = (grid.len() as u64).pow(n as u32);
    let weight = model.proportions[g];
    let mut out = Vec::with_capacity(total as usize);
    for code in 0..total {
        let theta = decode(code, n, grid);
        let fwd = forward(&single, &theta);
        let stats = match stat {
            Statistic::None => Vec::new(),
            Statistic::Accept => fwd.accept.clone(),
            Statistic::Conditional => fwd.qual_accept.iter().zip(&fwd.qual).map(|(a, d)| a / d).collect(),
            Statistic::CrossParts => fwd
                .qual_accept
                .iter()
                .zip(&fwd.qual)
                .flat_map(|(&a, &d)| [a, d])
                .collect(),
        };
        out.push(Candidate {
            code,
            value: weight * fwd.objective,
            stats,
        });
    }
    // stable: equal values keep ascending codes
    out.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(out)
}

fn compatible(chosen: &[&Candidate], next: &Candidate, bounds: &[f64]) -> bool {
    chosen.iter().all(|c| {
        c.stats
            .iter()
            .zip(&next.stats)
            .zip(bounds)
            .all(|((a, b), bound)| crate::math::abs(a - b) <= bound + FEASIBILITY_SLACK)
    })
}

fn cell(v: f64, size: f64) -> i64 {
    libm::floor(v / size) as i64
}

struct Search<'a> {
    groups: &'a [Vec<Candidate>],
    /// `suffix_max[g]` = sum of the best values of groups `g..`.
    suffix_max: Vec<f64>,
    bounds: &'a [f64],
    cell_size: f64,
    buckets: BTreeMap<Vec<i64>, Vec<usize>>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn better(&self, value: f64) -> bool {
        self.best.as_ref().is_none_or(|(b, _)| value > *b)
    }

    fn descend(&mut self, chosen: &mut Vec<usize>, partial: f64) {
        let g = chosen.len();
        let last = self.groups.len() - 1;
        if g == last {
            self.finish(chosen, partial);
            return;
        }
        for i in 0..self.groups[g].len() {
            let cand = &self.groups[g][i];
            if !self.better(partial + cand.value + self.suffix_max[g + 1]) {
                break;
            }
            let picked: Vec<&Candidate> = chosen.iter().enumerate().map(|(h, &j)| &self.groups[h][j]).collect();
            if !compatible(&picked, cand, self.bounds) {
                continue;
            }
            chosen.push(i);
            self.descend(chosen, partial + cand.value);
            chosen.pop();
        }
    }

    /// Best compatible candidate of the last group via the bucket index.
    fn finish(&mut self, chosen: &mut Vec<usize>, partial: f64) {
        let last = self.groups.len() - 1;
        let horizon = self.bounds.len();
        let mut lo = vec![f64::NEG_INFINITY; horizon];
        let mut hi = vec![f64::INFINITY; horizon];
        for (g, &j) in chosen.iter().enumerate() {
            for h in 0..horizon {
                let v = self.groups[g][j].stats[h];
                lo[h] = lo[h].max(v - self.bounds[h] - FEASIBILITY_SLACK);
                hi[h] = hi[h].min(v + self.bounds[h] + FEASIBILITY_SLACK);
            }
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return;
        }
        let ranges: Vec<(i64, i64)> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| (cell(l.max(0.0), self.cell_size), cell(h.min(1.0), self.cell_size)))
            .collect();
        let mut key: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        let mut found: Option<usize> = None;
        loop {
            if let Some(list) = self.buckets.get(&key) {
                for &i in list {
                    let c = &self.groups[last][i];
                    if found.is_some_and(|f| self.groups[last][f].value >= c.value) {
                        break;
                    }
                    let ok = c.stats.iter().enumerate().all(|(h, v)| *v >= lo[h] && *v <= hi[h]);
                    if ok {
                        // ties across buckets go to the earlier sorted position
                        if found.is_none_or(|f| c.value > self.groups[last][f].value || (c.value == self.groups[last][f].value && i < f)) {
                            found = Some(i);
                        }
                        break;
                    }
                }
            }
            // odometer over the cell ranges
            let mut d = 0;
            loop {
                if d == horizon {
                    break;
                }
                if key[d] < ranges[d].1 {
                    key[d] += 1;
                    break;
                }
                key[d] = ranges[d].0;
                d += 1;
            }
            if d == horizon {
                break;
            }
        }
        if let Some(i) = found {
            let total = partial + self.groups[last][i].value;
            if self.better(total) {
                let mut pick = chosen.clone();
                pick.push(i);
                self.best = Some((total, pick));
            }
        }
    }
}

fn penalized_search(
    groups: &[Vec<Candidate>],
    fairness: Fairness,
    lambda: f64,
    horizon: usize,
) -> (f64, Vec<usize>) {
    let suffix_max = suffix_maxima(groups);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut chosen = Vec::new();
    fn penalty(groups: &[Vec<Candidate>], chosen: &[usize], fairness: Fairness, horizon: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..chosen.len() {
            for j in i + 1..chosen.len() {
                let (a, b) = (&groups[i][chosen[i]].stats, &groups[j][chosen[j]].stats);
                for h in 0..horizon {
                    let d = match fairness {
                        Fairness::DemographicParity => a[h] - b[h],
                        Fairness::EqualOpportunity => a[2 * h] * b[2 * h + 1] - b[2 * h] * a[2 * h + 1],
                    };
                    total += d * d;
                }
            }
        }
        total
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        groups: &[Vec<Candidate>],
        suffix_max: &[f64],
        fairness: Fairness,
        lambda: f64,
        horizon: usize,
        chosen: &mut Vec<usize>,
        partial: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let g = chosen.len();
        if g == groups.len() {
            let total = partial - lambda * penalty(groups, chosen, fairness, horizon);
            if best.as_ref().is_none_or(|(b, _)| total > *b) {
                *best = Some((total, chosen.clone()));
            }
            return;
        }
        for i in 0..groups[g].len() {
            let bound = partial + groups[g][i].value + suffix_max.get(g + 1).copied().unwrap_or(0.0);
            if best.as_ref().is_some_and(|(b, _)| bound <= *b) {
                break;
            }
            chosen.push(i);
            rec(groups, suffix_max, fairness, lambda, horizon, chosen, partial + groups[g][i].value, best);
            chosen.pop();
        }
    }
    rec(groups, &suffix_max, fairness, lambda, horizon, &mut chosen, 0.0, &mut best);
    best.expect("non-empty grid")
}

fn suffix_maxima(groups: &[Vec<Candidate>]) -> Vec<f64> {
    let mut out = vec![0.0; groups.len() + 1];
    for g in (0..groups.len()).rev() {
        out[g] = out[g + 1] + groups[g][0].value;
    }
    out
}

/// Best grid policy for `target`, found by exhaustive enumeration.
pub fn brute_force_oracle(model: &PlanningModel, eta: f64, target: &OracleTarget, grid_step: f64) -> Result<SolveResult> {
    let space = model.space;
    let q = model.group_count();
    let per_group = space.horizon() * space.features();
    let parameters = q * per_group;
    if parameters > ORACLE_PARAMETER_LIMIT {
        return Err(Error::BudgetExceeded {
            parameters,
            limit: ORACLE_PARAMETER_LIMIT,
        });
    }
    let grid = grid_values(grid_step, eta)?;
    let stat = match target {
        OracleTarget::Unconstrained => Statistic::None,
        OracleTarget::Constrained { fairness, bounds } => {
            if bounds.len() != space.horizon() {
                return Err(Error::Shape {
                    what: "relaxation per step",
                    expected: space.horizon(),
                    found: bounds.len(),
                });
            }
            match fairness {
                Fairness::DemographicParity => Statistic::Accept,
                Fairness::EqualOpportunity => {
                    check_conditioning(model, eta)?;
                    Statistic::Conditional
                }
            }
        }
        OracleTarget::Penalized { fairness, .. } => match fairness {
            Fairness::DemographicParity => Statistic::Accept,
            Fairness::EqualOpportunity => Statistic::CrossParts,
        },
    };
    let groups: Vec<Vec<Candidate>> = (0..q)
        .map(|g| enumerate_group(model, g, &grid, stat))
        .collect::<Result<_>>()?;
    let examined = groups.iter().map(Vec::len).sum();
    let (surrogate, picks) = match target {
        OracleTarget::Unconstrained => {
            let picks = vec![0; q];
            (groups.iter().map(|c| c[0].value).sum(), picks)
        }
        OracleTarget::Constrained { bounds, .. } => {
            let cell_size = bounds.iter().copied().fold(0.0, f64::max).max(1e-3);
            let mut buckets: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
            for (i, c) in groups[q - 1].iter().enumerate() {
                buckets
                    .entry(c.stats.iter().map(|&v| cell(v, cell_size)).collect())
                    .or_default()
                    .push(i);
            }
            let mut search = Search {
                groups: &groups,
                suffix_max: suffix_maxima(&groups),
                bounds,
                cell_size,
                buckets,
                best: None,
            };
            search.descend(&mut Vec::new(), 0.0);
            search
                .best
                .ok_or_else(|| Error::Precondition("no feasible grid policy".into()))?
        }
        OracleTarget::Penalized { fairness, lambda } => {
            penalized_search(&groups, *fairness, *lambda, space.horizon())
        }
    };
    let mut params = Vec::with_capacity(parameters);
    for (g, &i) in picks.iter().enumerate() {
        params.extend(decode(groups[g][i].code, per_group, &grid));
    }
    let fwd = forward(model, &params);
    let max_violation = match target {
        OracleTarget::Unconstrained => 0.0,
        OracleTarget::Constrained { fairness, bounds } => max_excess(&step_gaps(&fwd, *fairness), bounds),
        OracleTarget::Penalized { fairness, .. } => step_gaps(&fwd, *fairness).into_iter().fold(0.0, f64::max),
    };
    Ok(SolveResult {
        policy: Policy::new(q, space, params)?,
        objective: fwd.objective,
        surrogate,
        max_violation,
        status: SolveStatus::Feasible,
        diagnostics: Diagnostics {
            restarts: 1,
            iterations: examined,
            ..Diagnostics::default()
        },
    })
}
