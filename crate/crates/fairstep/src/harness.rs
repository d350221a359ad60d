//! The episodic learning loop and experiment outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fairstep_core::datagen::build;
use fairstep_core::estimation::{build_model, CountTable, RelaxationSchedule};
use fairstep_core::metrics::{aggregate, evaluate, pareto_front, Band, ParetoPoint};
use fairstep_core::rng::stream_id;
use fairstep_core::sim::{sample_episode, EpisodeBatch};
use fairstep_core::solver::{
    fairness_gaps, solve_constrained, solve_penalty, solve_unconstrained, ConstraintKind, Fairness,
    SolveProblem, SolveResult, SolveStatus, SolverSettings,
};
use fairstep_core::{Error as CoreError, PlanningModel, Policy, ProblemSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InstanceSource, Method};
use crate::formats::{read_json, read_spec, standin_empirical, to_json, write_atomic, EmpiricalDoc, ModelSnapshot, PolicyDoc};

/// Acceptance probability before the first update.
pub const INITIAL_ACCEPT: f64 = 0.5;

/// Salt separating evaluation streams from training streams.
const EVAL_STREAM: u64 = 0x6576_616c;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub lambda: f64,
    pub seed: u64,
    pub update_index: usize,
    pub episode_k: u64,
    #[serde(rename = "return")]
    pub episodic_return: f64,
    pub dp_violation: f64,
    pub eqopt_violation: f64,
    pub regret: f64,
    pub cumulative_regret: f64,
    /// Violations of the new policy under the estimated kernel.
    pub est_dp_violation: f64,
    pub est_eqopt_violation: f64,
    pub c_hat: f64,
    pub d_hat: f64,
    pub eta: f64,
    pub status: String,
    pub mc_return: f64,
    pub mc_dp_violation: f64,
    pub mc_eqopt_violation: f64,
}

/// Best known solution of the true constrained program.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Comparator {
    pub fairness: String,
    pub objective: f64,
    pub max_violation: f64,
    pub feasible: bool,
    pub policy: PolicyDoc,
}

pub struct Instance {
    pub spec: ProblemSpec,
    pub ids: Vec<String>,
}

pub fn load_instance(config: &ExperimentConfig) -> Result<Instance> {
    let spec = match &config.instance {
        InstanceSource::SpecFile { spec_file } => {
            let spec = read_spec(spec_file)?;
            if let Some(h) = config.horizon {
                anyhow::ensure!(
                    h == spec.space().horizon(),
                    "config horizon {h} disagrees with {} (horizon {})",
                    spec_file.display(),
                    spec.space().horizon()
                );
            }
            spec
        }
        InstanceSource::Generator { generator, empirical } => {
            let mut generator = generator.clone();
            if let Some(h) = config.horizon {
                match &mut generator {
                    crate::formats::GeneratorDoc::Synthetic { horizon, .. }
                    | crate::formats::GeneratorDoc::Fico { horizon, .. } => *horizon = Some(h),
                }
            }
            let data = match empirical {
                Some(path) => read_json::<EmpiricalDoc>(path)?.to_distribution()?,
                None => standin_empirical(),
            };
            build(&generator.to_config(), Some(&data))?
        }
    };
    let ids = spec.groups().iter().map(|g| g.id.clone()).collect();
    Ok(Instance { spec, ids })
}

fn fairness_name(f: Fairness) -> &'static str {
    match f {
        Fairness::DemographicParity => "dp",
        Fairness::EqualOpportunity => "eqopt",
    }
}

/// Solves the true program with zero slack over the unrestricted class.
pub fn comparator(spec: &ProblemSpec, fairness: Fairness, restarts: usize, base: &SolverSettings) -> Result<SolveResult> {
    let horizon = spec.space().horizon();
    let settings = SolverSettings {
        restarts,
        ..base.clone()
    };
    let problem = SolveProblem::constrained(spec.planning_model(), fairness, vec![0.0; horizon], 0.0).with_settings(settings);
    solve_constrained(&problem).with_context(|| format!("computing the {} comparator", fairness_name(fairness)))
}

fn comparator_for(method: &Method) -> Fairness {
    method.kind.fairness().unwrap_or(Fairness::DemographicParity)
}

fn mean_gap(model: &PlanningModel, policy: &Policy, fairness: Fairness) -> f64 {
    let gaps = fairness_gaps(model, policy, fairness);
    let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if m.is_finite() {
        m
    } else {
        f64::NAN
    }
}

/// Return and violations estimated from simulated individuals.
fn monte_carlo(spec: &ProblemSpec, policy: &Policy, episodes: usize, seed: u64, k: u64) -> Result<(f64, f64, f64)> {
    let q = spec.group_count();
    let horizon = spec.space().horizon();
    let batch = sample_episode(spec, policy, &vec![episodes; q], None, seed ^ stream_id(&[EVAL_STREAM]), k)?;
    let weights = spec.proportions();
    let mut ret = 0.0;
    let mut accept = vec![vec![0.0; horizon]; q];
    let mut qual_accept = vec![vec![(0.0, 0.0); horizon]; q];
    for (g, ts) in batch.groups.iter().enumerate() {
        let n = ts.len() as f64;
        for t in ts {
            for (h, s) in t.steps.iter().enumerate() {
                ret += weights[g] * s.reward / n;
                accept[g][h] += s.action as f64 / n;
                if s.state % 2 == 1 {
                    qual_accept[g][h].0 += s.action as f64;
                    qual_accept[g][h].1 += 1.0;
                }
            }
        }
    }
    let worst = |v: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut total = 0.0;
        for h in 0..horizon {
            let mut w: f64 = 0.0;
            for i in 0..q {
                for j in i + 1..q {
                    w = w.max((v(i, h) - v(j, h)).abs());
                }
            }
            total += w;
        }
        total / horizon as f64
    };
    let dp = worst(&|g, h| accept[g][h]);
    let eq = worst(&|g, h| qual_accept[g][h].0 / qual_accept[g][h].1);
    Ok((ret, dp, eq))
}

/// Files written alongside the metrics for one run.
#[derive(Default)]
struct RunArtifacts {
    snapshots: Vec<(PathBuf, Vec<u8>)>,
    trace: String,
    trajectories: String,
}

struct RunOutput {
    rows: Vec<MetricsRow>,
    artifacts: RunArtifacts,
}

fn solve_method(
    method: &Method,
    model: PlanningModel,
    schedule: &RelaxationSchedule,
    settings: &SolverSettings,
) -> Result<SolveResult, CoreError> {
    let horizon = model.space.horizon();
    let eta = schedule.eta;
    match method.kind {
        ConstraintKind::Dp => solve_constrained(
            &SolveProblem::constrained(model, Fairness::DemographicParity, schedule.c_per_step(horizon), eta)
                .with_settings(settings.clone()),
        ),
        ConstraintKind::EqOpt => solve_constrained(
            &SolveProblem::constrained(model, Fairness::EqualOpportunity, schedule.d_per_step(horizon), eta)
                .with_settings(settings.clone()),
        ),
        ConstraintKind::DpPenalty => solve_penalty(
            &SolveProblem::penalized(model, Fairness::DemographicParity, method.lambda, eta).with_settings(settings.clone()),
        ),
        ConstraintKind::EqOptPenalty => solve_penalty(
            &SolveProblem::penalized(model, Fairness::EqualOpportunity, method.lambda, eta).with_settings(settings.clone()),
        ),
        ConstraintKind::None => solve_unconstrained(&model, eta),
    }
}

fn trajectory_rows(out: &mut String, batch: &EpisodeBatch, horizon: usize, spec: &ProblemSpec) {
    for (g, ts) in batch.groups.iter().enumerate() {
        for (i, t) in ts.iter().enumerate() {
            for h in 0..horizon {
                match t.steps.get(h) {
                    Some(s) => {
                        let (x, y) = spec.space().decompose(s.state);
                        let _ = writeln!(out, "{},{},{},{},{},{},{},{},1", batch.episode, g, i, h, x, y, s.action, s.reward);
                    }
                    None => {
                        let _ = writeln!(out, "{},{},{},{},,,,,0", batch.episode, g, i, h);
                    }
                }
            }
        }
    }
}

fn run_one(
    config: &ExperimentConfig,
    instance: &Instance,
    comparators: &[(Fairness, SolveResult)],
    method: &Method,
    seed: u64,
) -> Result<RunOutput> {
    let spec = &instance.spec;
    let space = spec.space();
    let q = spec.group_count();
    let horizon = space.horizon();
    let counts_per_group = config.n_per_group.resolve(q)?;
    let fairness = comparator_for(method);
    let reference = &comparators.iter().find(|(f, _)| *f == fairness).expect("comparator computed").1.policy;
    let proportions = spec.proportions();

    let mut policy = Policy::constant(q, space, INITIAL_ACCEPT)?;
    let mut current = evaluate(&policy, spec, reference, 0)?;
    let mut cumulative = 0.0;
    let mut counts = CountTable::new(space, q);
    let mut rows = Vec::with_capacity(config.checkpoints.len());
    let mut artifacts = RunArtifacts::default();
    let mut episode = 0u64;
    for (update_index, &checkpoint) in config.checkpoints.iter().enumerate() {
        while episode < checkpoint {
            episode += 1;
            let batch = sample_episode(spec, &policy, &counts_per_group, config.survival, seed, episode)?;
            counts.update(&batch)?;
            if config.dump_trajectories {
                trajectory_rows(&mut artifacts.trajectories, &batch, horizon, spec);
            }
            cumulative += current.reward_regret;
        }
        // the new policy serves episode `checkpoint + 1`
        let k = checkpoint + 1;
        let model = build_model(&counts, k, config.delta)?;
        let schedule = RelaxationSchedule::from_model(&model);
        let planning = model.planning_model(&proportions)?;
        let settings = SolverSettings {
            seed: stream_id(&[seed, update_index as u64]),
            ..config.solver.clone()
        };
        let status = match solve_method(method, planning.clone(), &schedule, &settings) {
            Ok(result) => {
                for t in &result.diagnostics.trace {
                    let multipliers: Vec<String> = t.multipliers.iter().map(f64::to_string).collect();
                    let _ = writeln!(
                        artifacts.trace,
                        "{},{},{},{},{},{},{}",
                        update_index,
                        t.restart,
                        t.outer,
                        t.objective,
                        t.max_violation,
                        t.penalty,
                        multipliers.join(";")
                    );
                }
                policy = result.policy;
                match result.status {
                    SolveStatus::Feasible => "feasible",
                    SolveStatus::BestEffortInfeasible => "infeasible",
                }
            }
            // the policy from the previous update stays in force
            Err(CoreError::DegenerateConditioning { .. }) => "degenerate",
            Err(e) => return Err(e).with_context(|| format!("solving {} at k = {checkpoint}", method.label())),
        };
        current = evaluate(&policy, spec, reference, checkpoint)?;
        if config.snapshots {
            let name = format!("{}_{}_seed{}_k{}", method.name(), method.lambda, seed, checkpoint);
            let snap = ModelSnapshot::new(checkpoint, &model, &schedule, &instance.ids);
            artifacts.snapshots.push((PathBuf::from(format!("model_{name}.json")), to_json(&snap)?));
            let doc = PolicyDoc::from_policy(&policy, &instance.ids);
            artifacts.snapshots.push((PathBuf::from(format!("policy_{name}.json")), to_json(&doc)?));
        }
        let (mc_return, mc_dp, mc_eq) = if config.monte_carlo {
            monte_carlo(spec, &policy, config.eval_episodes, seed, checkpoint)?
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        rows.push(MetricsRow {
            method: method.name().to_string(),
            lambda: method.lambda,
            seed,
            update_index,
            episode_k: checkpoint,
            episodic_return: current.episodic_return,
            dp_violation: current.dp_violation,
            eqopt_violation: current.eqopt_violation,
            regret: current.reward_regret,
            cumulative_regret: cumulative,
            est_dp_violation: mean_gap(&planning, &policy, Fairness::DemographicParity),
            est_eqopt_violation: mean_gap(&planning, &policy, Fairness::EqualOpportunity),
            c_hat: schedule.c_hat,
            d_hat: schedule.d_hat,
            eta: schedule.eta,
            status: status.to_string(),
            mc_return,
            mc_dp_violation: mc_dp,
            mc_eqopt_violation: mc_eq,
        });
    }
    Ok(RunOutput { rows, artifacts })
}

/// Mean band per checkpoint for one method configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeriesBand {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<Band> for SeriesBand {
    fn from(b: Band) -> Self {
        Self {
            mean: b.mean,
            sd: b.sd,
            lower: b.lower,
            upper: b.upper,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub lambda: f64,
    pub checkpoints: Vec<u64>,
    /// Absent with a single seed.
    pub bands: Option<Bands>,
    pub final_return: f64,
    pub final_dp_violation: f64,
    pub final_eqopt_violation: f64,
    pub on_dp_front: bool,
    pub on_eqopt_front: bool,
    pub infeasible_solves: usize,
    pub degenerate_solves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Bands {
    #[serde(rename = "return")]
    pub episodic_return: Vec<SeriesBand>,
    pub dp_violation: Vec<SeriesBand>,
    pub eqopt_violation: Vec<SeriesBand>,
    pub regret: Vec<SeriesBand>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub comparators: Vec<Comparator>,
    pub methods: Vec<MethodSummary>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bands and Pareto points from the metrics rows.
pub fn summarize(rows: &[MetricsRow], methods: &[Method], seeds: &[u64], comparators: Vec<Comparator>) -> Result<Summary> {
    let mut out = Vec::new();
    for m in methods {
        let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == m.name() && r.lambda == m.lambda).collect();
        let series = |f: &dyn Fn(&MetricsRow) -> f64| -> Vec<Vec<f64>> {
            seeds
                .iter()
                .map(|s| mine.iter().filter(|r| r.seed == *s).map(|r| f(r)).collect())
                .collect()
        };
        let checkpoints: Vec<u64> = mine.iter().filter(|r| r.seed == seeds[0]).map(|r| r.episode_k).collect();
        let to_bands = |runs: Vec<Vec<f64>>| -> Result<Vec<SeriesBand>> {
            Ok(aggregate(&runs)?.into_iter().map(Into::into).collect())
        };
        let bands = if seeds.len() >= 2 {
            Some(Bands {
                episodic_return: to_bands(series(&|r| r.episodic_return))?,
                dp_violation: to_bands(series(&|r| r.dp_violation))?,
                eqopt_violation: to_bands(series(&|r| r.eqopt_violation))?,
                regret: to_bands(series(&|r| r.regret))?,
            })
        } else {
            None
        };
        let last = |f: &dyn Fn(&MetricsRow) -> f64| -> f64 {
            mean(&series(f).iter().map(|s| *s.last().expect("at least one checkpoint")).collect::<Vec<_>>())
        };
        out.push(MethodSummary {
            method: m.name().to_string(),
            lambda: m.lambda,
            checkpoints,
            bands,
            final_return: last(&|r| r.episodic_return),
            final_dp_violation: last(&|r| r.dp_violation),
            final_eqopt_violation: last(&|r| r.eqopt_violation),
            on_dp_front: false,
            on_eqopt_front: false,
            infeasible_solves: mine.iter().filter(|r| r.status == "infeasible").count(),
            degenerate_solves: mine.iter().filter(|r| r.status == "degenerate").count(),
        });
    }
    for fairness in [Fairness::DemographicParity, Fairness::EqualOpportunity] {
        let points: Vec<ParetoPoint> = out
            .iter()
            .map(|s| ParetoPoint {
                episodic_return: s.final_return,
                violation: match fairness {
                    Fairness::DemographicParity => s.final_dp_violation,
                    Fairness::EqualOpportunity => s.final_eqopt_violation,
                },
            })
            .collect();
        for i in pareto_front(&points) {
            match fairness {
                Fairness::DemographicParity => out[i].on_dp_front = true,
                Fairness::EqualOpportunity => out[i].on_eqopt_front = true,
            }
        }
    }
    Ok(Summary {
        seeds: seeds.to_vec(),
        comparators,
        methods: out,
    })
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// In-memory result of an experiment.
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Runs every (seed, method) pair on `threads` workers; the output does not
/// depend on the thread count.
pub fn execute(config: &ExperimentConfig, threads: Option<usize>) -> Result<(ExperimentResult, Vec<(PathBuf, Vec<u8>)>)> {
    let instance = load_instance(config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let mut needed: Vec<Fairness> = config.methods.iter().map(comparator_for).collect();
    needed.sort_by_key(|f| fairness_name(*f));
    needed.dedup();
    let comparators: Vec<(Fairness, SolveResult)> = pool.install(|| {
        needed
            .par_iter()
            .map(|&f| Ok((f, comparator(&instance.spec, f, config.comparator_restarts, &config.solver)?)))
            .collect::<Result<_>>()
    })?;
    let seeds = config.seed_values();
    let jobs: Vec<(u64, Method)> = seeds.iter().flat_map(|&s| config.methods.iter().map(move |m| (s, *m))).collect();
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|(seed, method)| run_one(config, &instance, &comparators, method, *seed))
            .collect::<Result<_>>()
    })?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for ((seed, method), out) in jobs.iter().zip(outputs) {
        let stem = format!("{}_{}_seed{}", method.name(), method.lambda, seed);
        if config.solve_traces {
            let text = format!("update_index,restart,outer,objective,max_violation,penalty,multipliers\n{}", out.artifacts.trace);
            files.push((PathBuf::from("traces").join(format!("{stem}.csv")), text.into_bytes()));
        }
        if config.dump_trajectories {
            let text = format!("episode,group,individual,h,x,y,a,reward,active\n{}", out.artifacts.trajectories);
            files.push((PathBuf::from("trajectories").join(format!("{stem}.csv")), text.into_bytes()));
        }
        for (p, b) in out.artifacts.snapshots {
            files.push((PathBuf::from("snapshots").join(p), b));
        }
        rows.extend(out.rows);
    }
    let comparator_docs = comparators
        .iter()
        .map(|(f, r)| Comparator {
            fairness: fairness_name(*f).to_string(),
            objective: r.objective,
            max_violation: r.max_violation,
            feasible: r.status == SolveStatus::Feasible,
            policy: PolicyDoc::from_policy(&r.policy, &instance.ids),
        })
        .collect();
    let summary = summarize(&rows, &config.methods, &seeds, comparator_docs)?;
    Ok((ExperimentResult { rows, summary }, files))
}

/// Runs the experiment and writes `metrics.csv`, `summary.json`, the plots
/// and any requested extras under the output directory.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    let (result, files) = execute(config, threads)?;
    let dir = &config.output;
    for (p, bytes) in files {
        write_atomic(&dir.join(p), &bytes)?;
    }
    let csv_path = dir.join("metrics.csv");
    write_atomic(&csv_path, &metrics_csv(&result.rows)?)?;
    write_atomic(&dir.join("summary.json"), &to_json(&result.summary)?)?;
    crate::plot::write_plots(&result.rows, dir)?;
    Ok(result)
}
