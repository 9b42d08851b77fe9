//! Experiment orchestration: convergence runs, heterogeneity sweeps,
//! adaptation to held-out tasks and theory checks, with CSV, JSON and SVG output.

pub mod config;
pub mod plot;

use std::path::Path;

use log::{info, warn};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneity::{self, HeterogeneityProfile};
use crate::linalg::Mat;
use crate::lqr::{self, Gain, LqrTask};
use crate::maml::{self, ConvergenceRecord, GuardEvent, TaskOptima};
use crate::taskgen::{self, GenSpec, TaskBundle};
use crate::theory::{self, ConditionReport};
use crate::zo::{Domain, StreamKey};

pub use config::{Algorithm, Experiment, ExperimentConfig, TaskSource};
use plot::{PlotOptions, Series};

const BASELINE_DRAWS: usize = 1000;
const BASELINE_STD: f64 = 0.2;

/// One seeded meta-learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub completed: bool,
    pub error: Option<String>,
    pub iterations: usize,
    /// `J(K_n) − J(K*)` on the nominal task for every accepted iterate.
    pub nominal_gap: Vec<f64>,
    /// Final per-task cost gaps.
    pub final_gaps: Vec<f64>,
    pub max_rho: f64,
    pub guard_failures: usize,
    pub events: Vec<GuardEvent>,
    #[serde(skip)]
    pub final_gain: Option<Gain>,
    #[serde(skip)]
    pub record: ConvergenceRecord,
}

impl RunOutcome {
    pub fn final_nominal_gap(&self) -> Option<f64> {
        self.nominal_gap.last().copied()
    }

    /// Median over the task set of each task's final gap to its own optimum.
    pub fn median_task_gap(&self) -> Option<f64> {
        (!self.final_gaps.is_empty()).then(|| median(&self.final_gaps))
    }
}

/// Shared context embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub config_hash: String,
    pub heterogeneity: Option<HeterogeneityProfile>,
    pub f_z: Option<f64>,
    pub theory: Option<ConditionReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub context: ReportContext,
    pub algorithm: Algorithm,
    pub runs: Vec<RunOutcome>,
    /// Median over seeds of the nominal gap at each iteration.
    pub median_nominal_gap: Vec<f64>,
    /// Interquartile range over seeds at each iteration.
    pub iqr_nominal_gap: Vec<(f64, f64)>,
    pub stable_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub levels: [f64; 4],
    pub measured: Vec<Option<HeterogeneityProfile>>,
    pub f_z: Vec<Option<f64>>,
    pub runs: Vec<RunOutcome>,
    pub median_final_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub context: ReportContext,
    pub algorithm: Algorithm,
    pub levels: Vec<LevelOutcome>,
    /// Seeds whose median task gaps increase strictly with the level.
    pub ordered_seeds: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub task_index: usize,
    pub optimal_cost: f64,
    pub initial_gap_learned: f64,
    pub initial_gap_baseline: f64,
    pub iterations_learned: usize,
    pub iterations_baseline: usize,
    pub converged_learned: bool,
    pub converged_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub context: ReportContext,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
    pub training: RunOutcome,
    pub results: Vec<HoldoutResult>,
    pub median_learned: f64,
    pub median_baseline: f64,
    pub tolerance: f64,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile; NaN for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn context(cfg: &ExperimentConfig, source: &TaskSource, g0: &Gain, algorithm: Algorithm, seed: u64) -> ReportContext {
    let (heterogeneity, f_z) = if source.tasks.len() >= 2 {
        match heterogeneity::measure(&source.tasks) {
            Ok(p) => {
                let f = heterogeneity::f_z_bound(&p, &source.tasks, g0).ok();
                (Some(p), f)
            }
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    let maml_cfg = cfg.maml(algorithm, seed);
    let zo = match &maml_cfg.mode {
        maml::MamlMode::ModelFree(z) => Some(z.clone()),
        maml::MamlMode::ModelBased => None,
    };
    let theory = theory::theorem_conditions(&source.tasks, g0, &maml_cfg, zo.as_ref(), &[], &cfg.theory)
        .map_err(|e| warn!("theory report unavailable: {e}"))
        .ok();
    ReportContext {
        config_hash: cfg.hash(),
        heterogeneity,
        f_z,
        theory,
    }
}

/// Runs one seed and converts guard stops into a recorded failure.
pub fn run_seed(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    source: &TaskSource,
    g0: &Gain,
    seed: u64,
) -> Result<RunOutcome> {
    let maml_cfg = cfg.maml(algorithm, seed);
    let nominal_star = lqr::cost(&source.nominal, &lqr::optimal_gain(&source.nominal)?)?;
    let (gain, record, error) = match maml::run(&source.tasks, g0, &maml_cfg, None) {
        Ok((g, r)) => (Some(g), r, None),
        Err(Error::Guard { reason, record, .. }) => (None, *record, Some(reason)),
        Err(e) => return Err(e),
    };
    let nominal_gap = record
        .gains
        .iter()
        .map(|k| lqr::cost(&source.nominal, k).map(|j| j - nominal_star))
        .collect::<Result<Vec<_>>>()?;
    let final_gaps = record.final_gaps().map(<[f64]>::to_vec).unwrap_or_default();
    if let Some(e) = &error {
        warn!("seed {seed}: {e}");
    }
    Ok(RunOutcome {
        seed,
        completed: error.is_none(),
        error,
        iterations: record.gains.len().saturating_sub(1),
        nominal_gap,
        final_gaps,
        max_rho: record.max_rho(),
        guard_failures: record.guard_failures(),
        events: record.events.clone(),
        final_gain: gain,
        record,
    })
}

fn write_csv(out: &Path, name: &str, record: &ConvergenceRecord) -> Result<()> {
    std::fs::write(out.join(name), record.to_csv())?;
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(out.join(name), text)?;
    Ok(())
}

fn per_iteration_quantiles(runs: &[RunOutcome]) -> (Vec<f64>, Vec<(f64, f64)>) {
    let len = runs.iter().map(|r| r.nominal_gap.len()).max().unwrap_or(0);
    let mut med = Vec::with_capacity(len);
    let mut iqr = Vec::with_capacity(len);
    for n in 0..len {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.nominal_gap.get(n).copied()).collect();
        med.push(median(&vals));
        iqr.push((quantile(&vals, 0.25), quantile(&vals, 0.75)));
    }
    (med, iqr)
}

/// Meta-learning on each seed's task set. Writes `seed_<s>.csv`,
/// `convergence.json` and, with `plot`, `convergence.svg`.
pub fn run_convergence(cfg: &ExperimentConfig, algorithm: Algorithm, out: &Path) -> Result<ConvergenceReport> {
    std::fs::create_dir_all(out)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut ctx = None;
    for &seed in &cfg.seeds {
        let source = cfg.task_source(seed, None)?;
        let g0 = cfg.initial_gain_for(&source)?;
        if ctx.is_none() {
            ctx = Some(context(cfg, &source, &g0, algorithm, seed));
        }
        info!("convergence run, seed {seed}");
        let run = run_seed(cfg, algorithm, &source, &g0, seed)?;
        write_csv(out, &format!("seed_{seed}.csv"), &run.record)?;
        runs.push(run);
    }
    let (median_nominal_gap, iqr_nominal_gap) = per_iteration_quantiles(&runs);
    let report = ConvergenceReport {
        context: ctx.expect("at least one seed"),
        algorithm,
        stable_seeds: runs.iter().filter(|r| r.guard_failures == 0 && r.completed).count(),
        runs,
        median_nominal_gap,
        iqr_nominal_gap,
    };
    write_json(out, "convergence.json", &report)?;
    if cfg.plot {
        let mut series: Vec<Series> = report
            .runs
            .iter()
            .map(|r| Series {
                group: format!("seed {}", r.seed),
                points: r.nominal_gap.iter().enumerate().map(|(i, g)| (i as f64, *g)).collect(),
            })
            .collect();
        series.push(Series {
            group: "median".into(),
            points: report.median_nominal_gap.iter().enumerate().map(|(i, g)| (i as f64, *g)).collect(),
        });
        plot::emit_plot(
            &series,
            &out.join("convergence.svg"),
            &PlotOptions { title: "nominal task cost gap".into(), ..Default::default() },
        )?;
    }
    Ok(report)
}

/// Convergence runs at several heterogeneity levels with paired seeds and masks.
pub fn run_het_sweep(cfg: &ExperimentConfig, algorithm: Algorithm, out: &Path) -> Result<SweepReport> {
    if cfg.tasks_file.is_some() {
        return Err(Error::Config("the heterogeneity sweep generates its own task sets; drop tasks_file".into()));
    }
    std::fs::create_dir_all(out)?;
    let levels = cfg.levels.clone().unwrap_or_else(|| taskgen::LEVELS.to_vec());
    if levels.is_empty() {
        return Err(Error::Config("levels must not be empty".into()));
    }
    let mut outcomes = Vec::with_capacity(levels.len());
    let mut ctx = None;
    for (li, &level) in levels.iter().enumerate() {
        let mut runs = Vec::new();
        let mut measured = Vec::new();
        let mut f_z = Vec::new();
        for &seed in &cfg.seeds {
            let source = cfg.task_source(seed, Some(level))?;
            let g0 = cfg.initial_gain_for(&source)?;
            if ctx.is_none() {
                ctx = Some(context(cfg, &source, &g0, algorithm, seed));
            }
            let profile = heterogeneity::measure(&source.tasks).ok();
            f_z.push(profile.as_ref().and_then(|p| heterogeneity::f_z_bound(p, &source.tasks, &g0).ok()));
            measured.push(profile);
            info!("sweep level {li}, seed {seed}");
            let run = run_seed(cfg, algorithm, &source, &g0, seed)?;
            write_csv(out, &format!("level_{li}_seed_{seed}.csv"), &run.record)?;
            runs.push(run);
        }
        let finals: Vec<f64> = runs.iter().filter_map(RunOutcome::median_task_gap).collect();
        outcomes.push(LevelOutcome {
            levels: level,
            measured,
            f_z,
            median_final_gap: median(&finals),
            runs,
        });
    }
    let ordered_seeds = (0..cfg.seeds.len())
        .filter(|&s| {
            let gaps: Vec<Option<f64>> = outcomes.iter().map(|o| o.runs[s].median_task_gap()).collect();
            gaps.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a < b))
        })
        .count();
    let report = SweepReport {
        context: ctx.expect("at least one level and seed"),
        algorithm,
        seeds: cfg.seeds.len(),
        levels: outcomes,
        ordered_seeds,
    };
    write_json(out, "sweep.json", &report)?;
    if cfg.plot {
        let series: Vec<Series> = report
            .levels
            .iter()
            .enumerate()
            .map(|(li, o)| {
                let (med, _) = per_iteration_quantiles(&o.runs);
                Series {
                    group: format!("level {li}"),
                    points: med.iter().enumerate().map(|(i, g)| (i as f64, *g)).collect(),
                }
            })
            .collect();
        plot::emit_plot(
            &series,
            &out.join("sweep.svg"),
            &PlotOptions { title: "median nominal cost gap by heterogeneity level".into(), ..Default::default() },
        )?;
    }
    Ok(report)
}

/// Rejection-samples `K* + N(0, 0.2²)` entries until the gain stabilizes the
/// task and costs at least twice the optimum.
pub fn random_baseline_gain(task: &LqrTask, k_star: &Gain, j_star: f64, seed: u64, index: usize) -> Result<Gain> {
    let normal = Normal::new(0.0, BASELINE_STD).expect("positive deviation");
    let (nu, nx) = k_star.shape();
    for draw in 0..BASELINE_DRAWS {
        let mut rng = StreamKey::new(seed, Domain::Baseline, index, draw).rng(0);
        let noise = Mat::from_fn(nu, nx, |_, _| rng.sample(normal));
        let g = Gain::new(k_star.matrix() + noise);
        if lqr::is_stabilizing(task, &g)? && lqr::cost(task, &g)? >= 2.0 * j_star {
            return Ok(g);
        }
    }
    Err(Error::Config(format!(
        "no random stabilizing gain with cost at least twice optimal in {BASELINE_DRAWS} draws for holdout task {index}"
    )))
}

/// Trains on a random split of the task set and fine-tunes on each held-out
/// task from the learned gain and from a random stabilizing gain.
pub fn run_adaptation(cfg: &ExperimentConfig, algorithm: Algorithm, out: &Path) -> Result<AdaptationReport> {
    std::fs::create_dir_all(out)?;
    let seed = cfg.seeds[0];
    let source = cfg.task_source(seed, None)?;
    let g0 = cfg.initial_gain_for(&source)?;
    let (train_idx, holdout_idx) = taskgen::split_indices(&source.tasks, cfg.holdout_fraction, seed)?;
    let train = TaskSource {
        tasks: train_idx.iter().map(|&i| source.tasks[i].clone()).collect(),
        ..source.clone()
    };
    let ctx = context(cfg, &train, &g0, algorithm, seed);
    info!("adaptation: training on {} tasks", train.tasks.len());
    let training = run_seed(cfg, algorithm, &train, &g0, seed)?;
    write_csv(out, "training.csv", &training.record)?;
    let learned = training.final_gain.clone().ok_or_else(|| Error::Guard {
        iteration: training.iterations,
        reason: format!(
            "training stopped early: {}",
            training.error.clone().unwrap_or_default()
        ),
        record: Box::new(training.record.clone()),
    })?;
    let holdout: Vec<LqrTask> = holdout_idx.iter().map(|&i| source.tasks[i].clone()).collect();
    let optima = TaskOptima::compute(&holdout)?;
    let mut results = Vec::with_capacity(holdout.len());
    for (h, ((task, k_star), &j_star)) in holdout.iter().zip(&optima.gains).zip(&optima.costs).enumerate() {
        let index = holdout_idx[h];
        let baseline = random_baseline_gain(task, k_star, j_star, seed, index)?;
        if !lqr::is_stabilizing(task, &learned)? {
            return Err(Error::Stability {
                task: Some(index),
                rho: lqr::spectral_radius(&task.closed_loop(&learned)?)?,
            });
        }
        let from_learned = maml::pg_lqr_finetune(task, &learned, &cfg.finetune, Some(j_star), seed)?;
        let from_baseline = maml::pg_lqr_finetune(task, &baseline, &cfg.finetune, Some(j_star), seed)?;
        results.push(HoldoutResult {
            task_index: index,
            optimal_cost: j_star,
            initial_gap_learned: from_learned.trace[0],
            initial_gap_baseline: from_baseline.trace[0],
            iterations_learned: from_learned.iterations,
            iterations_baseline: from_baseline.iterations,
            converged_learned: from_learned.converged,
            converged_baseline: from_baseline.converged,
        });
    }
    let it_l: Vec<f64> = results.iter().map(|r| r.iterations_learned as f64).collect();
    let it_b: Vec<f64> = results.iter().map(|r| r.iterations_baseline as f64).collect();
    let report = AdaptationReport {
        context: ctx,
        algorithm,
        seed,
        train: train_idx,
        holdout: holdout_idx,
        training,
        median_learned: median(&it_l),
        median_baseline: median(&it_b),
        results,
        tolerance: cfg.finetune.tol,
    };
    write_json(out, "adaptation.json", &report)?;
    let mut csv = String::from("task_id,optimal_cost,initial_gap_learned,iterations_learned,initial_gap_baseline,iterations_baseline\n");
    for r in &report.results {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.task_index, r.optimal_cost, r.initial_gap_learned, r.iterations_learned, r.initial_gap_baseline, r.iterations_baseline
        ));
    }
    std::fs::write(out.join("adaptation.csv"), csv)?;
    if cfg.plot {
        let series = vec![
            Series {
                group: "learned".into(),
                points: report.results.iter().map(|r| (r.task_index as f64, r.iterations_learned as f64 + 1.0)).collect(),
            },
            Series {
                group: "random".into(),
                points: report.results.iter().map(|r| (r.task_index as f64, r.iterations_baseline as f64 + 1.0)).collect(),
            },
        ];
        plot::emit_plot(
            &series,
            &out.join("adaptation.svg"),
            &PlotOptions {
                title: "fine-tuning iterations to tolerance (plus one)".into(),
                x_label: "holdout task".into(),
                y_label: "iterations + 1".into(),
                ..Default::default()
            },
        )?;
    }
    Ok(report)
}

/// Theorem-condition report at the initial gain of the first seed's task set.
pub fn run_check_theory(cfg: &ExperimentConfig, algorithm: Algorithm, out: &Path) -> Result<ConditionReport> {
    std::fs::create_dir_all(out)?;
    let seed = cfg.seeds[0];
    let source = cfg.task_source(seed, None)?;
    let g0 = cfg.initial_gain_for(&source)?;
    let maml_cfg = cfg.maml(algorithm, seed);
    let zo = match &maml_cfg.mode {
        maml::MamlMode::ModelFree(z) => Some(z.clone()),
        maml::MamlMode::ModelBased => None,
    };
    let report = theory::theorem_conditions(&source.tasks, &g0, &maml_cfg, zo.as_ref(), &[], &cfg.theory)?;
    write_json(out, "theory.json", &report)?;
    std::fs::write(out.join("theory.txt"), report.table())?;
    Ok(report)
}

/// Writes the generated bundle to `out/tasks.json`.
pub fn generate_tasks(spec: &GenSpec, initial_gain: Option<Gain>, out: &Path) -> Result<TaskBundle> {
    std::fs::create_dir_all(out)?;
    let gain = match initial_gain {
        Some(g) => Some(g),
        None if (spec.nominal.nx(), spec.nominal.nu()) == (4, 2) => Some(taskgen::boeing_nominal().1),
        None => None,
    };
    let bundle = TaskBundle::from_spec(spec, gain)?;
    write_json(out, "tasks.json", &bundle)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn baseline_gain_is_far_and_stabilizing() {
        let (task, _) = taskgen::boeing_nominal();
        let k = lqr::optimal_gain(&task).unwrap();
        let j = lqr::cost(&task, &k).unwrap();
        let g = random_baseline_gain(&task, &k, j, 1, 0).unwrap();
        assert!(lqr::is_stabilizing(&task, &g).unwrap());
        assert!(lqr::cost(&task, &g).unwrap() >= 2.0 * j);
        assert_eq!(g, random_baseline_gain(&task, &k, j, 1, 0).unwrap());
    }
}
