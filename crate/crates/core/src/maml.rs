//! Meta-learning loops over a task set: one inner policy-gradient step per
//! task, then an outer step on the averaged post-adaptation gradient.
//!
//! The model-based loop applies `H⁽ⁱ⁾(K) = I − η_l∇²J⁽ⁱ⁾(K)` as an operator on
//! `n_u × n_x` matrices through [`lqr::Evaluation::hessian_action`]. The
//! model-free loop uses the `n_u × n_u` zeroth-order Hessian estimate and
//! multiplies it from the left, as the estimator is defined.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lqr::{self, Gain, LqrTask};
use crate::summary;
use crate::zo::{self, Domain, StreamKey, ZoConfig};

/// What to do when an iterate leaves the stabilizing set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardPolicy {
    #[default]
    Halt,
    /// Halve the offending step size (or smoothing radius) up to this many times.
    Backtrack(u32),
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MamlMode {
    ModelBased,
    ModelFree(ZoConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MamlConfig {
    pub eta_l: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub iterations: usize,
    #[serde(default)]
    pub guard: GuardPolicy,
    pub mode: MamlMode,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            eta_l: 8e-6,
            eta: 8e-6,
            iterations: 200,
            guard: GuardPolicy::Halt,
            mode: MamlMode::ModelBased,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_l", self.eta_l), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let MamlMode::ModelFree(zo) = &self.mode {
            zo.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardEvent {
    pub iteration: usize,
    pub task: Option<usize>,
    pub kind: String,
    pub detail: String,
}

/// Telemetry for the iterate `K_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub costs: Vec<f64>,
    pub gaps: Vec<f64>,
    /// `ρ(A⁽ⁱ⁾ − B⁽ⁱ⁾K_n)` per task.
    pub rho: Vec<f64>,
    /// For each task's inner iterate, the largest closed-loop spectral radius
    /// over the whole set. Empty on the final row.
    pub inner_rho: Vec<f64>,
    /// `‖∇J_ML(K_n)‖_F` of the step taken from this iterate; `None` on the final row.
    pub grad_norm: Option<f64>,
    pub event: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub optimal_costs: Vec<f64>,
    /// `Δ₀⁽ⁱ⁾ = J⁽ⁱ⁾(K₀) − J⁽ⁱ⁾(K*_i)`.
    pub delta0: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub events: Vec<GuardEvent>,
    /// Every gain accepted by the loop, starting at `K₀`.
    #[serde(skip)]
    pub gains: Vec<Gain>,
}

impl ConvergenceRecord {
    pub fn final_gaps(&self) -> Option<&[f64]> {
        self.iterations.last().map(|r| r.gaps.as_slice())
    }

    pub fn guard_failures(&self) -> usize {
        self.events.iter().filter(|e| e.kind == "halt" || e.kind == "exhausted").count()
    }

    /// Largest spectral radius seen across accepted iterates and their inner iterates.
    pub fn max_rho(&self) -> f64 {
        self.iterations
            .iter()
            .flat_map(|r| r.rho.iter().chain(r.inner_rho.iter()))
            .copied()
            .fold(0.0, f64::max)
    }

    /// CSV with columns `iteration,task_id,cost,cost_gap,rho,grad_norm,event`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,task_id,cost,cost_gap,rho,grad_norm,event\n");
        for row in &self.iterations {
            let grad = row.grad_norm.map(|g| g.to_string()).unwrap_or_default();
            let event = row.event.as_deref().unwrap_or("");
            for (i, ((c, g), r)) in row.costs.iter().zip(&row.gaps).zip(&row.rho).enumerate() {
                out.push_str(&format!("{},{},{},{},{},{},{}\n", row.iteration, i, c, g, r, grad, event));
            }
        }
        out
    }
}

/// Cached per-task optima used for cost-gap telemetry.
#[derive(Clone, Debug)]
pub struct TaskOptima {
    pub gains: Vec<Gain>,
    pub costs: Vec<f64>,
}

impl TaskOptima {
    pub fn compute(tasks: &[LqrTask]) -> Result<Self> {
        let gains = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| lqr::optimal_gain(t).map_err(|e| e.with_task(i)))
            .collect::<Result<Vec<_>>>()?;
        let costs = tasks
            .iter()
            .zip(&gains)
            .map(|(t, k)| lqr::cost(t, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { gains, costs })
    }
}

/// Largest closed-loop spectral radius of `gain` over the set and the index
/// of the first task it fails to stabilize, if any.
fn set_stability(tasks: &[LqrTask], gain: &Gain) -> Result<(f64, Option<usize>)> {
    let mut worst = 0.0f64;
    let mut failing = None;
    for (i, t) in tasks.iter().enumerate() {
        let rho = lqr::spectral_radius(&t.closed_loop(gain)?)?;
        worst = worst.max(rho);
        if failing.is_none() && rho >= 1.0 - lqr::STABILITY_MARGIN {
            failing = Some(i);
        }
    }
    Ok((worst, failing))
}

/// `∇J_ML(K) = (1/M) Σ_i [∇J⁽ⁱ⁾(K̄ᵢ) − η_l ∇²J⁽ⁱ⁾(K)[∇J⁽ⁱ⁾(K̄ᵢ)]]`, `K̄ᵢ = K − η_l∇J⁽ⁱ⁾(K)`.
pub fn maml_gradient_mb(tasks: &[LqrTask], gain: &Gain, eta_l: f64) -> Result<Mat> {
    summary::check_task_set(tasks)?;
    let (nu, nx) = gain.shape();
    let mut total = Mat::zeros(nu, nx);
    for (i, t) in tasks.iter().enumerate() {
        let eval = lqr::evaluate(t, gain).map_err(|e| e.with_task(i))?;
        total += task_meta_gradient(&eval, t, eta_l).map_err(|e| e.with_task(i))?;
    }
    Ok(total / tasks.len() as f64)
}

fn task_meta_gradient(eval: &lqr::Evaluation<'_>, task: &LqrTask, eta_l: f64) -> Result<Mat> {
    let inner = eval.gain().stepped(&eval.gradient(), eta_l);
    let g_inner = lqr::gradient_exact(task, &inner)?;
    let curvature = eval.hessian_action(&g_inner)?;
    Ok(&g_inner - curvature * eta_l)
}

struct Snapshot {
    costs: Vec<f64>,
    rho: Vec<f64>,
}

fn snapshot(tasks: &[LqrTask], gain: &Gain) -> Result<Snapshot> {
    let mut costs = Vec::with_capacity(tasks.len());
    let mut rho = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let eval = lqr::evaluate(t, gain).map_err(|e| e.with_task(i))?;
        costs.push(eval.cost());
        rho.push(eval.rho());
    }
    Ok(Snapshot { costs, rho })
}

struct Run<'a> {
    tasks: &'a [LqrTask],
    cfg: &'a MamlConfig,
    optima: TaskOptima,
    record: ConvergenceRecord,
}

impl<'a> Run<'a> {
    fn start(tasks: &'a [LqrTask], g0: &Gain, cfg: &'a MamlConfig, optima: Option<TaskOptima>) -> Result<Self> {
        summary::check_task_set(tasks)?;
        cfg.validate()?;
        tasks[0].check_gain(g0)?;
        let (_, failing) = set_stability(tasks, g0)?;
        if let Some(i) = failing {
            let rho = lqr::spectral_radius(&tasks[i].closed_loop(g0)?)?;
            return Err(Error::Stability { task: Some(i), rho });
        }
        let optima = match optima {
            Some(o) if o.costs.len() == tasks.len() => o,
            _ => TaskOptima::compute(tasks)?,
        };
        let initial = snapshot(tasks, g0)?;
        let delta0 = initial.costs.iter().zip(&optima.costs).map(|(j, js)| j - js).collect();
        let record = ConvergenceRecord {
            optimal_costs: optima.costs.clone(),
            delta0,
            gains: vec![g0.clone()],
            ..Default::default()
        };
        Ok(Self { tasks, cfg, optima, record })
    }

    fn push_row(&mut self, iteration: usize, snap: Snapshot, inner_rho: Vec<f64>, grad_norm: Option<f64>, event: Option<String>) {
        let gaps = snap.costs.iter().zip(&self.optima.costs).map(|(j, js)| j - js).collect();
        self.record.iterations.push(IterationRecord {
            iteration,
            costs: snap.costs,
            gaps,
            rho: snap.rho,
            inner_rho,
            grad_norm,
            event,
        });
    }

    fn event(&mut self, iteration: usize, task: Option<usize>, kind: &str, detail: String) {
        debug!("iteration {iteration}: {kind} {detail}");
        self.record.events.push(GuardEvent {
            iteration,
            task,
            kind: kind.to_string(),
            detail,
        });
    }

    fn fail(mut self, iteration: usize, task: Option<usize>, kind: &str, reason: String) -> Error {
        warn!("guard stop at iteration {iteration}: {reason}");
        self.event(iteration, task, kind, reason.clone());
        Error::Guard {
            iteration,
            reason,
            record: Box::new(self.record),
        }
    }

    fn max_halvings(&self) -> u32 {
        match self.cfg.guard {
            GuardPolicy::Halt => 0,
            GuardPolicy::Backtrack(n) => n,
        }
    }

    /// Outer step with the guard applied; returns the accepted gain and whether
    /// any halving happened.
    fn outer_step(&mut self, n: usize, gain: &Gain, direction: &Mat) -> std::result::Result<(Gain, bool), (Option<usize>, String)> {
        let mut eta = self.cfg.eta;
        for halvings in 0..=self.max_halvings() {
            let next = gain.stepped(direction, eta);
            match set_stability(self.tasks, &next) {
                Ok((_, None)) => return Ok((next, halvings > 0)),
                Ok((rho, Some(i))) => {
                    let detail = format!("outer step η = {eta:.3e} leaves the stabilizing set (ρ = {rho:.6})");
                    if halvings < self.max_halvings() {
                        self.event(n, Some(i), "backtrack", detail);
                        eta *= 0.5;
                    } else {
                        return Err((Some(i), detail));
                    }
                }
                Err(e) => return Err((None, e.to_string())),
            }
        }
        unreachable!("loop always returns")
    }
}

/// Model-based meta-learning from `g0` for `cfg.iterations` outer steps.
pub fn run_model_based(tasks: &[LqrTask], g0: &Gain, cfg: &MamlConfig) -> Result<(Gain, ConvergenceRecord)> {
    run_model_based_with(tasks, g0, cfg, None)
}

/// As [`run_model_based`], reusing precomputed task optima.
pub fn run_model_based_with(
    tasks: &[LqrTask],
    g0: &Gain,
    cfg: &MamlConfig,
    optima: Option<TaskOptima>,
) -> Result<(Gain, ConvergenceRecord)> {
    let mut run = Run::start(tasks, g0, cfg, optima)?;
    let mut gain = g0.clone();
    let (nu, nx) = gain.shape();
    for n in 0..cfg.iterations {
        let evals = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| lqr::evaluate(t, &gain).map_err(|e| e.with_task(i)))
            .collect::<Result<Vec<_>>>()?;
        let snap = Snapshot {
            costs: evals.iter().map(|e| e.cost()).collect(),
            rho: evals.iter().map(|e| e.rho()).collect(),
        };
        let mut direction = Mat::zeros(nu, nx);
        let mut inner_rho = Vec::with_capacity(tasks.len());
        let mut halved = false;
        for (i, (t, eval)) in tasks.iter().zip(&evals).enumerate() {
            let grad = eval.gradient();
            let mut eta_l = cfg.eta_l;
            let mut accepted = None;
            for halvings in 0..=run.max_halvings() {
                let inner = gain.stepped(&grad, eta_l);
                let (rho, failing) = set_stability(tasks, &inner)?;
                match failing {
                    None => {
                        accepted = Some((inner, rho, eta_l));
                        break;
                    }
                    Some(j) => {
                        let detail = format!(
                            "inner iterate of task {i} with η_l = {eta_l:.3e} destabilizes task {j} (ρ = {rho:.6})"
                        );
                        if halvings < run.max_halvings() {
                            run.event(n, Some(i), "backtrack", detail);
                            eta_l *= 0.5;
                            halved = true;
                        } else {
                            let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                            return Err(run.fail(n, Some(i), kind, detail));
                        }
                    }
                }
            }
            let (inner, rho, eta_l) = accepted.expect("accepted or returned");
            inner_rho.push(rho);
            let g_inner = lqr::gradient_exact(t, &inner).map_err(|e| e.with_task(i))?;
            let curvature = eval.hessian_action(&g_inner).map_err(|e| e.with_task(i))?;
            direction += &g_inner - curvature * eta_l;
        }
        direction /= tasks.len() as f64;
        let grad_norm = direction.norm();
        drop(evals);
        match run.outer_step(n, &gain, &direction) {
            Ok((next, outer_halved)) => {
                let event = (halved || outer_halved).then(|| "backtrack".to_string());
                run.push_row(n, snap, inner_rho, Some(grad_norm), event);
                gain = next;
                run.record.gains.push(gain.clone());
            }
            Err((task, reason)) => {
                run.push_row(n, snap, inner_rho, Some(grad_norm), Some("halt".into()));
                let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                return Err(run.fail(n, task, kind, reason));
            }
        }
    }
    let snap = snapshot(tasks, &gain)?;
    run.push_row(cfg.iterations, snap, Vec::new(), None, None);
    Ok((gain, run.record))
}

/// Model-free meta-learning: gradients and Hessians from two-point estimates,
/// with fresh samples for the estimate at each inner iterate.
pub fn run_model_free(tasks: &[LqrTask], g0: &Gain, cfg: &MamlConfig) -> Result<(Gain, ConvergenceRecord)> {
    run_model_free_with(tasks, g0, cfg, None)
}

pub fn run_model_free_with(
    tasks: &[LqrTask],
    g0: &Gain,
    cfg: &MamlConfig,
    optima: Option<TaskOptima>,
) -> Result<(Gain, ConvergenceRecord)> {
    let zo_cfg = match &cfg.mode {
        MamlMode::ModelFree(z) => z.clone(),
        MamlMode::ModelBased => {
            return Err(Error::Config("model-free run needs a zo configuration".into()));
        }
    };
    let mut run = Run::start(tasks, g0, cfg, optima)?;
    let mut gain = g0.clone();
    let (nu, nx) = gain.shape();
    let eye = Mat::identity(nu, nu);
    for n in 0..cfg.iterations {
        let snap = snapshot(tasks, &gain)?;
        let mut direction = Mat::zeros(nu, nx);
        let mut inner_rho = Vec::with_capacity(tasks.len());
        let mut halved = false;
        for (i, t) in tasks.iter().enumerate() {
            let outer_key = StreamKey::new(zo_cfg.rng_seed, Domain::ZoOuter, i, n);
            let est = match estimate_guarded(&mut run, t, &gain, &zo_cfg, outer_key, n, i, &mut halved) {
                Ok(e) => e,
                Err(reason) => {
                    let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                    return Err(run.fail(n, Some(i), kind, reason));
                }
            };
            let mut eta_l = cfg.eta_l;
            let mut accepted = None;
            for halvings in 0..=run.max_halvings() {
                let inner = gain.stepped(&est.grad, eta_l);
                let (rho, failing) = set_stability(tasks, &inner)?;
                match failing {
                    None => {
                        accepted = Some((inner, rho, eta_l));
                        break;
                    }
                    Some(j) => {
                        let detail = format!(
                            "estimated inner iterate of task {i} with η_l = {eta_l:.3e} destabilizes task {j} (ρ = {rho:.6})"
                        );
                        if halvings < run.max_halvings() {
                            run.event(n, Some(i), "backtrack", detail);
                            eta_l *= 0.5;
                            halved = true;
                        } else {
                            let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                            return Err(run.fail(n, Some(i), kind, detail));
                        }
                    }
                }
            }
            let (inner, rho, eta_l) = accepted.expect("accepted or returned");
            inner_rho.push(rho);
            let inner_key = StreamKey::new(zo_cfg.rng_seed, Domain::ZoInner, i, n);
            let inner_est = match estimate_guarded(&mut run, t, &inner, &zo_cfg, inner_key, n, i, &mut halved) {
                Ok(e) => e,
                Err(reason) => {
                    let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                    return Err(run.fail(n, Some(i), kind, reason));
                }
            };
            let h_hat = &eye - &est.hess * eta_l;
            direction += h_hat * inner_est.grad;
        }
        direction /= tasks.len() as f64;
        let grad_norm = direction.norm();
        match run.outer_step(n, &gain, &direction) {
            Ok((next, outer_halved)) => {
                let event = (halved || outer_halved).then(|| "backtrack".to_string());
                run.push_row(n, snap, inner_rho, Some(grad_norm), event);
                gain = next;
                run.record.gains.push(gain.clone());
            }
            Err((task, reason)) => {
                run.push_row(n, snap, inner_rho, Some(grad_norm), Some("halt".into()));
                let kind = if run.max_halvings() == 0 { "halt" } else { "exhausted" };
                return Err(run.fail(n, task, kind, reason));
            }
        }
    }
    let snap = snapshot(tasks, &gain)?;
    run.push_row(cfg.iterations, snap, Vec::new(), None, None);
    Ok((gain, run.record))
}

/// Runs ZO2P, halving the smoothing radius on destabilizing samples when the
/// guard allows it.
#[allow(clippy::too_many_arguments)]
fn estimate_guarded(
    run: &mut Run<'_>,
    task: &LqrTask,
    gain: &Gain,
    cfg: &ZoConfig,
    key: StreamKey,
    n: usize,
    i: usize,
    halved: &mut bool,
) -> std::result::Result<zo::ZoEstimate, String> {
    let mut local = cfg.clone();
    for halvings in 0..=run.max_halvings() {
        match zo::zo2p(task, gain, &local, key) {
            Ok(est) => return Ok(est),
            Err(Error::Estimation { sample, rho }) => {
                let detail = format!("ZO2P sample {sample} at r = {:.3e} destabilized task {i} (ρ = {rho:.6})", local.r);
                if halvings < run.max_halvings() {
                    run.event(n, Some(i), "shrink_radius", detail);
                    local.r *= 0.5;
                    *halved = true;
                } else {
                    return Err(detail);
                }
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    unreachable!("loop always returns")
}

/// Runs the loop selected by `cfg.mode`.
pub fn run(tasks: &[LqrTask], g0: &Gain, cfg: &MamlConfig, optima: Option<TaskOptima>) -> Result<(Gain, ConvergenceRecord)> {
    match cfg.mode {
        MamlMode::ModelBased => run_model_based_with(tasks, g0, cfg, optima),
        MamlMode::ModelFree(_) => run_model_free_with(tasks, g0, cfg, optima),
    }
}

/// Gradient source for single-task fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Exact,
    ZeroOrder(ZoConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub eta: f64,
    /// Stop once `J(K) − J(K*) ≤ tol · J(K*)`.
    pub tol: f64,
    pub max_iters: usize,
    pub gradient: GradientSource,
    /// Halvings allowed per step when a step destabilizes or raises the cost.
    pub max_halvings: u32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            tol: 0.05,
            max_iters: 5000,
            gradient: GradientSource::Exact,
            max_halvings: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub gain: Gain,
    pub iterations: usize,
    pub converged: bool,
    /// Relative cost gap `(J(K) − J*)/J*` after each iteration, starting at `K₀`.
    pub trace: Vec<f64>,
}

/// Single-task policy gradient `K ← K − η∇J(K)` until within `tol` of the
/// optimal cost. Steps that destabilize or increase the cost are halved.
pub fn pg_lqr_finetune(task: &LqrTask, g0: &Gain, cfg: &FinetuneConfig, optimal_cost: Option<f64>, seed: u64) -> Result<FinetuneOutcome> {
    let j_star = match optimal_cost {
        Some(c) => c,
        None => lqr::cost(task, &lqr::optimal_gain(task)?)?,
    };
    let mut gain = g0.clone();
    let mut j = lqr::cost(task, &gain)?;
    let mut trace = vec![(j - j_star) / j_star];
    for it in 0..cfg.max_iters {
        if j - j_star <= cfg.tol * j_star {
            return Ok(FinetuneOutcome { gain, iterations: it, converged: true, trace });
        }
        let grad = match &cfg.gradient {
            GradientSource::Exact => lqr::gradient_exact(task, &gain)?,
            GradientSource::ZeroOrder(z) => zo::zo2p(task, &gain, z, StreamKey::new(seed ^ z.rng_seed, Domain::Finetune, 0, it))?.grad,
        };
        let mut eta = cfg.eta;
        let mut stepped = None;
        for _ in 0..=cfg.max_halvings {
            let next = gain.stepped(&grad, eta);
            if lqr::is_stabilizing(task, &next)? {
                let jn = lqr::cost(task, &next)?;
                if jn <= j || matches!(cfg.gradient, GradientSource::ZeroOrder(_)) {
                    stepped = Some((next, jn));
                    break;
                }
            }
            eta *= 0.5;
        }
        let (next, jn) = stepped.ok_or_else(|| Error::Guard {
            iteration: it,
            reason: "fine-tuning step could not be made stabilizing and descending".into(),
            record: Box::default(),
        })?;
        gain = next;
        j = jn;
        trace.push((j - j_star) / j_star);
    }
    let converged = j - j_star <= cfg.tol * j_star;
    Ok(FinetuneOutcome { gain, iterations: cfg.max_iters, converged, trace })
}

/// Smallest closed-loop stability margin `1 − ρ` of `gain` over the set.
pub fn stability_margin(tasks: &[LqrTask], gain: &Gain) -> Result<f64> {
    Ok(1.0 - set_stability(tasks, gain)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, q: f64) -> LqrTask {
        LqrTask::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, q),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_inner_step_is_plain_average() {
        let tasks = [scalar(0.5, 1.0), scalar(0.6, 2.0)];
        let k = Gain::from_row_slice(1, 1, &[0.1]);
        let g = maml_gradient_mb(&tasks, &k, 0.0).unwrap();
        let avg = (lqr::gradient_exact(&tasks[0], &k).unwrap() + lqr::gradient_exact(&tasks[1], &k).unwrap()) / 2.0;
        assert!((g - avg).norm() < 1e-14);
    }

    #[test]
    fn zero_iterations_returns_initial_gain() {
        let tasks = [scalar(0.5, 1.0)];
        let k0 = Gain::from_row_slice(1, 1, &[0.1]);
        let cfg = MamlConfig { iterations: 0, eta: 0.1, eta_l: 0.01, ..Default::default() };
        let (k, rec) = run_model_based(&tasks, &k0, &cfg).unwrap();
        assert_eq!(k, k0);
        assert_eq!(rec.iterations.len(), 1);
        let cfg = MamlConfig { mode: MamlMode::ModelFree(ZoConfig::default()), ..cfg };
        let (k, _) = run_model_free(&tasks, &k0, &cfg).unwrap();
        assert_eq!(k, k0);
    }

    #[test]
    fn unstable_start_is_rejected() {
        let tasks = [scalar(1.5, 1.0)];
        let err = run_model_based(&tasks, &Gain::zeros(1, 1), &MamlConfig::default());
        assert!(matches!(err, Err(Error::Stability { task: Some(0), .. })));
    }

    #[test]
    fn halt_guard_reports_partial_record() {
        // a huge outer step overshoots the stabilizing interval
        let tasks = [scalar(0.5, 1.0)];
        let cfg = MamlConfig { eta: 50.0, eta_l: 1e-3, iterations: 5, ..Default::default() };
        match run_model_based(&tasks, &Gain::zeros(1, 1), &cfg) {
            Err(Error::Guard { iteration, record, .. }) => {
                assert_eq!(iteration, 0);
                assert_eq!(record.guard_failures(), 1);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
        let cfg = MamlConfig { guard: GuardPolicy::Backtrack(20), ..cfg };
        let (_, rec) = run_model_based(&tasks, &Gain::zeros(1, 1), &cfg).unwrap();
        assert!(rec.events.iter().any(|e| e.kind == "backtrack"));
        assert!(rec.max_rho() < 1.0);
    }

    #[test]
    fn finetune_from_optimum_takes_no_steps() {
        let t = scalar(0.5, 1.0);
        let k = lqr::optimal_gain(&t).unwrap();
        let out = pg_lqr_finetune(&t, &k, &FinetuneConfig::default(), None, 0).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{"eta_l": 1e-5, "eta": 2e-5, "N": 10, "guard": {"backtrack": 20},
                       "mode": {"model_free": {"r": 0.01, "m": 20}}}"#;
        let cfg: MamlConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.guard, GuardPolicy::Backtrack(20));
        assert!(matches!(cfg.mode, MamlMode::ModelFree(ref z) if z.m == 20));
        let halt: MamlConfig = serde_json::from_str(r#"{"eta_l": 1e-5, "eta": 1e-5, "N": 1, "guard": "halt", "mode": "model_based"}"#).unwrap();
        assert_eq!(halt.guard, GuardPolicy::Halt);
    }
}
