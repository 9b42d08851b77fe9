//! Set-level norms at a gain (`‖·‖_max`, `‖·‖_min`, `J_max`, ...) feeding the
//! heterogeneity and smoothness polynomials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lqr::{self, Gain, LqrTask};

/// All scalar ingredients of the bound polynomials, evaluated over a task set
/// at one gain. Norms without subscript are spectral norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub nx: usize,
    pub nu: usize,
    /// Per-task cost at the gain.
    pub costs: Vec<f64>,
    /// `max_i J⁽ⁱ⁾(K)`.
    pub j_max: f64,
    /// `min_i J⁽ⁱ⁾(K*_i)`; the reference level inside `h_G`, `h_c` and `h_0`.
    pub j_min: f64,
    /// `min_i σ_min(Σ₀⁽ⁱ⁾)`.
    pub mu: f64,
    /// `max_i ‖Σ₀⁽ⁱ⁾‖`.
    pub sigma0_norm: f64,
    /// `max_i Tr(Σ₀⁽ⁱ⁾)`.
    pub sigma0_trace: f64,
    /// `min_i σ_min(Q⁽ⁱ⁾)`.
    pub q_sigma_min: f64,
    /// `max_i σ_min(Q⁽ⁱ⁾)`.
    pub q_sigma_min_max: f64,
    /// `min_i σ_min(R⁽ⁱ⁾)`.
    pub r_sigma_min: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub q_max: f64,
    /// `‖Q‖_min = min_i ‖Q⁽ⁱ⁾‖`.
    pub q_min: f64,
    pub r_max: f64,
    /// `max_i Tr(R⁽ⁱ⁾)`.
    pub r_trace_max: f64,
    /// `‖A − BK‖_max`.
    pub acl_max: f64,
    /// `max_i |Tr(A⁽ⁱ⁾ − B⁽ⁱ⁾K)|`.
    pub acl_trace_max: f64,
    /// `‖K‖` (spectral).
    pub k_norm: f64,
    /// `max_i ‖R⁽ⁱ⁾ + B⁽ⁱ⁾ᵀP⁽ⁱ⁾_K B⁽ⁱ⁾‖`.
    pub rbpb_max: f64,
    /// `max_i ‖B⁽ⁱ⁾ᵀP⁽ⁱ⁾_K A⁽ⁱ⁾‖`.
    pub bpa_max: f64,
}

impl SetSummary {
    /// `ν(K) = J_max / (min_i σ_min(Q⁽ⁱ⁾) μ)`.
    pub fn nu_k(&self) -> f64 {
        self.j_max / (self.q_sigma_min * self.mu)
    }

    /// `‖P_K‖_max ≤ J_max / μ`, the bound used by the heterogeneity polynomials.
    pub fn p_bound(&self) -> f64 {
        self.j_max / self.mu
    }

    /// `J_max / min_i σ_min(Q⁽ⁱ⁾)`, the bound on `‖Σ_K‖`.
    pub fn sigma_bound(&self) -> f64 {
        self.j_max / self.q_sigma_min
    }
}

pub(crate) fn check_task_set(tasks: &[LqrTask]) -> Result<()> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidInput("empty task set".into()))?;
    if tasks.iter().any(|t| !t.same_shape(first)) {
        return Err(Error::Dimension("tasks in a set must share (n_x, n_u)".into()));
    }
    Ok(())
}

/// Optimal costs `J⁽ⁱ⁾(K*_i)` are needed for `j_min`; callers that already
/// hold them can pass them to avoid repeated Riccati solves.
pub fn summarize(tasks: &[LqrTask], gain: &Gain, optimal_costs: Option<&[f64]>) -> Result<SetSummary> {
    check_task_set(tasks)?;
    let optimal: Vec<f64> = match optimal_costs {
        Some(c) if c.len() == tasks.len() => c.to_vec(),
        Some(_) => return Err(Error::Dimension("optimal cost list length differs from task count".into())),
        None => tasks
            .iter()
            .map(|t| lqr::optimal_gain(t).and_then(|k| lqr::cost(t, &k)))
            .collect::<Result<_>>()?,
    };
    let k = gain.matrix();
    let mut costs = Vec::with_capacity(tasks.len());
    let mut rbpb_max = 0.0f64;
    let mut bpa_max = 0.0f64;
    let mut acl_max = 0.0f64;
    let mut acl_trace_max = 0.0f64;
    for (i, t) in tasks.iter().enumerate() {
        let eval = lqr::evaluate(t, gain).map_err(|e| e.with_task(i))?;
        let p = &eval.quantities().p;
        costs.push(eval.cost());
        rbpb_max = rbpb_max.max(linalg::spectral_norm(&(t.r() + t.b().transpose() * p * t.b())));
        bpa_max = bpa_max.max(linalg::spectral_norm(&(t.b().transpose() * p * t.a())));
        acl_max = acl_max.max(linalg::spectral_norm(eval.closed_loop()));
        acl_trace_max = acl_trace_max.max(eval.closed_loop().trace().abs());
    }
    let max_of = |f: &dyn Fn(&LqrTask) -> f64| tasks.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let min_of = |f: &dyn Fn(&LqrTask) -> f64| tasks.iter().map(f).fold(f64::INFINITY, f64::min);
    let norm = |m: &Mat| linalg::spectral_norm(m);
    Ok(SetSummary {
        nx: tasks[0].nx(),
        nu: tasks[0].nu(),
        j_max: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        j_min: optimal.iter().copied().fold(f64::INFINITY, f64::min),
        costs,
        mu: min_of(&|t| t.mu()),
        sigma0_norm: max_of(&|t| norm(t.sigma0())),
        sigma0_trace: max_of(&|t| t.sigma0().trace()),
        q_sigma_min: min_of(&|t| linalg::sigma_min(t.q())),
        q_sigma_min_max: max_of(&|t| linalg::sigma_min(t.q())),
        r_sigma_min: min_of(&|t| linalg::sigma_min(t.r())),
        a_max: max_of(&|t| norm(t.a())),
        b_max: max_of(&|t| norm(t.b())),
        q_max: max_of(&|t| norm(t.q())),
        q_min: min_of(&|t| norm(t.q())),
        r_max: max_of(&|t| norm(t.r())),
        r_trace_max: max_of(&|t| t.r().trace()),
        acl_max,
        acl_trace_max,
        k_norm: norm(k),
        rbpb_max,
        bpa_max,
    })
}
