//! Closed-form smoothness constants, estimation budgets and step-size
//! conditions, evaluated as diagnostics.
//!
//! Suprema `h̄` and infima `h̲` over the stabilizing set are replaced by the
//! maximum and minimum over a finite proxy set of gains supplied by the caller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneity::{self, HeterogeneityProfile};
use crate::linalg;
use crate::lqr::{self, Gain, LqrTask};
use crate::maml::{MamlConfig, TaskOptima};
use crate::summary::{self, SetSummary};
use crate::zo::ZoConfig;

/// Uniform-bound and local-smoothness polynomials at one gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    #[serde(rename = "hG")]
    pub h_g: f64,
    #[serde(rename = "hH")]
    pub h_h: f64,
    #[serde(rename = "hc")]
    pub h_c: f64,
    #[serde(rename = "hDelta")]
    pub h_delta: f64,
    #[serde(rename = "hCost")]
    pub h_cost: f64,
    #[serde(rename = "hGrad")]
    pub h_grad: f64,
    #[serde(rename = "hHess")]
    pub h_hess: f64,
    /// Gradient-domination constant per task.
    pub lambda: Vec<f64>,
    pub nu: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub h6: f64,
    pub h7: f64,
    pub h8: f64,
    pub h9: f64,
    #[serde(rename = "xiTildeMax")]
    pub xi_tilde_max: f64,
    #[serde(rename = "muTilde")]
    pub mu_tilde: f64,
    pub j_max: f64,
}

pub fn constants_at(tasks: &[LqrTask], g: &Gain) -> Result<TheoryConstants> {
    let optima = TaskOptima::compute(tasks)?;
    constants_with(tasks, g, &optima)
}

/// As [`constants_at`] with the task optima already solved.
pub fn constants_with(tasks: &[LqrTask], g: &Gain, optima: &TaskOptima) -> Result<TheoryConstants> {
    let s = summary::summarize(tasks, g, Some(&optima.costs))?;
    let lambda = lambdas(tasks, optima, s.mu)?;
    Ok(constants_from(&s, lambda))
}

/// `λ_i = 4μ² σ_min(R⁽ⁱ⁾) / ‖Σ_{K*_i}‖`.
fn lambdas(tasks: &[LqrTask], optima: &TaskOptima, mu: f64) -> Result<Vec<f64>> {
    tasks
        .iter()
        .zip(&optima.gains)
        .enumerate()
        .map(|(i, (t, k))| {
            let sigma = lqr::lyapunov_quantities(t, k).map_err(|e| e.with_task(i))?.sigma;
            Ok(4.0 * mu * mu * linalg::sigma_min(t.r()) / linalg::spectral_norm(&sigma))
        })
        .collect()
}

fn constants_from(s: &SetSummary, lambda: Vec<f64>) -> TheoryConstants {
    let n_u = s.nu as f64;
    let j = s.j_max;
    let mu = s.mu;
    let qmin = s.q_sigma_min;
    let b = s.b_max;
    let a = s.a_max;
    let k = s.k_norm;
    let r = s.r_max;
    let acl1 = s.acl_max + 1.0;
    let jq = j / qmin;
    let nu = s.nu_k();

    let h0 = (s.rbpb_max * (j - s.j_min).max(0.0) / mu).sqrt();
    let h_g = j * h0 / qmin;
    let xi_tilde_max = ((1.0 + b * b) * j / mu + r - 1.0) / s.q_min;
    let h_h = (2.0 * r + 2.0 * b * j / mu + 4.0 * 2f64.sqrt() * xi_tilde_max * b * j / mu) * j * n_u / s.q_min;
    let h_c = (h0 + s.bpa_max) / s.r_sigma_min;

    let h_delta = s.q_sigma_min_max * mu / (4.0 * b * j * acl1);
    let h_cost = 4.0 * s.sigma0_trace * j * r / (mu * qmin) * (k + h_delta / 2.0 + b * k * k * acl1 * nu);
    let h_grad = 4.0 * jq * (r + b * (a + b * (k + h_delta)) * (h_cost * j / s.sigma0_trace) + b * b * j / mu)
        + 8.0 * jq * jq * (b * acl1 / mu) * h0;

    let mu_tilde = 1.0 + mu / h_delta;
    let h3 = 6.0 * jq * jq * k * k * r * b * acl1 + 6.0 * jq * k * r;
    let h4 = 4.0 * jq * jq * b * acl1 / mu;
    let h6 = ((r + (1.0 + b * b) / mu * j) / qmin - 1.0).max(0.0).sqrt();
    let h9 = 2.0 * (r * k + b * s.acl_max * j / mu);
    let h8 = r + b * b * j / mu + (b * a + b * b * k) * h3;
    let h7 = 4.0 * (nu * h8 + 8.0 * nu * nu * b * acl1 * h9);
    let h1 = h3 * b * b * jq + mu_tilde * h4 * b * j / mu + h4 * s.r_trace_max;
    let h2 = b * j * (h6 * h4 * s.acl_trace_max / mu + b * h6 * mu_tilde * nu + mu_tilde * h7 / qmin);
    let h_hess = 2.0 * (h1 + 2.0 * h2);

    TheoryConstants {
        h_g,
        h_h,
        h_c,
        h_delta,
        h_cost,
        h_grad,
        h_hess,
        lambda,
        nu,
        h0,
        h1,
        h2,
        h3,
        h4,
        h6,
        h7,
        h8,
        h9,
        xi_tilde_max,
        mu_tilde,
        j_max: j,
    }
}

/// Suprema and infima of the constants over a proxy set of gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyBounds {
    pub proxy_size: usize,
    pub h_g: f64,
    pub h_h: f64,
    pub h_cost: f64,
    pub h_grad: f64,
    pub h_hess: f64,
    /// Infimum of `h_Δ`.
    pub h_delta: f64,
    pub j_max: f64,
}

impl ProxyBounds {
    pub fn from_constants(cs: &[TheoryConstants]) -> Result<Self> {
        if cs.is_empty() {
            return Err(Error::InvalidInput("empty proxy set of gains".into()));
        }
        let sup = |f: fn(&TheoryConstants) -> f64| cs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            proxy_size: cs.len(),
            h_g: sup(|c| c.h_g),
            h_h: sup(|c| c.h_h),
            h_cost: sup(|c| c.h_cost),
            h_grad: sup(|c| c.h_grad),
            h_hess: sup(|c| c.h_hess),
            h_delta: cs.iter().map(|c| c.h_delta).fold(f64::INFINITY, f64::min),
            j_max: sup(|c| c.j_max),
        })
    }
}

/// Smoothing-radius caps and sample-count floors for a target accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoBudget {
    pub eps: f64,
    pub delta: f64,
    pub r_max_grad: f64,
    pub r_max_hess: f64,
    /// Ceiling-rounded sample count; kept as `f64` because it can exceed `u64`.
    pub m_min_grad: f64,
    pub m_min_hess: f64,
    #[serde(rename = "Br")]
    pub b_r: f64,
    pub sigma_r2: f64,
    #[serde(rename = "Br_bar")]
    pub b_r_bar: f64,
    pub sigma_r2_bar: f64,
}

impl ZoBudget {
    pub fn r_cap(&self) -> f64 {
        self.r_max_grad.min(self.r_max_hess)
    }

    pub fn m_floor(&self) -> f64 {
        self.m_min_grad.max(self.m_min_hess)
    }
}

pub fn zo_budget(tasks: &[LqrTask], gains: &[Gain], eps_target: f64, delta: f64) -> Result<ZoBudget> {
    let optima = TaskOptima::compute(tasks)?;
    let cs = gains
        .iter()
        .map(|g| constants_with(tasks, g, &optima))
        .collect::<Result<Vec<_>>>()?;
    budget_from(&ProxyBounds::from_constants(&cs)?, tasks[0].nx(), tasks[0].nu(), eps_target, delta)
}

/// Radius caps and sample floors at accuracy `eps` and failure probability `delta`.
pub fn budget_from(h: &ProxyBounds, nx: usize, nu: usize, eps: f64, delta: f64) -> Result<ZoBudget> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("target accuracy must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("failure probability must lie in (0, 1), got {delta}")));
    }
    let (nxf, nuf) = (nx as f64, nu as f64);
    let d = nxf.min(nuf);
    let r_max_grad = h.h_delta.min(1.0 / h.h_cost).min(eps / (2.0 * h.h_grad));
    let r_max_hess = h.h_delta.min(1.0 / h.h_cost).min(eps / (2.0 * h.h_hess));

    let spread = 2.0 * nxf * nuf * h.h_cost * h.j_max;
    let b_r = spread + eps / 2.0 + h.h_g;
    let sigma_r2 = spread * spread + (eps / 2.0 + h.h_g).powi(2);
    let m_min_grad = (8.0 * d / (eps * eps) * (sigma_r2 + b_r * eps / (6.0 * d.sqrt())) * ((nxf + nuf) / delta).ln()).ceil();

    let r = r_max_hess;
    let spread_bar = nuf * nuf * (nuf + r * r) / r * h.h_cost * h.j_max;
    let b_r_bar = spread_bar + eps / 2.0 + h.h_h;
    let sigma_r2_bar = spread_bar * spread_bar + (eps / 2.0 + h.h_h).powi(2);
    let m_min_hess = (8.0 * nuf / (eps * eps) * (sigma_r2_bar + b_r_bar * eps / (6.0 * nuf.sqrt())) * (2.0 * nuf / delta).ln()).ceil();

    Ok(ZoBudget {
        eps,
        delta,
        r_max_grad,
        r_max_hess,
        m_min_grad: m_min_grad.max(1.0),
        m_min_hess: m_min_hess.max(1.0),
        b_r,
        sigma_r2,
        b_r_bar,
        sigma_r2_bar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// `value ≤ limit`.
    Upper,
    /// `value ≥ limit`.
    Lower,
}

/// One checked inequality. Infinite values serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub theorem: u8,
    pub name: String,
    pub bound: Bound,
    #[serde(with = "extended_f64")]
    pub value: f64,
    #[serde(with = "extended_f64")]
    pub limit: f64,
    pub satisfied: bool,
    /// `limit / value` for upper bounds and `value / limit` for lower bounds;
    /// `None` when unbounded.
    pub margin: Option<f64>,
}

impl Condition {
    fn new(theorem: u8, name: &str, bound: Bound, value: f64, limit: f64) -> Self {
        let (satisfied, margin) = match bound {
            Bound::Upper => (value <= limit, ratio(limit, value)),
            Bound::Lower => (value >= limit, ratio(value, limit)),
        };
        Self {
            theorem,
            name: name.to_string(),
            bound,
            value,
            limit,
            satisfied,
            margin,
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    let q = num / den;
    (den > 0.0 && q.is_finite()).then_some(q)
}

/// Upper bounds on the final cost gap implied by the convergence theorems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasBounds {
    /// `ε′ + 144 n_u³ f̄_z² / λ_i` per task.
    pub model_based: Vec<f64>,
    /// `ε′ + 240 n_u³ f̄_z² / λ_i` per task.
    pub model_free: Vec<f64>,
    /// Gap between the meta-optimal gain and each task optimum.
    pub meta_optimum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub note: String,
    pub eps_prime: f64,
    pub delta: f64,
    pub proxy: ProxyBounds,
    pub constants_at_k0: TheoryConstants,
    pub delta0: Vec<f64>,
    /// `ψ⁽ⁱ⁾ = λ_iΔ₀⁽ⁱ⁾ / 1296`.
    pub psi: Vec<f64>,
    pub heterogeneity: Option<HeterogeneityProfile>,
    /// `f̄_z` over the proxy set.
    pub f_z: f64,
    /// Budget at accuracy `√ψ` with `ψ = min_i ψ⁽ⁱ⁾`.
    pub budget_stability: ZoBudget,
    /// Budget at accuracy `2ε′ min_i λ_i / 1296`.
    pub budget_convergence: ZoBudget,
    pub conditions: Vec<Condition>,
    pub bias: BiasBounds,
}

impl ConditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.satisfied)
    }

    /// Plain-text table, one condition per line.
    pub fn table(&self) -> String {
        let mut out = format!("{}\n", self.note);
        out.push_str(&format!("{:<4} {:<28} {:>14} {:>4} {:>14} {:>6}\n", "thm", "condition", "value", "", "limit", "ok"));
        for c in &self.conditions {
            let op = match c.bound {
                Bound::Upper => "<=",
                Bound::Lower => ">=",
            };
            out.push_str(&format!(
                "{:<4} {:<28} {:>14.6e} {:>4} {:>14.6e} {:>6}\n",
                c.theorem,
                c.name,
                c.value,
                op,
                c.limit,
                if c.satisfied { "yes" } else { "no" }
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryOptions {
    /// Tolerance `ε′` of the convergence theorems.
    pub eps_prime: f64,
    pub delta: f64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self { eps_prime: 0.1, delta: 0.05 }
    }
}

/// Evaluates the step-size, heterogeneity, estimation and iteration
/// conditions at `g0`, with suprema over `{g0} ∪ extra_gains`.
pub fn theorem_conditions(
    tasks: &[LqrTask],
    g0: &Gain,
    cfg: &MamlConfig,
    zo: Option<&ZoConfig>,
    extra_gains: &[Gain],
    opts: &TheoryOptions,
) -> Result<ConditionReport> {
    summary::check_task_set(tasks)?;
    let optima = TaskOptima::compute(tasks)?;
    let c0 = constants_with(tasks, g0, &optima)?;
    let mut all = vec![c0.clone()];
    for g in extra_gains {
        all.push(constants_with(tasks, g, &optima)?);
    }
    let h = ProxyBounds::from_constants(&all)?;
    let (nx, nu) = (tasks[0].nx(), tasks[0].nu());
    let n_u = nu as f64;
    let n_u3 = n_u.powi(3);

    let (heterogeneity, f_z) = if tasks.len() >= 2 {
        let profile = heterogeneity::measure(tasks)?;
        let mut f = 0.0f64;
        for g in std::iter::once(g0).chain(extra_gains) {
            let s = summary::summarize(tasks, g, Some(&optima.costs))?;
            f = f.max(heterogeneity::f_z_from(&profile, &heterogeneity::het_polynomials_from(&s)));
        }
        (Some(profile), f)
    } else {
        (None, 0.0)
    };

    let delta0: Vec<f64> = tasks
        .iter()
        .zip(&optima.costs)
        .map(|(t, js)| Ok(lqr::cost(t, g0)? - js))
        .collect::<Result<_>>()?;
    let lambda = &c0.lambda;
    let ld_min = lambda.iter().zip(&delta0).map(|(l, d)| l * d).fold(f64::INFINITY, f64::min);
    let lambda_min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let psi: Vec<f64> = lambda.iter().zip(&delta0).map(|(l, d)| l * d / 1296.0).collect();
    let psi_min = psi.iter().copied().fold(f64::INFINITY, f64::min);

    let budget_stability = budget_from(&h, nx, nu, psi_min.max(f64::MIN_POSITIVE).sqrt(), opts.delta)?;
    let budget_convergence = budget_from(&h, nx, nu, 2.0 * opts.eps_prime * lambda_min / 1296.0, opts.delta)?;

    let hg2 = h.h_grad * h.h_grad;
    let hh2 = h.h_h * h.h_h;
    let eta_l_mb = (n_u / (2f64.sqrt() * h.h_h))
        .min(1.0 / (2f64.sqrt() * h.h_grad))
        .min(1.0 / (12.0 * (12.0 * hg2 * n_u * n_u + hh2)).sqrt());
    let eta_l_mf = (1.0 / h.h_g)
        .min(n_u / h.h_h)
        .min(1.0 / h.h_grad)
        .min(1.0 / (20.0 * (12.0 * hg2 * n_u * n_u + hh2)).sqrt())
        .min(0.5);
    let eta_mb = 1.0 / (4.0 * h.h_grad);
    let eta_mf = 1.0 / (8.0 * h.h_grad);
    let iter_floor = |scale: f64| {
        lambda
            .iter()
            .zip(&delta0)
            .map(|(l, d)| 8.0 / (cfg.eta * l) * (scale * d / opts.eps_prime).ln())
            .fold(0.0f64, f64::max)
    };
    let n = cfg.iterations as f64;

    let mut conditions = vec![
        Condition::new(1, "eta_l", Bound::Upper, cfg.eta_l, eta_l_mb),
        Condition::new(1, "eta", Bound::Upper, cfg.eta, eta_mb),
        Condition::new(1, "f_z", Bound::Upper, f_z, (ld_min / (288.0 * n_u3)).max(0.0).sqrt()),
        Condition::new(2, "eta_l", Bound::Upper, cfg.eta_l, eta_l_mf),
        Condition::new(2, "eta", Bound::Upper, cfg.eta, eta_mf),
        Condition::new(2, "f_z", Bound::Upper, f_z, (ld_min / (480.0 * n_u3)).max(0.0).sqrt()),
    ];
    if let Some(z) = zo {
        conditions.push(Condition::new(2, "r", Bound::Upper, z.r, budget_stability.r_cap()));
        conditions.push(Condition::new(2, "m", Bound::Lower, z.m as f64, budget_stability.m_floor()));
    }
    conditions.extend([
        Condition::new(3, "eta_l", Bound::Upper, cfg.eta_l, eta_l_mb),
        Condition::new(3, "eta", Bound::Upper, cfg.eta, eta_mb),
        Condition::new(3, "N", Bound::Lower, n, iter_floor(1.0)),
        Condition::new(4, "eta_l", Bound::Upper, cfg.eta_l, eta_l_mf),
        Condition::new(4, "eta", Bound::Upper, cfg.eta, eta_mf),
    ]);
    if let Some(z) = zo {
        conditions.push(Condition::new(4, "r", Bound::Upper, z.r, budget_convergence.r_cap()));
        conditions.push(Condition::new(4, "m", Bound::Lower, z.m as f64, budget_convergence.m_floor()));
    }
    conditions.push(Condition::new(4, "N", Bound::Lower, n, iter_floor(2.0)));

    let s0 = summary::summarize(tasks, g0, Some(&optima.costs))?;
    let fz2 = f_z * f_z;
    let bias = BiasBounds {
        model_based: lambda.iter().map(|l| opts.eps_prime + 144.0 * n_u3 * fz2 / l).collect(),
        model_free: lambda.iter().map(|l| opts.eps_prime + 240.0 * n_u3 * fz2 / l).collect(),
        meta_optimum: 96.0 * s0.j_max * n_u3 * fz2 / (s0.mu * s0.mu * s0.r_sigma_min * s0.q_sigma_min),
    };

    Ok(ConditionReport {
        note: format!(
            "suprema and infima over the stabilizing set are taken over a proxy set of {} gain(s); conditions are advisory",
            h.proxy_size
        ),
        eps_prime: opts.eps_prime,
        delta: opts.delta,
        proxy: h,
        constants_at_k0: c0,
        delta0,
        psi,
        heterogeneity,
        f_z,
        budget_stability,
        budget_convergence,
        conditions,
        bias,
    })
}

/// `f64` serde that maps `±∞` to `null` / `"-inf"` so reports stay valid JSON.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_none()
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(f64::INFINITY),
            Some(Repr::Num(v)) => Ok(v),
            Some(Repr::Text(t)) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Some(Repr::Text(t)) if t == "nan" => Ok(f64::NAN),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("unexpected float `{t}`"))),
        }
    }
}
