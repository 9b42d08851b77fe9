//! Task-set heterogeneity levels `(ε₁, ε₂, ε₃, ε₄)` and the gradient
//! heterogeneity bound `f_z(ε̄) = Σ_k ε_k h_het^k(K)`.
//!
//! The four polynomials use the set-level bound `‖P_K‖_max ≤ J_max(K)/μ`
//! rather than the exact value, so the evaluated bound is the proven one.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg;
use crate::lqr::{Gain, LqrTask};
use crate::summary::{self, SetSummary};

/// Differences below this are treated as zero when inferring the mode.
pub const ZERO_LEVEL: f64 = 1e-14;

/// Kind of heterogeneity present in a task set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneityMode {
    /// Only `A`, `B` differ.
    System,
    /// Only `Q`, `R` differ.
    Cost,
    SystemAndCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub mode: HeterogeneityMode,
}

impl HeterogeneityProfile {
    pub fn levels(&self) -> [f64; 4] {
        [self.eps1, self.eps2, self.eps3, self.eps4]
    }

    pub fn zero() -> Self {
        Self::from_levels([0.0; 4])
    }

    /// Builds a profile from explicit levels, inferring the mode.
    pub fn from_levels(levels: [f64; 4]) -> Self {
        let [eps1, eps2, eps3, eps4] = levels;
        let system = eps1 >= ZERO_LEVEL || eps2 >= ZERO_LEVEL;
        let cost = eps3 >= ZERO_LEVEL || eps4 >= ZERO_LEVEL;
        let mode = match (system, cost) {
            (true, true) => HeterogeneityMode::SystemAndCost,
            (false, true) => HeterogeneityMode::Cost,
            _ => HeterogeneityMode::System,
        };
        Self { eps1, eps2, eps3, eps4, mode }
    }
}

/// Maximum pairwise spectral-norm differences of `A`, `B`, `Q`, `R`.
pub fn measure(tasks: &[LqrTask]) -> Result<HeterogeneityProfile> {
    summary::check_task_set(tasks)?;
    if tasks.len() < 2 {
        return Err(crate::error::Error::InvalidInput(
            "heterogeneity needs at least two tasks".into(),
        ));
    }
    let mut levels = [0.0f64; 4];
    for (i, ti) in tasks.iter().enumerate() {
        for tj in &tasks[i + 1..] {
            let diffs = [
                ti.a() - tj.a(),
                ti.b() - tj.b(),
                ti.q() - tj.q(),
                ti.r() - tj.r(),
            ];
            for (level, d) in levels.iter_mut().zip(diffs.iter()) {
                *level = level.max(linalg::spectral_norm(d));
            }
        }
    }
    Ok(HeterogeneityProfile::from_levels(levels))
}

/// The four polynomial weights of the heterogeneity bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HetPolynomials {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
}

impl HetPolynomials {
    pub fn as_array(&self) -> [f64; 4] {
        [self.h1, self.h2, self.h3, self.h4]
    }
}

pub fn gradient_het_polynomials(tasks: &[LqrTask], gain: &Gain) -> Result<HetPolynomials> {
    let s = summary::summarize(tasks, gain, None)?;
    Ok(het_polynomials_from(&s))
}

/// Evaluates the polynomials from precomputed set norms.
pub fn het_polynomials_from(s: &SetSummary) -> HetPolynomials {
    let nu_k = s.nu_k();
    let p_max = s.p_bound();
    let sig = s.sigma_bound();
    let k = s.k_norm;
    let acl = s.acl_max;
    let weight = s.q_max + k * k * s.r_max;
    // bound on ‖E_K‖ times the ‖Σ⁽ⁱ⁾ − Σ⁽ʲ⁾‖ prefactor
    let e_bound = s.r_max * k + s.j_max * (s.b_max * s.b_max * k + s.b_max * s.a_max) / s.mu;
    let sigma_diff = 4.0 * e_bound * nu_k * nu_k * acl * s.sigma0_norm;

    let h1 = sig * s.b_max * (p_max + 4.0 * acl * acl * weight * nu_k * nu_k) + sigma_diff;
    let h2 = sig * (acl * p_max + s.b_max * p_max * k + 4.0 * k * acl * acl * weight * nu_k * nu_k) + sigma_diff * k;
    let h3 = sig * s.b_max * acl * nu_k;
    let h4 = sig * (k + k * k * s.b_max * acl * nu_k);
    HetPolynomials { h1, h2, h3, h4 }
}

/// `f_z(ε̄) = ε₁h¹ + ε₂h² + ε₃h³ + ε₄h⁴` at `gain`.
pub fn f_z_bound(profile: &HeterogeneityProfile, tasks: &[LqrTask], gain: &Gain) -> Result<f64> {
    Ok(f_z_from(profile, &gradient_het_polynomials(tasks, gain)?))
}

pub fn f_z_from(profile: &HeterogeneityProfile, h: &HetPolynomials) -> f64 {
    profile
        .levels()
        .iter()
        .zip(h.as_array())
        .map(|(e, h)| e * h)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn scalar(a: f64) -> LqrTask {
        LqrTask::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn identical_tasks_have_zero_profile() {
        let p = measure(&[scalar(0.5), scalar(0.5), scalar(0.5)]).unwrap();
        assert_eq!(p.levels(), [0.0; 4]);
    }

    #[test]
    fn scalar_pair_system_heterogeneity() {
        let p = measure(&[scalar(0.5), scalar(0.6)]).unwrap();
        assert!((p.eps1 - 0.1).abs() < 1e-15);
        assert_eq!([p.eps2, p.eps3, p.eps4], [0.0; 3]);
        assert_eq!(p.mode, HeterogeneityMode::System);
    }

    #[test]
    fn single_task_rejected() {
        assert!(measure(&[scalar(0.5)]).is_err());
    }

    #[test]
    fn zero_profile_gives_zero_bound() {
        let tasks = [scalar(0.5), scalar(0.6)];
        let f = f_z_bound(&HeterogeneityProfile::zero(), &tasks, &Gain::zeros(1, 1)).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn cost_mode_uses_only_cost_terms() {
        let h = HetPolynomials { h1: 1e9, h2: 1e9, h3: 2.0, h4: 3.0 };
        let p = HeterogeneityProfile::from_levels([0.0, 0.0, 0.5, 0.25]);
        assert_eq!(p.mode, HeterogeneityMode::Cost);
        assert_eq!(f_z_from(&p, &h), 0.5 * 2.0 + 0.25 * 3.0);
    }
}
