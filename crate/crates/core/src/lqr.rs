//! Exact single-task LQR machinery: stability tests, Lyapunov and Riccati
//! solvers, and the closed-form cost, gradient and Hessian action.
//!
//! A task is the tuple `(A, B, Q, R)` together with the second moment
//! `Σ₀ = E[x₀x₀ᵀ]` of the initial state; the cost of a static gain `K`
//! (control law `u = −Kx`) is `J(K) = Tr(P_K Σ₀)` where `P_K` solves
//! `P = Q + KᵀRK + (A − BK)ᵀ P (A − BK)`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Closed loops are treated as stable only when `ρ < 1 − STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Above this state dimension the Lyapunov solver switches from the dense
/// vectorized solve to fixed-point iteration.
pub const DIRECT_LYAPUNOV_MAX_DIM: usize = 32;

const SYMMETRY_TOL: f64 = 1e-12;
const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;
const LYAPUNOV_ITER_TOL: f64 = 1e-12;
const LYAPUNOV_ITER_CAP: usize = 1_000_000;
const RICCATI_TOL: f64 = 1e-13;
const RICCATI_ITER_CAP: usize = 100_000;
const RICCATI_POLISH_STEPS: usize = 3;

/// One LQR task: dynamics `(A, B)`, cost weights `(Q, R)` and initial-state
/// second moment `Σ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskJson", into = "TaskJson")]
pub struct LqrTask {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    sigma0: Mat,
}

#[derive(Serialize, Deserialize)]
struct TaskJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Sigma0", default, skip_serializing_if = "Option::is_none")]
    sigma0: Option<Vec<Vec<f64>>>,
}

impl TryFrom<TaskJson> for LqrTask {
    type Error = Error;

    fn try_from(j: TaskJson) -> Result<Self> {
        let a = linalg::from_rows(&j.a)?;
        let b = linalg::from_rows(&j.b)?;
        let q = linalg::from_rows(&j.q)?;
        let r = linalg::from_rows(&j.r)?;
        match j.sigma0 {
            Some(s) => LqrTask::new(a, b, q, r, linalg::from_rows(&s)?),
            None => LqrTask::with_default_sigma0(a, b, q, r),
        }
    }
}

impl From<LqrTask> for TaskJson {
    fn from(t: LqrTask) -> Self {
        TaskJson {
            a: linalg::to_rows(&t.a),
            b: linalg::to_rows(&t.b),
            q: linalg::to_rows(&t.q),
            r: linalg::to_rows(&t.r),
            sigma0: Some(linalg::to_rows(&t.sigma0)),
        }
    }
}

impl LqrTask {
    /// Validates dimensions and that `Q`, `R`, `Σ₀` are symmetric positive definite.
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, sigma0: Mat) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 || !a.is_square() {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        let nu = b.ncols();
        if b.nrows() != nx || nu == 0 {
            return Err(Error::Dimension(format!("B must be {nx}xn_u with n_u ≥ 1, got {}x{}", b.nrows(), b.ncols())));
        }
        for (name, m, n) in [("Q", &q, nx), ("R", &r, nu), ("Sigma0", &sigma0, nx)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
            }
            if !linalg::all_finite(m) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
            if !linalg::is_symmetric(m, SYMMETRY_TOL) {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            if !linalg::is_positive_definite(m) {
                return Err(Error::InvalidInput(format!("{name} is not positive definite")));
            }
        }
        if !linalg::all_finite(&a) || !linalg::all_finite(&b) {
            return Err(Error::InvalidInput("A or B has non-finite entries".into()));
        }
        if nx < nu {
            warn!("task has n_x = {nx} < n_u = {nu}; the analysis assumes n_x ≥ n_u");
        }
        Ok(Self { a, b, q, r, sigma0 })
    }

    /// Same as [`LqrTask::new`] with `Σ₀ = ¼·I`.
    pub fn with_default_sigma0(a: Mat, b: Mat, q: Mat, r: Mat) -> Result<Self> {
        let nx = a.nrows();
        Self::new(a, b, q, r, Mat::identity(nx, nx) * 0.25)
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn sigma0(&self) -> &Mat {
        &self.sigma0
    }

    /// `μ = σ_min(Σ₀)`.
    pub fn mu(&self) -> f64 {
        linalg::sigma_min(&self.sigma0)
    }

    pub fn closed_loop(&self, gain: &Gain) -> Result<Mat> {
        self.check_gain(gain)?;
        Ok(&self.a - &self.b * gain.matrix())
    }

    pub fn check_gain(&self, gain: &Gain) -> Result<()> {
        let (nu, nx) = gain.shape();
        if nu != self.nu() || nx != self.nx() {
            return Err(Error::Dimension(format!(
                "gain is {nu}x{nx}, task expects {}x{}",
                self.nu(),
                self.nx()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &LqrTask) -> bool {
        self.nx() == other.nx() && self.nu() == other.nu()
    }
}

/// A static state-feedback gain `K` (`n_u × n_x`), applied as `u = −Kx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainJson", into = "GainJson")]
pub struct Gain(Mat);

#[derive(Serialize, Deserialize)]
struct GainJson {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
}

impl TryFrom<GainJson> for Gain {
    type Error = Error;

    fn try_from(j: GainJson) -> Result<Self> {
        Ok(Gain(linalg::from_rows(&j.k)?))
    }
}

impl From<Gain> for GainJson {
    fn from(g: Gain) -> Self {
        GainJson { k: linalg::to_rows(&g.0) }
    }
}

impl Gain {
    pub fn new(k: Mat) -> Self {
        Gain(k)
    }

    pub fn zeros(nu: usize, nx: usize) -> Self {
        Gain(Mat::zeros(nu, nx))
    }

    pub fn from_row_slice(nu: usize, nx: usize, data: &[f64]) -> Self {
        Gain(Mat::from_row_slice(nu, nx, data))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    /// `(n_u, n_x)`.
    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    /// `K − step·D`.
    pub fn stepped(&self, direction: &Mat, step: f64) -> Gain {
        Gain(&self.0 - direction * step)
    }
}

/// Which Lyapunov form to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LyapunovSide {
    /// `X = W + Acl X Aclᵀ` (state correlation `Σ_K`).
    TransposeInside,
    /// `X = W + Aclᵀ X Acl` (value matrix `P_K`).
    TransposeOutside,
}

/// `P_K`, `Σ_K` and `E_K = RK − BᵀP_K(A − BK)` at one gain.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovQuantities {
    pub p: Mat,
    pub sigma: Mat,
    pub e: Mat,
}

pub fn spectral_radius(m: &Mat) -> Result<f64> {
    linalg::spectral_radius(m)
}

pub fn is_stabilizing(task: &LqrTask, gain: &Gain) -> Result<bool> {
    let acl = task.closed_loop(gain)?;
    Ok(spectral_radius(&acl)? < 1.0 - STABILITY_MARGIN)
}

fn require_stable(acl: &Mat) -> Result<f64> {
    let rho = spectral_radius(acl)?;
    if rho < 1.0 - STABILITY_MARGIN {
        Ok(rho)
    } else {
        Err(Error::Stability { task: None, rho })
    }
}

fn apply_form(acl: &Mat, x: &Mat, side: LyapunovSide) -> Mat {
    match side {
        LyapunovSide::TransposeInside => acl * x * acl.transpose(),
        LyapunovSide::TransposeOutside => acl.transpose() * x * acl,
    }
}

/// Solves the discrete Lyapunov equation selected by `side` for a stable `acl`.
pub fn solve_lyapunov(acl: &Mat, w: &Mat, side: LyapunovSide) -> Result<Mat> {
    let n = acl.nrows();
    if !acl.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov solve needs square Acl and matching W, got {:?} and {:?}",
            acl.shape(),
            w.shape()
        )));
    }
    require_stable(acl)?;
    let x = if n <= DIRECT_LYAPUNOV_MAX_DIM {
        solve_lyapunov_direct(acl, w, side)?
    } else {
        solve_lyapunov_iterative(acl, w, side)?
    };
    let x = if linalg::is_symmetric(w, SYMMETRY_TOL) {
        linalg::symmetrize(&x)
    } else {
        x
    };
    let residual = (&x - w - apply_form(acl, &x, side)).norm();
    if !residual.is_finite() || residual > LYAPUNOV_RESIDUAL_TOL * x.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Computation(format!(
            "Lyapunov residual {residual:.3e} exceeds tolerance (‖X‖_F = {:.3e})",
            x.norm()
        )));
    }
    Ok(x)
}

fn solve_lyapunov_direct(acl: &Mat, w: &Mat, side: LyapunovSide) -> Result<Mat> {
    let n = acl.nrows();
    // Column-major vec: vec(M X Mᵀ) = (M ⊗ M) vec(X).
    let m = match side {
        LyapunovSide::TransposeInside => acl.clone(),
        LyapunovSide::TransposeOutside => acl.transpose(),
    };
    let op = Mat::identity(n * n, n * n) - m.kronecker(&m);
    let lu = op.lu();
    let rhs = nalgebra::DVector::from_column_slice(w.as_slice());
    let mut v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Computation("singular Lyapunov operator".into()))?;
    // one step of iterative refinement
    let resid = &rhs - (Mat::identity(n * n, n * n) - m.kronecker(&m)) * &v;
    if let Some(dv) = lu.solve(&resid) {
        v += dv;
    }
    Ok(Mat::from_column_slice(n, n, v.as_slice()))
}

fn solve_lyapunov_iterative(acl: &Mat, w: &Mat, side: LyapunovSide) -> Result<Mat> {
    let mut x = w.clone();
    for _ in 0..LYAPUNOV_ITER_CAP {
        let next = w + apply_form(acl, &x, side);
        let delta = (&next - &x).norm();
        x = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= LYAPUNOV_ITER_TOL * x.norm() {
            return Ok(x);
        }
    }
    Err(Error::Computation("Lyapunov fixed-point iteration did not converge".into()))
}

/// Everything the closed forms need at one `(task, gain)` pair.
#[derive(Clone, Debug)]
pub struct Evaluation<'a> {
    task: &'a LqrTask,
    gain: &'a Gain,
    acl: Mat,
    rho: f64,
    quantities: LyapunovQuantities,
    cost: f64,
}

/// Solves for `P_K`, `Σ_K`, `E_K` and the cost once; gradient and Hessian
/// actions are then cheap.
pub fn evaluate<'a>(task: &'a LqrTask, gain: &'a Gain) -> Result<Evaluation<'a>> {
    let acl = task.closed_loop(gain)?;
    let rho = require_stable(&acl)?;
    let k = gain.matrix();
    let w = task.q() + k.transpose() * task.r() * k;
    let p = solve_lyapunov(&acl, &w, LyapunovSide::TransposeOutside)?;
    let sigma = solve_lyapunov(&acl, task.sigma0(), LyapunovSide::TransposeInside)?;
    let e = task.r() * k - task.b().transpose() * &p * &acl;
    let cost = (&p * task.sigma0()).trace();
    Ok(Evaluation {
        task,
        gain,
        acl,
        rho,
        quantities: LyapunovQuantities { p, sigma, e },
        cost,
    })
}

impl<'a> Evaluation<'a> {
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn closed_loop(&self) -> &Mat {
        &self.acl
    }

    pub fn quantities(&self) -> &LyapunovQuantities {
        &self.quantities
    }

    pub fn into_quantities(self) -> LyapunovQuantities {
        self.quantities
    }

    /// `∇J(K) = 2 E_K Σ_K`.
    pub fn gradient(&self) -> Mat {
        &self.quantities.e * &self.quantities.sigma * 2.0
    }

    /// Directional derivative of the gradient along `X`:
    /// `∇²J(K)[X] = 2(R + BᵀP_K B) X Σ_K − 2 Bᵀ P̃ (A − BK) Σ_K + 2 E_K Σ̃`, with
    /// `P̃ = Aclᵀ P̃ Acl + XᵀE_K + E_KᵀX` and `Σ̃ = Acl Σ̃ Aclᵀ − BXΣ_K Aclᵀ − Acl Σ_K XᵀBᵀ`.
    /// Its quadratic form is `⟨X, ∇²J[X]⟩ = 2⟨X, (R + BᵀPB)XΣ⟩ − 4⟨X, BᵀP̃ Acl Σ⟩`.
    pub fn hessian_action(&self, x: &Mat) -> Result<Mat> {
        self.task.check_gain(&Gain(x.clone()))?;
        let LyapunovQuantities { p, sigma, e } = &self.quantities;
        let b = self.task.b();
        let w = x.transpose() * e + e.transpose() * x;
        let p_tilde = solve_lyapunov(&self.acl, &w, LyapunovSide::TransposeOutside)?;
        let cross = b * x * sigma * self.acl.transpose();
        let sigma_tilde = solve_lyapunov(&self.acl, &-(&cross + cross.transpose()), LyapunovSide::TransposeInside)?;
        let curvature = self.task.r() + b.transpose() * p * b;
        Ok((curvature * x * sigma - b.transpose() * p_tilde * &self.acl * sigma + e * sigma_tilde) * 2.0)
    }

    pub fn gain(&self) -> &Gain {
        self.gain
    }
}

pub fn lyapunov_quantities(task: &LqrTask, gain: &Gain) -> Result<LyapunovQuantities> {
    Ok(evaluate(task, gain)?.into_quantities())
}

/// `J(K) = Tr(P_K Σ₀)`.
pub fn cost(task: &LqrTask, gain: &Gain) -> Result<f64> {
    let acl = task.closed_loop(gain)?;
    require_stable(&acl)?;
    let k = gain.matrix();
    let w = task.q() + k.transpose() * task.r() * k;
    let p = solve_lyapunov(&acl, &w, LyapunovSide::TransposeOutside)?;
    Ok((p * task.sigma0()).trace())
}

pub fn gradient_exact(task: &LqrTask, gain: &Gain) -> Result<Mat> {
    Ok(evaluate(task, gain)?.gradient())
}

pub fn hessian_action(task: &LqrTask, gain: &Gain, x: &Mat) -> Result<Mat> {
    evaluate(task, gain)?.hessian_action(x)
}

/// Materializes the Hessian as an `(n_u·n_x)²` matrix. Vectorization is
/// row-major over `K`: index `i·n_x + j` corresponds to entry `(i, j)`, and
/// column `c` holds the row-major vec of `∇²J(K)[E_c]` for basis matrix `E_c`.
pub fn hessian_matrix(task: &LqrTask, gain: &Gain) -> Result<Mat> {
    let eval = evaluate(task, gain)?;
    let (nu, nx) = gain.shape();
    let d = nu * nx;
    let mut h = Mat::zeros(d, d);
    for c in 0..d {
        let mut basis = Mat::zeros(nu, nx);
        basis[(c / nx, c % nx)] = 1.0;
        let col = linalg::vec_row_major(&eval.hessian_action(&basis)?);
        for (r, v) in col.into_iter().enumerate() {
            h[(r, c)] = v;
        }
    }
    Ok(h)
}

fn riccati_gain(task: &LqrTask, p: &Mat) -> Result<Mat> {
    let (a, b) = (task.a(), task.b());
    let bt_p = b.transpose() * p;
    let lhs = task.r() + &bt_p * b;
    let rhs = &bt_p * a;
    lhs.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Computation("R + BᵀPB is not positive definite".into()))
}

/// Optimal gain `K*` via the discrete algebraic Riccati fixed point
/// `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` started at `P = Q`, followed by a few
/// policy-iteration polish steps. Non-convergence is reported as a computation
/// error (treated as a non-stabilizable task).
pub fn optimal_gain(task: &LqrTask) -> Result<Gain> {
    let a = task.a();
    let mut p = task.q().clone();
    let mut converged = false;
    for _ in 0..RICCATI_ITER_CAP {
        let k = riccati_gain(task, &p)?;
        let next = linalg::symmetrize(&(task.q() + a.transpose() * &p * a - a.transpose() * &p * task.b() * k));
        if !linalg::all_finite(&next) {
            break;
        }
        let delta = (&next - &p).norm();
        p = next;
        if delta <= RICCATI_TOL * p.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Computation(
            "Riccati iteration did not converge; (A, B) may not be stabilizable".into(),
        ));
    }
    let mut gain = Gain(riccati_gain(task, &p)?);
    if !is_stabilizing(task, &gain)? {
        return Err(Error::Computation("Riccati solution is not stabilizing".into()));
    }
    for _ in 0..RICCATI_POLISH_STEPS {
        let p_k = evaluate(task, &gain)?.into_quantities().p;
        let next = Gain(riccati_gain(task, &p_k)?);
        if !is_stabilizing(task, &next)? {
            break;
        }
        gain = next;
    }
    let g = gradient_exact(task, &gain)?;
    let scale = 1.0 + gain.matrix().norm();
    if g.norm() > 1e-8 * scale {
        return Err(Error::Computation(format!(
            "Riccati gain is not stationary: ‖∇J(K*)‖_F = {:.3e}",
            g.norm()
        )));
    }
    Ok(gain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_task(a: f64, b: f64, q: f64, r: f64, s0: f64) -> LqrTask {
        LqrTask::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, b),
            Mat::from_element(1, 1, q),
            Mat::from_element(1, 1, r),
            Mat::from_element(1, 1, s0),
        )
        .unwrap()
    }

    #[test]
    fn rejects_indefinite_weights() {
        let err = LqrTask::with_default_sigma0(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            Mat::identity(2, 2),
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_asymmetric_q() {
        let err = LqrTask::with_default_sigma0(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            Mat::identity(2, 2),
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_mismatched_b() {
        let err = LqrTask::with_default_sigma0(
            Mat::identity(2, 2),
            Mat::identity(3, 1),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn scalar_stability() {
        let t = scalar_task(0.5, 1.0, 1.0, 1.0, 1.0);
        assert!(is_stabilizing(&t, &Gain::zeros(1, 1)).unwrap());
        let t = scalar_task(1.5, 1.0, 1.0, 1.0, 1.0);
        assert!(!is_stabilizing(&t, &Gain::zeros(1, 1)).unwrap());
        assert!(is_stabilizing(&t, &Gain::from_row_slice(1, 1, &[1.0])).unwrap());
    }

    #[test]
    fn gain_dimension_mismatch() {
        let t = scalar_task(0.5, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(is_stabilizing(&t, &Gain::zeros(1, 2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let x = solve_lyapunov(&Mat::zeros(3, 3), &Mat::identity(3, 3), LyapunovSide::TransposeOutside).unwrap();
        assert!((x - Mat::identity(3, 3)).norm() < 1e-15);
        let x = solve_lyapunov(&Mat::from_element(1, 1, 0.5), &Mat::from_element(1, 1, 1.0), LyapunovSide::TransposeInside)
            .unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let r = solve_lyapunov(&Mat::from_element(1, 1, 1.2), &Mat::from_element(1, 1, 1.0), LyapunovSide::TransposeInside);
        assert!(matches!(r, Err(Error::Stability { .. })));
    }

    #[test]
    fn lyapunov_iterative_path_matches_direct() {
        let acl = Mat::from_fn(3, 3, |i, j| 0.2 * ((i + 2 * j) as f64).sin());
        let w = Mat::identity(3, 3) + Mat::from_element(3, 3, 0.1);
        for side in [LyapunovSide::TransposeInside, LyapunovSide::TransposeOutside] {
            let d = solve_lyapunov_direct(&acl, &w, side).unwrap();
            let i = solve_lyapunov_iterative(&acl, &w, side).unwrap();
            assert!((&d - &i).norm() <= 1e-11 * d.norm());
        }
    }

    #[test]
    fn scalar_closed_forms() {
        let t = scalar_task(0.5, 1.0, 1.0, 1.0, 1.0);
        let k = Gain::zeros(1, 1);
        let lq = lyapunov_quantities(&t, &k).unwrap();
        assert!((lq.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((lq.sigma[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((lq.e[(0, 0)] + 2.0 / 3.0).abs() < 1e-14);
        assert!((cost(&t, &k).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!((gradient_exact(&t, &k).unwrap()[(0, 0)] + 16.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn zero_dynamics_cost() {
        let t = LqrTask::new(
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )
        .unwrap();
        assert!((cost(&t, &Gain::zeros(2, 2)).unwrap() - 2.0).abs() < 1e-14);
        let k = optimal_gain(&t).unwrap();
        assert!(k.matrix().norm() < 1e-14);
    }

    #[test]
    fn cost_rejects_unstable_gain() {
        let t = scalar_task(1.5, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(cost(&t, &Gain::zeros(1, 1)), Err(Error::Stability { .. })));
    }

    #[test]
    fn hessian_action_is_linear() {
        let t = scalar_task(0.7, 0.8, 1.0, 0.5, 1.0);
        let k = Gain::from_row_slice(1, 1, &[0.2]);
        let x = Mat::from_element(1, 1, 0.3);
        let zero = hessian_action(&t, &k, &Mat::zeros(1, 1)).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
        let h1 = hessian_action(&t, &k, &x).unwrap();
        let h2 = hessian_action(&t, &k, &(&x * 2.5)).unwrap();
        assert!((h2[(0, 0)] - 2.5 * h1[(0, 0)]).abs() < 1e-13 * h2[(0, 0)].abs().max(1.0));
    }

    #[test]
    fn hessian_matrix_symmetric_off_optimum() {
        let (t, k0) = crate::taskgen::boeing_nominal();
        let h = hessian_matrix(&t, &k0).unwrap();
        assert!((&h - h.transpose()).norm() <= 1e-8 * h.norm());
        let x = Mat::from_fn(2, 4, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.2);
        let q = (x.component_mul(&hessian_action(&t, &k0, &x).unwrap())).sum();
        let lq = evaluate(&t, &k0).unwrap().into_quantities();
        let w = x.transpose() * &lq.e + lq.e.transpose() * &x;
        let acl = t.closed_loop(&k0).unwrap();
        let p_tilde = solve_lyapunov(&acl, &w, LyapunovSide::TransposeOutside).unwrap();
        let printed = 2.0 * x.component_mul(&((t.r() + t.b().transpose() * &lq.p * t.b()) * &x * &lq.sigma)).sum()
            - 4.0 * x.component_mul(&(t.b().transpose() * p_tilde * &acl * &lq.sigma)).sum();
        assert!((q - printed).abs() <= 1e-9 * printed.abs());
    }

    #[test]
    fn json_roundtrip_and_default_sigma0() {
        let json = r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]]}"#;
        let t: LqrTask = serde_json::from_str(json).unwrap();
        assert_eq!(t.sigma0()[(0, 0)], 0.25);
        assert_eq!(t.mu(), 0.25);
        let back: LqrTask = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let g: Gain = serde_json::from_str(r#"{"K": [[1.0, 2.0]]}"#).unwrap();
        assert_eq!(g.shape(), (1, 2));
    }
}
