//! Heterogeneous task sets built from a nominal task: `A⁽ⁱ⁾ = A + a⁽ⁱ⁾Z_a`,
//! `B⁽ⁱ⁾ = B + b⁽ⁱ⁾Z_b`, `Q⁽ⁱ⁾ = Q + q⁽ⁱ⁾Z_q`, `R⁽ⁱ⁾ = R + r⁽ⁱ⁾Z_r` with
//! scalars drawn uniformly on `[0, ε_k]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lqr::{Gain, LqrTask};
use crate::zo::{Domain, StreamKey};

const MAX_RESAMPLES: usize = 100;

pub const BOEING_A: [[f64; 4]; 4] = [
    [1.22, 0.03, -0.02, -0.32],
    [0.01, 0.47, 4.70, 0.00],
    [0.02, -0.06, 0.40, 0.00],
    [0.01, -0.04, 0.72, 1.55],
];

pub const BOEING_B: [[f64; 2]; 4] = [
    [0.01, 0.99],
    [-3.44, 1.66],
    [-0.83, 0.44],
    [-0.47, 0.25],
];

/// Stabilizing initial gain for the Boeing nominal (closed-loop spectral
/// radius about 0.79, cost about 1.3 times optimal).
pub const BOEING_K0: [[f64; 4]; 2] = [
    [0.234, 0.101, -0.748, -1.890],
    [0.340, -0.003, 0.170, 0.185],
];

/// Initial gain commonly quoted for this Boeing variant. It does not
/// stabilize them (closed-loop spectral radius about 3.07).
pub const BOEING_QUOTED_K0: [[f64; 4]; 2] = [
    [0.613, -1.535, 0.303, 0.396],
    [0.888, 0.604, -0.147, -0.582],
];

/// Standard heterogeneity levels `(ε₁, ε₂, ε₃, ε₄)`, smallest first.
pub const LEVELS: [[f64; 4]; 3] = [
    [1.2e-3, 1.1e-3, 1.4e-3, 1.2e-3],
    [1.3e-2, 1.1e-2, 1.4e-2, 1.2e-2],
    [1.7e-2, 1.8e-2, 1.9e-2, 1.7e-2],
];

fn mat<const R: usize, const C: usize>(rows: &[[f64; C]; R]) -> Mat {
    Mat::from_fn(R, C, |i, j| rows[i][j])
}

/// Modified Boeing task with `Q = I₄`, `R = I₂`, `Σ₀ = ¼I₄`, and [`BOEING_K0`].
pub fn boeing_nominal() -> (LqrTask, Gain) {
    let task = LqrTask::with_default_sigma0(
        mat(&BOEING_A),
        mat(&BOEING_B),
        Mat::identity(4, 4),
        Mat::identity(2, 2),
    )
    .expect("Boeing nominal is well formed");
    (task, Gain::new(mat(&BOEING_K0)))
}

pub fn boeing_quoted_k0() -> Gain {
    Gain::new(mat(&BOEING_QUOTED_K0))
}

/// Modification masks `(Z_a, Z_b, Z_q, Z_r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MasksJson", into = "MasksJson")]
pub struct Masks {
    pub z_a: Mat,
    pub z_b: Mat,
    pub z_q: Mat,
    pub z_r: Mat,
}

#[derive(Serialize, Deserialize)]
struct MasksJson {
    #[serde(rename = "Z_a")]
    z_a: Vec<Vec<f64>>,
    #[serde(rename = "Z_b")]
    z_b: Vec<Vec<f64>>,
    #[serde(rename = "Z_q")]
    z_q: Vec<Vec<f64>>,
    #[serde(rename = "Z_r")]
    z_r: Vec<Vec<f64>>,
}

impl TryFrom<MasksJson> for Masks {
    type Error = Error;

    fn try_from(j: MasksJson) -> Result<Self> {
        Ok(Masks {
            z_a: linalg::from_rows(&j.z_a)?,
            z_b: linalg::from_rows(&j.z_b)?,
            z_q: linalg::from_rows(&j.z_q)?,
            z_r: linalg::from_rows(&j.z_r)?,
        })
    }
}

impl From<Masks> for MasksJson {
    fn from(m: Masks) -> Self {
        MasksJson {
            z_a: linalg::to_rows(&m.z_a),
            z_b: linalg::to_rows(&m.z_b),
            z_q: linalg::to_rows(&m.z_q),
            z_r: linalg::to_rows(&m.z_r),
        }
    }
}

impl Masks {
    /// `Z_q = I`, `Z_r = I`, and `Z_a`, `Z_b` with i.i.d. `U(0, 1)` entries.
    pub fn seeded(nx: usize, nu: usize, seed: u64) -> Self {
        let mut rng = StreamKey::new(seed, Domain::Mask, 0, 0).rng(0);
        let z_a = Mat::from_fn(nx, nx, |_, _| rng.random::<f64>());
        let z_b = Mat::from_fn(nx, nu, |_, _| rng.random::<f64>());
        Self {
            z_a,
            z_b,
            z_q: Mat::identity(nx, nx),
            z_r: Mat::identity(nu, nu),
        }
    }

    pub fn validate(&self, nx: usize, nu: usize) -> Result<()> {
        for (name, m, shape) in [
            ("Z_a", &self.z_a, (nx, nx)),
            ("Z_b", &self.z_b, (nx, nu)),
            ("Z_q", &self.z_q, (nx, nx)),
            ("Z_r", &self.z_r, (nu, nu)),
        ] {
            if m.shape() != shape {
                return Err(Error::Dimension(format!("{name} must be {}x{}, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols())));
            }
            if !linalg::all_finite(m) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
        }
        for (name, m) in [("Z_q", &self.z_q), ("Z_r", &self.z_r)] {
            if !linalg::is_symmetric(m, 1e-12) {
                return Err(Error::InvalidInput(format!("{name} must be symmetric")));
            }
        }
        Ok(())
    }

    /// Spectral norms `(‖Z_a‖, ‖Z_b‖, ‖Z_q‖, ‖Z_r‖)`.
    pub fn norms(&self) -> [f64; 4] {
        [&self.z_a, &self.z_b, &self.z_q, &self.z_r].map(linalg::spectral_norm)
    }
}

/// Generation recipe. In JSON, `nominal` defaults to the Boeing task and
/// `masks` to [`Masks::seeded`] with the same seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(default = "default_nominal")]
    pub nominal: LqrTask,
    pub levels: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Masks>,
    #[serde(rename = "M", default = "default_task_count")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_nominal() -> LqrTask {
    boeing_nominal().0
}

fn default_task_count() -> usize {
    10
}

impl GenSpec {
    pub fn boeing(levels: [f64; 4], m: usize, seed: u64) -> Self {
        Self {
            nominal: default_nominal(),
            levels,
            masks: None,
            m,
            seed,
        }
    }

    pub fn resolved_masks(&self) -> Masks {
        self.masks
            .clone()
            .unwrap_or_else(|| Masks::seeded(self.nominal.nx(), self.nominal.nu(), self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config(format!("levels must be finite and non-negative, got {:?}", self.levels)));
        }
        self.resolved_masks().validate(self.nominal.nx(), self.nominal.nu())
    }
}

/// Draws `spec.m` tasks. Task `i` uses scalars `u·ε` with `u ~ U(0, 1)` from a
/// stream keyed by `(seed, i, attempt)`, so the same seed gives paired draws
/// across levels. Draws giving an indefinite `Q⁽ⁱ⁾` or `R⁽ⁱ⁾` are redrawn.
pub fn generate(spec: &GenSpec) -> Result<Vec<LqrTask>> {
    spec.validate()?;
    let masks = spec.resolved_masks();
    let n = &spec.nominal;
    let [e1, e2, e3, e4] = spec.levels;
    (0..spec.m)
        .map(|i| {
            for attempt in 0..MAX_RESAMPLES {
                let mut rng = StreamKey::new(spec.seed, Domain::TaskDraw, i, attempt).rng(0);
                let u: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
                let task = LqrTask::new(
                    n.a() + &masks.z_a * (u[0] * e1),
                    n.b() + &masks.z_b * (u[1] * e2),
                    n.q() + &masks.z_q * (u[2] * e3),
                    n.r() + &masks.z_r * (u[3] * e4),
                    n.sigma0().clone(),
                );
                match task {
                    Ok(t) => return Ok(t),
                    Err(Error::InvalidInput(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Generation(format!(
                "task {i}: no positive definite draw in {MAX_RESAMPLES} attempts; levels too large for the masks"
            )))
        })
        .collect()
}

/// Task set with everything needed to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub nominal: LqrTask,
    pub masks: Masks,
    pub levels: [f64; 4],
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub tasks: Vec<LqrTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gain: Option<Gain>,
}

impl TaskBundle {
    pub fn from_spec(spec: &GenSpec, initial_gain: Option<Gain>) -> Result<Self> {
        let tasks = generate(spec)?;
        Ok(Self {
            nominal: spec.nominal.clone(),
            masks: spec.resolved_masks(),
            levels: spec.levels,
            seed: spec.seed,
            m: spec.m,
            tasks,
            initial_gain,
        })
    }
}

fn canonical_key(task: &LqrTask) -> Result<[u8; 32]> {
    let bytes = serde_json::to_vec(task)?;
    Ok(Sha256::digest(&bytes).into())
}

/// Random partition into `round(fraction·M)` training tasks and the rest.
/// Tasks are first put in a canonical order, so the result does not depend
/// on the order of `tasks`.
pub fn split_holdout(tasks: &[LqrTask], fraction: f64, seed: u64) -> Result<(Vec<LqrTask>, Vec<LqrTask>)> {
    let (train, holdout) = split_indices(tasks, fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| tasks[i].clone()).collect();
    Ok((pick(&train), pick(&holdout)))
}

/// As [`split_holdout`], returning indices into `tasks`.
pub fn split_indices(tasks: &[LqrTask], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let n = tasks.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidInput(format!(
            "{n} task(s) with fraction {fraction} leaves one side of the split empty"
        )));
    }
    let keys = tasks.iter().map(canonical_key).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| keys[i].cmp(&keys[j]).then(i.cmp(&j)));
    let mut rng = StreamKey::new(seed, Domain::Split, 0, 0).rng(0);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut train = order[..n_train].to_vec();
    let mut holdout = order[n_train..].to_vec();
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heterogeneity;
    use crate::lqr;

    #[test]
    fn boeing_entries() {
        let (t, k0) = boeing_nominal();
        assert_eq!(t.a()[(0, 0)], 1.22);
        assert_eq!(t.b()[(1, 0)], -3.44);
        assert_eq!(boeing_quoted_k0().matrix()[(0, 1)], -1.535);
        assert!(lqr::is_stabilizing(&t, &k0).unwrap());
        assert!(lqr::cost(&t, &k0).unwrap().is_finite());
    }

    #[test]
    fn printed_gain_does_not_stabilize() {
        let (t, _) = boeing_nominal();
        assert!(!lqr::is_stabilizing(&t, &boeing_quoted_k0()).unwrap());
    }

    #[test]
    fn zero_levels_copy_nominal() {
        let spec = GenSpec::boeing([0.0; 4], 5, 3);
        let tasks = generate(&spec).unwrap();
        assert_eq!(tasks.len(), 5);
        assert!(tasks.iter().all(|t| *t == spec.nominal));
    }

    #[test]
    fn measured_levels_within_mask_bounds() {
        let spec = GenSpec::boeing(LEVELS[0], 10, 11);
        let tasks = generate(&spec).unwrap();
        let p = heterogeneity::measure(&tasks).unwrap();
        let norms = spec.resolved_masks().norms();
        for ((e, l), z) in p.levels().iter().zip(spec.levels).zip(norms) {
            assert!(*e <= l * z * (1.0 + 1e-12));
        }
    }

    #[test]
    fn deterministic_and_paired() {
        let a = generate(&GenSpec::boeing(LEVELS[0], 4, 9)).unwrap();
        let b = generate(&GenSpec::boeing(LEVELS[0], 4, 9)).unwrap();
        assert_eq!(a, b);
        // doubling every level doubles every perturbation
        let c = generate(&GenSpec::boeing(LEVELS[0].map(|l| 2.0 * l), 4, 9)).unwrap();
        let (nom, _) = boeing_nominal();
        for (x, y) in a.iter().zip(&c) {
            let dx = x.a() - nom.a();
            let dy = y.a() - nom.a();
            assert!((dy - dx * 2.0).norm() < 1e-14);
        }
    }

    #[test]
    fn indefinite_weights_fail_generation() {
        let masks = Masks {
            z_q: -Mat::identity(4, 4),
            ..Masks::seeded(4, 2, 0)
        };
        let spec = GenSpec { masks: Some(masks), ..GenSpec::boeing([0.0, 0.0, 1e12, 0.0], 2, 0) };
        assert!(matches!(generate(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn split_sizes() {
        let tasks = generate(&GenSpec::boeing(LEVELS[0], 10, 1)).unwrap();
        let (tr, ho) = split_holdout(&tasks, 0.8, 5).unwrap();
        assert_eq!((tr.len(), ho.len()), (8, 2));
        let (tr, ho) = split_holdout(&tasks[..2], 0.5, 5).unwrap();
        assert_eq!((tr.len(), ho.len()), (1, 1));
        assert!(split_holdout(&tasks[..1], 0.5, 5).is_err());
    }

    #[test]
    fn split_ignores_input_order() {
        let tasks = generate(&GenSpec::boeing(LEVELS[1], 10, 2)).unwrap();
        let mut reversed = tasks.clone();
        reversed.reverse();
        let (_, ho1) = split_holdout(&tasks, 0.8, 7).unwrap();
        let (_, ho2) = split_holdout(&reversed, 0.8, 7).unwrap();
        let mut a = ho1.iter().map(|t| serde_json::to_string(t).unwrap()).collect::<Vec<_>>();
        let mut b = ho2.iter().map(|t| serde_json::to_string(t).unwrap()).collect::<Vec<_>>();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: GenSpec = serde_json::from_str(r#"{"levels": [0.001, 0.001, 0.001, 0.001]}"#).unwrap();
        assert_eq!(spec.m, 10);
        assert_eq!(spec.nominal, boeing_nominal().0);
        let bundle = TaskBundle::from_spec(&spec, Some(boeing_nominal().1)).unwrap();
        let back: TaskBundle = serde_json::from_str(&serde_json::to_string(&bundle).unwrap()).unwrap();
        assert_eq!(back, bundle);
    }
}
