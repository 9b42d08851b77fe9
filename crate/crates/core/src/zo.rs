//! Two-point zeroth-order estimation of the LQR gradient and Hessian from
//! cost queries at symmetric perturbations `K ± U`, `‖U‖_F = r`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::lqr::{self, Gain, LqrTask};

/// Independent random-stream families. Each stream is keyed by
/// `(seed, domain, task, iteration, sample)` so results do not depend on the
/// order in which work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    /// Estimates at the current meta-iterate.
    ZoOuter = 1,
    /// Estimates at the adapted (inner) iterate.
    ZoInner = 2,
    TaskDraw = 3,
    Mask = 4,
    Split = 5,
    Baseline = 6,
    Direction = 7,
    Finetune = 8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub task: u64,
    pub iteration: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, domain: Domain, task: usize, iteration: usize) -> Self {
        Self {
            seed,
            domain,
            task: task as u64,
            iteration: iteration as u64,
        }
    }

    /// Stream for sample `sample` under this key.
    pub fn rng(&self, sample: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut h = splitmix64(self.domain as u64);
        for part in [self.task, self.iteration, sample] {
            h = splitmix64(h ^ part);
        }
        rng.set_stream(h);
        rng
    }
}

/// How a cost value is obtained for a queried gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    /// `Tr(P_K Σ₀)` from the Lyapunov solve; undefined for destabilizing gains.
    Exact,
    /// `Tr(Σ_{t<T} (Aclᵀ)ᵗ(Q + KᵀRK)Aclᵗ Σ₀)`; defined for any gain.
    FiniteHorizon(usize),
}

/// Source of cost values for the estimator.
pub trait CostOracle {
    fn query(&self, task: &LqrTask, gain: &Gain) -> Result<f64>;

    /// Whether the oracle rejects destabilizing gains.
    fn requires_stability(&self) -> bool {
        true
    }
}

impl CostOracle for OracleKind {
    fn query(&self, task: &LqrTask, gain: &Gain) -> Result<f64> {
        cost_query(task, gain, *self)
    }

    fn requires_stability(&self) -> bool {
        matches!(self, OracleKind::Exact)
    }
}

impl<F> CostOracle for F
where
    F: Fn(&LqrTask, &Gain) -> Result<f64>,
{
    fn query(&self, task: &LqrTask, gain: &Gain) -> Result<f64> {
        self(task, gain)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ZoConfigJson", into = "ZoConfigJson")]
pub struct ZoConfig {
    pub r: f64,
    pub m: usize,
    pub oracle: OracleKind,
    pub rng_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ZoConfigJson {
    r: f64,
    m: usize,
    #[serde(default = "default_oracle_name")]
    oracle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(default)]
    seed: u64,
}

fn default_oracle_name() -> String {
    "exact".into()
}

impl TryFrom<ZoConfigJson> for ZoConfig {
    type Error = Error;

    fn try_from(j: ZoConfigJson) -> Result<Self> {
        let oracle = match (j.oracle.as_str(), j.horizon) {
            ("exact", _) => OracleKind::Exact,
            ("finite_horizon", Some(t)) => OracleKind::FiniteHorizon(t),
            ("finite_horizon", None) => {
                return Err(Error::Config("finite_horizon oracle needs a horizon".into()))
            }
            (other, _) => return Err(Error::Config(format!("unknown oracle `{other}`"))),
        };
        let cfg = ZoConfig {
            r: j.r,
            m: j.m,
            oracle,
            rng_seed: j.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ZoConfig> for ZoConfigJson {
    fn from(c: ZoConfig) -> Self {
        let (oracle, horizon) = match c.oracle {
            OracleKind::Exact => ("exact".to_string(), None),
            OracleKind::FiniteHorizon(t) => ("finite_horizon".to_string(), Some(t)),
        };
        ZoConfigJson {
            r: c.r,
            m: c.m,
            oracle,
            horizon,
            seed: c.rng_seed,
        }
    }
}

impl Default for ZoConfig {
    fn default() -> Self {
        Self {
            r: 1e-2,
            m: 20,
            oracle: OracleKind::Exact,
            rng_seed: 0,
        }
    }
}

impl ZoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("smoothing radius must be positive, got {}", self.r)));
        }
        if self.m == 0 {
            return Err(Error::Config("sample count m must be at least 1".into()));
        }
        if self.oracle == OracleKind::FiniteHorizon(0) {
            return Err(Error::Config("finite horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoEstimate {
    /// `n_u × n_x` gradient estimate.
    pub grad: Mat,
    /// `n_u × n_u` Hessian estimate.
    pub hess: Mat,
}

/// Draws `U` uniformly from the Frobenius sphere of radius `r` by normalizing
/// a standard Gaussian matrix.
pub fn sample_sphere<R: Rng + ?Sized>(shape: (usize, usize), r: f64, rng: &mut R) -> Mat {
    loop {
        let u = DMatrix::<f64>::from_fn(shape.0, shape.1, |_, _| rng.sample(StandardNormal));
        let norm = u.norm();
        if norm > 0.0 && norm.is_finite() {
            return u * (r / norm);
        }
    }
}

/// Cost as seen by the chosen oracle.
pub fn cost_query(task: &LqrTask, gain: &Gain, oracle: OracleKind) -> Result<f64> {
    match oracle {
        OracleKind::Exact => lqr::cost(task, gain),
        OracleKind::FiniteHorizon(horizon) => {
            let acl = task.closed_loop(gain)?;
            let k = gain.matrix();
            let w = task.q() + k.transpose() * task.r() * k;
            // Tr((Aclᵀ)ᵗ W Aclᵗ Σ₀) = Tr(W · Aclᵗ Σ₀ (Aclᵀ)ᵗ)
            let mut x = task.sigma0().clone();
            let mut total = 0.0;
            for _ in 0..horizon {
                total += w.component_mul(&x).sum();
                x = &acl * x * acl.transpose();
            }
            Ok(total)
        }
    }
}

/// Two-point estimator with the oracle from `cfg` and streams keyed by `key`.
pub fn zo2p(task: &LqrTask, gain: &Gain, cfg: &ZoConfig, key: StreamKey) -> Result<ZoEstimate> {
    zo2p_with(task, gain, cfg, key, &cfg.oracle)
}

/// Two-point estimator with an arbitrary cost oracle. The same `m`
/// perturbations feed both the gradient and the Hessian estimate.
pub fn zo2p_with<O: CostOracle + ?Sized>(
    task: &LqrTask,
    gain: &Gain,
    cfg: &ZoConfig,
    key: StreamKey,
    oracle: &O,
) -> Result<ZoEstimate> {
    cfg.validate()?;
    task.check_gain(gain)?;
    let (nu, nx) = gain.shape();
    let r2 = cfg.r * cfg.r;
    let base = oracle.query(task, gain)?;
    let mut grad = Mat::zeros(nu, nx);
    let mut hess = Mat::zeros(nu, nu);
    let eye = Mat::identity(nu, nu);
    for l in 0..cfg.m {
        let mut rng = key.rng(l as u64);
        let u = sample_sphere((nu, nx), cfg.r, &mut rng);
        let plus = Gain::new(gain.matrix() + &u);
        let minus = Gain::new(gain.matrix() - &u);
        let j_plus = query_sample(task, &plus, oracle, l)?;
        let j_minus = query_sample(task, &minus, oracle, l)?;
        grad += &u * (j_plus - j_minus);
        hess += (&u * u.transpose() - &eye) * (j_plus - base);
    }
    let m = cfg.m as f64;
    grad *= (nx * nu) as f64 / (2.0 * r2 * m);
    hess *= (nu * nu) as f64 / (r2 * m);
    if !linalg::all_finite(&grad) || !linalg::all_finite(&hess) {
        return Err(Error::Computation("non-finite zeroth-order estimate".into()));
    }
    Ok(ZoEstimate { grad, hess })
}

fn query_sample<O: CostOracle + ?Sized>(task: &LqrTask, gain: &Gain, oracle: &O, sample: usize) -> Result<f64> {
    match oracle.query(task, gain) {
        Err(Error::Stability { rho, .. }) => Err(Error::Estimation { sample, rho }),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_task() -> LqrTask {
        LqrTask::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn sphere_norm_is_exact() {
        let key = StreamKey::new(7, Domain::ZoOuter, 0, 0);
        for s in 0..100 {
            let u = sample_sphere((2, 4), 0.37, &mut key.rng(s));
            assert!((u.norm() - 0.37).abs() <= 0.37 * 1e-12);
        }
    }

    #[test]
    fn keyed_streams_repeat_and_differ() {
        let key = StreamKey::new(3, Domain::ZoOuter, 1, 2);
        let a = sample_sphere((2, 3), 1.0, &mut key.rng(5));
        let b = sample_sphere((2, 3), 1.0, &mut key.rng(5));
        let c = sample_sphere((2, 3), 1.0, &mut key.rng(6));
        let d = sample_sphere((2, 3), 1.0, &mut StreamKey::new(3, Domain::ZoInner, 1, 2).rng(5));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn finite_horizon_single_term() {
        let t = scalar_task();
        let k = Gain::from_row_slice(1, 1, &[0.3]);
        let j1 = cost_query(&t, &k, OracleKind::FiniteHorizon(1)).unwrap();
        assert!((j1 - (1.0 + 0.09)).abs() < 1e-15);
        let exact = cost_query(&t, &Gain::zeros(1, 1), OracleKind::Exact).unwrap();
        assert!((exact - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn finite_horizon_accepts_unstable_gain() {
        let t = scalar_task();
        let k = Gain::from_row_slice(1, 1, &[-1.0]);
        assert!(cost_query(&t, &k, OracleKind::FiniteHorizon(5)).unwrap().is_finite());
        assert!(cost_query(&t, &k, OracleKind::Exact).is_err());
    }

    #[test]
    fn constant_oracle_gives_zero_estimates() {
        let t = scalar_task();
        let cfg = ZoConfig { r: 0.1, m: 50, ..Default::default() };
        let stub = |_: &LqrTask, _: &Gain| -> Result<f64> { Ok(3.5) };
        let est = zo2p_with(&t, &Gain::zeros(1, 1), &cfg, StreamKey::new(1, Domain::ZoOuter, 0, 0), &stub).unwrap();
        assert_eq!(est.grad.norm(), 0.0);
        assert_eq!(est.hess.norm(), 0.0);
    }

    #[test]
    fn destabilizing_sample_is_reported() {
        let t = scalar_task();
        // ρ(0.5 − k) = 0.99 at k = −0.49; r = 0.2 pushes samples past 1.
        let cfg = ZoConfig { r: 0.2, m: 10, ..Default::default() };
        let err = zo2p(&t, &Gain::from_row_slice(1, 1, &[-0.49]), &cfg, StreamKey::new(0, Domain::ZoOuter, 0, 0));
        assert!(matches!(err, Err(Error::Estimation { sample: 0, .. })));
    }

    #[test]
    fn config_json_shape() {
        let c: ZoConfig = serde_json::from_str(r#"{"r": 0.01, "m": 20, "oracle": "finite_horizon", "horizon": 500, "seed": 9}"#).unwrap();
        assert_eq!(c.oracle, OracleKind::FiniteHorizon(500));
        assert_eq!(c.rng_seed, 9);
        let back: ZoConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ZoConfig>(r#"{"r": 0.0, "m": 20}"#).is_err());
        assert!(serde_json::from_str::<ZoConfig>(r#"{"r": 0.1, "m": 0}"#).is_err());
    }
}
