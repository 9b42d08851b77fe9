use proptest::prelude::*;

use meta_lqr::heterogeneity::{self, HeterogeneityProfile};
use meta_lqr::linalg::{self, Mat};
use meta_lqr::lqr::{self, Gain, LqrTask, LyapunovSide};
use meta_lqr::maml::{self, MamlConfig};
use meta_lqr::taskgen::{self, GenSpec};
use meta_lqr::zo::{self, Domain, StreamKey, ZoConfig};

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v) * scale)
}

/// A task whose open loop is already stable, so `K = 0` is stabilizing.
fn stable_task() -> impl Strategy<Value = LqrTask> {
    (1usize..=3, 1usize..=2)
        .prop_flat_map(|(nx, nu)| {
            (
                matrix(nx, nx, 1.0),
                matrix(nx, nu, 1.0),
                matrix(nx, nx, 1.0),
                matrix(nu, nu, 1.0),
                0.2..0.9f64,
            )
        })
        .prop_filter_map("stable open loop", |(a, b, lq, lr, rho)| {
            let nx = a.nrows();
            let nu = b.ncols();
            let scale = linalg::spectral_radius(&a).ok()?.max(1e-3);
            let a = a * (rho / scale);
            let q = &lq * lq.transpose() + Mat::identity(nx, nx) * 0.1;
            let r = &lr * lr.transpose() + Mat::identity(nu, nu) * 0.1;
            LqrTask::with_default_sigma0(a, b, q, r).ok()
        })
}

fn shifted(g: &Gain, d: &Mat, h: f64) -> Gain {
    Gain::new(g.matrix() + d * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lyapunov_residual_is_small(task in stable_task()) {
        let acl = task.a().clone();
        let w = task.q().clone();
        for side in [LyapunovSide::TransposeInside, LyapunovSide::TransposeOutside] {
            let x = lqr::solve_lyapunov(&acl, &w, side).unwrap();
            let recon = match side {
                LyapunovSide::TransposeInside => &w + &acl * &x * acl.transpose(),
                LyapunovSide::TransposeOutside => &w + acl.transpose() * &x * &acl,
            };
            prop_assert!((&x - recon).norm() <= 1e-9 * (1.0 + x.norm()));
            prop_assert!(linalg::is_symmetric(&x, 1e-9 * (1.0 + x.norm())));
        }
    }

    #[test]
    fn gradient_matches_directional_difference(task in stable_task(), seed in 0u64..1000) {
        let g = Gain::zeros(task.nu(), task.nx());
        let d = Mat::from_fn(task.nu(), task.nx(), |i, j| (((seed + 7 * i as u64 + 13 * j as u64) % 11) as f64 - 5.0) / 5.0);
        let h = 1e-6;
        let fd = (lqr::cost(&task, &shifted(&g, &d, h)).unwrap() - lqr::cost(&task, &shifted(&g, &d, -h)).unwrap()) / (2.0 * h);
        let exact = lqr::gradient_exact(&task, &g).unwrap().component_mul(&d).sum();
        prop_assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()));
    }

    #[test]
    fn hessian_is_symmetric(task in stable_task()) {
        let g = Gain::zeros(task.nu(), task.nx());
        let h = lqr::hessian_matrix(&task, &g).unwrap();
        prop_assert!((&h - h.transpose()).norm() <= 1e-8 * (1.0 + h.norm()));
    }

    #[test]
    fn optimal_gain_is_stationary_and_no_worse(task in stable_task()) {
        let k = lqr::optimal_gain(&task).unwrap();
        let grad = lqr::gradient_exact(&task, &k).unwrap();
        prop_assert!(grad.norm() <= 1e-8 * (1.0 + k.matrix().norm()));
        let zero = Gain::zeros(task.nu(), task.nx());
        prop_assert!(lqr::cost(&task, &k).unwrap() <= lqr::cost(&task, &zero).unwrap() + 1e-9);
    }

    #[test]
    fn zo2p_is_deterministic_per_key(seed in 0u64..10_000, task_index in 0usize..5) {
        let (task, k0) = taskgen::boeing_nominal();
        let cfg = ZoConfig { m: 4, rng_seed: seed, ..ZoConfig::default() };
        let key = StreamKey::new(seed, Domain::ZoOuter, task_index, 3);
        let a = zo::zo2p(&task, &k0, &cfg, key).unwrap();
        let b = zo::zo2p(&task, &k0, &cfg, key).unwrap();
        prop_assert_eq!(&a, &b);
        let h = &a.hess;
        prop_assert_eq!(h.shape(), (2, 2));
        prop_assert!(linalg::all_finite(&a.grad) && linalg::all_finite(h));
    }

    #[test]
    fn sphere_samples_have_the_radius(seed in 0u64..10_000, r in 1e-4..1.0f64) {
        let mut rng = StreamKey::new(seed, Domain::ZoOuter, 0, 0).rng(0);
        let u = zo::sample_sphere((2, 4), r, &mut rng);
        prop_assert!((u.norm() - r).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn split_partitions_every_index(n in 2usize..40, fraction in 0.1..0.9f64, seed in 0u64..100) {
        let tasks = taskgen::generate(&GenSpec::boeing(taskgen::LEVELS[0], n, seed)).unwrap();
        let Ok((train, holdout)) = taskgen::split_indices(&tasks, fraction, seed) else {
            return Ok(());
        };
        let mut all: Vec<usize> = train.iter().chain(&holdout).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!train.is_empty() && !holdout.is_empty());
        let mut reversed = tasks.clone();
        reversed.reverse();
        let (train_r, _) = taskgen::split_indices(&reversed, fraction, seed).unwrap();
        let mut mapped: Vec<usize> = train_r.iter().map(|&i| n - 1 - i).collect();
        let mut sorted = train.clone();
        mapped.sort_unstable();
        sorted.sort_unstable();
        prop_assert_eq!(mapped, sorted);
    }

    #[test]
    fn measured_heterogeneity_respects_levels(l in prop::array::uniform4(0.0..0.02f64), seed in 0u64..100) {
        let spec = GenSpec::boeing(l, 5, seed);
        let tasks = taskgen::generate(&spec).unwrap();
        let p = heterogeneity::measure(&tasks).unwrap();
        let norms = spec.resolved_masks().norms();
        for k in 0..4 {
            prop_assert!(p.levels()[k] <= l[k] * norms[k] * (1.0 + 1e-12) + 1e-15);
        }
        let shuffled: Vec<LqrTask> = tasks.iter().rev().cloned().collect();
        prop_assert_eq!(heterogeneity::measure(&shuffled).unwrap(), p);
    }

    #[test]
    fn f_z_monotone_in_each_level(l in prop::array::uniform4(0.0..0.02f64), k in 0usize..4, bump in 0.0..0.01f64) {
        let tasks = taskgen::generate(&GenSpec::boeing(taskgen::LEVELS[0], 3, 1)).unwrap();
        let (_, k0) = taskgen::boeing_nominal();
        let base = heterogeneity::f_z_bound(&HeterogeneityProfile::from_levels(l), &tasks, &k0).unwrap();
        let mut up = l;
        up[k] += bump;
        let more = heterogeneity::f_z_bound(&HeterogeneityProfile::from_levels(up), &tasks, &k0).unwrap();
        prop_assert!(more >= base);
    }

    #[test]
    fn zero_inner_step_meta_gradient_is_average(task in stable_task()) {
        let g = Gain::zeros(task.nu(), task.nx());
        let tasks = [task.clone(), task.clone()];
        let meta = maml::maml_gradient_mb(&tasks, &g, 0.0).unwrap();
        let plain = lqr::gradient_exact(&task, &g).unwrap();
        prop_assert!((meta - plain).norm() <= 1e-12 * (1.0 + lqr::gradient_exact(&task, &g).unwrap().norm()));
    }
}

#[test]
fn model_based_costs_never_increase_on_identical_tasks() {
    let (task, k0) = taskgen::boeing_nominal();
    let cfg = MamlConfig { eta: 2e-5, eta_l: 1e-6, iterations: 300, ..Default::default() };
    let (_, record) = maml::run_model_based(&[task.clone(), task], &k0, &cfg).unwrap();
    for w in record.iterations.windows(2) {
        assert!(w[1].costs[0] <= w[0].costs[0]);
    }
}
