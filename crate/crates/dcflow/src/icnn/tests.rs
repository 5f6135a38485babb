use super::*;
use crate::fd;
use crate::potentials::GaussianMixtureTarget;
use approx::assert_relative_eq;
use rand::Rng;

fn small_arch(widths: Vec<usize>) -> IcnnArchitecture {
    IcnnArchitecture::new(2, widths)
}

fn random_points(dim: usize, n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = crate::rng::seeded(seed);
    (0..n * dim)
        .map(|_| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            scale * z
        })
        .collect()
}

#[test]
fn pure_quadratic_skip_is_half_norm_squared() {
    let mut arch = small_arch(vec![4, 3]);
    arch.init_scale = 0.0;
    let f = init_near_identity(&arch, 0).unwrap();
    for x in random_points(2, 6, 1, 3.0).chunks_exact(2) {
        let expect = 0.5 * (x[0] * x[0] + x[1] * x[1]);
        assert_relative_eq!(f.value(x).unwrap(), expect, epsilon = 1e-14);
        let g = f.grad(x).unwrap();
        assert_eq!(g, x.to_vec());
        let (h, logdet) = f.hessian_logdet(x).unwrap();
        assert_eq!(h, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(logdet.abs() < 1e-12);
    }
}

#[test]
fn one_unit_network_by_hand() {
    // single hidden unit, zero input skip and bias: psi(0) comes out of the
    // activation at zero composed with the read-out
    let arch = IcnnArchitecture {
        input_dim: 2,
        hidden_widths: vec![1],
        activation: Activation::Softplus,
        quadratic_skip: true,
        init_scale: 0.0,
    };
    let layout = arch.layout();
    let mut params = vec![0.0; layout.total];
    params[layout.quad_index().unwrap()] = 1.0;
    params[layout.w_out().start] = 0.7;
    let f = IcnnFunction::from_params(arch, params).unwrap();
    let expect = 0.7 * 2.0_f64.ln(); // softplus(0) = ln 2
    assert_relative_eq!(f.value(&[0.0, 0.0]).unwrap(), expect, epsilon = 1e-14);

    // two stacked units with unit hidden weight: softplus(softplus-composition)
    let arch2 = IcnnArchitecture {
        input_dim: 2,
        hidden_widths: vec![1, 1],
        activation: Activation::Softplus,
        quadratic_skip: false,
        init_scale: 0.0,
    };
    let layout2 = arch2.layout();
    let mut params2 = vec![0.0; layout2.total];
    params2[layout2.w_out().start] = 0.5;
    params2[layout2.w_z(1).start] = 1.0;
    let f2 = IcnnFunction::from_params(arch2, params2).unwrap();
    let z0 = 2.0_f64.ln();
    let expect2 = 0.5 * Activation::Softplus.value(z0);
    assert_relative_eq!(f2.value(&[0.0, 0.0]).unwrap(), expect2, epsilon = 1e-14);
}

#[test]
fn segment_convexity_on_random_probes() {
    let f = init_near_identity(&small_arch(vec![8, 8]), 3).unwrap();
    let mut rng = crate::rng::seeded(4);
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: f64 = rng.random_range(0.0..1.0);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = f.value(&mix).unwrap();
        let rhs = t * f.value(&x).unwrap() + (1.0 - t) * f.value(&y).unwrap();
        assert!(lhs <= rhs + 1e-10, "convexity violated: {lhs} > {rhs}");
    }
}

#[test]
fn grad_matches_finite_differences() {
    let f = init_near_identity(&small_arch(vec![6, 5]), 5).unwrap();
    for x in random_points(2, 5, 6, 2.0).chunks_exact(2) {
        let g = f.grad(x).unwrap();
        let numeric = fd::grad_central(|p| f.value(p).unwrap(), x, 1e-5);
        assert!(fd::max_rel_err(&g, &numeric) < 1e-5, "grad mismatch at {x:?}");
    }
}

#[test]
fn quadratic_surrogate_closed_forms() {
    let q = QuadraticPsi::diagonal(&[2.0, 3.0]).unwrap();
    let x = [1.5, -0.5];
    assert_relative_eq!(q.psi(&x), 0.5 * (2.0 * 2.25 + 3.0 * 0.25), epsilon = 1e-14);
    let m = q.map(&x);
    assert_relative_eq!(m[0], 3.0, epsilon = 1e-14);
    assert_relative_eq!(m[1], -1.5, epsilon = 1e-14);
    let h = q.map_hessian(&x);
    let logdet = crate::linalg::spd_logdet(&h, 2, 0.0).unwrap();
    assert_relative_eq!(logdet, 6.0_f64.ln(), epsilon = 1e-14);
}

#[test]
fn hessian_matches_finite_differences_of_grad() {
    let f = init_near_identity(&small_arch(vec![6, 5]), 7).unwrap();
    for x in random_points(2, 4, 8, 2.0).chunks_exact(2) {
        let (h, _) = f.hessian_logdet(x).unwrap();
        let numeric = fd::jacobian_central(|p| f.grad(p).unwrap(), x, 1e-5);
        assert!(fd::max_rel_err(&h, &numeric) < 1e-4, "hessian mismatch at {x:?}");
    }
}

#[test]
fn sampled_hessians_stay_positive_semidefinite() {
    for seed in 0..5u64 {
        let f = init_near_identity(&small_arch(vec![10, 10]), seed).unwrap();
        for x in random_points(2, 10, seed + 100, 4.0).chunks_exact(2) {
            let h = f.hessian(x).unwrap();
            let tr_half = 0.5 * (h[0] + h[3]);
            let det_gap = ((h[0] - h[3]) * 0.5).hypot(h[1]);
            let min_eig = tr_half - det_gap;
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }
}

#[test]
fn mean_psi_gradient_one_unit_hand_chain_rule() {
    // psi = w sp(a x + b) + qc ||x||^2 / 2 in d = 1
    let arch = IcnnArchitecture {
        input_dim: 1,
        hidden_widths: vec![1],
        activation: Activation::Softplus,
        quadratic_skip: true,
        init_scale: 0.0,
    };
    let layout = arch.layout();
    let mut params = vec![0.0; layout.total];
    let (w, a, b, qc) = (0.8, -0.6, 0.25, 1.0);
    params[layout.quad_index().unwrap()] = qc;
    params[layout.w_out().start] = w;
    params[layout.a_x(0).start] = a;
    params[layout.bias(0).start] = b;
    let f = IcnnFunction::from_params(arch, params).unwrap();

    let x = 1.3;
    let mut grad = vec![0.0; layout.total];
    let spec = LossSpec { psi_weight: 1.0, ..Default::default() };
    let breakdown = loss_param_grad(&f, &[x], &spec, &mut grad).unwrap();
    let u = a * x + b;
    let act = Activation::Softplus;
    assert_relative_eq!(breakdown.total, w * act.value(u) + 0.5 * qc * x * x, epsilon = 1e-14);
    assert_relative_eq!(grad[layout.quad_index().unwrap()], 0.5 * x * x, epsilon = 1e-14);
    assert_relative_eq!(grad[layout.w_out().start], act.value(u), epsilon = 1e-14);
    assert_relative_eq!(grad[layout.a_x(0).start], w * act.d1(u) * x, epsilon = 1e-14);
    assert_relative_eq!(grad[layout.bias(0).start], w * act.d1(u), epsilon = 1e-14);
}

#[test]
fn fit_gradient_vanishes_at_identity_map() {
    let mut arch = small_arch(vec![4, 4]);
    arch.init_scale = 0.0;
    let f = init_near_identity(&arch, 9).unwrap();
    let batch = random_points(2, 16, 10, 2.0);
    let mut grad = vec![0.0; f.layout().total];
    let spec = LossSpec { fit_weight: 1.0, ..Default::default() };
    let breakdown = loss_param_grad(&f, &batch, &spec, &mut grad).unwrap();
    assert!(breakdown.total.abs() < 1e-20);
    assert!(grad.iter().all(|g| g.abs() < 1e-14), "nonzero gradient at the term minimum");
}

fn fd_loss_grad(
    f: &IcnnFunction,
    batch: &[f64],
    spec: &LossSpec,
    h: f64,
) -> Vec<f64> {
    let mut numeric = vec![0.0; f.layout().total];
    for idx in 0..f.layout().total {
        let mut plus = f.clone();
        plus.params_mut()[idx] += h;
        let mut minus = f.clone();
        minus.params_mut()[idx] -= h;
        let lp = loss_value(&plus, batch, spec).unwrap().total;
        let lm = loss_value(&minus, batch, spec).unwrap().total;
        numeric[idx] = (lp - lm) / (2.0 * h);
    }
    numeric
}

#[test]
fn full_jko_loss_gradient_matches_finite_differences() {
    let target = GaussianMixtureTarget::equal_weights(vec![vec![1.0, 0.0], vec![-1.0, 1.0]], 1.0).unwrap();
    let pot = target.dc_potential();
    let arch = small_arch(vec![4, 3]);
    let f = init_near_identity(&arch, 11).unwrap();
    assert!(f.layout().total <= 200, "test network must stay small");
    let batch = random_points(2, 12, 12, 2.0);
    let spec = LossSpec {
        fit_weight: 1.0 / (2.0 * 0.1),
        potential: Some(&pot),
        potential_weight: 1.0,
        entropy_weight: 1.0,
        ..Default::default()
    };
    let mut grad = vec![0.0; f.layout().total];
    loss_param_grad(&f, &batch, &spec, &mut grad).unwrap();
    let numeric = fd_loss_grad(&f, &batch, &spec, 1e-5);
    assert!(
        fd::max_rel_err(&grad, &numeric) < 1e-4,
        "parameter gradient mismatch: {}",
        fd::max_rel_err(&grad, &numeric)
    );
}

#[test]
fn interaction_loss_gradient_matches_finite_differences() {
    let kernel = crate::kernel::Kernel::gaussian(0.9);
    let arch = small_arch(vec![3, 3]);
    let f = init_near_identity(&arch, 13).unwrap();
    let batch = random_points(2, 10, 14, 1.5);
    let spec = LossSpec {
        fit_weight: 2.0,
        pair_kernel: Some((&kernel, 1.0)),
        ..Default::default()
    };
    let mut grad = vec![0.0; f.layout().total];
    loss_param_grad(&f, &batch, &spec, &mut grad).unwrap();
    let numeric = fd_loss_grad(&f, &batch, &spec, 1e-5);
    assert!(fd::max_rel_err(&grad, &numeric) < 1e-4);
}

#[test]
fn constant_pair_kernel_gives_constant_term() {
    let kernel = crate::kernel::Kernel::constant(2.5);
    let f = init_near_identity(&small_arch(vec![3]), 15).unwrap();
    let batch = random_points(2, 8, 16, 1.0);
    let spec = LossSpec { pair_kernel: Some((&kernel, 1.0)), ..Default::default() };
    let breakdown = loss_value(&f, &batch, &spec).unwrap();
    assert_relative_eq!(breakdown.pair_term, 2.5, epsilon = 1e-12);
}

#[test]
fn project_nonneg_clamps_only_constrained_block() {
    let arch = small_arch(vec![3, 2]);
    let mut f = init_near_identity(&arch, 17).unwrap();
    let layout = f.layout().clone();
    let w_start = layout.w_out().start;
    let a_start = layout.a_x(0).start;
    f.params_mut()[w_start] = -0.3;
    f.params_mut()[a_start] = -0.9;
    let projected = f.project_nonneg();
    assert_eq!(projected.params()[w_start], 0.0);
    assert_eq!(projected.params()[a_start], -0.9, "free block must be preserved");
    // idempotent
    let twice = projected.project_nonneg();
    assert_eq!(twice.params(), projected.params());
    // already nonnegative constrained block -> unchanged
    let clean = init_near_identity(&arch, 18).unwrap();
    assert_eq!(clean.project_nonneg().params(), clean.params());
}

#[test]
fn init_near_identity_probe_ball_bound() {
    let arch = IcnnArchitecture::new(2, vec![64, 64]);
    let f = init_near_identity(&arch, 19).unwrap();
    let mut rng = crate::rng::seeded(20);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        // uniform direction, radius up to 10
        let mut x = [0.0; 2];
        loop {
            x[0] = rng.random_range(-1.0..1.0);
            x[1] = rng.random_range(-1.0..1.0);
            if x[0] * x[0] + x[1] * x[1] <= 1.0 {
                break;
            }
        }
        let r: f64 = rng.random_range(0.0..10.0);
        let p = [x[0] * r, x[1] * r];
        let g = f.grad(&p).unwrap();
        let dev = ((g[0] - p[0]).powi(2) + (g[1] - p[1]).powi(2)).sqrt();
        worst = worst.max(dev);
    }
    assert!(worst <= 0.05, "identity deviation {worst} exceeds bound");
}

#[test]
fn init_is_deterministic() {
    let arch = small_arch(vec![16, 16]);
    let a = init_near_identity(&arch, 42).unwrap();
    let b = init_near_identity(&arch, 42).unwrap();
    assert_eq!(a.params(), b.params());
    let c = init_near_identity(&arch, 43).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn snapshot_round_trip_is_exact() {
    let arch = small_arch(vec![5, 4]);
    let f = init_near_identity(&arch, 21).unwrap();
    let json = serde_json::to_string(&f).unwrap();
    let back: IcnnFunction = serde_json::from_str(&json).unwrap();
    assert_eq!(f.params(), back.params());
    assert_eq!(f.arch(), back.arch());

    let dir = std::env::temp_dir().join(format!("dcflow-icnn-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("net.json");
    f.save_json(&path).unwrap();
    let loaded = IcnnFunction::load_json(&path).unwrap();
    assert_eq!(f.params(), loaded.params());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn rejects_bad_inputs() {
    let f = init_near_identity(&small_arch(vec![3]), 22).unwrap();
    assert!(f.value(&[1.0]).is_err());
    assert!(f.value(&[f64::NAN, 0.0]).is_err());
    assert!(f.grad(&[f64::INFINITY, 0.0]).is_err());
}

#[test]
fn hessian_logdet_flags_convexity_breach() {
    // a negative read-out weight (reachable only by bypassing projection)
    // makes the Hessian negative semidefinite beyond what jitter can absorb
    let arch = IcnnArchitecture {
        input_dim: 2,
        hidden_widths: vec![1],
        activation: Activation::Softplus,
        quadratic_skip: false,
        init_scale: 0.0,
    };
    let layout = arch.layout();
    let mut params = vec![0.0; layout.total];
    params[layout.w_out().start] = -1.0;
    let a = layout.a_x(0);
    params[a.start] = 1.0;
    params[a.start + 1] = 0.5;
    let f = IcnnFunction::from_params(arch, params).unwrap();
    assert!(f.hessian_logdet(&[0.4, -0.2]).is_err());
}
