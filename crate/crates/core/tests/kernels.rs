use cld_core::kernels::{
    cholesky2, dsm_kernel, ell, equilibrium, forward_moments, hsm_kernel, sscs_half_moments,
};
use cld_core::{CldError, CldParams, PerDimKernel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Drift matrix of the moment ODEs; `sign = -1` gives the reverse-time
/// linear part used by the splitting sampler.
fn drift(p: &CldParams, sign: f64) -> [[f64; 2]; 2] {
    let (b, g, m) = (p.beta, p.gamma_fric, p.mass);
    [[0.0, sign * b / m], [-sign * b, -b * g / m]]
}

/// State: [m00, m01, m10, m11, sxx, sxv, svv]; mean columns evolve as F·m.
fn moment_rhs(p: &CldParams, sign: f64, y: &[f64; 7]) -> [f64; 7] {
    let f = drift(p, sign);
    let m = [[y[0], y[1]], [y[2], y[3]]];
    let s = [[y[4], y[5]], [y[5], y[6]]];
    let mut dm = [[0.0; 2]; 2];
    let mut ds = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            dm[i][j] = f[i][0] * m[0][j] + f[i][1] * m[1][j];
            ds[i][j] = (0..2).map(|k| f[i][k] * s[k][j] + s[i][k] * f[j][k]).sum();
        }
    }
    ds[1][1] += 2.0 * p.gamma_fric * p.beta;
    [dm[0][0], dm[0][1], dm[1][0], dm[1][1], ds[0][0], ds[0][1], ds[1][1]]
}

fn pack(k: &PerDimKernel) -> [f64; 7] {
    [
        k.mu_coeff[0][0],
        k.mu_coeff[0][1],
        k.mu_coeff[1][0],
        k.mu_coeff[1][1],
        k.sxx,
        k.sxv,
        k.svv,
    ]
}

fn rk4(p: &CldParams, sign: f64, y0: [f64; 7], t: f64, n: usize) -> [f64; 7] {
    let h = t / n as f64;
    let mut y = y0;
    let add = |a: &[f64; 7], b: &[f64; 7], c: f64| {
        let mut o = [0.0; 7];
        for i in 0..7 {
            o[i] = a[i] + c * b[i];
        }
        o
    };
    for _ in 0..n {
        let k1 = moment_rhs(p, sign, &y);
        let k2 = moment_rhs(p, sign, &add(&y, &k1, h / 2.0));
        let k3 = moment_rhs(p, sign, &add(&y, &k2, h / 2.0));
        let k4 = moment_rhs(p, sign, &add(&y, &k3, h));
        for i in 0..7 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[test]
fn initial_condition_is_identity() {
    let p = CldParams::default();
    let k = forward_moments(&p, 0.0, 0.0, 0.01).unwrap();
    assert_eq!(k.mu_coeff, [[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!((k.sxx, k.sxv, k.svv), (0.0, 0.0, 0.01));
}

#[test]
fn moments_match_rk4_oracle() {
    let p = CldParams::default();
    let k = forward_moments(&p, 0.1, 0.0, 0.01).unwrap();
    let y = rk4(&p, 1.0, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.01], 0.1, 4000);
    for (a, b) in pack(&k).iter().zip(&y) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn sscs_half_step_matches_rk4_oracle() {
    let p = CldParams::default();
    let k = sscs_half_moments(&p, 0.07);
    let y = rk4(&p, -1.0, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 0.07, 4000);
    for (a, b) in pack(&k).iter().zip(&y) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn fd_residual(p: &CldParams, sign: f64, f: impl Fn(f64) -> PerDimKernel, t: f64) -> f64 {
    let h = 1e-5;
    let (kp, km, k0) = (pack(&f(t + h)), pack(&f(t - h)), pack(&f(t)));
    let rhs = moment_rhs(p, sign, &k0);
    (0..7)
        .map(|i| ((kp[i] - km[i]) / (2.0 * h) - rhs[i]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn forward_moments_satisfy_moment_odes() {
    let p = CldParams::default().with_t_final(2.0);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let t = 1e-3 + 0.99 * r.random::<f64>();
        let s0xx = r.random::<f64>();
        let s0vv = 0.5 * r.random::<f64>();
        let res = fd_residual(&p, 1.0, |s| forward_moments(&p, s, s0xx, s0vv).unwrap(), t);
        assert!(res < 1e-5, "t = {t}: residual {res}");
    }
}

#[test]
fn half_moments_satisfy_reverse_odes() {
    let p = CldParams::default();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let t = 1e-3 + 0.5 * r.random::<f64>();
        let res = fd_residual(&p, -1.0, |s| sscs_half_moments(&p, s), t);
        assert!(res < 1e-5, "t = {t}: residual {res}");
    }
}

#[test]
fn half_moments_leading_order() {
    let p = CldParams::default();
    let k0 = sscs_half_moments(&p, 0.0);
    assert_eq!(k0.mu_coeff, [[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!((k0.sxx, k0.sxv, k0.svv), (0.0, 0.0, 0.0));
    let h = 1e-6;
    let k = sscs_half_moments(&p, h);
    let lead = 2.0 * p.gamma_fric * p.beta * h;
    assert!((k.svv / lead - 1.0).abs() < 1e-4);
    assert!(k.sxv < 0.0 && k.sxx > 0.0);
}

#[test]
fn half_moments_never_lose_definiteness_for_tiny_steps() {
    let p = CldParams::default();
    for h in [1e-9, 1e-7, 1e-5, 1e-3, 0.1] {
        let k = sscs_half_moments(&p, h);
        assert!(k.det() > 0.0, "h = {h}: det {}", k.det());
        cholesky2(&k, 0.0).unwrap();
    }
}

#[test]
fn semigroup_composition() {
    let p = CldParams::default();
    for (t1, t2) in [(0.1, 0.2), (0.33, 0.5), (0.01, 0.9)] {
        let a = forward_moments(&p, t1, 0.3, 0.01).unwrap();
        let b = dsm_kernel(&p, t2).unwrap();
        let c = forward_moments(&p, t1 + t2, 0.3, 0.01).unwrap();
        let ab = a.then(&b);
        for (x, y) in pack(&ab).iter().zip(&pack(&c)) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}

#[test]
fn converges_to_equilibrium() {
    let p = CldParams::default().with_t_final(5.0);
    let eq = equilibrium(&p);
    assert_eq!((eq.sxx, eq.sxv, eq.svv), (1.0, 0.0, 0.25));
    for t in [2.5, 3.0, 5.0] {
        for (a, b) in [(0.0, 0.0), (0.0, p.v0_var()), (0.4, 0.02)] {
            let k = forward_moments(&p, t, a, b).unwrap();
            assert!((k.sxx - 1.0).abs() < 1e-6);
            assert!(k.sxv.abs() < 1e-6);
            assert!((k.svv - p.mass).abs() < 1e-6);
        }
    }
    let unit = CldParams::new(4.0, 2.0, 1.0);
    let e = equilibrium(&unit);
    assert_eq!((e.sxx, e.sxv, e.svv), (1.0, 0.0, 1.0));
}

#[test]
fn stationary_start_is_fixed_point() {
    let p = CldParams::default();
    for i in 0..=20 {
        let k = forward_moments(&p, i as f64 / 20.0, 1.0, p.mass).unwrap();
        assert!((k.sxx - 1.0).abs() < 1e-10);
        assert!(k.sxv.abs() < 1e-10);
        assert!((k.svv - p.mass).abs() < 1e-10);
    }
}

#[test]
fn domain_errors() {
    let p = CldParams::default();
    assert!(matches!(forward_moments(&p, -0.1, 0.0, 0.0), Err(CldError::Domain(_))));
    assert!(matches!(forward_moments(&p, 1.5, 0.0, 0.0), Err(CldError::Domain(_))));
    assert!(forward_moments(&p, 1.0, 0.0, 0.0).is_ok());
}

#[test]
fn cholesky_hand_cases() {
    let k = PerDimKernel::identity(0.0, 1.0, 0.25);
    let l = cholesky2(&k, 0.0).unwrap();
    assert_eq!((l.lxx, l.lxv, l.lvv), (1.0, 0.0, 0.5));
    let k = PerDimKernel {
        sxx: 4.0,
        sxv: 2.0,
        svv: 2.0,
        ..PerDimKernel::identity(0.0, 0.0, 0.0)
    };
    let l = cholesky2(&k, 0.0).unwrap();
    assert_eq!((l.lxx, l.lxv, l.lvv), (2.0, 1.0, 1.0));
    let bad = PerDimKernel {
        sxx: 1.0,
        sxv: 2.0,
        svv: 1.0,
        ..k
    };
    assert!(matches!(cholesky2(&bad, 0.0), Err(CldError::Factorization(_))));
}

#[test]
fn cholesky_reconstructs_hsm_kernel() {
    let p = CldParams::default();
    let k = hsm_kernel(&p, 0.5).unwrap();
    let l = cholesky2(&k, p.eps_num).unwrap();
    let e = p.eps_num;
    assert!((l.lxx * l.lxx - (k.sxx + e)).abs() < 1e-10);
    assert!((l.lxx * l.lxv - k.sxv).abs() < 1e-10);
    assert!((l.lxv * l.lxv + l.lvv * l.lvv - (k.svv + e)).abs() < 1e-10);
}

#[test]
fn ell_values() {
    let p = CldParams::default();
    let k0 = hsm_kernel(&p, 0.0).unwrap();
    assert!((ell(&k0, 0.0).unwrap() - 10.0).abs() < 1e-12);
    let eq = equilibrium(&p);
    assert!((ell(&eq, 0.0).unwrap() - 2.0).abs() < 1e-12);
    let mut last = 0.0;
    for t in [1e-1, 1e-2, 1e-3, 1e-4] {
        let l = ell(&dsm_kernel(&p, t).unwrap(), 0.0).unwrap();
        assert!(l > last, "DSM ell must grow as t shrinks");
        last = l;
    }
    let asym = 1.0 / (0.5 * p.gamma_fric * p.beta * 1e-4).sqrt();
    assert!((last / asym - 1.0).abs() < 1e-2, "{last} vs {asym}");
    assert!(matches!(ell(&dsm_kernel(&p, 0.0).unwrap(), 0.0), Err(CldError::Singular(_))));
}

#[test]
fn ell_matches_cholesky() {
    let p = CldParams::default();
    for t in [1e-4, 0.01, 0.2, 0.7, 1.0] {
        for k in [hsm_kernel(&p, t).unwrap(), dsm_kernel(&p, t).unwrap()] {
            let l = cholesky2(&k, p.eps_num).unwrap();
            let e = ell(&k, p.eps_num).unwrap();
            assert!((e - 1.0 / l.lvv).abs() < 1e-12 * e.max(1.0), "{e} vs {}", 1.0 / l.lvv);
        }
    }
}

#[test]
fn params_validation() {
    assert!(CldParams::default().validate().is_ok());
    let p = CldParams {
        mass: 0.3,
        ..CldParams::default()
    };
    assert!(p.validate().is_err());
    assert!(CldParams::default().with_eps_cutoff(1.0).validate().is_err());
}

proptest! {
    #[test]
    fn cholesky_reconstructs_random_psd(a in 0.01f64..5.0, c in -1.0f64..1.0, b in 0.01f64..5.0) {
        let sxv = c * (a * b).sqrt() * 0.99;
        let k = PerDimKernel { sxx: a, sxv, svv: b, ..PerDimKernel::identity(0.0, 0.0, 0.0) };
        let l = cholesky2(&k, 0.0).unwrap();
        prop_assert!((l.lxx * l.lxx - a).abs() < 1e-10);
        prop_assert!((l.lxx * l.lxv - sxv).abs() < 1e-10);
        prop_assert!((l.lxv * l.lxv + l.lvv * l.lvv - b).abs() < 1e-10);
        prop_assert!(l.lvv > 0.0);
    }

    #[test]
    fn kernel_covariance_is_psd(t in 0.0f64..1.0, s0xx in 0.0f64..2.0, s0vv in 0.0f64..1.0) {
        let p = CldParams::default();
        let k = forward_moments(&p, t, s0xx, s0vv).unwrap();
        prop_assert!(k.sxx >= 0.0 && k.svv >= 0.0);
        prop_assert!(k.det() >= -1e-12);
    }
}
