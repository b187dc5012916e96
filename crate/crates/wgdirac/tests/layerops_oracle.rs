use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;
use wgdirac::geometry::{make_disk, ObstacleShape};
use wgdirac::layerops::*;
use wgdirac::qpgreens::{eval_Ge, KernelParams};

const LSTAR_APPROX: f64 = 52.67;

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton on P_n
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Integral of `G^e(x(t_a), y(s)) phi(s) |y'(s)|` over one obstacle by
/// geometrically graded Gauss panels toward the singular parameter.
fn brute_self_integral(shape: &ObstacleShape, center: [f64; 2], ta: f64, p: f64, lam: f64, phi: impl Fn(f64) -> f64) -> Complex64 {
    let (gx, gw) = gauss_legendre(20);
    let params = KernelParams::new(p, lam);
    let pt = |t: f64| {
        let (r, _) = shape.radius(t);
        [center[0] + r * t.cos(), center[1] + r * t.sin()]
    };
    let speed = |t: f64| {
        let (r, dr) = shape.radius(t);
        r.hypot(dr)
    };
    let x = pt(ta);
    let mut s = Complex64::new(0.0, 0.0);
    for side in [-1.0, 1.0] {
        // panels [PI q^{k+1}, PI q^k] in the offset from ta
        let q: f64 = 0.25;
        let mut hi = PI;
        for _ in 0..20 {
            let lo = hi * q;
            for i in 0..gx.len() {
                let u = 0.5 * (lo + hi) + 0.5 * (hi - lo) * gx[i];
                let t = ta + side * u;
                let g = eval_Ge(x, pt(t), &params).unwrap_or_else(|e| panic!("{e} at u={u:e}"));
                s += g * (0.5 * (hi - lo) * gw[i] * speed(t) * phi(t));
            }
            hi = lo;
        }
    }
    s
}

#[test]
fn self_block_matches_graded_quadrature() {
    let shape = ObstacleShape::new(vec![0.1, 0.0, 0.012, 0.0, -0.004], 64).unwrap();
    let phi = |t: f64| 1.0 + 0.5 * t.cos() - 0.3 * (2.0 * t).sin();
    let (p, lam) = (2.3, 47.0);
    let t = assemble_T(p, lam, 0.0, &shape, &KernelParams::new(p, lam)).unwrap();
    let cell = CellOperator::new(&shape, 0.0).unwrap();
    let c = cell.centers[0];
    let n = shape.n_nodes;
    for a in [0usize, 7, 33] {
        let ta = shape.params[a];
        let disc: Complex64 = (0..n).map(|b| t.entries[(a, b)] * phi(shape.params[b])).sum();
        let refv = brute_self_integral(&shape, c, ta, p, lam, phi);
        assert!((disc - refv).norm() < 1e-9 * refv.norm().max(1e-3), "a={a}: {disc} vs {refv}");
    }
}

#[test]
fn blocks_coincide_at_delta_zero_and_pi() {
    let d = make_disk(0.1, 48).unwrap();
    let t = assemble_T(PI, LSTAR_APPROX, 0.0, &d, &KernelParams::new(PI, LSTAR_APPROX)).unwrap();
    let n = 48;
    for a in 0..n {
        for b in 0..n {
            let (u, v) = (t.block(0, 0)[(a, b)], t.block(1, 1)[(a, b)]);
            assert!((u - v).norm() < 1e-12 * u.norm().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn off_diagonal_blocks_related_by_half_shift() {
    // at delta = 0 the second obstacle is the first translated by e1/2, so
    // T21(p) equals T12(p) up to the Bloch phase of a full period.
    let d = make_disk(0.1, 32).unwrap();
    let p = 1.7;
    let t = assemble_T(p, 40.0, 0.0, &d, &KernelParams::new(p, 40.0)).unwrap();
    let ph = Complex64::from_polar(1.0, p);
    for a in 0..32 {
        for b in 0..32 {
            let lhs = t.block(1, 0)[(a, b)];
            let rhs = t.block(0, 1)[(a, b)] * ph;
            assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
        }
    }
}

#[test]
fn nystrom_self_convergence() {
    let lam = 40.0;
    let p = 2.0;
    let t64 = assemble_T(p, lam, 0.01, &make_disk(0.1, 64).unwrap(), &KernelParams::new(p, lam)).unwrap();
    let t128 = assemble_T(p, lam, 0.01, &make_disk(0.1, 128).unwrap(), &KernelParams::new(p, lam)).unwrap();
    // shared nodes: every other node; weights halve
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let a64 = t64.block(i, j);
            let a128 = t128.block(i, j);
            // operator applied to a smooth density, compared on shared nodes
            for a in 0..64 {
                let f = |tb: f64| (tb).cos() + 0.2;
                let u64: Complex64 = (0..64).map(|b| a64[(a, b)] * f(2.0 * PI * b as f64 / 64.0)).sum();
                let u128: Complex64 = (0..128).map(|b| a128[(2 * a, b)] * f(2.0 * PI * b as f64 / 128.0)).sum();
                worst = worst.max((u64 - u128).norm());
                scale = scale.max(u128.norm());
            }
        }
    }
    assert!(worst < 1e-8 * scale, "{worst:e} vs {scale:e}");
}

#[test]
fn two_dimensional_kernel_at_dirac_point() {
    let d = make_disk(0.1, 64).unwrap();
    let cell = CellOperator::new(&d, 0.0).unwrap();
    // coarse search for the double minimum
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..41 {
        let lam = 52.4 + 0.015 * k as f64;
        let s = cell.at_lambda(lam).unwrap().singular_values(PI).unwrap()[0];
        if s < best.0 {
            best = (s, lam);
        }
    }
    let t = cell.at_lambda(best.1).unwrap().assemble(PI).unwrap();
    let s = min_singular_values(&t, 3).unwrap();
    let smax = max_singular_value(&t).unwrap();
    assert!((s[0] - s[1]).abs() < 1e-9 * smax);
    assert!(s[2] > 1e-2 * smax);
    assert!(kernel_vectors(&t, 2).is_ok());
    // well off the band the kernel check fails
    let off = cell.at_lambda(best.1 + 1.0).unwrap().assemble(PI).unwrap();
    assert!(matches!(kernel_vectors(&off, 1), Err(wgdirac::Error::NoKernel { .. })));
}

#[test]
fn generic_point_is_invertible() {
    let d = make_disk(0.1, 64).unwrap();
    let t = assemble_T(1.0, 30.0, 0.0, &d, &KernelParams::new(1.0, 30.0)).unwrap();
    let s = min_singular_values(&t, 1).unwrap()[0];
    assert!(s > 1e-3, "{s}");
}

#[test]
fn zero_density_gives_zero_field() {
    let d = make_disk(0.1, 32).unwrap();
    let params = KernelParams::new(1.0, 30.0);
    let u = field_from_density(&DensityPair::zeros(32), [0.5, 0.05], 1.0, 30.0, 0.0, &d, &params).unwrap();
    assert_eq!(u, Complex64::new(0.0, 0.0));
    let inside = field_from_density(&DensityPair::zeros(32), [0.25, 0.25], 1.0, 30.0, 0.0, &d, &params);
    assert!(matches!(inside, Err(wgdirac::Error::Domain(_))));
}

#[test]
fn field_is_quasi_periodic() {
    let d = make_disk(0.1, 32).unwrap();
    let cell = CellOperator::new(&d, 0.01).unwrap();
    let mut phi = DensityPair::zeros(32);
    for j in 0..32 {
        phi.phi1[j] = Complex64::new((j as f64).sin(), 0.3);
        phi.phi2[j] = Complex64::new(0.1 * j as f64, -1.0);
    }
    let p = 2.2;
    let ev = FieldEvaluator::new(&cell, &[[0.5, 0.1], [1.5, 0.1], [-2.5, 0.1]]).unwrap();
    let u = ev.eval(&phi, p, Complex64::new(45.0, 0.0)).unwrap();
    assert!((u[1] - Complex64::from_polar(1.0, p) * u[0]).norm() < 1e-8 * u[0].norm());
    assert!((u[2] - Complex64::from_polar(1.0, -3.0 * p) * u[0]).norm() < 1e-8 * u[0].norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn real_densities_give_real_quadratic_forms(seed in prop::collection::vec(-1.0f64..1.0, 64), dl in -0.3f64..0.3) {
        let d = make_disk(0.1, 32).unwrap();
        let lam = LSTAR_APPROX + dl;
        let t = assemble_T(PI, lam, 0.0, &d, &KernelParams::new(PI, lam)).unwrap();
        let v = DensityPair::from_stacked(&seed.iter().map(|x| Complex64::new(*x, 0.0)).collect::<Vec<_>>());
        let q = t.pairing(&v, &v);
        prop_assert!(q.im.abs() < 1e-10 * q.norm(), "{}", q);
    }

    #[test]
    fn singular_values_ignore_global_phase(ang in 0.0f64..(2.0 * PI)) {
        let d = make_disk(0.1, 32).unwrap();
        let mut t = assemble_T(1.3, 41.0, 0.01, &d, &KernelParams::new(1.3, 41.0)).unwrap();
        let s0 = min_singular_values(&t, 4).unwrap();
        let ph = Complex64::from_polar(1.0, ang);
        let n = t.entries.nrows();
        for a in 0..n { for b in 0..n { t.entries[(a, b)] *= ph; } }
        let s1 = min_singular_values(&t, 4).unwrap();
        for k in 0..4 { prop_assert!((s0[k] - s1[k]).abs() < 1e-12); }
    }
}
