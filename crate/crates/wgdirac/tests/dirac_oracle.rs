mod common;

use std::f64::consts::PI;

use common::{dirac, disk};
use num_complex::Complex64 as C;
use wgdirac::bands::{dirac_point, trace_bands, BandChart};
use wgdirac::dirac::*;
use wgdirac::fdoracle::{fd_bloch_eigs, FdGrid};
use wgdirac::geometry::ObstacleShape;
use wgdirac::layerops::{kernel_vectors, CellOperator, DensityPair, FieldEvaluator};
use wgdirac::Error;

fn overlap(a: &DensityPair, b: &DensityPair, w: &[f64]) -> f64 {
    let ww: Vec<f64> = w.iter().chain(w).copied().collect();
    let ip: C = a.stacked().iter().zip(b.stacked()).zip(&ww).map(|((x, y), w)| x.conj() * y * *w).sum();
    ip.norm() / (a.weighted_norm(w) * b.weighted_norm(w))
}

fn raw_kernel(shape: &ObstacleShape, lambda: f64) -> [DensityPair; 2] {
    let cell = CellOperator::new(shape, 0.0).unwrap();
    let t = cell.at_lambda(lambda).unwrap().assemble(PI).unwrap();
    let v = kernel_vectors(&t, 2).unwrap();
    [v[0].clone(), v[1].clone()]
}

#[test]
fn pairing_pattern_for_several_radii() {
    for r in [0.08, 0.1, 0.12] {
        let shape = ObstacleShape::new(vec![r], 64).unwrap();
        let fd = fd_bloch_eigs(PI, 0.0, 2, FdGrid::new(80).unwrap(), &shape).unwrap();
        let mid = 0.5 * (fd[0] + fd[1]);
        let cell = CellOperator::new(&shape, 0.0).unwrap();
        let (_, ls) = dirac_point(&cell, (mid - 0.02 * mid, mid + 0.02 * mid)).unwrap();
        let d = analyze(&shape, ls, &Steps::default()).unwrap();
        let pr = d.pairings;
        let g = d.gamma_star.abs();
        assert!(pr.t_lambda[0][1].norm() < 0.05 * g && pr.t_lambda[1][0].norm() < 0.05 * g, "r {r}");
        assert!((pr.t_lambda[0][0] - pr.t_lambda[1][1]).norm() < 0.05 * g);
        let th = d.theta_star.abs();
        assert!(pr.t_p[0][0].norm() < 0.05 * th && pr.t_p[1][1].norm() < 0.05 * th);
        assert!(pr.t_p[0][1].re.abs() < 0.05 * th && (pr.t_p[0][1] + pr.t_p[1][0]).norm() < 0.05 * th);
        let t = d.t_star.abs();
        assert!(pr.s[0][1].norm() < 0.05 * t && pr.s[1][0].norm() < 0.05 * t);
        assert!(pr.s[0][0].re * pr.s[1][1].re < 0.0);
        assert!(d.alpha_star > 0.0 && d.t_star != 0.0);
        assert!((d.alpha_star - (d.theta_star / d.gamma_star).abs()).abs() < 1e-14);
        assert!((d.beta_star - d.t_star / d.gamma_star).abs() < 1e-14 * d.beta_star.abs());
    }
}

#[test]
fn coefficients_are_step_stable() {
    let d = dirac();
    let half = Steps { dp: 5e-5, dl: 5e-5, dd: 5e-5 };
    let (g, th, t, _) = compute_coefficients(&disk(), d.lambda_star, &d.phi_odd, &d.phi_even, &half).unwrap();
    for (a, b) in [(g, d.gamma_star), (th, d.theta_star), (t, d.t_star)] {
        assert!((a - b).abs() < 0.01 * b.abs(), "{a} vs {b}");
    }
    let bad = Steps { dp: 1e-2, ..Steps::default() };
    assert!(matches!(analyze(&disk(), d.lambda_star, &bad), Err(Error::Domain(_))));
}

#[test]
fn symmetrization_ignores_basis_order() {
    let s = disk();
    let d = dirac();
    let raw = raw_kernel(&s, d.lambda_star);
    let (o1, e1) = symmetrize_dirac_modes(&raw, &s).unwrap();
    let (o2, e2) = symmetrize_dirac_modes(&[raw[1].clone(), raw[0].clone()], &s).unwrap();
    assert!(overlap(&o1, &o2, &s.weights) > 0.999);
    assert!(overlap(&e1, &e2, &s.weights) > 0.999);
    assert!(overlap(&o1, &e1, &s.weights) < 1e-3);
    // an arbitrary pair does not span a symmetric kernel
    let junk = [0usize, 1].map(|k| DensityPair {
        phi1: (0..64).map(|j| C::new(((j * 7 + k * 3) as f64).sin(), 0.0)).collect(),
        phi2: (0..64).map(|j| C::new(((j * 5 + k) as f64 * 0.3).cos(), 0.1)).collect(),
    });
    assert!(matches!(symmetrize_dirac_modes(&junk, &s), Err(Error::SymmetryFailure(_))));
}

#[test]
fn mode_parities() {
    let s = disk();
    let d = dirac();
    let cell = CellOperator::new(&s, 0.0).unwrap();
    let pts = cell_sample_points(&cell, 20, 10, 0.02);
    let odd = field_parity_residual(&cell, &d.phi_odd, d.lambda_star, -1.0, &pts).unwrap();
    let even = field_parity_residual(&cell, &d.phi_even, d.lambda_star, 1.0, &pts).unwrap();
    assert!(odd < 1e-3 && even < 1e-3, "{odd} {even}");

    // the odd mode vanishes on the interface line
    let lam = C::new(d.lambda_star, 0.0);
    let ev = FieldEvaluator::new(&cell, &pts).unwrap();
    let scale = ev.eval(&d.phi_odd, PI, lam).unwrap().iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let gamma: Vec<[f64; 2]> = (0..25).map(|j| [0.0, 0.5 * (j as f64 + 0.5) / 25.0]).collect();
    let on = FieldEvaluator::new(&cell, &gamma).unwrap().eval(&d.phi_odd, PI, lam).unwrap();
    let worst = on.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    assert!(worst < 1e-3 * scale, "{worst} vs {scale}");
    let on_even = FieldEvaluator::new(&cell, &gamma).unwrap().eval(&d.phi_even, PI, lam).unwrap();
    assert!(on_even.iter().fold(0.0f64, |a, z| a.max(z.norm())) > 0.1 * scale);
}

#[test]
fn perturbed_bands_follow_closed_form() {
    let s = disk();
    let d = dirac();
    let mut grid: Vec<f64> = (0..11).map(|k| PI - 0.1 + 0.02 * k as f64).collect();
    grid[5] = PI;
    let traced = |delta: f64| {
        let chart = BandChart::from_fd(&s, delta, &grid, 3, 60).unwrap();
        trace_bands(&CellOperator::new(&s, delta).unwrap(), 2, &chart).unwrap()
    };
    let b = traced(0.01);
    let rep = asymptotic_band_check(d, 0.01, [&b[0], &b[1]], 0.1);
    assert!(rep.passed, "{} vs {}", rep.max_abs_deviation, rep.bound);
    let at_pi = rep.points.iter().find(|q| q.p == PI && q.band == 2).unwrap();
    let e = (at_pi.traced - d.lambda_star) / (0.01 * d.beta_star.abs()) - 1.0;
    assert!(e.abs() < 0.15, "{e}");
    for q in &rep.points {
        let m = rep.points.iter().find(|r| r.band == q.band && (r.p - (2.0 * PI - q.p)).abs() < 1e-9).unwrap();
        assert!((q.traced - q.predicted - (m.traced - m.predicted)).abs() < 1e-6);
    }

    let b0 = traced(0.0);
    let rep0 = asymptotic_band_check(d, 0.0, [&b0[0], &b0[1]], 0.05);
    for q in rep0.points.iter().filter(|q| q.p != PI) {
        assert!(q.relative < 0.1, "{q:?}");
    }
}

#[test]
fn band_edge_modes_swap() {
    let rep = mode_swap_check(dirac(), 0.01, &disk()).unwrap();
    assert!(rep.swapped(0.95, 0.2), "{rep:?}");
    // band 2 of +delta and band 1 of -delta share the even mode
    assert!(rep.plus[1][1] > 0.95 && rep.minus[0][1] > 0.95, "{rep:?}");
    assert!((rep.edges_plus[0] - rep.edges_minus[0]).abs() < 1e-6);
    assert!(mode_swap_check(dirac(), 0.0, &disk()).is_err());
}

#[test]
fn right_going_mode_flux() {
    let f = flux_identity_check(dirac(), &disk(), 24).unwrap();
    assert!(f.relative_error < 0.05, "{f:?}");
    assert!(f.norm_sq > 0.0);
}

#[test]
fn closed_form_branches_meet_at_dirac_point() {
    let d = dirac();
    assert_eq!(closed_form_branch(d, 0.0, PI, true), d.lambda_star);
    let up = closed_form_branch(d, 0.01, PI, true);
    let lo = closed_form_branch(d, 0.01, PI, false);
    assert!((up - lo - 0.02 * d.beta_star.abs()).abs() < 1e-10);
    let (x, w) = gauss_legendre(8);
    let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
    assert!((i - 2.0 / 15.0).abs() < 1e-14);
}
