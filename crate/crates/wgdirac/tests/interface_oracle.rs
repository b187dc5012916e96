mod common;

use std::sync::OnceLock;

use common::{dirac, disk, problem, table, LAMBDA_STAR};
use wgdirac::bands::{gap_interval, GapInterval};
use wgdirac::fdoracle::{fd_supercell_interface, FdGrid};
use wgdirac::interface::*;
use wgdirac::Error;

const D: f64 = 0.01;

fn gap(delta: f64) -> GapInterval {
    gap_interval(dirac(), delta, 0.9).unwrap()
}

struct Solved {
    result: InterfaceModeResult,
    samples: FieldSamples,
}

fn solved() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| {
        let pb = problem(D, 24);
        let mut result = pb.find_interface_eigenvalue(&gap(D)).unwrap();
        let samples = pb.reconstruct(&mut result, &SampleGrid::default()).unwrap();
        Solved { result, samples }
    })
}

#[test]
fn operator_is_symmetric_and_orientation_free() {
    let a = problem(D, 24).assemble(52.0).unwrap();
    assert!(a.asymmetry() < 1e-4, "{}", a.asymmetry());
    let tables = [(*table(-D)).clone(), (*table(D)).clone()];
    let b = InterfaceProblem::new(&disk(), -D, tables, 24).unwrap().assemble(52.0).unwrap();
    let scale = a.matrix.norm_l2();
    for i in 0..24 {
        for j in 0..24 {
            assert!((a.matrix[(i, j)] - b.matrix[(i, j)]).norm() < 1e-12 * scale);
        }
    }
}

#[test]
fn sigma_curve_stable_under_node_doubling() {
    let (p24, p48) = (problem(D, 24), problem(D, 48));
    for l in [52.2, 52.4, 52.9, 53.2] {
        let a = p24.assemble(l).unwrap().sigma_min().unwrap();
        let b = p48.assemble(l).unwrap().sigma_min().unwrap();
        assert!((a - b).abs() < 1e-3 * a, "{l}: {a} vs {b}");
    }
}

#[test]
fn single_dip_inside_gap_interval() {
    let r = &solved().result;
    let g = gap(D);
    assert!(g.contains(r.lambda_star_mode), "{} outside {:?}", r.lambda_star_mode, g);
    let thr = 0.5 * r.sigma_median;
    assert!(r.sigma_min_at_root < 1e-6 * r.sigma_median);
    let dips = (1..r.sigma_scan.len() - 1)
        .filter(|&i| {
            let s = &r.sigma_scan;
            s[i].1 < thr && s[i].1 <= s[i - 1].1 && s[i].1 <= s[i + 1].1
        })
        .count();
    assert_eq!(dips, 1);
    assert!(r.asymmetry < 1e-4);
}

#[test]
fn no_spurious_roots_at_window_edges() {
    let pb = problem(D, 24);
    let (lo, hi) = pb.certified_window();
    let median = solved().result.sigma_median;
    for l in [lo, hi] {
        let s = pb.assemble(l).unwrap().sigma_min().unwrap();
        assert!(s > DIP_FRACTION * median, "{l}: {s}");
    }
}

#[test]
fn reconstruction_residuals() {
    let r = solved().result.residuals.unwrap();
    assert!(r.continuity < 5e-2, "{r:?}");
    assert!(r.derivative_jump < 5e-2, "{r:?}");
    assert!(r.dirichlet < 1e-2, "{r:?}");
}

#[test]
fn agrees_with_fd_supercell() {
    let s = solved();
    let g = gap(D);
    let shape = disk();
    let fd = fd_supercell_interface(D, 16, FdGrid::new(80).unwrap(), &shape, LAMBDA_STAR, (g.e1, g.e2)).unwrap();
    assert_eq!(fd.in_window.len(), 1, "{:?}", fd.in_window);
    let lf = fd.lambda.unwrap();
    assert!((lf - s.result.lambda_star_mode).abs() < 0.2 * g.width(), "{lf} vs {}", s.result.lambda_star_mode);
    let (kf, r2f) = fit_decay(&fd.mode.unwrap().column_max(), 1.0, 4.0).unwrap();
    let k = s.result.kappa.unwrap();
    assert!(k.kappa > 0.0 && k.r_squared > 0.95, "{k:?}");
    assert!(r2f > 0.95);
    assert!((k.kappa - kf).abs() < 0.25 * kf, "{} vs {kf}", k.kappa);
    let (k4, r4) = fit_decay(&s.samples.column_max(), 1.0, 4.0).unwrap();
    assert!(k4 > 0.0 && r4 > 0.95 && (k4 - kf).abs() < 0.25 * kf);
}

#[test]
fn density_follows_even_dirac_mode() {
    let ov = even_mode_overlap(&solved().result, dirac(), &disk()).unwrap();
    assert!(ov > 0.5, "{ov}");
}

#[test]
fn eigenvalue_scales_with_delta() {
    let mut offs = Vec::new();
    for d in [0.0075, 0.015] {
        let g = gap(d);
        let r = problem(d, 24).find_interface_eigenvalue(&g).unwrap();
        assert!(g.contains(r.lambda_star_mode), "delta {d}: {} outside {g:?}", r.lambda_star_mode);
        offs.push(((r.lambda_star_mode - LAMBDA_STAR).abs(), g.width()));
    }
    let (a, b) = (offs[0], offs[1]);
    assert!(b.0 < 2.5 * a.0 + 0.1 * b.1, "{offs:?}");
}

#[test]
fn preconditions() {
    let tables = [(*table(D)).clone(), (*table(-D)).clone()];
    assert!(matches!(InterfaceProblem::new(&disk(), D, tables.clone(), 12), Err(Error::Domain(_))));
    assert!(InterfaceProblem::new(&disk(), 0.02, tables, 24).is_err());
    let pb = problem(D, 24);
    let (e1, _) = pb.common_gap();
    assert!(matches!(pb.assemble(e1 - 0.2), Err(Error::PoleRisk { .. })));
}

#[test]
fn decay_fit_recovers_exponential() {
    let cols: Vec<(f64, f64)> = (-50..50).map(|i| {
        let x = (i as f64 + 0.5) * 0.1;
        (x, 3.0 * (-1.7 * x.abs()).exp())
    }).collect();
    let (k, r2) = fit_decay(&cols, 1.0, 4.0).unwrap();
    assert!((k - 1.7).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    assert!(fit_decay(&cols, 4.8, 5.0).is_err());
}
