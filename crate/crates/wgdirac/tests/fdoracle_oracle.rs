mod common;

use std::f64::consts::PI;

use common::disk;
use wgdirac::bands::find_band_lambda;
use wgdirac::fdoracle::*;
use wgdirac::interface::{fit_decay, period_envelope};
use wgdirac::layerops::CellOperator;

fn grid(nx: usize) -> FdGrid {
    FdGrid::new(nx).unwrap()
}

#[test]
fn empty_strip_matches_plane_waves() {
    // lowest modes at p = 1: (p + 2 pi m)^2 + (2 pi n)^2
    for nx in [40, 80] {
        let e = fd_empty_strip_eigs(1.0, 3, grid(nx)).unwrap();
        let h2 = grid(nx).h().powi(2);
        let exact = [1.0, (1.0 - 2.0 * PI).powi(2), (2.0 * PI).powi(2) + 1.0];
        let mut exact = exact.to_vec();
        exact.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&exact) {
            assert!((a - b).abs() < 2.0 * b * b * h2, "nx {nx}: {a} vs {b}");
        }
    }
}

#[test]
fn momentum_reversal_symmetry() {
    let s = disk();
    for p in [0.7, PI / 3.0, 2.5] {
        let a = fd_bloch_eigs(p, 0.01, 3, grid(60), &s).unwrap();
        let b = fd_bloch_eigs(2.0 * PI - p, 0.01, 3, grid(60), &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8 * x, "{p}: {x} vs {y}");
        }
    }
}

#[test]
fn second_order_convergence() {
    let s = disk();
    let v: Vec<f64> = [60, 120, 240]
        .iter()
        .map(|&nx| fd_bloch_eigs(PI / 2.0, 0.0, 1, grid(nx), &s).unwrap()[0])
        .collect();
    let order = ((v[1] - v[0]) / (v[2] - v[1])).log2();
    assert!((1.7..=2.3).contains(&order), "{v:?} order {order}");
}

#[test]
fn richardson_agrees_with_boundary_integral() {
    let s = disk();
    let cell = CellOperator::new(&s, 0.0).unwrap();
    for (p, band) in [(PI / 2.0, 0), (PI / 2.0, 1), (2.2, 0)] {
        let c = fd_bloch_eigs(p, 0.0, band + 1, grid(60), &s).unwrap()[band];
        let f = fd_bloch_eigs(p, 0.0, band + 1, grid(120), &s).unwrap()[band];
        let r = richardson(c, f);
        let b = find_band_lambda(&cell, p, (0.98 * r, 1.02 * r)).unwrap().lambda;
        assert!((r - b).abs() < 5e-3 * b, "p {p} band {band}: {r} vs {b}");
    }
}

#[test]
fn resolution_and_size_preconditions() {
    let s = disk();
    assert!(FdGrid::new(7).is_err());
    assert!(fd_bloch_eigs(1.0, 0.0, 1, grid(50), &s).is_err());
    assert!(fd_supercell_interface(0.01, 0, grid(60), &s, 52.6, (49.0, 56.0)).is_err());
}

#[test]
fn supercell_mode_is_truncation_insensitive() {
    let s = disk();
    let win = (49.2, 56.2);
    let a = fd_supercell_interface(0.01, 12, grid(60), &s, 52.67, win).unwrap();
    assert_eq!(a.in_window.len(), 1, "{:?}", a.in_window);
    let b = fd_supercell_interface(0.01, 24, grid(60), &s, 52.67, win).unwrap();
    let (la, lb) = (a.lambda.unwrap(), b.lambda.unwrap());
    assert!((la - lb).abs() < 1e-4 * la, "{la} vs {lb}");

    let cm = a.mode.unwrap().column_max();
    let left: Vec<(f64, f64)> = cm.iter().copied().filter(|c| c.0 < 0.0).collect();
    let right: Vec<(f64, f64)> = cm.iter().copied().filter(|c| c.0 > 0.0).collect();
    let (kl, _) = fit_decay(&left, 1.0, 4.0).unwrap();
    let (kr, _) = fit_decay(&right, 1.0, 4.0).unwrap();
    assert!((kl - kr).abs() < 0.05 * kr, "{kl} vs {kr}");
    let (el, er) = (period_envelope(&left), period_envelope(&right));
    let n = el.len();
    for k in 0..5 {
        let (l, r) = (el[n - 1 - k].1, er[k].1);
        assert!((l - r).abs() < 0.05 * r, "period {k}: {l} vs {r}");
    }
}

#[test]
fn empty_window_reports_no_mode() {
    let g = fd_supercell_interface(0.01, 12, grid(60), &disk(), 51.0, (50.9, 51.1)).unwrap();
    assert!(g.in_window.is_empty() && g.mode.is_none() && g.lambda.is_none(), "{:?}", g.in_window);
}
