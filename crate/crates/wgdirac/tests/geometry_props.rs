use proptest::prelude::*;
use std::f64::consts::PI;
use wgdirac::geometry::*;

fn shape_coeffs() -> impl Strategy<Value = Vec<f64>> {
    (0.06..0.12f64, -0.01..0.01f64, -0.01..0.01f64, -0.005..0.005f64).prop_map(|(a, b, c, d)| vec![a, b, c, d])
}

fn same_set(a: &[Point], b: &[Point], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().all(|p| b.iter().any(|q| (p[0] - q[0]).abs() < tol && (p[1] - q[1]).abs() < tol))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nodes_mirror_exactly(c in shape_coeffs(), half in 8usize..48) {
        let s = ObstacleShape::new(c, 2 * half).unwrap();
        for j in 0..s.n_nodes {
            let (a, b) = (s.nodes[j], s.nodes[s.mirror_index(j)]);
            prop_assert!((a[0] + b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
            let (na, nb) = (s.normals[j], s.normals[s.mirror_index(j)]);
            prop_assert!((na[0] + nb[0]).abs() < 1e-14 && (na[1] - nb[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn radius_even_about_vertical(c in shape_coeffs(), t in 0.0..(2.0 * PI)) {
        let s = ObstacleShape::new(c, 32).unwrap();
        prop_assert!((s.radius(t).0 - s.radius(PI - t).0).abs() < 1e-14);
    }

    #[test]
    fn perimeter_matches_dense_polygon(c in shape_coeffs()) {
        let s = ObstacleShape::new(c, 128).unwrap();
        let n = 1 << 16;
        let pts: Vec<Point> = (0..n).map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            let r = s.radius(t).0;
            [r * t.cos(), r * t.sin()]
        }).collect();
        let poly: f64 = (0..n).map(|j| {
            let (a, b) = (pts[j], pts[(j + 1) % n]);
            (a[0] - b[0]).hypot(a[1] - b[1])
        }).sum();
        // chord sum underestimates by O(n^-2)
        prop_assert!((s.perimeter() - poly).abs() < 1e-10 * poly + 1e-9);
    }

    #[test]
    fn dimerized_media_are_congruent(d in -0.049..0.049f64, n in 1usize..6) {
        let plus = layout_centers(Variant::PlusDelta, d, n + 1).unwrap().centers;
        let minus = layout_centers(Variant::MinusDelta, d, n + 1).unwrap().centers;
        // -delta medium translated by half a period, restricted to [0.5, n + 0.5]
        let shifted: Vec<Point> = minus.iter().map(|c| [c[0] + 0.5, c[1]]).filter(|c| c[0] < n as f64 + 0.5).collect();
        let window: Vec<Point> = plus.iter().copied().filter(|c| c[0] > 0.5 && c[0] < n as f64 + 0.5).collect();
        prop_assert!(same_set(&shifted, &window, 1e-12));
        // each medium is mirror symmetric about the midpoint of a cell pair
        let refl: Vec<Point> = plus.iter().map(|c| [(n + 1) as f64 - c[0], c[1]]).collect();
        prop_assert!(same_set(&refl, &plus, 1e-12));
    }

    #[test]
    fn joint_reflects_to_opposite_sign(d in -0.049..0.049f64, n in 1usize..8) {
        let a = layout_centers(Variant::Joint, d, n).unwrap().centers;
        let b = layout_centers(Variant::Joint, -d, n).unwrap().centers;
        let refl: Vec<Point> = a.iter().map(|c| [-c[0], c[1]]).collect();
        prop_assert!(same_set(&refl, &b, 1e-14));
        for c in a.iter().filter(|c| c[0] > 0.0) {
            let k = c[0].floor();
            let pair = CellLayout::cell_pair(Variant::PlusDelta, d);
            prop_assert!(pair.iter().any(|p| (p[0] + k - c[0]).abs() < 1e-12));
        }
    }
}

#[test]
fn joint_layout_is_symmetric_without_dimerization() {
    let a = layout_centers(Variant::Joint, 0.0, 4).unwrap().centers;
    let refl: Vec<Point> = a.iter().map(|c| [-c[0], c[1]]).collect();
    assert!(same_set(&refl, &a, 1e-15));
    assert_eq!(a.len(), 16);
}

#[test]
fn disk_weights_are_uniform() {
    let d = make_disk(0.1, 64).unwrap();
    for w in &d.weights {
        assert!((w - 2.0 * PI * 0.1 / 64.0).abs() < 1e-15);
    }
}

#[test]
fn rejects_bad_shapes() {
    assert!(ObstacleShape::new(vec![], 32).is_err());
    assert!(ObstacleShape::new(vec![0.1, 0.2], 32).is_err());
    assert!(ObstacleShape::new(vec![0.26], 32).is_err());
    assert!(layout_centers(Variant::Unperturbed, 0.0, 0).is_err());
}
