//! Waveguide strip, obstacle boundaries and periodic cell layouts.
//!
//! The strip is `R x (0, 1/2)` with period 1 along `x1`. Each period holds two
//! obstacles at height 1/4; the unperturbed centers sit at `x1 = 1/4, 3/4`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Strip height.
pub const STRIP_HEIGHT: f64 = 0.5;
/// Height of the obstacle centers.
pub const CENTER_HEIGHT: f64 = 0.25;
/// Largest admissible dimerization shift.
pub const DELTA_MAX: f64 = 0.05;

/// Star-shaped obstacle boundary `r(theta) = sum_k a_k cos(k (theta - pi/2))`.
///
/// Only cosines about the vertical axis are representable, so every shape is
/// mirror symmetric under `x1 -> -x1` about its center.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObstacleShape {
    pub fourier_cos_coeffs: Vec<f64>,
    pub n_nodes: usize,
    /// Node positions relative to the obstacle center.
    pub nodes: Vec<Point>,
    /// Outward unit normals.
    pub normals: Vec<Point>,
    /// Arc-length trapezoid weights.
    pub weights: Vec<f64>,
    /// Parameter values `theta_j = 2 pi j / n`.
    pub params: Vec<f64>,
    /// `|y'(theta_j)|`.
    pub speeds: Vec<f64>,
}

impl ObstacleShape {
    pub fn new(fourier_cos_coeffs: Vec<f64>, n_nodes: usize) -> Result<Self> {
        if fourier_cos_coeffs.is_empty() {
            return Err(Error::Geometry("empty coefficient list".into()));
        }
        if n_nodes < 16 || n_nodes % 2 != 0 {
            return Err(Error::Geometry(format!(
                "n_nodes must be even and at least 16, got {n_nodes}"
            )));
        }
        let shape_fn = |t: f64| radius_at(&fourier_cos_coeffs, t);

        // dense validation sample
        let dense = 1024;
        let mut max_height: f64 = 0.0;
        let mut pts = Vec::with_capacity(dense);
        for j in 0..dense {
            let t = 2.0 * PI * j as f64 / dense as f64;
            let (r, _) = shape_fn(t);
            if !(r > 0.0) {
                return Err(Error::Geometry(format!("r(theta) = {r} <= 0 at theta = {t}")));
            }
            max_height = max_height.max((r * t.sin()).abs());
            pts.push([r * t.cos(), r * t.sin()]);
        }
        if max_height >= CENTER_HEIGHT {
            return Err(Error::Geometry(format!(
                "obstacle reaches the wall: max |x2 - 1/4| = {max_height}"
            )));
        }
        let mut diam: f64 = 0.0;
        for a in pts.iter().step_by(4) {
            for b in pts.iter().step_by(4) {
                diam = diam.max(dist(*a, *b));
            }
        }
        let limit = 0.5 - 2.0 * DELTA_MAX;
        if diam >= limit {
            return Err(Error::Geometry(format!(
                "obstacle diameter {diam} exceeds cell limit {limit}"
            )));
        }

        let h = 2.0 * PI / n_nodes as f64;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut normals = Vec::with_capacity(n_nodes);
        let mut weights = Vec::with_capacity(n_nodes);
        let mut params = Vec::with_capacity(n_nodes);
        let mut speeds = Vec::with_capacity(n_nodes);
        for j in 0..n_nodes {
            let t = node_angle(j, n_nodes);
            let (r, dr) = shape_fn(t);
            let (s, c) = t.sin_cos();
            let tangent = [dr * c - r * s, dr * s + r * c];
            let speed = tangent[0].hypot(tangent[1]);
            nodes.push([r * c, r * s]);
            normals.push([tangent[1] / speed, -tangent[0] / speed]);
            weights.push(h * speed);
            params.push(t);
            speeds.push(speed);
        }
        Ok(Self {
            fourier_cos_coeffs,
            n_nodes,
            nodes,
            normals,
            weights,
            params,
            speeds,
        })
    }

    /// Index of the node mirrored under `x1 -> -x1`.
    pub fn mirror_index(&self, j: usize) -> usize {
        let n = self.n_nodes;
        (n / 2 + n - j) % n
    }

    /// Radius and its derivative at polar angle `theta`.
    pub fn radius(&self, theta: f64) -> (f64, f64) {
        radius_at(&self.fourier_cos_coeffs, theta)
    }

    pub fn perimeter(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when `x` (relative to the center) lies strictly inside.
    pub fn contains(&self, x: Point) -> bool {
        let rho = x[0].hypot(x[1]);
        if rho == 0.0 {
            return true;
        }
        let theta = x[1].atan2(x[0]);
        rho < self.radius(theta).0
    }

    /// Signed distance surrogate `|x| - r(theta(x))`.
    pub fn level(&self, x: Point) -> f64 {
        let theta = x[1].atan2(x[0]);
        x[0].hypot(x[1]) - self.radius(theta).0
    }

    pub fn max_radius(&self) -> f64 {
        (0..720)
            .map(|j| self.radius(2.0 * PI * j as f64 / 720.0).0)
            .fold(0.0, f64::max)
    }
}

fn node_angle(j: usize, n: usize) -> f64 {
    // exact quarter angles keep mirrored nodes bitwise consistent
    2.0 * PI * j as f64 / n as f64
}

fn radius_at(coeffs: &[f64], theta: f64) -> (f64, f64) {
    let psi = theta - 0.5 * PI;
    let mut r = 0.0;
    let mut dr = 0.0;
    for (k, a) in coeffs.iter().enumerate() {
        let kf = k as f64;
        let (s, c) = (kf * psi).sin_cos();
        r += a * c;
        dr -= a * kf * s;
    }
    (r, dr)
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Disk of the given radius.
pub fn make_disk(radius: f64, n_nodes: usize) -> Result<ObstacleShape> {
    if !(radius > 0.0 && radius < 0.25) {
        return Err(Error::Geometry(format!("disk radius {radius} outside (0, 1/4)")));
    }
    ObstacleShape::new(vec![radius], n_nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Unperturbed,
    PlusDelta,
    MinusDelta,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub delta: f64,
    pub centers: Vec<Point>,
    pub variant: Variant,
}

impl CellLayout {
    /// The two obstacle centers of the reference period `[0, 1]`.
    pub fn cell_pair(variant: Variant, delta: f64) -> [Point; 2] {
        let s = match variant {
            Variant::Unperturbed => 0.0,
            Variant::PlusDelta => delta,
            Variant::MinusDelta => -delta,
            Variant::Joint => panic!("joint layout has no period"),
        };
        [[0.25 - s, CENTER_HEIGHT], [0.75 + s, CENTER_HEIGHT]]
    }
}

/// Obstacle centers for `n_cells` periods.
///
/// Periodic variants cover `[0, n_cells]`. The joint layout covers
/// `[-n_cells, n_cells]` and glues the `+delta` medium on `x1 > 0` to the
/// `-delta` medium on `x1 < 0`.
pub fn layout_centers(variant: Variant, delta: f64, n_cells: usize) -> Result<CellLayout> {
    if !(delta.abs() < DELTA_MAX) {
        return Err(Error::Geometry(format!("|delta| = {} >= {DELTA_MAX}", delta.abs())));
    }
    if n_cells == 0 {
        return Err(Error::Geometry("n_cells must be positive".into()));
    }
    let centers = match variant {
        Variant::Joint => {
            let mut c = Vec::with_capacity(4 * n_cells);
            let nmax = 2 * n_cells as i64;
            for n in (-nmax..=nmax).filter(|&n| n != 0) {
                let base = (2 * n.abs() - 1) as f64 / 4.0 * (n.signum() as f64);
                let shift = if n % 2 == 0 { delta } else { -delta };
                c.push([base + shift, CENTER_HEIGHT]);
            }
            c
        }
        _ => {
            let pair = CellLayout::cell_pair(variant, delta);
            (0..n_cells)
                .flat_map(|k| pair.map(|z| [z[0] + k as f64, z[1]]))
                .collect()
        }
    };
    Ok(CellLayout {
        delta,
        centers,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_perimeter_and_mirror() {
        let d = make_disk(0.1, 64).unwrap();
        assert!((d.perimeter() - 0.2 * PI).abs() < 1e-12);
        for j in 0..64 {
            let m = d.mirror_index(j);
            let a = d.nodes[j];
            let b = d.nodes[m];
            assert!((a[0] + b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn oversized_disk_rejected() {
        assert!(make_disk(0.3, 64).is_err());
        assert!(make_disk(0.21, 64).is_err());
        assert!(make_disk(0.1, 15).is_err());
    }

    #[test]
    fn plus_delta_gap() {
        let l = layout_centers(Variant::PlusDelta, 0.01, 1).unwrap();
        assert!((l.centers[1][0] - l.centers[0][0] - 0.52).abs() < 1e-14);
        let l = layout_centers(Variant::MinusDelta, 0.01, 1).unwrap();
        assert!((l.centers[1][0] - l.centers[0][0] - 0.48).abs() < 1e-14);
        assert!(layout_centers(Variant::PlusDelta, 0.06, 1).is_err());
    }

    #[test]
    fn unperturbed_centers() {
        let l = layout_centers(Variant::Unperturbed, 0.0, 2).unwrap();
        assert_eq!(l.centers[0], [0.25, 0.25]);
        assert_eq!(l.centers[1], [0.75, 0.25]);
        assert_eq!(l.centers[2], [1.25, 0.25]);
    }
}
