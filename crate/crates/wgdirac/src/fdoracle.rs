//! Finite-difference reference solver for the cell problem and for a
//! truncated joint structure.
//!
//! Cell-centered grid with spacing `h = 1/nx`, mirrored ghost values at the
//! walls, and Shortley-Weller arms at the obstacle boundaries, which keeps the
//! eigenvalue error at `O(h^2)`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{layout_centers, CellLayout, ObstacleShape, Point, Variant, STRIP_HEIGHT};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdGrid {
    /// Cells per unit length.
    pub nx: usize,
    /// Cells across the strip, `nx / 2`.
    pub ny: usize,
}

impl FdGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 8 || nx % 2 != 0 {
            return Err(Error::Oracle(format!("nx = {nx} must be even and >= 8")));
        }
        Ok(Self { nx, ny: nx / 2 })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }
}

#[derive(Debug, Clone, Copy)]
enum XBoundary {
    QuasiPeriodic(C),
    Dirichlet,
}

/// Grid values of a mode on the computational domain, row-major in `x2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeGrid {
    pub x1_min: f64,
    pub h: f64,
    pub n1: usize,
    pub n2: usize,
    /// `values[i * n2 + j]` at `(x1_min + (i + 1/2) h, (j + 1/2) h)`; zero inside obstacles.
    pub values: Vec<f64>,
}

impl ModeGrid {
    pub fn x1(&self, i: usize) -> f64 {
        self.x1_min + (i as f64 + 0.5) * self.h
    }

    /// Largest `|u|` in each grid column.
    pub fn column_max(&self) -> Vec<(f64, f64)> {
        (0..self.n1)
            .map(|i| {
                let m = self.values[i * self.n2..(i + 1) * self.n2]
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()));
                (self.x1(i), m)
            })
            .collect()
    }
}

struct Discretization {
    a: SparseColMat<usize, C>,
    index: Vec<Option<usize>>,
    n1: usize,
    n2: usize,
    x1_min: f64,
    h: f64,
}

struct Obstacles<'a> {
    shape: &'a ObstacleShape,
    centers: Vec<Point>,
}

impl Obstacles<'_> {
    fn nearest(&self, x: Point) -> (f64, Point) {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for c in &self.centers {
            let l = self.shape.level([x[0] - c[0], x[1] - c[1]]);
            if l < best.0 {
                best = (l, *c);
            }
        }
        best
    }

    fn inside(&self, x: Point) -> bool {
        self.nearest(x).0 < 0.0
    }

    /// Fraction `t` of the segment `a -> b` where the boundary is crossed.
    fn crossing(&self, a: Point, b: Point) -> f64 {
        let c = self.nearest(b).1;
        let f = |t: f64| {
            let x = [a[0] + t * (b[0] - a[0]) - c[0], a[1] + t * (b[1] - a[1]) - c[1]];
            self.shape.level(x)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Smallest arm fraction kept; closer crossings are snapped.
const MIN_ARM: f64 = 1e-6;

fn discretize(obs: &Obstacles, x1_min: f64, n1: usize, grid: FdGrid, xb: XBoundary) -> Result<Discretization> {
    let h = grid.h();
    let n2 = grid.ny;
    let pos = |i: usize, j: usize| [x1_min + (i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
    let mut index = vec![None; n1 * n2];
    let mut count = 0;
    let order: Vec<usize> = match xb {
        XBoundary::QuasiPeriodic(_) => (0..n1).map(|k| if k % 2 == 0 { k / 2 } else { n1 - 1 - k / 2 }).collect(),
        XBoundary::Dirichlet => (0..n1).collect(),
    };
    for &i in &order {
        for j in 0..n2 {
            if !obs.inside(pos(i, j)) {
                index[i * n2 + j] = Some(count);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Oracle("no free grid nodes".into()));
    }
    let mut trip = Vec::with_capacity(5 * count);
    for i in 0..n1 {
        for j in 0..n2 {
            let Some(row) = index[i * n2 + j] else { continue };
            let x = pos(i, j);
            let mut diag = 0.0;
            // x1 direction
            let mut arms: [(f64, Option<(usize, C)>); 2] = [(h, None), (h, None)];
            for (k, di) in [-1i64, 1].into_iter().enumerate() {
                let ii = i as i64 + di;
                let (col, phase, end) = if ii < 0 || ii >= n1 as i64 {
                    match xb {
                        XBoundary::Dirichlet => (None, C::new(1.0, 0.0), true),
                        XBoundary::QuasiPeriodic(ph) => {
                            let wrapped = ii.rem_euclid(n1 as i64) as usize;
                            let f = if di > 0 { ph } else { ph.conj() };
                            (Some(wrapped), f, false)
                        }
                    }
                } else {
                    (Some(ii as usize), C::new(1.0, 0.0), false)
                };
                if end {
                    arms[k] = (0.5 * h, None);
                    continue;
                }
                let nb = [x[0] + di as f64 * h, x[1]];
                let c = col.unwrap();
                match index[c * n2 + j] {
                    Some(idx) => arms[k] = (h, Some((idx, phase))),
                    None => {
                        let t = obs.crossing(x, nb).max(MIN_ARM);
                        arms[k] = (t * h, None);
                    }
                }
            }
            push_arms(&mut trip, row, &arms, &mut diag);
            // x2 direction with mirrored walls
            let mut arms: [(f64, Option<(usize, C)>); 2] = [(h, None), (h, None)];
            let mut wall = [false; 2];
            for (k, dj) in [-1i64, 1].into_iter().enumerate() {
                let jj = j as i64 + dj;
                if jj < 0 || jj >= n2 as i64 {
                    wall[k] = true;
                    continue;
                }
                let nb = [x[0], x[1] + dj as f64 * h];
                match index[i * n2 + jj as usize] {
                    Some(idx) => arms[k] = (h, Some((idx, C::new(1.0, 0.0)))),
                    None => {
                        let t = obs.crossing(x, nb).max(MIN_ARM);
                        arms[k] = (t * h, None);
                    }
                }
            }
            if wall[0] || wall[1] {
                // ghost equals the node itself: only the interior arm acts
                let other = if wall[0] { arms[1] } else { arms[0] };
                if wall[0] && wall[1] {
                    return Err(Error::Oracle("strip too thin".into()));
                }
                let (ho, nb) = other;
                // -(u_o - u) / (h * (ho + h) / 2) with ghost arm h
                let denom = 0.5 * (ho + h) * ho;
                diag += 1.0 / denom;
                if let Some((idx, ph)) = nb {
                    trip.push(Triplet::new(row, idx, -ph / denom));
                }
            } else {
                push_arms(&mut trip, row, &arms, &mut diag);
            }
            trip.push(Triplet::new(row, row, C::new(diag, 0.0)));
        }
    }
    let a = SparseColMat::try_new_from_triplets(count, count, &trip)
        .map_err(|e| Error::Oracle(format!("{e:?}")))?;
    Ok(Discretization {
        a,
        index,
        n1,
        n2,
        x1_min,
        h,
    })
}

fn push_arms(trip: &mut Vec<Triplet<usize, usize, C>>, row: usize, arms: &[(f64, Option<(usize, C)>); 2], diag: &mut f64) {
    let (hl, hr) = (arms[0].0, arms[1].0);
    *diag += 2.0 / (hl * hr);
    for (k, hk) in [(0, hl), (1, hr)] {
        if let Some((idx, ph)) = arms[k].1 {
            trip.push(Triplet::new(row, idx, -ph * (2.0 / ((hl + hr) * hk))));
        }
    }
}

fn seed_vector(n: usize, k: usize) -> Vec<C> {
    // deterministic, well-mixed start vectors
    (0..n)
        .map(|i| {
            let a = ((i as f64 + 1.0) * (k as f64 * 0.618_034 + 1.234_5)).sin() * 43_758.545_3;
            let b = ((i as f64 + 3.0) * (k as f64 * 0.414_214 + 0.771)).cos() * 12_345.678_9;
            C::new(a.fract(), b.fract())
        })
        .collect()
}

/// Eigenpairs of `a` nearest `sigma` by shift-invert subspace iteration.
fn eigs_near(a: &SparseColMat<usize, C>, sigma: f64, k: usize, tol: f64) -> Result<Vec<(f64, Vec<C>)>> {
    let n = a.nrows();
    let b = (2 * k + 4).min(n);
    let shift: Vec<Triplet<usize, usize, C>> = (0..n).map(|i| Triplet::new(i, i, C::new(-sigma, 0.0))).collect();
    let s = SparseColMat::try_new_from_triplets(n, n, &shift).map_err(|e| Error::Oracle(format!("{e:?}")))?;
    let m = a + &s;
    let lu = m.sp_lu().map_err(|e| Error::Oracle(format!("{e:?}")))?;
    let seeds: Vec<Vec<C>> = (0..b).map(|j| seed_vector(n, j)).collect();
    let mut x = Mat::<C>::from_fn(n, b, |i, j| seeds[j][i]);
    let mut last = Vec::new();
    for _ in 0..500 {
        let y = lu.solve(&x);
        let q = y.qr().compute_thin_Q();
        let aq = a * &q;
        let hm = q.adjoint() * &aq;
        let eig = hm.eigen().map_err(|e| Error::Oracle(format!("{e:?}")))?;
        let vals = eig.S().column_vector();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| (vals[i].re - sigma).abs().total_cmp(&(vals[j].re - sigma).abs()));
        let z = &q * eig.U();
        let az = &aq * eig.U();
        let mut ok = true;
        let mut out = Vec::with_capacity(k);
        for &c in order.iter().take(k) {
            let mu = vals[c];
            let mut res = 0.0;
            let mut nrm = 0.0;
            for i in 0..n {
                res += (az[(i, c)] - mu * z[(i, c)]).norm_sqr();
                nrm += z[(i, c)].norm_sqr();
            }
            if res.sqrt() > tol * mu.norm() * nrm.sqrt() {
                ok = false;
            }
            let scale = 1.0 / nrm.sqrt();
            out.push((mu.re, (0..n).map(|i| z[(i, c)] * scale).collect()));
        }
        if ok {
            out.sort_by(|a, b| a.0.total_cmp(&b.0));
            return Ok(out);
        }
        last = out;
        x = Mat::from_fn(n, b, |i, j| z[(i, order[j])]);
    }
    let _ = last;
    Err(Error::Oracle("shift-invert iteration did not converge".into()))
}

fn cell_obstacles(shape: &ObstacleShape, delta: f64) -> Obstacles<'_> {
    let pair = CellLayout::cell_pair(Variant::PlusDelta, delta);
    let centers = (-1..=1)
        .flat_map(|k| pair.map(|c| [c[0] + k as f64, c[1]]))
        .collect();
    Obstacles { shape, centers }
}

/// The `n_eigs` smallest eigenvalues of the quasi-periodic cell problem.
pub fn fd_bloch_eigs(p: f64, delta: f64, n_eigs: usize, grid: FdGrid, shape: &ObstacleShape) -> Result<Vec<f64>> {
    fd_bloch_eigs_near(p, delta, n_eigs, grid, shape, -1.0)
}

/// The `n_eigs` eigenvalues of the cell problem nearest `target`, ascending.
pub fn fd_bloch_eigs_near(
    p: f64,
    delta: f64,
    n_eigs: usize,
    grid: FdGrid,
    shape: &ObstacleShape,
    target: f64,
) -> Result<Vec<f64>> {
    check_resolution(shape, grid)?;
    let obs = cell_obstacles(shape, delta);
    let d = discretize(&obs, 0.0, grid.nx, grid, XBoundary::QuasiPeriodic(C::from_polar(1.0, p)))?;
    Ok(eigs_near(&d.a, target, n_eigs, 1e-10)?.into_iter().map(|e| e.0).collect())
}

/// Cell-problem eigenvalues without obstacles.
pub fn fd_empty_strip_eigs(p: f64, n_eigs: usize, grid: FdGrid) -> Result<Vec<f64>> {
    let dummy = ObstacleShape::new(vec![0.1], 16)?;
    let obs = Obstacles {
        shape: &dummy,
        centers: Vec::new(),
    };
    let d = discretize(&obs, 0.0, grid.nx, grid, XBoundary::QuasiPeriodic(C::from_polar(1.0, p)))?;
    Ok(eigs_near(&d.a, -1.0, n_eigs, 1e-10)?.into_iter().map(|e| e.0).collect())
}

fn check_resolution(shape: &ObstacleShape, grid: FdGrid) -> Result<()> {
    let across = 2.0 * shape.max_radius() * grid.nx as f64;
    if across < 12.0 {
        return Err(Error::Oracle(format!("{across:.1} nodes across the obstacle, need 12")));
    }
    if shape.max_radius() >= 0.5 * STRIP_HEIGHT {
        return Err(Error::Oracle("obstacle touches the walls".into()));
    }
    Ok(())
}

/// Richardson extrapolation of second-order values on `h` and `h/2`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupercellResult {
    /// Eigenvalues found in the search window, ascending.
    pub in_window: Vec<f64>,
    /// Eigenvalue nearest the target among those in the window.
    pub lambda: Option<f64>,
    pub mode: Option<ModeGrid>,
}

/// Dirichlet-truncated joint structure on `[-n, n]`: eigenvalues in
/// `window` and the mode nearest `target`.
pub fn fd_supercell_interface(
    delta: f64,
    n_cells_per_side: usize,
    grid: FdGrid,
    shape: &ObstacleShape,
    target: f64,
    window: (f64, f64),
) -> Result<SupercellResult> {
    if n_cells_per_side < 1 {
        return Err(Error::Oracle("empty supercell".into()));
    }
    check_resolution(shape, grid)?;
    let layout = layout_centers(Variant::Joint, delta, n_cells_per_side)?;
    let obs = Obstacles {
        shape,
        centers: layout.centers,
    };
    let n1 = 2 * n_cells_per_side * grid.nx;
    let d = discretize(&obs, -(n_cells_per_side as f64), n1, grid, XBoundary::Dirichlet)?;
    let pairs = eigs_near(&d.a, target, 4, 1e-9)?;
    let mut inside: Vec<&(f64, Vec<C>)> = pairs.iter().filter(|e| e.0 > window.0 && e.0 < window.1).collect();
    inside.sort_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()));
    let mut in_window: Vec<f64> = inside.iter().map(|e| e.0).collect();
    in_window.sort_by(f64::total_cmp);
    let best = inside.first().copied();
    let mode = best.map(|(_, v)| {
        // real representative: rotate by the phase of the largest entry
        let big = v.iter().copied().fold(C::new(0.0, 0.0), |a, z| if z.norm() > a.norm() { z } else { a });
        let rot = big.conj() / big.norm();
        let mut values = vec![0.0; d.n1 * d.n2];
        for (cell, idx) in d.index.iter().enumerate() {
            if let Some(k) = idx {
                values[cell] = (v[*k] * rot).re;
            }
        }
        ModeGrid {
            x1_min: d.x1_min,
            h: d.h,
            n1: d.n1,
            n2: d.n2,
            values,
        }
    });
    Ok(SupercellResult {
        in_window,
        lambda: best.map(|b| b.0),
        mode,
    })
}
