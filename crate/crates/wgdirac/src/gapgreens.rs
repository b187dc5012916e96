//! Green's functions `G_delta(x, y; lambda)` of the dimerized periodic
//! waveguide for `lambda` inside the band gap.
//!
//! `G_delta = (1/2 pi) int_0^{2 pi} G^p dp` where `G^p` is the quasi-periodic
//! Green's function of the cell problem with Dirichlet obstacles:
//! `G^p = G^e - S_p T(p)^{-1} G^e(z, y)`. For real `lambda` the integrand
//! at `2 pi - p` is the conjugate of the one at `p`, so only `[0, pi]` is
//! integrated.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use crate::bands::{trace_band, BandChart};
use crate::dirac::{bloch_norm_sq, gauss_legendre};
use crate::error::{Error, Result};
use crate::geometry::{ObstacleShape, Point};
use crate::layerops::{fix_phase, BoundaryTrace, kernel_vectors, CellOperator, DensityPair, FieldEvaluator};
use crate::qpgreens::{GreenBlock, Singular};

type C = Complex64;

/// Composite Gauss rule on `[0, pi]` for the Brillouin-zone integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Nodes cover `[0, 2 pi]` and the integrand is summed without folding.
    pub full_zone: bool,
}

impl PQuadrature {
    /// Panels break at the quasi-momenta where the empty strip has a mode at
    /// `lambda` and are at most `max_panel` long.
    pub fn for_lambda(lambda: f64, n_gauss: usize, max_panel: f64) -> Self {
        let mut brk = vec![0.0, PI];
        let mut n = 0;
        while 4.0 * PI * PI * ((n * n) as f64) < lambda {
            let q = (lambda - 4.0 * PI * PI * (n * n) as f64).sqrt();
            let mut p = q.rem_euclid(2.0 * PI);
            if p > PI {
                p = 2.0 * PI - p;
            }
            if p > 1e-9 && p < PI - 1e-9 {
                brk.push(p);
            }
            n += 1;
        }
        brk.sort_by(f64::total_cmp);
        let (gx, gw) = gauss_legendre(n_gauss);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in brk.windows(2) {
            let len = w[1] - w[0];
            let k = (len / max_panel).ceil().max(1.0) as usize;
            for i in 0..k {
                let a = w[0] + len * i as f64 / k as f64;
                let b = w[0] + len * (i + 1) as f64 / k as f64;
                for (x, wt) in gx.iter().zip(&gw) {
                    nodes.push(0.5 * (a + b) + 0.5 * (b - a) * x);
                    weights.push(0.5 * (b - a) * wt);
                }
            }
        }
        Self {
            nodes,
            weights,
            full_zone: false,
        }
    }

    /// The same rule mirrored onto `[pi, 2 pi]`.
    pub fn full_zone(lambda: f64, n_gauss: usize, max_panel: f64) -> Self {
        let mut q = Self::for_lambda(lambda, n_gauss, max_panel);
        let n = q.nodes.len();
        for k in (0..n).rev() {
            q.nodes.push(2.0 * PI - q.nodes[k]);
            q.weights.push(q.weights[k]);
        }
        q.full_zone = true;
        q
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub const DEFAULT_N_GAUSS: usize = 12;
pub const DEFAULT_MAX_PANEL: f64 = 0.35;

/// Band data of one dimerized structure on a Brillouin-zone grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochTable {
    pub delta: f64,
    pub n_bands: usize,
    /// Nodes in `[0, 2 pi]`; `bands[n][k]` is band `n + 1` at `p_nodes[k]`.
    pub p_nodes: Vec<f64>,
    pub p_weights: Vec<f64>,
    pub bands: Vec<Vec<f64>>,
    pub sigma_mins: Vec<Vec<f64>>,
    /// Boundary densities whose cell fields have unit `L^2` norm.
    pub densities: Vec<Vec<DensityPair>>,
    /// Factor applied to the unit-weighted-norm kernel vector.
    pub norm_factors: Vec<Vec<f64>>,
    /// Band values at `p = pi`.
    pub at_pi: Vec<f64>,
    /// Smallest value of band `n_bands + 1` on the grid (coarse chart).
    pub next_band_min: f64,
    pub key: String,
}

impl BlochTable {
    /// `(max band 1, min band 2)`.
    pub fn gap(&self) -> (f64, f64) {
        let b1 = self.bands[0].iter().chain([&self.at_pi[0]]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let b2 = self.bands[1].iter().chain([&self.at_pi[1]]).fold(f64::INFINITY, |a, &b| a.min(b));
        (b1, b2)
    }

    /// Smallest `|lambda - lambda_n(p)|` over the grid.
    pub fn pole_margin(&self, lambda: f64) -> f64 {
        self.bands
            .iter()
            .flatten()
            .chain(&self.at_pi)
            .fold(f64::INFINITY, |a, &b| a.min((lambda - b).abs()))
    }

    /// Size estimate of the contribution of bands above `n_bands`.
    pub fn tail_bound(&self, lambda: f64) -> f64 {
        self.tail_bound_after(self.n_bands, lambda)
    }

    /// `1 / (min_p lambda_{n+1}(p) - lambda)`.
    pub fn tail_bound_after(&self, n: usize, lambda: f64) -> f64 {
        let next = if n < self.n_bands {
            self.bands[n].iter().chain([&self.at_pi[n]]).fold(f64::INFINITY, |a, &b| a.min(b))
        } else {
            self.next_band_min
        };
        1.0 / (next - lambda)
    }

    /// Fails unless `lambda` lies in the gap at least a tenth of the half-width
    /// away from every band value.
    pub fn certify(&self, lambda: f64) -> Result<()> {
        let (e1, e2) = self.gap();
        let half = 0.5 * (e2 - e1);
        if !(e2 > e1) || !(lambda > e1 && lambda < e2) || self.pole_margin(lambda) <= 0.1 * half {
            return Err(Error::PoleRisk { lambda, e1, e2 });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        crate::io::write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io(e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Cache key from the geometry and table parameters.
pub fn table_key(shape: &ObstacleShape, delta: f64, n_bands: usize, n_p_nodes: usize) -> String {
    let mut h = DefaultHasher::new();
    for c in &shape.fourier_cos_coeffs {
        c.to_bits().hash(&mut h);
    }
    shape.n_nodes.hash(&mut h);
    format!("{:016x}_d{delta:+.6}_b{n_bands}_p{n_p_nodes}", h.finish())
}

/// Traces bands `1..=n_bands` at `n_p_nodes` Gauss nodes on `[0, 2 pi]`
/// (computed on `[0, pi]` and mirrored) and at `p = pi`.
pub fn build_bloch_table(delta: f64, n_bands: usize, n_p_nodes: usize, shape: &ObstacleShape) -> Result<BlochTable> {
    if n_bands < 4 || n_p_nodes < 32 || n_p_nodes % 2 != 0 {
        return Err(Error::Domain(format!("table needs n_bands >= 4 and even n_p_nodes >= 32, got {n_bands}, {n_p_nodes}")));
    }
    let half = n_p_nodes / 2;
    let (gx, gw) = gauss_legendre(half);
    let mut ph: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(x, w)| (0.5 * PI * (1.0 + x), 0.5 * PI * w)).collect();
    ph.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid: Vec<f64> = ph.iter().map(|x| x.0).collect();
    grid.push(PI);
    let chart = BandChart::from_fd(shape, delta, &grid, n_bands + 1, 60)?;
    let next_band_min = chart.lambdas.iter().map(|r| r[n_bands]).fold(f64::INFINITY, f64::min);
    let cell = CellOperator::new(shape, delta)?;
    let curves = (1..=n_bands)
        .into_par_iter()
        .map(|b| trace_band(&cell, b, &chart))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Table {
            p: match &e {
                Error::Refinement { p, .. } => *p,
                _ => f64::NAN,
            },
            reason: e.to_string(),
        })?;
    let jobs: Vec<(usize, usize)> = (0..n_bands).flat_map(|b| (0..half).map(move |k| (b, k))).collect();
    let modes = jobs
        .par_iter()
        .map(|&(b, k)| unit_bloch_density(&cell, grid[k], curves[b].lambdas[k], &curves.iter().map(|c| c.lambdas[k]).collect::<Vec<_>>(), b))
        .collect::<Result<Vec<_>>>()?;
    let mut densities = vec![Vec::with_capacity(n_p_nodes); n_bands];
    let mut norm_factors = vec![Vec::with_capacity(n_p_nodes); n_bands];
    for (&(b, _), (d, f)) in jobs.iter().zip(&modes) {
        densities[b].push(d.clone());
        norm_factors[b].push(*f);
    }
    for b in 0..n_bands {
        for k in (0..half).rev() {
            let d = &densities[b][k];
            let c = DensityPair {
                phi1: d.phi1.iter().map(|z| z.conj()).collect(),
                phi2: d.phi2.iter().map(|z| z.conj()).collect(),
            };
            densities[b].push(c);
            let f = norm_factors[b][k];
            norm_factors[b].push(f);
        }
    }
    let mut p_nodes: Vec<f64> = ph.iter().map(|x| x.0).collect();
    let mut p_weights: Vec<f64> = ph.iter().map(|x| x.1).collect();
    for k in (0..half).rev() {
        p_nodes.push(2.0 * PI - ph[k].0);
        p_weights.push(ph[k].1);
    }
    let mirror = |v: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = v[..half].to_vec();
        out.extend(v[..half].iter().rev());
        out
    };
    Ok(BlochTable {
        delta,
        n_bands,
        p_nodes,
        p_weights,
        bands: curves.iter().map(|c| mirror(&c.lambdas)).collect(),
        sigma_mins: curves.iter().map(|c| mirror(&c.sigma_mins)).collect(),
        densities,
        norm_factors,
        at_pi: curves.iter().map(|c| c.lambdas[half]).collect(),
        next_band_min,
        key: table_key(shape, delta, n_bands, n_p_nodes),
    })
}

/// Kernel density of `T(p, lambda)` scaled so that its cell field has unit
/// `L^2` norm. `others` are the remaining band values at the same `p`.
fn unit_bloch_density(cell: &CellOperator, p: f64, lambda: f64, others: &[f64], band: usize) -> Result<(DensityPair, f64)> {
    let near = others
        .iter()
        .enumerate()
        .filter(|&(b, _)| b != band)
        .any(|(_, &l)| (l - lambda).abs() < 1e-6 * lambda);
    let fail = |reason: String| Error::Table { p, reason };
    if near {
        return Err(fail(format!("band {} is degenerate at lambda = {lambda}", band + 1)));
    }
    let t = cell.at_lambda(lambda)?.assemble(p)?;
    let mut v = kernel_vectors(&t, 1).map_err(|e| fail(e.to_string()))?.remove(0);
    fix_phase(&mut v);
    let nsq = bloch_norm_sq(cell, &v, p, lambda, 1e-4)?;
    if !(nsq > 0.0) {
        return Err(fail(format!("non-positive Bloch norm {nsq}")));
    }
    let f = 1.0 / nsq.sqrt();
    v.scale(C::new(f, 0.0));
    Ok((v, f))
}

/// Loads the table from `dir` when a cached copy with the same key exists.
pub fn load_or_build_table(
    dir: &Path,
    delta: f64,
    n_bands: usize,
    n_p_nodes: usize,
    shape: &ObstacleShape,
) -> Result<BlochTable> {
    let key = table_key(shape, delta, n_bands, n_p_nodes);
    let path: PathBuf = dir.join(format!("bloch_{key}.json"));
    if let Ok(t) = BlochTable::load(&path) {
        if t.key == key {
            return Ok(t);
        }
    }
    let t = build_bloch_table(delta, n_bands, n_p_nodes, shape)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
    t.save(&path)?;
    Ok(t)
}

/// Factorized cell operators at the quadrature nodes for one gap `lambda`.
pub struct GapSolver<'c> {
    pub cell: &'c CellOperator,
    pub lambda: f64,
    pub quad: PQuadrature,
    lus: Vec<PartialPivLu<C>>,
}

impl<'c> GapSolver<'c> {
    pub fn new(cell: &'c CellOperator, table: &BlochTable, lambda: f64) -> Result<Self> {
        Self::with_quadrature(cell, table, lambda, PQuadrature::for_lambda(lambda, DEFAULT_N_GAUSS, DEFAULT_MAX_PANEL))
    }

    pub fn with_quadrature(cell: &'c CellOperator, table: &BlochTable, lambda: f64, quad: PQuadrature) -> Result<Self> {
        if (table.delta - cell.delta).abs() > 1e-14 {
            return Err(Error::Domain(format!("table for delta {} used with delta {}", table.delta, cell.delta)));
        }
        table.certify(lambda)?;
        let at = cell.at_lambda(lambda)?;
        let lus = quad
            .nodes
            .iter()
            .map(|&p| Ok(at.assemble(p)?.entries.partial_piv_lu()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cell, lambda, quad, lus })
    }
}

impl GapSolver<'_> {
    /// `T(p_k)^{-1} rhs`.
    pub fn solve(&self, k: usize, rhs: &Mat<C>) -> Mat<C> {
        self.lus[k].solve(rhs)
    }

    /// `sum_b coeffs_b G_delta(x, y_b)` at points `x` of obstacle `obstacle`
    /// at angles `thetas`, translated by `shift` periods. The obstacle
    /// self-interaction uses the product rule of
    /// [`BoundaryTrace`].
    pub fn obstacle_trace(&self, obstacle: usize, shift: i64, thetas: &[f64], sources: &[Point], coeffs: &[f64]) -> Result<Vec<f64>> {
        let cell = self.cell;
        let lam = C::new(self.lambda, 0.0);
        let n = cell.n_nodes();
        let ctr = cell.centers[obstacle];
        let xs: Vec<Point> = thetas
            .iter()
            .map(|&t| {
                let (r, _) = cell.shape.radius(t);
                [ctr[0] + r * t.cos(), ctr[1] + r * t.sin()]
            })
            .collect();
        let direct_g = GreenBlock::new(&xs, sources, Singular::None)?;
        let from_g = [
            GreenBlock::new(cell.points(0), sources, Singular::None)?,
            GreenBlock::new(cell.points(1), sources, Singular::None)?,
        ];
        let direct = direct_g.at_lambda(lam)?;
        let bt = BoundaryTrace::new(cell, obstacle, thetas)?;
        let bta = bt.at_lambda(lam)?;
        let from = [from_g[0].at_lambda(lam)?, from_g[1].at_lambda(lam)?];
        let (mt, g) = (cell.m_trunc, cell.sing_guard);
        let cvec = Mat::from_fn(sources.len(), 1, |b, _| C::new(coeffs[b], 0.0));
        let mut acc = vec![0.0; thetas.len()];
        for (k, &p) in self.quad.nodes.iter().enumerate() {
            let f0 = from[0].eval(p, mt, g)?;
            let f1 = from[1].eval(p, mt, g)?;
            let r0 = &f0 * &cvec;
            let r1 = &f1 * &cvec;
            let rhs = Mat::from_fn(2 * n, 1, |c, _| if c < n { r0[(c, 0)] } else { r1[(c - n, 0)] });
            let sig = self.lus[k].solve(&rhs);
            let dens = DensityPair::from_stacked(&(0..2 * n).map(|c| sig[(c, 0)]).collect::<Vec<_>>());
            let d = &direct.eval(p, mt, g)? * &cvec;
            let ph = C::from_polar(1.0, p * shift as f64);
            let wk = self.quad.weights[k] / if self.quad.full_zone { 2.0 * PI } else { PI };
            let s = bta.eval(&dens, p)?;
            for i in 0..thetas.len() {
                acc[i] += wk * ((d[(i, 0)] - s[i]) * ph).re;
            }
        }
        Ok(acc)
    }
}

/// Geometry-only data for `G_delta` between two point sets.
pub struct GapKernel {
    shifts: Vec<i64>,
    direct: GreenBlock,
    to_obstacles: [GreenBlock; 2],
    from_obstacles: [GreenBlock; 2],
    n_t: usize,
    n_s: usize,
}

impl GapKernel {
    /// Targets are reduced into `[0, 1)`; sources must lie in `[-1/2, 1/2]`.
    /// With `mode != None` the removed images of the strip kernel are left
    /// for the caller to add back.
    pub fn new(cell: &CellOperator, targets: &[Point], sources: &[Point], mode: Singular) -> Result<Self> {
        for x in targets.iter().chain(sources) {
            if cell.inside_obstacle(*x) {
                return Err(Error::Domain(format!("{x:?} lies inside an obstacle")));
            }
        }
        if sources.iter().any(|y| y[0].abs() > 0.5) {
            return Err(Error::Domain("sources must lie in |x1| <= 1/2".into()));
        }
        let mut reduced = Vec::with_capacity(targets.len());
        let mut shifts = Vec::with_capacity(targets.len());
        for x in targets {
            let s = if mode == Singular::None { x[0].floor() } else { 0.0 };
            reduced.push([x[0] - s, x[1]]);
            shifts.push(s as i64);
        }
        Ok(Self {
            shifts,
            direct: GreenBlock::new(&reduced, sources, mode)?,
            to_obstacles: [
                GreenBlock::new(&reduced, cell.points(0), Singular::None)?,
                GreenBlock::new(&reduced, cell.points(1), Singular::None)?,
            ],
            from_obstacles: [
                GreenBlock::new(cell.points(0), sources, Singular::None)?,
                GreenBlock::new(cell.points(1), sources, Singular::None)?,
            ],
            n_t: targets.len(),
            n_s: sources.len(),
        })
    }

    /// `G_delta(targets, sources)` (regularized as configured). Folded rules
    /// return the real part; full-zone rules return the raw complex sum.
    pub fn eval(&self, solver: &GapSolver) -> Result<Mat<C>> {
        let cell = solver.cell;
        let lam = C::new(solver.lambda, 0.0);
        let n = cell.n_nodes();
        let w = cell.stacked_weights();
        let d = self.direct.at_lambda(lam)?;
        let to = [self.to_obstacles[0].at_lambda(lam)?, self.to_obstacles[1].at_lambda(lam)?];
        let from = [self.from_obstacles[0].at_lambda(lam)?, self.from_obstacles[1].at_lambda(lam)?];
        let (mt, g) = (cell.m_trunc, cell.sing_guard);
        let mut acc = Mat::<C>::zeros(self.n_t, self.n_s);
        let scale = if solver.quad.full_zone { 0.5 / PI } else { 1.0 / PI };
        for (k, &p) in solver.quad.nodes.iter().enumerate() {
            let gxy = d.eval(p, mt, g)?;
            let a0 = to[0].eval(p, mt, g)?;
            let a1 = to[1].eval(p, mt, g)?;
            let gxz = Mat::from_fn(self.n_t, 2 * n, |a, c| {
                let v = if c < n { a0[(a, c)] } else { a1[(a, c - n)] };
                v * w[c]
            });
            let b0 = from[0].eval(p, mt, g)?;
            let b1 = from[1].eval(p, mt, g)?;
            let gzy = Mat::from_fn(2 * n, self.n_s, |c, b| if c < n { b0[(c, b)] } else { b1[(c - n, b)] });
            let sigma = solver.lus[k].solve(&gzy);
            let corr = &gxz * &sigma;
            let wk = solver.quad.weights[k] * scale;
            for a in 0..self.n_t {
                let ph = C::from_polar(1.0, p * self.shifts[a] as f64);
                for b in 0..self.n_s {
                    let v = wk * (gxy[(a, b)] - corr[(a, b)]) * ph;
                    acc[(a, b)] += if solver.quad.full_zone { v } else { C::new(v.re, 0.0) };
                }
            }
        }
        Ok(acc)
    }
}

/// `G_delta(x, y; lambda)` at one pair of points.
#[allow(non_snake_case)]
pub fn eval_Gdelta(x: Point, y: Point, lambda: f64, table: &BlochTable, shape: &ObstacleShape) -> Result<C> {
    let cell = CellOperator::new(shape, table.delta)?;
    let solver = GapSolver::new(&cell, table, lambda)?;
    Ok(GapKernel::new(&cell, &[x], &[y], Singular::None)?.eval(&solver)?[(0, 0)])
}

/// Truncated band sum `(1/2 pi) sum_k w_k sum_{n <= n_bands} u_n(x) conj(u_n(y)) / (lambda - lambda_n)`
/// over the table nodes.
pub fn eval_band_sum(
    cell: &CellOperator,
    table: &BlochTable,
    lambda: f64,
    x: Point,
    y: Point,
    n_bands: usize,
) -> Result<C> {
    if n_bands == 0 || n_bands > table.n_bands {
        return Err(Error::Domain(format!("{n_bands} bands requested from a table with {}", table.n_bands)));
    }
    table.certify(lambda)?;
    let ev = FieldEvaluator::new(cell, &[x, y])?;
    let mut acc = C::new(0.0, 0.0);
    for (k, &p) in table.p_nodes.iter().enumerate() {
        for n in 0..n_bands {
            let ln = table.bands[n][k];
            let u = ev.eval(&table.densities[n][k], p, C::new(ln, 0.0))?;
            acc += table.p_weights[k] * u[0] * u[1].conj() / (lambda - ln);
        }
    }
    Ok(acc / (2.0 * PI))
}

/// Relative residual of `(Delta_h + lambda) f` on the five-point stencil.
pub fn helmholtz_residual<F>(f: F, lambda: f64, points: &[Point], h: f64) -> Result<f64>
where
    F: Fn(&[Point]) -> Result<Vec<C>>,
{
    let mut pts = Vec::with_capacity(5 * points.len());
    for x in points {
        pts.extend([*x, [x[0] + h, x[1]], [x[0] - h, x[1]], [x[0], x[1] + h], [x[0], x[1] - h]]);
    }
    let v = f(&pts)?;
    let mut worst: f64 = 0.0;
    for k in 0..points.len() {
        let u = &v[5 * k..5 * k + 5];
        let lap = (u[1] + u[2] + u[3] + u[4] - 4.0 * u[0]) / (h * h);
        let scale = (lambda * u[0].norm()).max(lap.norm()).max(1e-300);
        worst = worst.max((lap + lambda * u[0]).norm() / scale);
    }
    Ok(worst)
}

/// Helmholtz residual of `G_delta(., y)` at `sample_points`.
pub fn helmholtz_residual_check(
    table: &BlochTable,
    shape: &ObstacleShape,
    lambda: f64,
    y: Point,
    sample_points: &[Point],
    h: f64,
) -> Result<f64> {
    let cell = CellOperator::new(shape, table.delta)?;
    let solver = GapSolver::new(&cell, table, lambda)?;
    helmholtz_residual(
        |pts| {
            let m = GapKernel::new(&cell, pts, &[y], Singular::None)?.eval(&solver)?;
            Ok((0..pts.len()).map(|a| m[(a, 0)]).collect())
        },
        lambda,
        sample_points,
        h,
    )
}
