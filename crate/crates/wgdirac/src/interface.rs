//! Interface operator `G_delta + G_{-delta}` on `Gamma = {0} x (0, 1/2)`, the
//! interface eigenvalue inside the gap and reconstruction of the mode.
//!
//! Densities on `Gamma` are extended evenly about `x2 = 0` and 1-periodically,
//! which matches the image structure of the Neumann walls. On the periodic
//! midpoint grid `s_j = -1/2 + (j + 1/2)/(2M)` the kernel splits as
//! `K1 ln 4 sin^2(pi (t - s)) + K1' ln 4 sin^2(pi (t + s)) + K2` with smooth
//! `K1, K1', K2`, and the logarithms are integrated with Kress weights.

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bands::GapInterval;
use crate::dirac::DiracData;
use crate::error::{Error, Result};
use crate::gapgreens::{BlochTable, GapKernel, GapSolver};
use crate::geometry::{ObstacleShape, Point};
use crate::layerops::{kress_weight, sobolev_half, CellOperator, FieldEvaluator};
use crate::qpgreens::{image_log_term, Singular};
use crate::special::bessel_j0_sq;

type C = Complex64;

pub const MIN_NODES: usize = 24;
pub const SCAN_POINTS: usize = 41;
pub const RESIDUAL_TOL: f64 = 5e-2;
/// Scan values below this fraction of the median count as dips.
pub const DIP_FRACTION: f64 = 0.1;
const INV_4PI: f64 = 0.25 / PI;

/// Midpoints `(b + 1/2)/(2M)` of `(0, 1/2)`.
pub fn gamma_nodes(m: usize) -> Vec<f64> {
    (0..m).map(|b| (b as f64 + 0.5) / (2 * m) as f64).collect()
}

/// The two periodic media and their band tables.
pub struct InterfaceProblem {
    pub shape: ObstacleShape,
    pub delta: f64,
    pub m_nodes: usize,
    /// Tables and cells in the order `(+delta, -delta)`.
    pub tables: [BlochTable; 2],
    cells: [CellOperator; 2],
    sobolev: Mat<f64>,
}

impl InterfaceProblem {
    /// `tables` may be given in either order.
    pub fn new(shape: &ObstacleShape, delta: f64, tables: [BlochTable; 2], m_nodes: usize) -> Result<Self> {
        if m_nodes < MIN_NODES {
            return Err(Error::Domain(format!("m_nodes = {m_nodes} < {MIN_NODES}")));
        }
        if delta == 0.0 {
            return Err(Error::Domain("interface needs delta != 0".into()));
        }
        let [a, b] = tables;
        let tables = if (a.delta - delta).abs() < 1e-14 && (b.delta + delta).abs() < 1e-14 {
            [a, b]
        } else if (b.delta - delta).abs() < 1e-14 && (a.delta + delta).abs() < 1e-14 {
            [b, a]
        } else {
            return Err(Error::Domain(format!("tables for {} and {} do not match +-{delta}", a.delta, b.delta)));
        };
        let cells = [CellOperator::new(shape, delta)?, CellOperator::new(shape, -delta)?];
        let p = sobolev_half(2 * m_nodes);
        let m = m_nodes;
        let sobolev = Mat::from_fn(m, m, |a, b| p[(m + a, m + b)] + p[(m + a, m - 1 - b)]);
        Ok(Self {
            shape: shape.clone(),
            delta,
            m_nodes,
            tables,
            cells,
            sobolev,
        })
    }

    pub fn cell(&self, medium: usize) -> &CellOperator {
        &self.cells[medium]
    }

    pub fn nodes(&self) -> Vec<f64> {
        gamma_nodes(self.m_nodes)
    }

    /// Largest open interval where both tables certify the Green's functions.
    pub fn certified_window(&self) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for t in &self.tables {
            let (e1, e2) = t.gap();
            let m = 0.1 * 0.5 * (e2 - e1);
            lo = lo.max(e1 + m);
            hi = hi.min(e2 - m);
        }
        let eps = 1e-9 * hi.abs();
        (lo + eps, hi - eps)
    }

    pub fn common_gap(&self) -> (f64, f64) {
        let (a, b) = (self.tables[0].gap(), self.tables[1].gap());
        (a.0.max(b.0), a.1.min(b.1))
    }

    pub fn solvers(&self, lambda: f64) -> Result<[GapSolver<'_>; 2]> {
        Ok([
            GapSolver::new(&self.cells[0], &self.tables[0], lambda)?,
            GapSolver::new(&self.cells[1], &self.tables[1], lambda)?,
        ])
    }

    pub fn assemble(&self, lambda: f64) -> Result<InterfaceOperator> {
        let s = self.solvers(lambda)?;
        self.assemble_with(&s)
    }

    fn assemble_with(&self, s: &[GapSolver; 2]) -> Result<InterfaceOperator> {
        let targets: Vec<(f64, Option<usize>)> = self.nodes().into_iter().enumerate().map(|(a, t)| (t, Some(a))).collect();
        let fp = gamma_single_layer(&s[0], self.m_nodes, &targets)?;
        let fm = gamma_single_layer(&s[1], self.m_nodes, &targets)?;
        Ok(InterfaceOperator {
            lambda: s[0].lambda,
            delta: self.delta,
            m_nodes: self.m_nodes,
            matrix: Mat::from_fn(self.m_nodes, self.m_nodes, |a, b| C::new(fp[(a, b)] + fm[(a, b)], 0.0)),
            sobolev: self.sobolev.clone(),
        })
    }

    /// `sigma_min` of the preconditioned operator at each `lambda`.
    pub fn scan(&self, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
        lambdas
            .par_iter()
            .map(|&l| Ok((l, self.assemble(l)?.sigma_min()?)))
            .collect()
    }

    /// Scan window: the gap interval intersected with the certified window.
    pub fn scan_window(&self, gap: &GapInterval) -> Result<(f64, f64)> {
        let (clo, chi) = self.certified_window();
        let lo = gap.e1.max(clo);
        let hi = gap.e2.min(chi);
        if !(hi > lo) {
            return Err(Error::PoleRisk {
                lambda: 0.5 * (gap.e1 + gap.e2),
                e1: clo,
                e2: chi,
            });
        }
        Ok((lo, hi))
    }

    /// Scans `SCAN_POINTS` values inside the window and refines every local
    /// minimum of the scan lying below the median. Exactly one refined minimum
    /// may fall under `DIP_FRACTION` times the median.
    pub fn find_interface_eigenvalue(&self, gap: &GapInterval) -> Result<InterfaceModeResult> {
        let (lo, hi) = self.scan_window(gap)?;
        let n = SCAN_POINTS;
        let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i + 1) as f64 / (n + 1) as f64).collect();
        let scan = self.scan(&grid)?;
        let sig: Vec<f64> = scan.iter().map(|x| x.1).collect();
        let mut sorted = sig.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[n / 2];
        let candidates: Vec<usize> = (0..n)
            .filter(|&i| {
                let left = i == 0 || sig[i] <= sig[i - 1];
                let right = i == n - 1 || sig[i] <= sig[i + 1];
                left && right && sig[i] < median
            })
            .collect();
        let mut dips = Vec::new();
        for i in candidates {
            let a = if i == 0 { lo } else { grid[i - 1] };
            let b = if i == n - 1 { hi } else { grid[i + 1] };
            let root = minimize(|l| Ok(self.assemble(l)?.sigma_min()?.powi(2)), a, b, 1e-11 * b)?;
            let s = self.assemble(root)?.sigma_min()?.min(sig[i]);
            if s < DIP_FRACTION * median {
                dips.push(root);
            }
        }
        let root = match dips[..] {
            [] => return Err(Error::NoMode),
            [r] => r,
            _ => return Err(Error::UniquenessViolation(dips.len())),
        };
        let op = self.assemble(root)?;
        let (smin, density) = op.null_density()?;
        Ok(InterfaceModeResult {
            delta: self.delta,
            gap: (gap.e1, gap.e2),
            scan_window: (lo, hi),
            lambda_star_mode: root,
            m_nodes: self.m_nodes,
            gamma_nodes: self.nodes(),
            density,
            sigma_min_at_root: smin,
            sigma_median: median,
            asymmetry: op.asymmetry(),
            sigma_scan: scan,
            kappa: None,
            residuals: None,
        })
    }

    /// Values of `u+ = 2 S_delta phi` (`medium = 0`) or `u- = -2 S_{-delta} phi`
    /// (`medium = 1`) on `Gamma` at arbitrary heights.
    pub fn gamma_trace(&self, solver: &GapSolver, medium: usize, density: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
        let m = 2 * self.m_nodes;
        let targets: Vec<(f64, Option<usize>)> = ts
            .iter()
            .map(|&t| {
                let b = (t * m as f64 - 0.5).round();
                let hit = b >= 0.0 && b < self.m_nodes as f64 && (t - (b + 0.5) / m as f64).abs() < 1e-12;
                (t, hit.then_some(b as usize))
            })
            .collect();
        let f = gamma_single_layer(solver, self.m_nodes, &targets)?;
        let sgn = if medium == 0 { 1.0 } else { -1.0 };
        Ok((0..ts.len())
            .map(|a| sgn * (0..self.m_nodes).map(|b| f[(a, b)] * density[b]).sum::<f64>())
            .collect())
    }

    /// Field of the interface mode at points off `Gamma`.
    pub fn field(&self, solvers: &[GapSolver; 2], density: &[f64], points: &[Point]) -> Result<Vec<f64>> {
        let src: Vec<Point> = self.nodes().iter().map(|&s| [0.0, s]).collect();
        let m = self.m_nodes as f64;
        let chunks: Vec<(usize, Vec<Point>)> = (0..2)
            .map(|k| (k, points.iter().copied().filter(|x| (x[0] < 0.0) == (k == 1)).collect()))
            .collect();
        let mut vals = [Vec::new(), Vec::new()];
        for (k, pts) in chunks {
            if pts.is_empty() {
                continue;
            }
            let sgn = if k == 0 { 1.0 } else { -1.0 };
            let out = pts
                .par_chunks(64)
                .map(|ch| {
                    let g = GapKernel::new(&self.cells[k], ch, &src, Singular::None)?.eval(&solvers[k])?;
                    Ok((0..ch.len())
                        .map(|a| sgn * (0..src.len()).map(|b| g[(a, b)].re * density[b]).sum::<f64>() / m)
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            vals[k] = out.concat();
        }
        let mut it = [vals[0].iter(), vals[1].iter()];
        Ok(points
            .iter()
            .map(|x| *it[usize::from(x[0] < 0.0)].next().expect("split count"))
            .collect())
    }

    /// Completes `res` with field samples, residuals and the decay fit.
    pub fn reconstruct(&self, res: &mut InterfaceModeResult, grid: &SampleGrid) -> Result<FieldSamples> {
        let s = self.solvers(res.lambda_star_mode)?;
        let phi = &res.density;
        let m = self.m_nodes;
        // continuity at heights between the nodes
        let ts: Vec<f64> = (0..m).map(|k| (k as f64 + 0.25) / (2 * m) as f64).collect();
        let up = self.gamma_trace(&s[0], 0, phi, &ts)?;
        let um = self.gamma_trace(&s[1], 1, phi, &ts)?;
        let scale = rms(&up).max(rms(&um));
        let continuity = rms(&up.iter().zip(&um).map(|(a, b)| a - b).collect::<Vec<_>>()) / scale;
        let derivative_jump = self.derivative_residual(&s, phi)?;
        let dirichlet = self.dirichlet_residual(&s, phi, scale)?;
        let residuals = InterfaceResiduals {
            continuity,
            derivative_jump,
            dirichlet,
        };
        res.residuals = Some(residuals);
        let samples = grid.points(self);
        let values = self.field(&s, phi, &samples)?;
        let fs = FieldSamples { points: samples, values };
        let (kappa, r2) = fit_decay(&fs.column_max(), 1.0, grid.half_length)?;
        res.kappa = Some(DecayFit { kappa, r_squared: r2 });
        if !(continuity < RESIDUAL_TOL && derivative_jump < RESIDUAL_TOL) {
            return Err(Error::Reconstruction(format!(
                "continuity {continuity:.3e}, derivative jump {derivative_jump:.3e}"
            )));
        }
        Ok(fs)
    }

    /// `|| 2 int d1 (G_delta + G_{-delta})_reg phi || / ||phi||` on `Gamma`.
    fn derivative_residual(&self, s: &[GapSolver; 2], phi: &[f64]) -> Result<f64> {
        let h = 1e-4;
        let nodes = self.nodes();
        let src: Vec<Point> = nodes.iter().map(|&t| [0.0, t]).collect();
        let mut tg: Vec<Point> = nodes.iter().map(|&t| [h, t]).collect();
        tg.extend(nodes.iter().map(|&t| [-h, t]));
        let m = self.m_nodes;
        let mut d = vec![0.0; m];
        for k in 0..2 {
            let g = GapKernel::new(&self.cells[k], &tg, &src, Singular::Line)?.eval(&s[k])?;
            for a in 0..m {
                for b in 0..m {
                    d[a] += 2.0 * (g[(a, b)].re - g[(m + a, b)].re) / (2.0 * h) * phi[b] / (2 * m) as f64;
                }
            }
        }
        Ok(rms(&d) / rms(phi))
    }

    /// Largest `|u|` on the obstacles of the two cells adjacent to `Gamma`,
    /// relative to `scale`.
    fn dirichlet_residual(&self, s: &[GapSolver; 2], phi: &[f64], scale: f64) -> Result<f64> {
        let src: Vec<Point> = self.nodes().iter().map(|&t| [0.0, t]).collect();
        let coeffs: Vec<f64> = phi.iter().map(|v| v / self.m_nodes as f64).collect();
        let nt = 12;
        let thetas: Vec<f64> = (0..nt).map(|k| 2.0 * PI * (k as f64 + 0.37) / nt as f64).collect();
        let mut worst: f64 = 0.0;
        for (k, shift) in [(0usize, 0i64), (1, -1)] {
            for ob in 0..2 {
                let v = s[k].obstacle_trace(ob, shift, &thetas, &src, &coeffs)?;
                worst = v.iter().fold(worst, |a, x| a.max(x.abs()));
            }
        }
        Ok(worst / scale)
    }
}

/// Matrix `F` with `2 S phi (0, t) = sum_b F(t, b) phi_b` for one medium.
/// Targets flagged with a node index use the coincident-point limit.
fn gamma_single_layer(solver: &GapSolver, m: usize, targets: &[(f64, Option<usize>)]) -> Result<Mat<f64>> {
    let nodes = gamma_nodes(m);
    let lam = C::new(solver.lambda, 0.0);
    let tp: Vec<Point> = targets.iter().map(|t| [0.0, t.0]).collect();
    let sp: Vec<Point> = nodes.iter().map(|&s| [0.0, s]).collect();
    let reg = GapKernel::new(solver.cell, &tp, &sp, Singular::Line)?.eval(solver)?;
    let n2 = 2 * m;
    let h = 1.0 / n2 as f64;
    let pair_limit = -INV_4PI * (4.0 * PI * PI).ln();
    let k1 = |e: f64| bessel_j0_sq(lam, ((PI * e).sin() / PI).powi(2)).re * INV_4PI;
    let ls = |e: f64| (4.0 * (PI * e).sin().powi(2)).ln();
    let mut f = Mat::<f64>::zeros(targets.len(), m);
    for (a, &(t, node)) in targets.iter().enumerate() {
        for j in 0..n2 {
            let sj = -0.5 + (j as f64 + 0.5) * h;
            let (b, upper) = if j >= m { (j - m, true) } else { (m - 1 - j, false) };
            let s = nodes[b];
            let diag = node == Some(b);
            let (em, ep) = (t - sj, t + sj);
            let (km, kp) = (k1(em), k1(ep));
            let d = [(t - s).abs(), t + s, 1.0 - t - s];
            let mut smooth = reg[(a, b)].re;
            for (i, &di) in d.iter().enumerate() {
                if !(diag && i == 0) {
                    smooth += image_log_term(lam, di).re;
                }
            }
            if diag && upper {
                smooth += pair_limit - kp * ls(ep);
            } else if diag {
                smooth += pair_limit - km * ls(em);
            } else {
                smooth -= km * ls(em) + kp * ls(ep);
            }
            let rm = kress_weight(n2, 2.0 * PI * t, 2.0 * PI * sj) / (2.0 * PI);
            let rp = kress_weight(n2, -2.0 * PI * t, 2.0 * PI * sj) / (2.0 * PI);
            f[(a, b)] += rm * km + rp * kp + h * smooth;
        }
    }
    Ok(f)
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Brent minimization of a scalar function on `[a, b]`.
fn minimize<F>(f: F, a: f64, b: f64, xtol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    use argmin::core::{CostFunction, Executor};
    use argmin::solver::brent::BrentOpt;
    struct Cost<F>(F);
    impl<F: Fn(f64) -> Result<f64>> CostFunction for Cost<F> {
        type Param = f64;
        type Output = f64;
        fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
            (self.0)(*x).map_err(|e| argmin::core::Error::msg(e.to_string()))
        }
    }
    let res = Executor::new(Cost(f), BrentOpt::new(a, b).set_tolerance(1e-15, xtol))
        .configure(|s| s.max_iters(200))
        .run()
        .map_err(|e| Error::Refinement {
            p: f64::NAN,
            reason: e.to_string(),
        })?;
    res.state.best_param.ok_or(Error::Refinement {
        p: f64::NAN,
        reason: "minimizer returned no point".into(),
    })
}

/// Discretized `G_delta + G_{-delta}` acting on even densities on `Gamma`.
pub struct InterfaceOperator {
    pub lambda: f64,
    pub delta: f64,
    pub m_nodes: usize,
    pub matrix: Mat<C>,
    sobolev: Mat<f64>,
}

impl InterfaceOperator {
    /// `||M - M^T|| / ||M||` in the Frobenius norm.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let d = Mat::from_fn(m.nrows(), m.ncols(), |a, b| m[(a, b)] - m[(b, a)]);
        d.norm_l2() / m.norm_l2()
    }

    /// `P M P` with `P` the `(1 + |k|)^{1/2}` multiplier on even functions.
    pub fn weighted(&self) -> Mat<C> {
        let p = Mat::from_fn(self.m_nodes, self.m_nodes, |a, b| C::new(self.sobolev[(a, b)], 0.0));
        &p * &self.matrix * &p
    }

    /// Ascending singular values of [`weighted`](Self::weighted).
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let s = self
            .weighted()
            .singular_values()
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let mut s: Vec<f64> = s.into_iter().collect();
        s.sort_by(f64::total_cmp);
        Ok(s)
    }

    pub fn sigma_min(&self) -> Result<f64> {
        Ok(self.singular_values()?[0])
    }

    /// Smallest singular value and the density of its right singular vector,
    /// normalized in `L^2(Gamma)` with its largest entry positive.
    pub fn null_density(&self) -> Result<(f64, Vec<f64>)> {
        let w = self.weighted();
        let svd = w.svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let m = self.m_nodes;
        let smin = svd.S().column_vector()[m - 1].re;
        let v = svd.V();
        let col: Vec<C> = (0..m).map(|a| v[(a, m - 1)]).collect();
        let mut phi: Vec<C> = (0..m)
            .map(|a| (0..m).map(|b| self.sobolev[(a, b)] * col[b]).sum())
            .collect();
        let big = phi.iter().copied().fold(C::new(0.0, 0.0), |a, z| if z.norm() > a.norm() { z } else { a });
        let rot = big.conj() / big.norm();
        for z in &mut phi {
            *z *= rot;
        }
        let nrm = (phi.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2 * m) as f64).sqrt();
        Ok((smin, phi.iter().map(|z| z.re / nrm).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceResiduals {
    pub continuity: f64,
    pub derivative_jump: f64,
    pub dirichlet: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kappa: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceModeResult {
    pub delta: f64,
    pub gap: (f64, f64),
    pub scan_window: (f64, f64),
    pub lambda_star_mode: f64,
    pub m_nodes: usize,
    pub gamma_nodes: Vec<f64>,
    pub density: Vec<f64>,
    pub sigma_min_at_root: f64,
    pub sigma_median: f64,
    pub asymmetry: f64,
    pub sigma_scan: Vec<(f64, f64)>,
    pub kappa: Option<DecayFit>,
    pub residuals: Option<InterfaceResiduals>,
}

/// Cell-centered sample grid over `[-L, L] x (0, 1/2)`. Columns avoid
/// integer `x1`, where targets are periodic images of `Gamma` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub half_length: f64,
    pub dx1: f64,
    pub n2: usize,
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            half_length: 5.0,
            dx1: 0.1,
            n2: 8,
        }
    }
}

impl SampleGrid {
    /// Grid points outside the obstacles of the joint structure.
    pub fn points(&self, pb: &InterfaceProblem) -> Vec<Point> {
        let n1 = (self.half_length / self.dx1).round() as i64;
        let mut out = Vec::new();
        for i in -n1..n1 {
            let x1 = (i as f64 + 0.5) * self.dx1;
            for k in 0..self.n2 {
                let x = [x1, 0.5 * (k as f64 + 0.5) / self.n2 as f64];
                let cell = &pb.cells[usize::from(x1 < 0.0)];
                if !cell.inside_obstacle(x) {
                    out.push(x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSamples {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl FieldSamples {
    /// `(x1, max |u|)` per grid column.
    pub fn column_max(&self) -> Vec<(f64, f64)> {
        let mut cols: Vec<(f64, f64)> = Vec::new();
        for (x, v) in self.points.iter().zip(&self.values) {
            match cols.last_mut() {
                Some(c) if c.0 == x[0] => c.1 = c.1.max(v.abs()),
                _ => cols.push((x[0], v.abs())),
            }
        }
        cols
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x1", "x2", "re_u", "im_u"]).map_err(|e| Error::Io(e.to_string()))?;
        for (x, v) in self.points.iter().zip(&self.values) {
            w.serialize((x[0], x[1], *v, 0.0)).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        crate::io::write_atomic(path, &bytes)
    }
}

/// Largest column maximum in each period `[n, n + 1)`, placed at the
/// position of that column.
pub fn period_envelope(column_max: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(i64, f64, f64)> = Vec::new();
    for &(x, m) in column_max {
        let n = x.floor() as i64;
        match out.last_mut() {
            Some(c) if c.0 == n => {
                if m > c.2 {
                    c.1 = x;
                    c.2 = m;
                }
            }
            _ => out.push((n, x, m)),
        }
    }
    out.into_iter().map(|c| (c.1, c.2)).collect()
}

/// Least-squares fit `ln m = a - kappa |x1|` to the period envelope of the
/// column maxima over `lo <= |x1| <= hi`. Returns `(kappa, R^2)`.
pub fn fit_decay(column_max: &[(f64, f64)], lo: f64, hi: f64) -> Result<(f64, f64)> {
    let inside: Vec<(f64, f64)> = column_max
        .iter()
        .copied()
        .filter(|(x, m)| x.abs() >= lo && x.abs() <= hi && *m > 0.0)
        .collect();
    let pts: Vec<(f64, f64)> = period_envelope(&inside).into_iter().map(|(x, m)| (x.abs(), m.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::Reconstruction(format!("{} columns in the fit range", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok((-slope, r2))
}

/// `|<phi, v>| / (||phi|| ||v||)` with `v` the trace on `Gamma` of the even
/// Dirac mode.
pub fn even_mode_overlap(res: &InterfaceModeResult, d: &DiracData, shape: &ObstacleShape) -> Result<f64> {
    let cell = CellOperator::new(shape, 0.0)?;
    let pts: Vec<Point> = res.gamma_nodes.iter().map(|&t| [0.0, t]).collect();
    let v = FieldEvaluator::new(&cell, &pts)?.eval(&d.phi_even, d.p_star, C::new(d.lambda_star, 0.0))?;
    let ip: C = res.density.iter().zip(&v).map(|(a, b)| *a * b.conj()).sum();
    let na = res.density.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = v.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
    Ok(ip.norm() / (na * nb))
}
