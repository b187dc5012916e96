//! Nyström discretization of the two-obstacle single-layer operator `T_delta(p, lambda)`.
//!
//! Entry `(a, b)` of block `(i, j)` approximates
//! `int_{dD_j} G^e(x_a^i, y; p, lambda) phi_j(y) dsigma(y)`. Diagonal blocks use
//! Kress product quadrature for the `J0 ln r^2` part of the kernel, the
//! off-diagonal blocks the plain trapezoid rule.

use faer::{Mat, MatRef};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{CellLayout, ObstacleShape, Point, Variant};
use crate::qpgreens::{GreenBlock, KernelParams, LambdaBlock, Singular, LAMBDA_MAX};
use crate::special::bessel_j0_sq;

const INV_4PI: f64 = 1.0 / (4.0 * PI);

/// Relative singular value below which a direction counts as numerically null.
pub const NULL_RTOL: f64 = 1e-13;
/// Relative singular value accepted by [`kernel_vectors`].
pub const KERNEL_RTOL: f64 = 1e-4;

/// Boundary density on both obstacles of a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPair {
    pub phi1: Vec<Complex64>,
    pub phi2: Vec<Complex64>,
}

impl DensityPair {
    pub fn zeros(n: usize) -> Self {
        Self {
            phi1: vec![Complex64::new(0.0, 0.0); n],
            phi2: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_stacked(v: &[Complex64]) -> Self {
        let n = v.len() / 2;
        Self {
            phi1: v[..n].to_vec(),
            phi2: v[n..].to_vec(),
        }
    }

    pub fn stacked(&self) -> Vec<Complex64> {
        self.phi1.iter().chain(&self.phi2).copied().collect()
    }

    /// Arc-length weighted norm.
    pub fn weighted_norm(&self, weights: &[f64]) -> f64 {
        self.phi1
            .iter()
            .chain(&self.phi2)
            .zip(weights.iter().chain(weights))
            .map(|(v, w)| w * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in self.phi1.iter_mut().chain(self.phi2.iter_mut()) {
            *v *= s;
        }
    }
}

/// Assembled `2N x 2N` operator.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub entries: Mat<Complex64>,
    pub p: f64,
    pub lambda: Complex64,
    pub delta: f64,
    /// Arc-length weights of one obstacle (both share the node set).
    pub weights: Vec<f64>,
}

impl OperatorMatrix {
    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    /// Block `(i, j)`, `i, j` in `{0, 1}`.
    pub fn block(&self, i: usize, j: usize) -> MatRef<'_, Complex64> {
        let n = self.n_nodes();
        self.entries.as_ref().submatrix(i * n, j * n, n, n)
    }

    fn stacked_weights(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.weights).copied().collect()
    }

    /// `P W^{1/2} T W^{-1/2} P` with `P` the per-obstacle multiplier
    /// `(1 + |k|)^{1/2}` in the angular Fourier index. Its singular values
    /// approximate those of `T` from `H^{-1/2}` to `H^{1/2}`.
    pub fn weighted(&self) -> Mat<Complex64> {
        let w = self.stacked_weights();
        let n = w.len();
        let tw = Mat::from_fn(n, n, |a, b| self.entries[(a, b)] * (w[a] / w[b]).sqrt());
        let p = sobolev_half(self.n_nodes());
        let pm = block_diag2(&p);
        &pm * &tw * &pm
    }

    /// Maps a right singular vector of [`Self::weighted`] back to a density.
    fn density_from_weighted(&self, v: &[Complex64]) -> DensityPair {
        let n = self.n_nodes();
        let p = sobolev_half(n);
        let w = &self.weights;
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * n];
        for o in 0..2 {
            for a in 0..n {
                let s: Complex64 = (0..n).map(|b| p[(a, b)] * v[o * n + b]).sum();
                out[o * n + a] = s / w[a].sqrt();
            }
        }
        DensityPair::from_stacked(&out)
    }

    /// Bilinear pairing `u^T W T v` with arc-length weights.
    pub fn pairing(&self, u: &DensityPair, v: &DensityPair) -> Complex64 {
        let w = self.stacked_weights();
        let us = u.stacked();
        let vs = v.stacked();
        let mut s = Complex64::new(0.0, 0.0);
        for a in 0..w.len() {
            let mut tv = Complex64::new(0.0, 0.0);
            for b in 0..w.len() {
                tv += self.entries[(a, b)] * vs[b];
            }
            s += us[a] * w[a] * tv;
        }
        s
    }

    pub fn apply(&self, v: &DensityPair) -> DensityPair {
        let vs = v.stacked();
        let n = vs.len();
        let out: Vec<Complex64> = (0..n)
            .map(|a| (0..n).map(|b| self.entries[(a, b)] * vs[b]).sum())
            .collect();
        DensityPair::from_stacked(&out)
    }

    /// Entrywise difference quotient `(self - other) / h`.
    pub fn difference(&self, other: &OperatorMatrix, h: f64) -> OperatorMatrix {
        let n = self.entries.nrows();
        OperatorMatrix {
            entries: Mat::from_fn(n, n, |a, b| (self.entries[(a, b)] - other.entries[(a, b)]) / h),
            ..self.clone()
        }
    }
}

/// Real symmetric matrix of the multiplier `(1 + |k|)^{1/2}` on `n`
/// equispaced angles.
pub fn sobolev_half(n: usize) -> Mat<f64> {
    let mult: Vec<f64> = (0..n)
        .map(|k| {
            let kk = if k <= n / 2 { k } else { n - k };
            (1.0 + kk as f64).sqrt()
        })
        .collect();
    let row: Vec<f64> = (0..n)
        .map(|d| {
            (0..n)
                .map(|k| mult[k] * (2.0 * PI * (k * d) as f64 / n as f64).cos())
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Mat::from_fn(n, n, |a, b| row[(a + n - b) % n])
}

fn block_diag2(p: &Mat<f64>) -> Mat<Complex64> {
    let n = p.nrows();
    Mat::from_fn(2 * n, 2 * n, |a, b| {
        if a / n == b / n {
            Complex64::new(p[(a % n, b % n)], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Kress weights `R_j(t)` for `ln(4 sin^2((t - tau)/2))` on `2n` equispaced nodes.
pub fn kress_weight(n_nodes: usize, t: f64, tj: f64) -> f64 {
    let n = n_nodes / 2;
    let d = t - tj;
    let mut s = 0.0;
    for m in 1..n {
        s += (m as f64 * d).cos() / m as f64;
    }
    -(2.0 * PI / n as f64) * s - PI / (n * n) as f64 * (n as f64 * d).cos()
}

/// Geometry of one period: the shape, the two centers and the kernel blocks.
pub struct CellOperator {
    pub shape: ObstacleShape,
    pub delta: f64,
    pub centers: [Point; 2],
    pub m_trunc: usize,
    pub sing_guard: f64,
    points: [Vec<Point>; 2],
    blocks: Vec<GreenBlock>,
    kress: Mat<f64>,
    log_ratio: Mat<f64>,
    dist2: Mat<f64>,
}

impl CellOperator {
    /// Period with centers `(1/4 - delta, 1/4)` and `(3/4 + delta, 1/4)`.
    pub fn new(shape: &ObstacleShape, delta: f64) -> Result<Self> {
        let pair = CellLayout::cell_pair(Variant::PlusDelta, delta);
        Self::with_centers(shape, pair, delta)
    }

    pub fn with_centers(shape: &ObstacleShape, centers: [Point; 2], delta: f64) -> Result<Self> {
        let r = shape.max_radius();
        if (centers[1][0] - centers[0][0]) < 2.0 * r || (1.0 + centers[0][0] - centers[1][0]) < 2.0 * r {
            return Err(Error::Geometry("obstacles overlap".into()));
        }
        let points = centers.map(|c| {
            shape
                .nodes
                .iter()
                .map(|y| [c[0] + y[0], c[1] + y[1]])
                .collect::<Vec<_>>()
        });
        let mut blocks = Vec::with_capacity(4);
        for i in 0..2 {
            for j in 0..2 {
                let mode = if i == j { Singular::SameCurve } else { Singular::None };
                blocks.push(GreenBlock::new(&points[i], &points[j], mode)?);
            }
        }
        let n = shape.n_nodes;
        let kress = Mat::from_fn(n, n, |a, b| kress_weight(n, shape.params[a], shape.params[b]));
        let dist2 = Mat::from_fn(n, n, |a, b| {
            let (x, y) = (shape.nodes[a], shape.nodes[b]);
            (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)
        });
        let log_ratio = Mat::from_fn(n, n, |a, b| {
            if a == b {
                (shape.speeds[a] * shape.speeds[a]).ln()
            } else {
                let s = ((shape.params[a] - shape.params[b]) / 2.0).sin();
                (dist2[(a, b)] / (4.0 * s * s)).ln()
            }
        });
        Ok(Self {
            shape: shape.clone(),
            delta,
            centers,
            m_trunc: 16,
            sing_guard: 1e-6,
            points,
            blocks,
            kress,
            log_ratio,
            dist2,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.shape.n_nodes
    }

    /// Absolute node positions on obstacle `i`.
    pub fn points(&self, i: usize) -> &[Point] {
        &self.points[i]
    }

    pub fn all_points(&self) -> Vec<Point> {
        self.points[0].iter().chain(&self.points[1]).copied().collect()
    }

    pub fn stacked_weights(&self) -> Vec<f64> {
        self.shape.weights.iter().chain(&self.shape.weights).copied().collect()
    }

    pub fn at_lambda(&self, lambda: impl Into<Complex64>) -> Result<CellAtLambda<'_>> {
        let lambda = lambda.into();
        if !(lambda.norm() <= LAMBDA_MAX) {
            return Err(Error::Domain(format!("lambda {lambda} out of range")));
        }
        let lblocks = self
            .blocks
            .iter()
            .map(|b| b.at_lambda(lambda))
            .collect::<Result<Vec<_>>>()?;
        let n = self.n_nodes();
        let sh = &self.shape;
        let log_part = Mat::from_fn(n, n, |a, b| {
            let j0 = bessel_j0_sq(lambda, self.dist2[(a, b)]) * INV_4PI;
            j0 * (sh.weights[b] * self.log_ratio[(a, b)] + self.kress[(a, b)] * sh.speeds[b])
        });
        Ok(CellAtLambda {
            cell: self,
            lambda,
            lblocks,
            log_part,
        })
    }

    /// True when `x` lies inside an obstacle of the periodic arrangement.
    pub fn inside_obstacle(&self, x: Point) -> bool {
        self.centers.iter().any(|c| {
            let rel = x[0] - c[0];
            let shift = rel.round();
            self.shape.contains([rel - shift, x[1] - c[1]])
        })
    }

    /// Smallest distance from `x` to a node of the periodic arrangement.
    pub fn distance_to_boundary(&self, x: Point) -> f64 {
        let mut d = f64::INFINITY;
        for c in &self.centers {
            let rel = x[0] - c[0];
            let shift = rel.round();
            let loc = [rel - shift, x[1] - c[1]];
            let theta = loc[1].atan2(loc[0]);
            let r = self.shape.radius(theta).0;
            d = d.min((loc[0].hypot(loc[1]) - r).abs());
        }
        d
    }
}

/// A [`CellOperator`] with the `p`-independent work done for one `lambda`.
pub struct CellAtLambda<'a> {
    pub cell: &'a CellOperator,
    pub lambda: Complex64,
    lblocks: Vec<LambdaBlock<'a>>,
    log_part: Mat<Complex64>,
}

impl CellAtLambda<'_> {
    pub fn assemble(&self, p: f64) -> Result<OperatorMatrix> {
        let cell = self.cell;
        let n = cell.n_nodes();
        let w = &cell.shape.weights;
        let mut t = Mat::<Complex64>::zeros(2 * n, 2 * n);
        for i in 0..2 {
            for j in 0..2 {
                let g = self.lblocks[2 * i + j].eval(p, cell.m_trunc, cell.sing_guard)?;
                for b in 0..n {
                    for a in 0..n {
                        let mut v = g[(a, b)] * w[b];
                        if i == j {
                            v += self.log_part[(a, b)];
                        }
                        t[(i * n + a, j * n + b)] = v;
                    }
                }
            }
        }
        if t.as_ref().has_nan() {
            return Err(Error::Assembly("non-finite entry".into()));
        }
        Ok(OperatorMatrix {
            entries: t,
            p,
            lambda: self.lambda,
            delta: cell.delta,
            weights: w.clone(),
        })
    }

    /// Singular values of the weighted matrix at `p`, ascending.
    pub fn singular_values(&self, p: f64) -> Result<Vec<f64>> {
        let t = self.assemble(p)?;
        min_singular_values(&t, 2 * t.n_nodes())
    }
}

/// Assembles `T_delta(p, lambda)` from scratch.
#[allow(non_snake_case)]
pub fn assemble_T(
    p: f64,
    lambda: impl Into<Complex64>,
    delta: f64,
    shape: &ObstacleShape,
    params: &KernelParams,
) -> Result<OperatorMatrix> {
    let lambda = lambda.into();
    params.with_p(p).with_lambda(lambda).validate()?;
    let mut cell = CellOperator::new(shape, delta)?;
    cell.m_trunc = params.m_trunc;
    cell.sing_guard = params.sing_guard;
    cell.at_lambda(lambda)?.assemble(p)
}

/// The `k` smallest singular values of the weighted matrix, ascending.
pub fn min_singular_values(t: &OperatorMatrix, k: usize) -> Result<Vec<f64>> {
    let n = t.entries.nrows();
    if k > n {
        return Err(Error::Domain(format!("k = {k} > {n}")));
    }
    let tw = t.weighted();
    let mut s = tw
        .singular_values()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    s.reverse();
    s.truncate(k);
    Ok(s)
}

/// Largest singular value of the weighted matrix.
pub fn max_singular_value(t: &OperatorMatrix) -> Result<f64> {
    let s = t
        .weighted()
        .singular_values()
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    Ok(s[0])
}

/// Right singular vectors for the `dim` smallest singular values, mapped back
/// to densities with unit weighted norm.
pub fn kernel_vectors(t: &OperatorMatrix, dim: usize) -> Result<Vec<DensityPair>> {
    kernel_vectors_with_tol(t, dim, KERNEL_RTOL)
}

pub fn kernel_vectors_with_tol(t: &OperatorMatrix, dim: usize, rtol: f64) -> Result<Vec<DensityPair>> {
    let tw = t.weighted();
    let n = tw.nrows();
    if dim == 0 || dim > n {
        return Err(Error::Domain(format!("kernel dimension {dim}")));
    }
    let svd = tw.svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let smax = s[0].re;
    let ratio = s[n - dim].re / smax;
    if ratio > rtol {
        return Err(Error::NoKernel {
            ratio,
            threshold: rtol,
        });
    }
    let v = svd.V();
    Ok((0..dim)
        .map(|k| {
            let col: Vec<Complex64> = (0..n).map(|a| v[(a, n - 1 - k)]).collect();
            let mut d = t.density_from_weighted(&col);
            let nrm = d.weighted_norm(&t.weights);
            d.scale(Complex64::new(1.0 / nrm, 0.0));
            d
        })
        .collect())
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
pub fn fix_phase(v: &mut DensityPair) {
    let s = v.stacked();
    let mut best = Complex64::new(0.0, 0.0);
    for z in &s {
        if z.norm() > best.norm() * (1.0 + 1e-9) {
            best = *z;
        }
    }
    if best.norm() > 0.0 {
        v.scale(best.conj() / best.norm());
    }
}

/// Evaluates single-layer fields of a density on arbitrary point sets.
pub struct FieldEvaluator<'a> {
    cell: &'a CellOperator,
    blocks: [GreenBlock; 2],
    shifts: Vec<i64>,
    targets: Vec<Point>,
}

impl<'a> FieldEvaluator<'a> {
    /// Targets are reduced into the period `[0, 1)` and restored by the Bloch phase.
    pub fn new(cell: &'a CellOperator, targets: &[Point]) -> Result<Self> {
        for x in targets {
            if cell.inside_obstacle(*x) {
                return Err(Error::Domain(format!("{x:?} lies inside an obstacle")));
            }
        }
        let mut reduced = Vec::with_capacity(targets.len());
        let mut shifts = Vec::with_capacity(targets.len());
        for x in targets {
            let s = x[0].floor();
            reduced.push([x[0] - s, x[1]]);
            shifts.push(s as i64);
        }
        let blocks = [
            GreenBlock::new(&reduced, cell.points(0), Singular::None)?,
            GreenBlock::new(&reduced, cell.points(1), Singular::None)?,
        ];
        Ok(Self {
            cell,
            blocks,
            shifts,
            targets: targets.to_vec(),
        })
    }

    pub fn targets(&self) -> &[Point] {
        &self.targets
    }

    /// Matrix mapping stacked densities to field values at `(p, lambda)`.
    pub fn matrix(&self, p: f64, lambda: Complex64) -> Result<Mat<Complex64>> {
        let n = self.cell.n_nodes();
        let nt = self.targets.len();
        let w = &self.cell.shape.weights;
        let mut out = Mat::<Complex64>::zeros(nt, 2 * n);
        for i in 0..2 {
            let g = self.blocks[i]
                .at_lambda(lambda)?
                .eval(p, self.cell.m_trunc, self.cell.sing_guard)?;
            for a in 0..nt {
                let ph = Complex64::from_polar(1.0, p * self.shifts[a] as f64);
                for b in 0..n {
                    out[(a, i * n + b)] = g[(a, b)] * w[b] * ph;
                }
            }
        }
        Ok(out)
    }

    pub fn eval(&self, density: &DensityPair, p: f64, lambda: Complex64) -> Result<Vec<Complex64>> {
        let m = self.matrix(p, lambda)?;
        let v = density.stacked();
        Ok((0..m.nrows())
            .map(|a| (0..v.len()).map(|b| m[(a, b)] * v[b]).sum())
            .collect())
    }
}

/// Field of a density at one point.
pub fn field_from_density(
    density: &DensityPair,
    x: Point,
    p: f64,
    lambda: impl Into<Complex64>,
    delta: f64,
    shape: &ObstacleShape,
    params: &KernelParams,
) -> Result<Complex64> {
    let lambda = lambda.into();
    let mut cell = CellOperator::new(shape, delta)?;
    cell.m_trunc = params.m_trunc;
    cell.sing_guard = params.sing_guard;
    let ev = FieldEvaluator::new(&cell, &[x])?;
    Ok(ev.eval(density, p, lambda)?[0])
}

/// Field on obstacle `i` at boundary parameter `t`, with product quadrature for
/// the logarithmic self-interaction.
pub fn boundary_field(
    cell: &CellOperator,
    density: &DensityPair,
    obstacle: usize,
    t: f64,
    p: f64,
    lambda: Complex64,
) -> Result<Complex64> {
    Ok(BoundaryTrace::new(cell, obstacle, &[t])?.at_lambda(lambda)?.eval(density, p)?[0])
}

/// Single-layer fields on one obstacle boundary at fixed angles.
pub struct BoundaryTrace<'a> {
    cell: &'a CellOperator,
    obstacle: usize,
    thetas: Vec<f64>,
    locs: Vec<Point>,
    blocks: [GreenBlock; 2],
}

impl<'a> BoundaryTrace<'a> {
    pub fn new(cell: &'a CellOperator, obstacle: usize, thetas: &[f64]) -> Result<Self> {
        let ctr = cell.centers[obstacle];
        let locs: Vec<Point> = thetas
            .iter()
            .map(|&t| {
                let (r, _) = cell.shape.radius(t);
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        let xs: Vec<Point> = locs.iter().map(|l| [ctr[0] + l[0], ctr[1] + l[1]]).collect();
        let mk = |j: usize| {
            let mode = if j == obstacle { Singular::SameCurve } else { Singular::None };
            GreenBlock::new(&xs, cell.points(j), mode)
        };
        Ok(Self {
            cell,
            obstacle,
            thetas: thetas.to_vec(),
            locs,
            blocks: [mk(0)?, mk(1)?],
        })
    }

    pub fn at_lambda(&self, lambda: Complex64) -> Result<BoundaryTraceAt<'_>> {
        let sh = &self.cell.shape;
        let n = sh.n_nodes;
        let corr = Mat::from_fn(self.thetas.len(), n, |i, b| {
            let loc = self.locs[i];
            let y = sh.nodes[b];
            let r2 = (loc[0] - y[0]).powi(2) + (loc[1] - y[1]).powi(2);
            let sn = ((self.thetas[i] - sh.params[b]) / 2.0).sin();
            let j0 = bessel_j0_sq(lambda, r2) * INV_4PI;
            let lr = if r2 > 0.0 {
                (r2 / (4.0 * sn * sn)).ln()
            } else {
                (sh.speeds[b] * sh.speeds[b]).ln()
            };
            let kw = kress_weight(n, self.thetas[i], sh.params[b]);
            j0 * (sh.weights[b] * lr + kw * sh.speeds[b])
        });
        Ok(BoundaryTraceAt {
            trace: self,
            blocks: [self.blocks[0].at_lambda(lambda)?, self.blocks[1].at_lambda(lambda)?],
            corr,
        })
    }
}

pub struct BoundaryTraceAt<'a> {
    trace: &'a BoundaryTrace<'a>,
    blocks: [LambdaBlock<'a>; 2],
    corr: Mat<Complex64>,
}

impl BoundaryTraceAt<'_> {
    pub fn eval(&self, density: &DensityPair, p: f64) -> Result<Vec<Complex64>> {
        let cell = self.trace.cell;
        let w = &cell.shape.weights;
        let n = cell.n_nodes();
        let phis = [&density.phi1, &density.phi2];
        let nt = self.corr.nrows();
        let mut u = vec![Complex64::new(0.0, 0.0); nt];
        for j in 0..2 {
            let g = self.blocks[j].eval(p, cell.m_trunc, cell.sing_guard)?;
            for (i, ui) in u.iter_mut().enumerate() {
                for b in 0..n {
                    let mut k = g[(i, b)] * w[b];
                    if j == self.trace.obstacle {
                        k += self.corr[(i, b)];
                    }
                    *ui += k * phis[j][b];
                }
            }
        }
        Ok(u)
    }
}
