//! Dirac eigenmodes at `(pi, lambda*)` and the perturbation coefficients
//! `gamma*`, `theta*`, `t*`.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::bands::{find_band_lambda, DispersionCurve};
use crate::error::{Error, Result};
use crate::geometry::{ObstacleShape, Point};
use crate::layerops::{fix_phase, kernel_vectors, CellOperator, DensityPair, FieldEvaluator, OperatorMatrix};

type C = Complex64;

/// Relative tolerance of the pairing sign/zero pattern.
pub const PATTERN_TOL: f64 = 0.05;
/// Largest accepted distance of a symmetrized mode from the computed kernel.
pub const SYMMETRY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub dp: f64,
    pub dl: f64,
    pub dd: f64,
}

impl Default for Steps {
    fn default() -> Self {
        Self {
            dp: 1e-4,
            dl: 1e-4,
            dd: 1e-4,
        }
    }
}

impl Steps {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("dp", self.dp), ("dl", self.dl), ("dd", self.dd)] {
            if !(1e-5..=1e-3).contains(&v) {
                return Err(Error::Domain(format!("step {name} = {v} outside [1e-5, 1e-3]")));
            }
        }
        Ok(())
    }
}

/// `m[j][i] = <phi_j, X phi_i>` for the three derivative operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pairings {
    pub t_lambda: [[C; 2]; 2],
    pub t_p: [[C; 2]; 2],
    pub s: [[C; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracData {
    pub p_star: f64,
    pub lambda_star: f64,
    pub phi_odd: DensityPair,
    pub phi_even: DensityPair,
    pub gamma_star: f64,
    pub theta_star: f64,
    pub t_star: f64,
    pub alpha_star: f64,
    pub beta_star: f64,
    pub pairings: Pairings,
}

/// Density of the reflected field `u(-x1, x2)` at `p = pi`.
pub fn reflect(v: &DensityPair, shape: &ObstacleShape) -> DensityPair {
    let n = shape.n_nodes;
    let m = |phi: &[C], j: usize| phi[shape.mirror_index(j)];
    DensityPair {
        phi1: (0..n).map(|j| -m(&v.phi2, j)).collect(),
        phi2: (0..n).map(|j| -m(&v.phi1, j)).collect(),
    }
}

fn combine(a: &DensityPair, b: &DensityPair, ca: C, cb: C) -> DensityPair {
    DensityPair::from_stacked(
        &a.stacked()
            .iter()
            .zip(b.stacked())
            .map(|(x, y)| ca * x + cb * y)
            .collect::<Vec<_>>(),
    )
}

/// Weighted inner product `sum w conj(a) b`.
fn inner(a: &DensityPair, b: &DensityPair, w: &[f64]) -> C {
    a.stacked()
        .iter()
        .zip(b.stacked())
        .zip(w.iter().chain(w))
        .map(|((x, y), wi)| x.conj() * y * *wi)
        .sum()
}

/// Dominant direction of `span(parts)` in the weighted norm.
fn dominant(parts: &[DensityPair; 2], w: &[f64]) -> DensityPair {
    let g = [
        [inner(&parts[0], &parts[0], w), inner(&parts[0], &parts[1], w)],
        [inner(&parts[1], &parts[0], w), inner(&parts[1], &parts[1], w)],
    ];
    let gm = Mat::<C>::from_fn(2, 2, |i, j| g[i][j]);
    let eig = gm.self_adjoint_eigen(faer::Side::Lower).expect("2x2 hermitian eigen");
    let u = eig.U();
    // eigenvalues ascending: last column is dominant
    combine(&parts[0], &parts[1], u[(0, 1)], u[(1, 1)])
}

fn normalize(v: &mut DensityPair, w: &[f64]) {
    let nrm = v.weighted_norm(w);
    v.scale(C::new(1.0 / nrm, 0.0));
    fix_phase(v);
}

/// Distance of `v` from `span(basis)` relative to `|v|`.
fn span_residual(v: &DensityPair, basis: &[DensityPair; 2], w: &[f64]) -> f64 {
    let g = Mat::<C>::from_fn(2, 2, |i, j| inner(&basis[i], &basis[j], w));
    let rhs = Mat::<C>::from_fn(2, 1, |i, _| inner(&basis[i], v, w));
    let c = g.full_piv_lu().solve(&rhs);
    let proj = combine(&basis[0], &basis[1], c[(0, 0)], c[(1, 0)]);
    let diff = combine(v, &proj, C::new(1.0, 0.0), C::new(-1.0, 0.0));
    diff.weighted_norm(w) / v.weighted_norm(w)
}

/// Recombines a kernel basis into the odd and even Dirac modes.
pub fn symmetrize_dirac_modes(raw: &[DensityPair; 2], shape: &ObstacleShape) -> Result<(DensityPair, DensityPair)> {
    let w = &shape.weights;
    let half = C::new(0.5, 0.0);
    let odd_parts = [0, 1].map(|k| combine(&raw[k], &reflect(&raw[k], shape), half, -half));
    let even_parts = [0, 1].map(|k| combine(&raw[k], &reflect(&raw[k], shape), half, half));
    let mut odd = dominant(&odd_parts, w);
    let mut even = dominant(&even_parts, w);
    normalize(&mut odd, w);
    normalize(&mut even, w);
    let res = span_residual(&odd, raw, w).max(span_residual(&even, raw, w));
    let imag = odd
        .stacked()
        .iter()
        .chain(&even.stacked())
        .fold(0.0f64, |a, z| a.max(z.im.abs()));
    let scale = odd.stacked().iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let res = res.max(imag / scale);
    if !(res < SYMMETRY_TOL) {
        return Err(Error::SymmetryFailure(res));
    }
    Ok((odd, even))
}

/// Largest of `|u(-x1, x2) - s u(x1, x2)|` over `points`, relative to the
/// largest field value, for the field of `v` at `(pi, lambda)`.
pub fn field_parity_residual(
    cell: &CellOperator,
    v: &DensityPair,
    lambda: f64,
    parity: f64,
    points: &[Point],
) -> Result<f64> {
    let mirrored: Vec<Point> = points.iter().map(|x| [-x[0], x[1]]).collect();
    let all: Vec<Point> = points.iter().chain(&mirrored).copied().collect();
    let u = FieldEvaluator::new(cell, &all)?.eval(v, PI, C::new(lambda, 0.0))?;
    let n = points.len();
    let scale = u.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let worst = (0..n).fold(0.0f64, |a, k| a.max((u[n + k] - parity * u[k]).norm()));
    Ok(worst / scale)
}

/// Sample points in the period `[-1/2, 1/2] x [0, 1/2]` at least `margin`
/// away from the obstacles.
pub fn cell_sample_points(cell: &CellOperator, n1: usize, n2: usize, margin: f64) -> Vec<Point> {
    let mut pts = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let x = [-0.5 + (i as f64 + 0.5) / n1 as f64, 0.5 * (j as f64 + 0.5) / n2 as f64];
            if !cell.inside_obstacle(x) && cell.distance_to_boundary(x) > margin {
                pts.push(x);
            }
        }
    }
    pts
}

fn pairing_matrix(t: &OperatorMatrix, modes: &[&DensityPair; 2]) -> [[C; 2]; 2] {
    let mut m = [[C::new(0.0, 0.0); 2]; 2];
    for j in 0..2 {
        for i in 0..2 {
            m[j][i] = t.pairing(modes[j], modes[i]);
        }
    }
    m
}

/// Central-difference derivative operators at `(pi, lambda*, 0)` paired with
/// the Dirac modes.
pub fn compute_pairings(
    shape: &ObstacleShape,
    lambda_star: f64,
    odd: &DensityPair,
    even: &DensityPair,
    steps: &Steps,
) -> Result<Pairings> {
    steps.validate()?;
    let modes = [odd, even];
    let cell = CellOperator::new(shape, 0.0)?;
    let lp = cell.at_lambda(lambda_star + steps.dl)?.assemble(PI)?;
    let lm = cell.at_lambda(lambda_star - steps.dl)?.assemble(PI)?;
    let t_lambda = lp.difference(&lm, 2.0 * steps.dl);
    let at = cell.at_lambda(lambda_star)?;
    let pp = at.assemble(PI + steps.dp)?;
    let pm = at.assemble(PI - steps.dp)?;
    let t_p = pp.difference(&pm, 2.0 * steps.dp);
    let dp_cell = CellOperator::new(shape, steps.dd)?;
    let dm_cell = CellOperator::new(shape, -steps.dd)?;
    let sp = dp_cell.at_lambda(lambda_star)?.assemble(PI)?;
    let sm = dm_cell.at_lambda(lambda_star)?.assemble(PI)?;
    let s = sp.difference(&sm, 2.0 * steps.dd);
    Ok(Pairings {
        t_lambda: pairing_matrix(&t_lambda, &modes),
        t_p: pairing_matrix(&t_p, &modes),
        s: pairing_matrix(&s, &modes),
    })
}

/// Checks the sign/zero pattern of the pairings and extracts `(gamma*, theta*, t*)`.
pub fn coefficients_from_pairings(pr: &Pairings) -> Result<(f64, f64, f64)> {
    let tol = PATTERN_TOL;
    let mut bad = Vec::new();
    let l = pr.t_lambda;
    let dom = l[0][0].norm().max(l[1][1].norm());
    if l[0][1].norm().max(l[1][0].norm()) > tol * dom {
        bad.push("T_lambda off-diagonal".to_string());
    }
    if (l[0][0] - l[1][1]).norm() > tol * dom {
        bad.push("T_lambda diagonals differ".into());
    }
    if l[0][0].im.abs().max(l[1][1].im.abs()) > tol * dom {
        bad.push("T_lambda diagonal not real".into());
    }
    let p = pr.t_p;
    let dom = p[0][1].norm().max(p[1][0].norm());
    if p[0][0].norm().max(p[1][1].norm()) > tol * dom {
        bad.push("T_p diagonal".into());
    }
    if p[0][1].re.abs().max(p[1][0].re.abs()) > tol * dom {
        bad.push("T_p off-diagonal not imaginary".into());
    }
    if (p[0][1] + p[1][0]).norm() > tol * dom {
        bad.push("T_p off-diagonal not antisymmetric".into());
    }
    let s = pr.s;
    let dom = s[0][0].norm().max(s[1][1].norm());
    if s[0][1].norm().max(s[1][0].norm()) > tol * dom {
        bad.push("S off-diagonal".into());
    }
    if (s[0][0] + s[1][1]).norm() > tol * dom {
        bad.push("S diagonals not opposite".into());
    }
    if s[0][0].im.abs().max(s[1][1].im.abs()) > tol * dom {
        bad.push("S diagonal not real".into());
    }
    if !bad.is_empty() {
        return Err(Error::StructureViolation(bad.join(", ")));
    }
    let gamma = 0.5 * (l[0][0].re + l[1][1].re);
    let theta = 0.5 * (p[1][0].im - p[0][1].im);
    let t = 0.5 * (s[0][0].re - s[1][1].re);
    Ok((gamma, theta, t))
}

/// Pairings and coefficients for given Dirac modes.
pub fn compute_coefficients(
    shape: &ObstacleShape,
    lambda_star: f64,
    odd: &DensityPair,
    even: &DensityPair,
    steps: &Steps,
) -> Result<(f64, f64, f64, Pairings)> {
    let pr = compute_pairings(shape, lambda_star, odd, even, steps)?;
    let (g, th, t) = coefficients_from_pairings(&pr)?;
    Ok((g, th, t, pr))
}

/// Full Dirac analysis at a known `lambda*`.
pub fn analyze(shape: &ObstacleShape, lambda_star: f64, steps: &Steps) -> Result<DiracData> {
    let cell = CellOperator::new(shape, 0.0)?;
    let t = cell.at_lambda(lambda_star)?.assemble(PI)?;
    let raw = kernel_vectors(&t, 2)?;
    let raw = [raw[0].clone(), raw[1].clone()];
    let (odd, even) = symmetrize_dirac_modes(&raw, shape)?;
    let (gamma, theta, tstar, pairings) = compute_coefficients(shape, lambda_star, &odd, &even, steps)?;
    if tstar.abs() <= 1e-10 * gamma.abs() {
        return Err(Error::DegenerateGap(tstar));
    }
    Ok(DiracData {
        p_star: PI,
        lambda_star,
        phi_odd: odd,
        phi_even: even,
        gamma_star: gamma,
        theta_star: theta,
        t_star: tstar,
        alpha_star: (theta / gamma).abs(),
        beta_star: tstar / gamma,
        pairings,
    })
}

/// `lambda* +- (1/|gamma*|) sqrt(delta^2 t*^2 + theta*^2 (p - pi)^2)`.
pub fn closed_form_branch(d: &DiracData, delta: f64, p: f64, upper: bool) -> f64 {
    let r = (delta * delta * d.t_star * d.t_star + d.theta_star * d.theta_star * (p - PI).powi(2)).sqrt() / d.gamma_star.abs();
    if upper {
        d.lambda_star + r
    } else {
        d.lambda_star - r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPoint {
    pub p: f64,
    pub band: usize,
    pub traced: f64,
    pub predicted: f64,
    /// `|traced - predicted| / |predicted - lambda*|`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub delta: f64,
    pub points: Vec<AsymptoticPoint>,
    pub max_abs_deviation: f64,
    pub max_relative: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Compares traced bands 1 and 2 with the closed-form branches over `|p - pi| <= window`.
pub fn asymptotic_band_check(d: &DiracData, delta: f64, bands: [&DispersionCurve; 2], window: f64) -> AsymptoticReport {
    let mut points = Vec::new();
    let mut max_dp: f64 = 0.0;
    for (b, curve) in bands.iter().enumerate() {
        for (k, &p) in curve.p_grid.iter().enumerate() {
            if (p - PI).abs() > window + 1e-12 {
                continue;
            }
            max_dp = max_dp.max((p - PI).abs());
            let predicted = closed_form_branch(d, delta, p, b == 1);
            let traced = curve.lambdas[k];
            let dist = (predicted - d.lambda_star).abs();
            points.push(AsymptoticPoint {
                p,
                band: b + 1,
                traced,
                predicted,
                relative: if dist > 0.0 { (traced - predicted).abs() / dist } else { 0.0 },
            });
        }
    }
    let max_abs = points.iter().fold(0.0f64, |a, q| a.max((q.traced - q.predicted).abs()));
    let max_rel = points.iter().fold(0.0f64, |a, q| a.max(q.relative));
    let scale = delta * d.beta_star.abs() + d.alpha_star * max_dp;
    let bound = 3.0 * (delta + max_dp) * scale;
    AsymptoticReport {
        delta,
        points,
        max_abs_deviation: max_abs,
        max_relative: max_rel,
        bound,
        passed: max_abs < bound,
    }
}

/// Band-edge density of the `delta` structure at `p = pi` near `guess`.
pub fn band_edge_density(shape: &ObstacleShape, delta: f64, guess: f64, width: f64) -> Result<(f64, DensityPair)> {
    let cell = CellOperator::new(shape, delta)?;
    let pt = find_band_lambda(&cell, PI, (guess - width, guess + width))?;
    let t = cell.at_lambda(pt.lambda)?.assemble(PI)?;
    let mut v = kernel_vectors(&t, 1)?.remove(0);
    fix_phase(&mut v);
    Ok((pt.lambda, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    /// `plus[n][k] = |<u_{n+1, delta}, phi_k>|`, `k = 0` odd, `k = 1` even.
    pub plus: [[f64; 2]; 2],
    pub minus: [[f64; 2]; 2],
    pub edges_plus: [f64; 2],
    pub edges_minus: [f64; 2],
}

impl SwapReport {
    /// Dominant entries above `hi`, cross entries below `lo`, and the
    /// `-delta` pattern equal to the row swap of the `+delta` pattern.
    pub fn swapped(&self, hi: f64, lo: f64) -> bool {
        let diag = |m: &[[f64; 2]; 2]| m[0][0] > hi && m[1][1] > hi && m[0][1] < lo && m[1][0] < lo;
        let anti = |m: &[[f64; 2]; 2]| m[0][1] > hi && m[1][0] > hi && m[0][0] < lo && m[1][1] < lo;
        (diag(&self.plus) && anti(&self.minus)) || (anti(&self.plus) && diag(&self.minus))
    }
}

fn field_overlap(a: &[C], b: &[C]) -> f64 {
    let ab: C = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    ab.norm() / (na * nb)
}

/// Normalized field overlaps of the `+-delta` band-edge modes with the Dirac modes.
pub fn mode_swap_check(d: &DiracData, delta: f64, shape: &ObstacleShape) -> Result<SwapReport> {
    if !(delta > 0.0) {
        return Err(Error::Domain("mode swap check needs delta > 0".into()));
    }
    let c0 = CellOperator::new(shape, 0.0)?;
    let cp = CellOperator::new(shape, delta)?;
    let cm = CellOperator::new(shape, -delta)?;
    let margin = 2.0 * delta + 0.02;
    let pts: Vec<Point> = cell_sample_points(&c0, 24, 12, margin)
        .into_iter()
        .filter(|x| !cp.inside_obstacle(*x) && !cm.inside_obstacle(*x))
        .collect();
    let lam = C::new(d.lambda_star, 0.0);
    let e0 = FieldEvaluator::new(&c0, &pts)?;
    let dirac_fields = [e0.eval(&d.phi_odd, PI, lam)?, e0.eval(&d.phi_even, PI, lam)?];
    let half = delta * d.beta_star.abs();
    let mut mats = [[[0.0; 2]; 2]; 2];
    let mut edges = [[0.0; 2]; 2];
    for (s, (sign, cell)) in [(1.0, &cp), (-1.0, &cm)].into_iter().enumerate() {
        let ev = FieldEvaluator::new(cell, &pts)?;
        for n in 0..2 {
            let guess = d.lambda_star + if n == 0 { -half } else { half };
            let (l, v) = band_edge_density(shape, sign * delta, guess, 0.3 * half)?;
            edges[s][n] = l;
            let u = ev.eval(&v, PI, C::new(l, 0.0))?;
            for k in 0..2 {
                mats[s][n][k] = field_overlap(&u, &dirac_fields[k]);
            }
        }
    }
    let best = mats.iter().flatten().flatten().fold(0.0f64, |a, &b| a.max(b));
    if best < 0.9 {
        return Err(Error::SwapInconclusive(best));
    }
    Ok(SwapReport {
        plus: mats[0],
        minus: mats[1],
        edges_plus: edges[0],
        edges_minus: edges[1],
    })
}

/// `int_cell |u|^2` for the field of `v` at a real characteristic point,
/// from the `lambda`-derivative of the operator.
pub fn bloch_norm_sq(cell: &CellOperator, v: &DensityPair, p: f64, lambda: f64, dl: f64) -> Result<f64> {
    let tp = cell.at_lambda(lambda + dl)?.assemble(p)?;
    let tm = cell.at_lambda(lambda - dl)?.assemble(p)?;
    let tl = tp.difference(&tm, 2.0 * dl);
    let conj = DensityPair {
        phi1: v.phi1.iter().map(|z| z.conj()).collect(),
        phi2: v.phi2.iter().map(|z| z.conj()).collect(),
    };
    Ok(-tl.pairing(&conj, v).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxCheck {
    pub flux: C,
    pub expected: C,
    pub relative_error: f64,
    pub norm_sq: f64,
}

/// `int_Gamma d_1 v conj(v) dx2` for the unit-normalized right-going mode
/// `phi_odd +- i phi_even` of the unperturbed structure.
pub fn flux_identity_check(d: &DiracData, shape: &ObstacleShape, n_gauss: usize) -> Result<FluxCheck> {
    let cell = CellOperator::new(shape, 0.0)?;
    let s = if -d.theta_star / d.gamma_star > 0.0 { 1.0 } else { -1.0 };
    let mut v = combine(&d.phi_odd, &d.phi_even, C::new(1.0, 0.0), C::new(0.0, s));
    let nsq = bloch_norm_sq(&cell, &v, PI, d.lambda_star, 1e-4)?;
    if !(nsq > 0.0) {
        return Err(Error::Reconstruction(format!("non-positive mode norm {nsq}")));
    }
    v.scale(C::new(1.0 / nsq.sqrt(), 0.0));
    let (gx, gw) = gauss_legendre(n_gauss);
    let h = 1e-4;
    let mut pts = Vec::with_capacity(3 * n_gauss);
    for x in &gx {
        let x2 = 0.25 * (1.0 + x);
        pts.extend([[-h, x2], [0.0, x2], [h, x2]]);
    }
    let u = FieldEvaluator::new(&cell, &pts)?.eval(&v, PI, C::new(d.lambda_star, 0.0))?;
    let mut flux = C::new(0.0, 0.0);
    for k in 0..n_gauss {
        let du = (u[3 * k + 2] - u[3 * k]) / (2.0 * h);
        flux += du * u[3 * k + 1].conj() * (0.25 * gw[k]);
    }
    let expected = C::new(0.0, 0.5 * d.alpha_star);
    Ok(FluxCheck {
        flux,
        expected,
        relative_error: (flux - expected).norm() / expected.norm(),
        norm_sq: nsq,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
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
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
    }
    (x, w)
}
