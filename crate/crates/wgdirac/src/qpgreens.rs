//! Quasi-periodic Green's function of the empty Neumann strip.
//!
//! `G(x, y; p, lambda)` solves `(Delta + lambda) G = delta_y` in the strip
//! `R x (0, 1/2)` with Neumann walls and `G(x + e1, y) = e^{ip} G(x, y)`.
//! Reflecting across the walls turns it into two copies of the quasi-periodic
//! Green's function of the unit lattice `Z^2`,
//!
//! ```text
//! G = G_L(x1 - y1, x2 - y2) + G_L(x1 - y1, x2 + y2),
//! G_L(X, Y) = sum_{m,n} e^{i p_m X + 2 pi i n Y} / (lambda - p_m^2 - 4 pi^2 n^2),
//! ```
//!
//! with `p_m = p + 2 pi m`. Both copies are evaluated by Ewald splitting with
//! parameter `E`: a Gaussian-damped spectral sum plus an image sum of
//! generalized exponential integrals,
//!
//! ```text
//! G_L = sum_K e^{iK.r} e^{-(K^2 - lambda)/4E^2} / (lambda - K^2)
//!     - 1/(4 pi) sum_R e^{i p j} sum_q (lambda/4E^2)^q / q! E_{q+1}(|r - R|^2 E^2).
//! ```
//!
//! Near a source image the kernel behaves like `(1/4pi) J0(sqrt(lambda) r) ln r^2`.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Point, STRIP_HEIGHT};
use crate::special::{bessel_j0_sq, expint_regular_seq, expint_seq};

/// Ewald splitting parameter.
pub const EWALD_SPLIT: f64 = 4.0;
/// Largest exponent kept in either Ewald sum (`e^{-38} ~ 3e-17`).
const Z_CUT: f64 = 38.0;
/// Length of the `q` expansion in the image sum.
const Q_MAX: usize = 36;
/// Largest `|lambda|` for which `Q_MAX` terms suffice.
pub const LAMBDA_MAX: f64 = 250.0;
/// Radius below which `eval_ge_split` is accepted.
pub const SPLIT_RADIUS: f64 = 0.1;

/// Coefficient of `ln|x - y|` in the diagonal behaviour of the kernel.
pub const LOG_COEFF: f64 = 1.0 / (2.0 * PI);

const INV_4PI: f64 = 1.0 / (4.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub p: f64,
    pub lambda: Complex64,
    pub m_trunc: usize,
    pub sing_guard: f64,
}

impl KernelParams {
    pub fn new(p: f64, lambda: impl Into<Complex64>) -> Self {
        Self {
            p,
            lambda: lambda.into(),
            m_trunc: 16,
            sing_guard: 1e-6,
        }
    }

    pub fn with_p(self, p: f64) -> Self {
        Self { p, ..self }
    }

    pub fn with_lambda(self, lambda: impl Into<Complex64>) -> Self {
        Self {
            lambda: lambda.into(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_trunc < 8 {
            return Err(Error::Domain(format!("m_trunc = {} < 8", self.m_trunc)));
        }
        if !(self.sing_guard > 0.0) {
            return Err(Error::Domain("sing_guard must be positive".into()));
        }
        if !(self.lambda.norm() <= LAMBDA_MAX) || !self.p.is_finite() {
            return Err(Error::Domain(format!(
                "lambda = {} outside supported range |lambda| <= {LAMBDA_MAX}",
                self.lambda
            )));
        }
        SpectralModes::new(self.p, self.lambda, self.m_trunc, self.sing_guard).map(|_| ())
    }
}

/// Which image of the lattice sum carries the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Direct,
    Mirror,
}

/// Images whose logarithm is removed from a [`GreenBlock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Singular {
    /// Plain kernel values; coincident points are an error.
    None,
    /// Targets and sources on one closed curve: the direct image is removed.
    SameCurve,
    /// Targets and sources on a vertical segment spanning the strip: the
    /// direct image and the two wall images `-y2`, `1 - y2` are removed.
    Line,
}

impl Singular {
    fn removes(self, j: i64, k: i64, fam: Family) -> bool {
        match self {
            Singular::None => false,
            Singular::SameCurve => j == 0 && k == 0 && fam == Family::Direct,
            Singular::Line => {
                j == 0
                    && ((k == 0 && fam == Family::Direct)
                        || (fam == Family::Mirror && (k == 0 || k == 1)))
            }
        }
    }
}

/// Distances from `(x, y)` to the images removed under `mode`.
pub fn removed_image_distances(x: Point, y: Point, mode: Singular) -> Vec<f64> {
    let dx = x[0] - y[0];
    match mode {
        Singular::None => vec![],
        Singular::SameCurve => vec![dx.hypot(x[1] - y[1])],
        Singular::Line => vec![
            dx.hypot(x[1] - y[1]),
            dx.hypot(x[1] + y[1]),
            dx.hypot(x[1] + y[1] - 1.0),
        ],
    }
}

/// `(1/4pi) J0(sqrt(lambda) r) ln r^2`, the logarithmic part of one image.
pub fn image_log_term(lambda: Complex64, r: f64) -> Complex64 {
    bessel_j0_sq(lambda, r * r) * (INV_4PI * (r * r).ln())
}

fn lambda_coeffs(lambda: Complex64) -> Vec<Complex64> {
    let s = lambda / (4.0 * EWALD_SPLIT * EWALD_SPLIT);
    let mut c = Vec::with_capacity(Q_MAX);
    let mut t = Complex64::new(1.0, 0.0);
    c.push(t);
    for q in 1..Q_MAX {
        t = t * s / q as f64;
        c.push(t);
    }
    c
}

fn reduce_p(p: f64) -> f64 {
    p - 2.0 * PI * (p / (2.0 * PI)).round()
}

/// Active spectral terms for one `(p, lambda)`.
struct SpectralModes {
    p0: f64,
    /// `(m, n, weight)` with the `n = 0` / `n > 0` multiplicity folded in.
    terms: Vec<(i64, i64, Complex64)>,
}

impl SpectralModes {
    fn new(p: f64, lambda: Complex64, m_lim: usize, guard: f64) -> Result<Self> {
        let p0 = reduce_p(p);
        let e2 = 4.0 * EWALD_SPLIT * EWALD_SPLIT;
        let ml = m_lim as i64;
        let mut terms = Vec::new();
        for m in -ml..=ml {
            let pm = p0 + 2.0 * PI * m as f64;
            for n in 0..=ml {
                let k2 = pm * pm + 4.0 * PI * PI * (n * n) as f64;
                if (k2 - lambda.re) / e2 > Z_CUT {
                    continue;
                }
                let den = lambda - k2;
                if den.norm() < guard {
                    return Err(Error::SingularFrequency {
                        m,
                        n,
                        gap: den.norm(),
                        guard,
                    });
                }
                let mult = if n == 0 { 2.0 } else { 4.0 };
                let w = (-(k2 - lambda) / e2).exp() / den * mult;
                terms.push((m, n, w));
            }
        }
        Ok(Self { p0, terms })
    }

    fn sum(&self, x: Point, y: Point) -> Complex64 {
        let dx = x[0] - y[0];
        let mut s = Complex64::new(0.0, 0.0);
        for &(m, n, w) in &self.terms {
            let pm = self.p0 + 2.0 * PI * m as f64;
            let c = (2.0 * PI * n as f64 * x[1]).cos() * (2.0 * PI * n as f64 * y[1]).cos();
            s += w * Complex64::from_polar(c, pm * dx);
        }
        s
    }
}

/// Images within the real-space cutoff: `(j, k, family, z = r^2 E^2)`.
fn images(x: Point, y: Point, mut f: impl FnMut(i64, i64, Family, f64)) {
    let rc = Z_CUT.sqrt() / EWALD_SPLIT;
    let dx = x[0] - y[0];
    let j0 = (dx - rc).ceil() as i64;
    let j1 = (dx + rc).floor() as i64;
    for (fam, dy) in [(Family::Direct, x[1] - y[1]), (Family::Mirror, x[1] + y[1])] {
        let k0 = (dy - rc).ceil() as i64;
        let k1 = (dy + rc).floor() as i64;
        for j in j0..=j1 {
            let ex = dx - j as f64;
            for k in k0..=k1 {
                let ey = dy - k as f64;
                let z = (ex * ex + ey * ey) * EWALD_SPLIT * EWALD_SPLIT;
                if z <= Z_CUT {
                    f(j, k, fam, z);
                }
            }
        }
    }
}

/// Expansion coefficients `V[q]` of one image, added to `acc`; the returned
/// value multiplies `(1/4pi) J0(sqrt(lambda) r)`.
fn image_expansion(z: f64, removed: bool, scratch: &mut [f64], acc: &mut [f64]) -> Option<f64> {
    if removed {
        if z <= 4.0 {
            expint_regular_seq(z, scratch);
            for (a, s) in acc.iter_mut().zip(scratch.iter()) {
                *a += s;
            }
            Some(2.0 * EWALD_SPLIT.ln())
        } else {
            expint_seq(z, scratch);
            for (a, s) in acc.iter_mut().zip(scratch.iter()) {
                *a += s;
            }
            Some(-(z / (EWALD_SPLIT * EWALD_SPLIT)).ln())
        }
    } else {
        if z == 0.0 {
            return None;
        }
        expint_seq(z, scratch);
        for (a, s) in acc.iter_mut().zip(scratch.iter()) {
            *a += s;
        }
        Some(0.0)
    }
}

fn check_point(x: Point) -> Result<()> {
    if !(x[1] >= -1e-12 && x[1] <= STRIP_HEIGHT + 1e-12) || !x[0].is_finite() {
        return Err(Error::Domain(format!("point {x:?} outside the strip")));
    }
    Ok(())
}

/// Kernel value with an explicit spectral truncation `|m|, n <= m_lim` and the
/// images selected by `mode` replaced by their regular parts.
pub fn eval_ge_modes(
    x: Point,
    y: Point,
    p: f64,
    lambda: Complex64,
    m_lim: usize,
    mode: Singular,
) -> Result<Complex64> {
    check_point(x)?;
    check_point(y)?;
    let spec = SpectralModes::new(p, lambda, m_lim, 0.0)?;
    let c = lambda_coeffs(lambda);
    let mut scratch = vec![0.0; Q_MAX];
    let mut real = Complex64::new(0.0, 0.0);
    let mut err = None;
    images(x, y, |j, k, fam, z| {
        let mut acc = vec![0.0; Q_MAX];
        match image_expansion(z, mode.removes(j, k, fam), &mut scratch, &mut acc) {
            None => err = Some(Error::Domain("coincident source and target".into())),
            Some(jc) => {
                let mut s = Complex64::new(0.0, 0.0);
                for q in 0..Q_MAX {
                    s += c[q] * acc[q];
                }
                let mut v = -s * INV_4PI;
                if jc != 0.0 {
                    v += bessel_j0_sq(lambda, z / (EWALD_SPLIT * EWALD_SPLIT)) * (jc * INV_4PI);
                }
                real += Complex64::from_polar(1.0, spec.p0 * j as f64) * v;
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(real + spec.sum(x, y))
}

/// `G^e(x, y; p, lambda)`.
#[allow(non_snake_case)]
pub fn eval_Ge(x: Point, y: Point, params: &KernelParams) -> Result<Complex64> {
    params.validate()?;
    if x == y {
        return Err(Error::Domain("x = y".into()));
    }
    eval_ge_modes(x, y, params.p, params.lambda, params.m_trunc, Singular::None)
}

/// Splits `G^e = LOG_COEFF ln|x - y| + smooth` for `|x - y| < SPLIT_RADIUS`.
#[allow(non_snake_case)]
pub fn eval_Ge_split(x: Point, y: Point, params: &KernelParams) -> Result<(f64, Complex64)> {
    params.validate()?;
    let r = (x[0] - y[0]).hypot(x[1] - y[1]);
    if !(r < SPLIT_RADIUS) {
        return Err(Error::Domain(format!("|x - y| = {r} beyond split radius")));
    }
    let reg = eval_ge_modes(x, y, params.p, params.lambda, params.m_trunc, Singular::SameCurve)?;
    let smooth = if r > 0.0 {
        reg + (bessel_j0_sq(params.lambda, r * r) - 1.0) * (INV_4PI * (r * r).ln())
    } else {
        reg
    };
    Ok((LOG_COEFF, smooth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Derivative {
    DP,
    DLambda,
}

/// Central difference of `G^e` in `p` or `lambda`.
pub fn kernel_derivative(
    which: Derivative,
    x: Point,
    y: Point,
    params: &KernelParams,
    step: f64,
) -> Result<Complex64> {
    central_difference(which, params, step, |q| eval_Ge(x, y, q))
}

/// Central difference of any kernel-valued map in `p` or `lambda`.
pub fn central_difference<F>(
    which: Derivative,
    params: &KernelParams,
    step: f64,
    f: F,
) -> Result<Complex64>
where
    F: Fn(&KernelParams) -> Result<Complex64>,
{
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::Domain(format!("step {step} outside [1e-6, 1e-3]")));
    }
    let (a, b) = match which {
        Derivative::DP => (params.with_p(params.p + step), params.with_p(params.p - step)),
        Derivative::DLambda => (
            params.with_lambda(params.lambda + step),
            params.with_lambda(params.lambda - step),
        ),
    };
    Ok((f(&a)? - f(&b)?) / (2.0 * step))
}

/// Geometry-only precomputation of the kernel between two point sets.
///
/// The image sum is stored as expansion coefficients in `lambda` per lattice
/// column `j`; the spectral sum as separable factor matrices. Evaluating at a
/// new `(p, lambda)` then costs one small matrix product.
pub struct GreenBlock {
    targets: Vec<Point>,
    sources: Vec<Point>,
    jmin: i64,
    nj: usize,
    coeffs: Vec<f64>,
    bessel_terms: Vec<(usize, f64, f64)>,
    m_lim: i64,
    n_lim: i64,
    a_fac: Mat<Complex64>,
    b_fac: Mat<Complex64>,
}

impl GreenBlock {
    pub fn new(targets: &[Point], sources: &[Point], mode: Singular) -> Result<Self> {
        for x in targets.iter().chain(sources) {
            check_point(*x)?;
        }
        let nt = targets.len();
        let ns = sources.len();
        let rc = Z_CUT.sqrt() / EWALD_SPLIT;
        let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in targets {
            for y in sources {
                let d = x[0] - y[0];
                dmin = dmin.min(d);
                dmax = dmax.max(d);
            }
        }
        if nt == 0 || ns == 0 {
            dmin = 0.0;
            dmax = 0.0;
        }
        let jmin = (dmin - rc).ceil() as i64;
        let jmax = (dmax + rc).floor() as i64;
        let nj = (jmax - jmin + 1).max(1) as usize;
        let mut coeffs = vec![0.0; nt * ns * nj * Q_MAX];
        let mut bessel_terms = Vec::new();
        let mut scratch = vec![0.0; Q_MAX];
        let mut err = None;
        for (a, x) in targets.iter().enumerate() {
            for (b, y) in sources.iter().enumerate() {
                let pair = a * ns + b;
                images(*x, *y, |j, k, fam, z| {
                    let jj = (j - jmin) as usize;
                    let off = (pair * nj + jj) * Q_MAX;
                    let acc = &mut coeffs[off..off + Q_MAX];
                    match image_expansion(z, mode.removes(j, k, fam), &mut scratch, acc) {
                        None => err = Some(Error::Domain(format!("coincident points {x:?}"))),
                        Some(jc) if jc != 0.0 => {
                            bessel_terms.push((pair, z / (EWALD_SPLIT * EWALD_SPLIT), jc))
                        }
                        Some(_) => {}
                    }
                });
            }
        }
        if let Some(e) = err {
            return Err(e);
        }

        let kc = (4.0 * EWALD_SPLIT * EWALD_SPLIT * Z_CUT + LAMBDA_MAX).sqrt();
        let m_lim = ((kc + PI) / (2.0 * PI)).ceil() as i64;
        let n_lim = (kc / (2.0 * PI)).ceil() as i64;
        let nmodes = ((2 * m_lim + 1) * (n_lim + 1)) as usize;
        let mode_of = |c: usize| -> (i64, i64) {
            let m = (c as i64) / (n_lim + 1) - m_lim;
            let n = (c as i64) % (n_lim + 1);
            (m, n)
        };
        let a_fac = Mat::from_fn(nt, nmodes, |a, c| {
            let (m, n) = mode_of(c);
            let x = targets[a];
            Complex64::from_polar((2.0 * PI * n as f64 * x[1]).cos(), 2.0 * PI * m as f64 * x[0])
        });
        let b_fac = Mat::from_fn(nmodes, ns, |c, b| {
            let (m, n) = mode_of(c);
            let y = sources[b];
            Complex64::from_polar((2.0 * PI * n as f64 * y[1]).cos(), -2.0 * PI * m as f64 * y[0])
        });
        Ok(Self {
            targets: targets.to_vec(),
            sources: sources.to_vec(),
            jmin,
            nj,
            coeffs,
            bessel_terms,
            m_lim,
            n_lim,
            a_fac,
            b_fac,
        })
    }

    pub fn targets(&self) -> &[Point] {
        &self.targets
    }

    pub fn sources(&self) -> &[Point] {
        &self.sources
    }

    /// Collapses the image expansion at a fixed `lambda`.
    pub fn at_lambda(&self, lambda: Complex64) -> Result<LambdaBlock<'_>> {
        if !(lambda.norm() <= LAMBDA_MAX) {
            return Err(Error::Domain(format!("lambda = {lambda} beyond {LAMBDA_MAX}")));
        }
        let nt = self.targets.len();
        let ns = self.sources.len();
        let c = lambda_coeffs(lambda);
        let mut rj: Vec<Mat<Complex64>> = (0..self.nj).map(|_| Mat::zeros(nt, ns)).collect();
        for a in 0..nt {
            for b in 0..ns {
                let pair = a * ns + b;
                for jj in 0..self.nj {
                    let off = (pair * self.nj + jj) * Q_MAX;
                    let v = &self.coeffs[off..off + Q_MAX];
                    let mut s = Complex64::new(0.0, 0.0);
                    for q in 0..Q_MAX {
                        s += c[q] * v[q];
                    }
                    rj[jj][(a, b)] = -s * INV_4PI;
                }
            }
        }
        let j0 = (-self.jmin) as usize;
        for &(pair, r2, coef) in &self.bessel_terms {
            let (a, b) = (pair / ns, pair % ns);
            rj[j0][(a, b)] += bessel_j0_sq(lambda, r2) * (coef * INV_4PI);
        }
        Ok(LambdaBlock {
            block: self,
            lambda,
            rj,
        })
    }
}

/// A [`GreenBlock`] with the image sum collapsed at one `lambda`.
pub struct LambdaBlock<'a> {
    block: &'a GreenBlock,
    lambda: Complex64,
    rj: Vec<Mat<Complex64>>,
}

impl LambdaBlock<'_> {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// Kernel matrix at quasi-momentum `p`, truncated at `|m|, n <= m_trunc`.
    pub fn eval(&self, p: f64, m_trunc: usize, guard: f64) -> Result<Mat<Complex64>> {
        let blk = self.block;
        let nt = blk.targets.len();
        let ns = blk.sources.len();
        let spec = SpectralModes::new(p, self.lambda, m_trunc, guard)?;
        let p0 = spec.p0;
        let nmodes = blk.a_fac.ncols();
        let mut w = vec![Complex64::new(0.0, 0.0); nmodes];
        for &(m, n, wt) in &spec.terms {
            if m.abs() > blk.m_lim || n > blk.n_lim {
                return Err(Error::Domain("spectral term outside block range".into()));
            }
            let c = ((m + blk.m_lim) * (blk.n_lim + 1) + n) as usize;
            w[c] = wt;
        }
        let active: Vec<usize> = (0..nmodes).filter(|&c| w[c] != Complex64::new(0.0, 0.0)).collect();
        let aw = Mat::from_fn(nt, active.len(), |a, c| blk.a_fac[(a, active[c])] * w[active[c]]);
        let bsub = Mat::from_fn(active.len(), ns, |c, b| blk.b_fac[(active[c], b)]);
        let mut out = &aw * &bsub;
        for a in 0..nt {
            let ea = Complex64::from_polar(1.0, p0 * blk.targets[a][0]);
            for b in 0..ns {
                let eb = Complex64::from_polar(1.0, -p0 * blk.sources[b][0]);
                out[(a, b)] = out[(a, b)] * ea * eb;
            }
        }
        for jj in 0..blk.nj {
            let ph = Complex64::from_polar(1.0, p0 * (blk.jmin + jj as i64) as f64);
            let r = &self.rj[jj];
            for b in 0..ns {
                for a in 0..nt {
                    out[(a, b)] += ph * r[(a, b)];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_matches_pointwise() {
        let xs = [[0.1, 0.2], [0.7, 0.05], [1.4, 0.45]];
        let ys = [[0.3, 0.25], [0.9, 0.3]];
        let blk = GreenBlock::new(&xs, &ys, Singular::None).unwrap();
        let lam = Complex64::new(52.0, 0.0);
        let lb = blk.at_lambda(lam).unwrap();
        let m = lb.eval(2.1, 16, 1e-6).unwrap();
        for (a, x) in xs.iter().enumerate() {
            for (b, y) in ys.iter().enumerate() {
                let v = eval_Ge(*x, *y, &KernelParams::new(2.1, lam)).unwrap();
                assert!((m[(a, b)] - v).norm() < 1e-12, "{a} {b}");
            }
        }
    }

    #[test]
    fn split_recombines() {
        let params = KernelParams::new(PI, 52.0);
        let x = [0.3, 0.2];
        let y = [0.3 + 0.09 * 0.6, 0.2 + 0.09 * 0.8];
        let (c, s) = eval_Ge_split(x, y, &params).unwrap();
        let g = eval_Ge(x, y, &params).unwrap();
        let r = 0.09f64;
        assert!((c * r.ln() + s - g).norm() < 1e-12);
    }

    #[test]
    fn guard_triggers() {
        // p = pi, lambda = pi^2 + 4 pi^2 is an empty-strip eigenvalue
        let params = KernelParams::new(PI, 5.0 * PI * PI);
        assert!(matches!(
            eval_Ge([0.1, 0.1], [0.3, 0.2], &params),
            Err(Error::SingularFrequency { .. })
        ));
    }
}
