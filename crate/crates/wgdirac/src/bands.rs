//! Dispersion curves of the periodic waveguide, the Dirac point at `p = pi`
//! and the band gap opened by dimerization.

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::dirac::DiracData;
use crate::error::{Error, Result};
use crate::fdoracle::{fd_bloch_eigs, FdGrid};
use crate::geometry::ObstacleShape;
use crate::layerops::CellOperator;

/// Default relative threshold for a certified band point.
pub const CERT_RTOL: f64 = 1e-8;
/// Default gap-interval fraction.
pub const DEFAULT_C: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub p: f64,
    pub lambda: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCurve {
    pub band_index: usize,
    pub p_grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub sigma_mins: Vec<f64>,
    pub delta: f64,
}

impl DispersionCurve {
    pub fn max(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Value at the grid point closest to `p`.
    pub fn at(&self, p: f64) -> f64 {
        let k = self
            .p_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - p).abs().total_cmp(&(b.1 - p).abs()))
            .map(|x| x.0)
            .unwrap_or(0);
        self.lambdas[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapInterval {
    pub e1: f64,
    pub e2: f64,
    pub delta: f64,
    pub c: f64,
}

impl GapInterval {
    pub fn width(&self) -> f64 {
        self.e2 - self.e1
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda > self.e1 && lambda < self.e2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    /// Uniform samples used to locate the dip inside a bracket.
    pub samples: usize,
    pub cert_rtol: f64,
    /// Absolute tolerance on `lambda` for the Brent stage.
    pub xtol: f64,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            samples: 9,
            cert_rtol: CERT_RTOL,
            xtol: 1e-12,
        }
    }
}

/// Smallest and largest singular value of the weighted operator.
pub fn sigma_extremes(cell: &CellOperator, p: f64, lambda: f64) -> Result<(f64, f64)> {
    let s = cell.at_lambda(lambda)?.singular_values(p)?;
    Ok((s[0], *s.last().unwrap()))
}

struct SigmaSq<'a> {
    cell: &'a CellOperator,
    p: f64,
}

impl CostFunction for SigmaSq<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, lambda: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let (s, _) = sigma_extremes(self.cell, self.p, *lambda).map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        Ok(s * s)
    }
}

/// Minimizes `sigma_min^2` over `[a, b]`.
fn brent_min(cell: &CellOperator, p: f64, a: f64, b: f64, xtol: f64) -> Result<f64> {
    let solver = BrentOpt::new(a, b).set_tolerance(1e-15, xtol);
    let res = Executor::new(SigmaSq { cell, p }, solver)
        .configure(|s| s.max_iters(200))
        .run()
        .map_err(|e| Error::Refinement {
            p,
            reason: e.to_string(),
        })?;
    res.state.best_param.ok_or(Error::Refinement {
        p,
        reason: "minimizer returned no point".into(),
    })
}

/// Locates the single band crossing of `sigma_min` inside `bracket`.
pub fn find_band_lambda(cell: &CellOperator, p: f64, bracket: (f64, f64)) -> Result<BandPoint> {
    find_band_lambda_with(cell, p, bracket, &BandOptions::default())
}

pub fn find_band_lambda_with(cell: &CellOperator, p: f64, bracket: (f64, f64), opts: &BandOptions) -> Result<BandPoint> {
    let (lo, hi) = bracket;
    if !(hi > lo) || opts.samples < 3 {
        return Err(Error::Domain(format!("bad bracket ({lo}, {hi})")));
    }
    let k = opts.samples;
    let xs: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let sig = xs
        .iter()
        .map(|&x| sigma_extremes(cell, p, x).map(|s| s.0))
        .collect::<Result<Vec<_>>>()?;
    let dips: Vec<usize> = (1..k - 1)
        .filter(|&i| sig[i] < sig[i - 1] && sig[i] <= sig[i + 1])
        .collect();
    let imin = (0..k).min_by(|&a, &b| sig[a].total_cmp(&sig[b])).unwrap();
    if dips.is_empty() || imin == 0 || imin == k - 1 {
        return Err(Error::NoBand { p, lo, hi });
    }
    if dips.len() > 1 {
        return Err(Error::AmbiguousBracket {
            p,
            lo,
            hi,
            count: dips.len(),
        });
    }
    let lambda = brent_min(cell, p, xs[imin - 1], xs[imin + 1], opts.xtol)?;
    let (smin, smax) = sigma_extremes(cell, p, lambda)?;
    if smin > opts.cert_rtol * smax {
        return Err(Error::Refinement {
            p,
            reason: format!("sigma_min / sigma_max = {:e} at lambda = {lambda}", smin / smax),
        });
    }
    Ok(BandPoint {
        p,
        lambda,
        sigma_min: smin,
        sigma_max: smax,
    })
}

/// Coarse band chart used for brackets: `lambdas[k][b]` is band `b + 1` at `p_grid[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandChart {
    pub p_grid: Vec<f64>,
    pub delta: f64,
    pub lambdas: Vec<Vec<f64>>,
}

impl BandChart {
    pub fn from_fd(shape: &ObstacleShape, delta: f64, p_grid: &[f64], n_bands: usize, nx: usize) -> Result<Self> {
        let grid = FdGrid::new(nx)?;
        let lambdas = p_grid
            .par_iter()
            .map(|&p| fd_bloch_eigs(p, delta, n_bands, grid, shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p_grid: p_grid.to_vec(),
            delta,
            lambdas,
        })
    }

    /// Half-width that keeps a bracket around band `b` clear of its neighbours.
    fn clearance(&self, k: usize, b: usize) -> f64 {
        let row = &self.lambdas[k];
        let mut d = f64::INFINITY;
        for (j, v) in row.iter().enumerate() {
            if j != b {
                d = d.min((v - row[b]).abs());
            }
        }
        d
    }
}

/// Uniform grid of `n_uniform` points on `[0, 2 pi]` merged with `n_refined`
/// points on `[pi - width, pi + width]`.
pub fn p_grid(n_uniform: usize, n_refined: usize, width: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n_uniform)
        .map(|k| 2.0 * PI * k as f64 / (n_uniform - 1) as f64)
        .chain((0..n_refined).map(|k| PI - width + 2.0 * width * k as f64 / (n_refined - 1) as f64))
        .collect();
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    g
}

pub fn default_p_grid() -> Vec<f64> {
    p_grid(41, 21, 0.15)
}

/// Bracket half-width used when neighbouring bands are (numerically) degenerate.
const DEGENERATE_WIDTH: f64 = 0.05;
const DEGENERATE_RWIDTH: f64 = 4e-3;
const MAX_WIDTH: f64 = 0.4;

/// Traces band `band_index` (1-based) over `chart.p_grid`, predicting each
/// point from the previous one plus the chart increment.
pub fn trace_band(cell: &CellOperator, band_index: usize, chart: &BandChart) -> Result<DispersionCurve> {
    if band_index == 0 || chart.lambdas.iter().any(|r| r.len() < band_index) {
        return Err(Error::Domain(format!("band {band_index} not in chart")));
    }
    if chart.p_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("p grid not sorted".into()));
    }
    let b = band_index - 1;
    let mut lambdas = Vec::with_capacity(chart.p_grid.len());
    let mut sigmas = Vec::with_capacity(chart.p_grid.len());
    let mut prev: Option<f64> = None;
    for (k, &p) in chart.p_grid.iter().enumerate() {
        let guess = match prev {
            Some(l) => l + chart.lambdas[k][b] - chart.lambdas[k - 1][b],
            None => chart.lambdas[k][b],
        };
        let clear = chart.clearance(k, b);
        let w = if clear < 2.0 * DEGENERATE_WIDTH {
            if clear < 1e-3 {
                // a double point; the bracket only has to cover the chart error
                DEGENERATE_WIDTH.max(DEGENERATE_RWIDTH * guess)
            } else {
                0.45 * clear
            }
        } else {
            (0.45 * clear).min(MAX_WIDTH)
        };
        let pt = find_band_lambda(cell, p, (guess - w, guess + w)).map_err(|e| Error::Refinement {
            p,
            reason: format!("band {band_index}: {e}"),
        })?;
        lambdas.push(pt.lambda);
        sigmas.push(pt.sigma_min);
        prev = Some(pt.lambda);
    }
    Ok(DispersionCurve {
        band_index,
        p_grid: chart.p_grid.clone(),
        lambdas,
        sigma_mins: sigmas,
        delta: cell.delta,
    })
}

/// Traces bands `1..=n_bands` concurrently.
pub fn trace_bands(cell: &CellOperator, n_bands: usize, chart: &BandChart) -> Result<Vec<DispersionCurve>> {
    (1..=n_bands)
        .into_par_iter()
        .map(|b| trace_band(cell, b, chart))
        .collect()
}

/// Double characteristic value at `p = pi` inside `window`.
pub fn dirac_point(cell: &CellOperator, window: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = window;
    let k = 17;
    let xs: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let sig = xs
        .iter()
        .map(|&x| cell.at_lambda(x)?.singular_values(PI).map(|s| s[0]))
        .collect::<Result<Vec<_>>>()?;
    let imin = (0..k).min_by(|&a, &b| sig[a].total_cmp(&sig[b])).unwrap();
    let (a, b) = (xs[imin.saturating_sub(1)], xs[(imin + 1).min(k - 1)]);
    let lambda = brent_min(cell, PI, a, b, 1e-12)?;
    let s = cell.at_lambda(lambda)?.singular_values(PI)?;
    let smax = *s.last().unwrap();
    if s[1] > CERT_RTOL * smax || imin == 0 || imin == k - 1 {
        return Err(Error::AssumptionViolation(format!(
            "no double characteristic value in ({lo}, {hi}): sigma_2 / sigma_max = {:e}",
            s[1] / smax
        )));
    }
    Ok((PI, lambda))
}

/// The interval `(lambda* - c delta |beta*|, lambda* + c delta |beta*|)`.
pub fn gap_interval(dirac: &DiracData, delta: f64, c: f64) -> Result<GapInterval> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("c = {c} outside (0, 1)")));
    }
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("delta = {delta} negative")));
    }
    if dirac.t_star.abs() <= 1e-10 * dirac.gamma_star.abs() {
        return Err(Error::DegenerateGap(dirac.t_star));
    }
    let half = c * delta * dirac.beta_star.abs();
    Ok(GapInterval {
        e1: dirac.lambda_star - half,
        e2: dirac.lambda_star + half,
        delta,
        c,
    })
}

/// Measured gap between bands 1 and 2: `(max band 1, min band 2)`.
pub fn measured_gap(b1: &DispersionCurve, b2: &DispersionCurve) -> (f64, f64) {
    (b1.max(), b2.min())
}

/// Slope of band `band_index` approaching `p = pi` from below, extrapolated
/// from one-sided differences at steps `h` and `h/2`.
pub fn slope_at_pi(cell: &CellOperator, lambda_star: f64, band_index: usize, h: f64, alpha_guess: f64) -> Result<f64> {
    // band 1 approaches from below, band 2 from above
    let sign = if band_index == 1 { 1.0 } else { -1.0 };
    let at = |dp: f64| -> Result<f64> {
        let guess = lambda_star - sign * alpha_guess * dp;
        let w = 0.45 * (2.0 * alpha_guess * dp).max(1e-6);
        Ok(find_band_lambda(cell, PI - dp, (guess - w, guess + w))?.lambda)
    };
    let s1 = (lambda_star - at(h)?) / h;
    let s2 = (lambda_star - at(h / 2.0)?) / (h / 2.0);
    Ok(2.0 * s2 - s1)
}

#[derive(Serialize)]
struct CsvRow {
    band: usize,
    delta: f64,
    p: f64,
    lambda: f64,
    sigma_min: f64,
}

/// Writes curves as CSV rows `band, delta, p, lambda, sigma_min`.
pub fn write_csv(curves: &[DispersionCurve], path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &csv_bytes(curves)?)
}

pub fn csv_bytes(curves: &[DispersionCurve]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in curves {
        for k in 0..c.p_grid.len() {
            w.serialize(CsvRow {
                band: c.band_index,
                delta: c.delta,
                p: c.p_grid[k],
                lambda: c.lambdas[k],
                sigma_min: c.sigma_mins[k],
            })
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}
