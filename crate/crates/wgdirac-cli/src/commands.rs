//! Pipeline stages behind each subcommand.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wgdirac::bands::{
    csv_bytes, dirac_point, find_band_lambda, gap_interval, measured_gap, p_grid, slope_at_pi, trace_bands,
    BandChart, DispersionCurve,
};
use wgdirac::dirac::{analyze, asymptotic_band_check, compute_coefficients, mode_swap_check, DiracData, Pairings};
use wgdirac::fdoracle::{fd_bloch_eigs, fd_supercell_interface, richardson, FdGrid};
use wgdirac::gapgreens::load_or_build_table;
use wgdirac::geometry::ObstacleShape;
use wgdirac::interface::{fit_decay, InterfaceProblem, SampleGrid};
use wgdirac::io::write_atomic;
use wgdirac::layerops::CellOperator;
use wgdirac::Error;

use crate::config::{Format, RunConfig};
use crate::plots;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Certification(String),
    Oracle(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Certification(_) => 3,
            Failure::Oracle(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Certification(m) => write!(f, "certification failure: {m}"),
            Failure::Oracle(m) => write!(f, "oracle disagreement: {m}"),
            Failure::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Geometry(_) | Error::Domain(_) => Failure::Config(e.to_string()),
            Error::Io(_) => Failure::Io(e.to_string()),
            Error::Oracle(_) => Failure::Oracle(e.to_string()),
            _ => Failure::Certification(e.to_string()),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub verify: bool,
    pub shape: ObstacleShape,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: Option<PathBuf>, verify: bool) -> Outcome<Self> {
        let shape = cfg.shape()?;
        let out = out.unwrap_or_else(|| cfg.output.directory.clone());
        Ok(Self { cfg, out, verify, shape })
    }

    /// FD resolution with at least 12 cells across the obstacle.
    fn fd_nx(&self) -> usize {
        let need = (6.0 / self.shape.max_radius()).ceil() as usize;
        let nx = self.cfg.numerics.fd_nx.max(need);
        nx + nx % 2
    }

    fn cell(&self, delta: f64) -> Outcome<CellOperator> {
        let mut c = CellOperator::new(&self.shape, delta)?;
        c.m_trunc = self.cfg.numerics.m_trunc;
        Ok(c)
    }

    fn grid(&self) -> Vec<f64> {
        let g = self.cfg.sweep.p_grid;
        p_grid(g.n_uniform, g.n_refined, g.width)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Outcome<()> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Outcome<()> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Io(e.to_string()))?;
        if let Some(at) = first_null(&v, String::new()) {
            return Err(Failure::Certification(format!("{name}: non-finite value at {at}")));
        }
        let mut bytes = serde_json::to_vec_pretty(&v).map_err(|e| Failure::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn traced(&self, delta: f64) -> Outcome<Vec<DispersionCurve>> {
        let chart = BandChart::from_fd(&self.shape, delta, &self.grid(), 3, self.fd_nx())?;
        Ok(trace_bands(&self.cell(delta)?, 2, &chart)?)
    }
}

/// Every report field is a plain number, so a JSON null means NaN or infinity.
fn first_null(v: &serde_json::Value, path: String) -> Option<String> {
    match v {
        serde_json::Value::Null => Some(path),
        serde_json::Value::Array(a) => a.iter().enumerate().find_map(|(i, x)| first_null(x, format!("{path}[{i}]"))),
        serde_json::Value::Object(o) => o.iter().find_map(|(k, x)| first_null(x, format!("{path}.{k}"))),
        _ => None,
    }
}

fn tag(delta: f64) -> String {
    format!("d{delta:.4}")
}

fn verify_failed(what: String) -> Failure {
    Failure::Oracle(format!("verification: {what}"))
}

pub fn bands(ctx: &Ctx) -> Outcome<Vec<DispersionCurve>> {
    let mut deltas = vec![0.0];
    for &d in &ctx.cfg.sweep.deltas {
        deltas.extend([d, -d]);
    }
    let mut curves = Vec::new();
    for d in deltas {
        let c = ctx.traced(d)?;
        println!(
            "bands delta {d:+.4}: band 1 in [{:.6}, {:.6}], band 2 in [{:.6}, {:.6}]",
            c[0].min(),
            c[0].max(),
            c[1].min(),
            c[1].max()
        );
        curves.extend(c);
    }
    if ctx.cfg.wants(Format::Csv) {
        ctx.write("bands.csv", &csv_bytes(&curves)?)?;
    }
    if ctx.cfg.wants(Format::Gnuplot) {
        ctx.write("bands.gp", plots::bands_script("bands.csv").as_bytes())?;
    }
    if ctx.verify {
        verify_bands(&curves)?;
    }
    Ok(curves)
}

fn verify_bands(curves: &[DispersionCurve]) -> Outcome<()> {
    for c in curves {
        for (k, &p) in c.p_grid.iter().enumerate() {
            if let Some(m) = c.p_grid.iter().position(|q| (q - (2.0 * PI - p)).abs() < 1e-12) {
                let (a, b) = (c.lambdas[k], c.lambdas[m]);
                if (a - b).abs() > 1e-7 * a {
                    return Err(verify_failed(format!(
                        "band {} delta {}: lambda({p}) = {a} but lambda(2pi - p) = {b}",
                        c.band_index, c.delta
                    )));
                }
            }
        }
    }
    for pair in curves.chunks(2) {
        let (top1, bot2) = measured_gap(&pair[0], &pair[1]);
        if top1 > bot2 + 1e-6 * bot2 {
            return Err(verify_failed(format!(
                "delta {}: band 1 reaches {top1} above band 2 minimum {bot2}",
                pair[0].delta
            )));
        }
    }
    println!("verify bands: ok");
    Ok(())
}

#[derive(Debug, Serialize)]
struct PatternResiduals {
    t_lambda_off_diagonal: f64,
    t_lambda_diagonal_mismatch: f64,
    t_p_diagonal: f64,
    t_p_off_diagonal_real: f64,
    t_p_antisymmetry: f64,
    s_off_diagonal: f64,
    s_diagonal_sum: f64,
}

impl PatternResiduals {
    fn new(pr: &Pairings) -> Self {
        let l = pr.t_lambda;
        let dl = l[0][0].norm().max(l[1][1].norm());
        let p = pr.t_p;
        let dp = p[0][1].norm().max(p[1][0].norm());
        let s = pr.s;
        let ds = s[0][0].norm().max(s[1][1].norm());
        Self {
            t_lambda_off_diagonal: l[0][1].norm().max(l[1][0].norm()) / dl,
            t_lambda_diagonal_mismatch: (l[0][0] - l[1][1]).norm() / dl,
            t_p_diagonal: p[0][0].norm().max(p[1][1].norm()) / dp,
            t_p_off_diagonal_real: p[0][1].re.abs().max(p[1][0].re.abs()) / dp,
            t_p_antisymmetry: (p[0][1] + p[1][0]).norm() / dp,
            s_off_diagonal: s[0][1].norm().max(s[1][0].norm()) / ds,
            s_diagonal_sum: (s[0][0] + s[1][1]).norm() / ds,
        }
    }

    fn rows(&self) -> [(&'static str, f64); 7] {
        [
            ("t_lambda_off_diagonal", self.t_lambda_off_diagonal),
            ("t_lambda_diagonal_mismatch", self.t_lambda_diagonal_mismatch),
            ("t_p_diagonal", self.t_p_diagonal),
            ("t_p_off_diagonal_real", self.t_p_off_diagonal_real),
            ("t_p_antisymmetry", self.t_p_antisymmetry),
            ("s_off_diagonal", self.s_off_diagonal),
            ("s_diagonal_sum", self.s_diagonal_sum),
        ]
    }
}

#[derive(Debug, Serialize)]
struct DiracReport {
    p_star: f64,
    lambda_star: f64,
    gamma_star: f64,
    theta_star: f64,
    t_star: f64,
    alpha_star: f64,
    beta_star: f64,
    pattern_residuals: PatternResiduals,
}

pub fn dirac(ctx: &Ctx) -> Outcome<DiracData> {
    let fd = fd_bloch_eigs(PI, 0.0, 2, FdGrid::new(ctx.fd_nx())?, &ctx.shape)?;
    let mid = 0.5 * (fd[0] + fd[1]);
    let cell = ctx.cell(0.0)?;
    let (_, ls) = dirac_point(&cell, (0.98 * mid, 1.02 * mid))?;
    let d = analyze(&ctx.shape, ls, &ctx.cfg.steps())?;
    let res = PatternResiduals::new(&d.pairings);
    println!(
        "dirac: lambda* = {:.10}, gamma* = {:.6e}, theta* = {:.6e}, t* = {:.6e}, alpha* = {:.6}, beta* = {:.6}",
        d.lambda_star, d.gamma_star, d.theta_star, d.t_star, d.alpha_star, d.beta_star
    );
    if ctx.cfg.wants(Format::Json) {
        let report = DiracReport {
            p_star: d.p_star,
            lambda_star: d.lambda_star,
            gamma_star: d.gamma_star,
            theta_star: d.theta_star,
            t_star: d.t_star,
            alpha_star: d.alpha_star,
            beta_star: d.beta_star,
            pattern_residuals: res,
        };
        ctx.write_json("dirac.json", &report)?;
    }
    if ctx.cfg.wants(Format::Csv) {
        let mut text = String::from("entry,residual,limit\n");
        for (name, v) in PatternResiduals::new(&d.pairings).rows() {
            text.push_str(&format!("{name},{v:e},{}\n", wgdirac::dirac::PATTERN_TOL));
        }
        ctx.write("pattern_residuals.csv", text.as_bytes())?;
    }
    if ctx.verify {
        verify_dirac(ctx, &d)?;
    }
    Ok(d)
}

fn verify_dirac(ctx: &Ctx, d: &DiracData) -> Outcome<()> {
    let s = ctx.cfg.steps();
    let half = wgdirac::dirac::Steps {
        dp: 0.5 * s.dp,
        dl: 0.5 * s.dl,
        dd: 0.5 * s.dd,
    };
    let (g, th, t, _) = compute_coefficients(&ctx.shape, d.lambda_star, &d.phi_odd, &d.phi_even, &half)?;
    let tol = ctx.cfg.numerics.tolerances.step_rtol;
    for (name, a, b) in [("gamma*", g, d.gamma_star), ("theta*", th, d.theta_star), ("t*", t, d.t_star)] {
        if (a - b).abs() > tol * b.abs() {
            return Err(verify_failed(format!("{name} moves from {b} to {a} under step halving")));
        }
    }
    let cell = ctx.cell(0.0)?;
    for band in [1, 2] {
        let slope = slope_at_pi(&cell, d.lambda_star, band, 2e-3, d.alpha_star)?.abs();
        if (slope - d.alpha_star).abs() > 0.03 * d.alpha_star {
            return Err(verify_failed(format!(
                "band {band} slope {slope} vs alpha* {}",
                d.alpha_star
            )));
        }
    }
    println!("verify dirac: ok");
    Ok(())
}

#[derive(Debug, Serialize)]
struct GapReport {
    delta: f64,
    c: f64,
    interval: [f64; 2],
    predicted_width: f64,
    measured: [f64; 2],
    measured_width: f64,
    edge_offsets: [f64; 2],
    asymptotic_max_deviation: f64,
    asymptotic_bound: f64,
}

pub fn gap(ctx: &Ctx, d: &DiracData) -> Outcome<()> {
    let mut reports = Vec::new();
    for &delta in &ctx.cfg.sweep.deltas {
        let gi = gap_interval(d, delta, ctx.cfg.sweep.c)?;
        let plus = ctx.traced(delta)?;
        let minus = ctx.traced(-delta)?;
        let mut measured = [f64::NEG_INFINITY, f64::INFINITY];
        for pair in [&plus, &minus] {
            let (top1, bot2) = measured_gap(&pair[0], &pair[1]);
            if !(top1 < d.lambda_star && d.lambda_star < bot2) {
                return Err(Failure::Certification(format!(
                    "delta {}: no gap around lambda* (band 1 max {top1}, band 2 min {bot2})",
                    pair[0].delta
                )));
            }
            for c in pair.iter() {
                if let Some(l) = c.lambdas.iter().find(|l| gi.contains(**l)) {
                    return Err(Failure::Certification(format!(
                        "delta {}: band {} value {l} inside ({}, {})",
                        c.delta, c.band_index, gi.e1, gi.e2
                    )));
                }
            }
            measured = [measured[0].max(top1), measured[1].min(bot2)];
        }
        let asym = asymptotic_band_check(d, delta, [&plus[0], &plus[1]], 0.1);
        println!(
            "gap delta {delta:.4}: I = ({:.6}, {:.6}), measured ({:.6}, {:.6}), asymptotic deviation {:.3e} (bound {:.3e})",
            gi.e1, gi.e2, measured[0], measured[1], asym.max_abs_deviation, asym.bound
        );
        if ctx.verify {
            if !asym.passed {
                return Err(verify_failed(format!(
                    "delta {delta}: closed-form deviation {} above {}",
                    asym.max_abs_deviation, asym.bound
                )));
            }
            let swap = mode_swap_check(d, delta, &ctx.shape)?;
            if !swap.swapped(0.95, 0.2) {
                return Err(verify_failed(format!("delta {delta}: band-edge overlaps {swap:?}")));
            }
        }
        reports.push(GapReport {
            delta,
            c: gi.c,
            interval: [gi.e1, gi.e2],
            predicted_width: 2.0 * delta * d.beta_star.abs(),
            measured,
            measured_width: measured[1] - measured[0],
            edge_offsets: [d.lambda_star - measured[0], measured[1] - d.lambda_star],
            asymptotic_max_deviation: asym.max_abs_deviation,
            asymptotic_bound: asym.bound,
        });
    }
    if ctx.cfg.wants(Format::Json) {
        ctx.write_json("gap.json", &reports)?;
    }
    if ctx.verify {
        println!("verify gap: ok");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct InterfaceReport {
    delta: f64,
    gap: [f64; 2],
    scan_window: [f64; 2],
    lambda_star_mode: f64,
    kappa: f64,
    r_squared: f64,
    residuals: Residuals,
    m_nodes: usize,
    sigma_min_at_root: f64,
    sigma_median: f64,
    sigma_scan: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
struct Residuals {
    continuity: f64,
    derivative_jump: f64,
    dirichlet: f64,
}

pub fn interface(ctx: &Ctx, d: &DiracData) -> Outcome<()> {
    let n = &ctx.cfg.numerics;
    let dir = ctx.cfg.table_dir(&ctx.out);
    for &delta in &ctx.cfg.sweep.deltas {
        let tp = load_or_build_table(&dir, delta, n.n_bands, n.n_p_nodes, &ctx.shape)?;
        let tm = load_or_build_table(&dir, -delta, n.n_bands, n.n_p_nodes, &ctx.shape)?;
        let pb = InterfaceProblem::new(&ctx.shape, delta, [tp, tm], n.m_gamma_nodes)?;
        let gi = gap_interval(d, delta, ctx.cfg.sweep.c)?;
        let mut res = pb.find_interface_eigenvalue(&gi)?;
        let samples = pb.reconstruct(&mut res, &SampleGrid::default())?;
        let fit = res
            .kappa
            .ok_or_else(|| Failure::Certification("decay fit missing".into()))?;
        let r = res
            .residuals
            .ok_or_else(|| Failure::Certification("residuals missing".into()))?;
        println!(
            "interface delta {delta:.4}: lambda = {:.10} in ({:.6}, {:.6}), kappa = {:.4} (R^2 {:.4}), residuals {:.2e} {:.2e} {:.2e}",
            res.lambda_star_mode, gi.e1, gi.e2, fit.kappa, fit.r_squared, r.continuity, r.derivative_jump, r.dirichlet
        );
        if !(fit.kappa > 0.0 && fit.r_squared > n.tolerances.min_r_squared) {
            return Err(Failure::Certification(format!(
                "delta {delta}: decay fit kappa {} R^2 {}",
                fit.kappa, fit.r_squared
            )));
        }
        let t = tag(delta);
        if ctx.cfg.wants(Format::Json) {
            let report = InterfaceReport {
                delta,
                gap: [gi.e1, gi.e2],
                scan_window: [res.scan_window.0, res.scan_window.1],
                lambda_star_mode: res.lambda_star_mode,
                kappa: fit.kappa,
                r_squared: fit.r_squared,
                residuals: Residuals {
                    continuity: r.continuity,
                    derivative_jump: r.derivative_jump,
                    dirichlet: r.dirichlet,
                },
                m_nodes: res.m_nodes,
                sigma_min_at_root: res.sigma_min_at_root,
                sigma_median: res.sigma_median,
                sigma_scan: res.sigma_scan.iter().map(|s| [s.0, s.1]).collect(),
            };
            ctx.write_json(&format!("interface_{t}.json"), &report)?;
        }
        if ctx.cfg.wants(Format::Csv) {
            let path = ctx.out.join(format!("field_{t}.csv"));
            samples.write_csv(&path)?;
            println!("wrote {}", path.display());
            let mut text = String::from("lambda,sigma_min\n");
            for (l, s) in &res.sigma_scan {
                text.push_str(&format!("{l},{s}\n"));
            }
            ctx.write(&format!("sigma_scan_{t}.csv"), text.as_bytes())?;
        }
        if ctx.cfg.wants(Format::Gnuplot) {
            let script = plots::interface_script(&t, res.lambda_star_mode, DIP_THRESHOLD * res.sigma_median);
            ctx.write(&format!("interface_{t}.gp"), script.as_bytes())?;
        }
        if ctx.verify {
            verify_interface(ctx, delta, (gi.e1, gi.e2), res.lambda_star_mode, fit.kappa)?;
        }
    }
    Ok(())
}

const DIP_THRESHOLD: f64 = wgdirac::interface::DIP_FRACTION;

fn verify_interface(ctx: &Ctx, delta: f64, gap: (f64, f64), lambda: f64, kappa: f64) -> Outcome<()> {
    let nx = ctx.fd_nx().max(80);
    let fd = fd_supercell_interface(
        delta,
        ctx.cfg.sweep.supercell_cells,
        FdGrid::new(nx)?,
        &ctx.shape,
        lambda,
        gap,
    )?;
    if fd.in_window.len() != 1 {
        return Err(verify_failed(format!(
            "delta {delta}: FD supercell has {} eigenvalues in the gap",
            fd.in_window.len()
        )));
    }
    let lf = fd.lambda.unwrap_or(f64::NAN);
    let tol = ctx.cfg.numerics.tolerances.interface_gap_fraction * (gap.1 - gap.0);
    if !((lf - lambda).abs() < tol) {
        return Err(verify_failed(format!("delta {delta}: FD {lf} vs boundary integral {lambda}")));
    }
    if let Some(mode) = fd.mode {
        let (kf, _) = fit_decay(&mode.column_max(), 1.0, 4.0)?;
        if (kf - kappa).abs() > 0.25 * kf {
            return Err(verify_failed(format!("delta {delta}: FD decay {kf} vs {kappa}")));
        }
    }
    println!("verify interface delta {delta:.4}: FD {lf:.8}, ok");
    Ok(())
}

#[derive(Debug, Serialize)]
struct OraclePoint {
    p: f64,
    band: usize,
    fd_coarse: f64,
    fd_fine: f64,
    richardson: f64,
    boundary_integral: f64,
    relative: f64,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    nx: [usize; 2],
    points: Vec<OraclePoint>,
    max_relative: f64,
    tolerance: f64,
}

/// Richardson-extrapolated FD bands against the boundary-integral bands at
/// `oracle_points` sampled `(p, band)` pairs of the unperturbed structure.
pub fn oracle(ctx: &Ctx) -> Outcome<()> {
    let nx = ctx.fd_nx();
    let (gc, gf) = (FdGrid::new(nx)?, FdGrid::new(2 * nx)?);
    let cell = ctx.cell(0.0)?;
    let n = ctx.cfg.sweep.oracle_points;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let p = PI * (i + 1) as f64 / (n + 1) as f64;
        let band = 1 + i % 2;
        let c = fd_bloch_eigs(p, 0.0, 3, gc, &ctx.shape)?;
        let f = fd_bloch_eigs(p, 0.0, 3, gf, &ctx.shape)?;
        let r: Vec<f64> = c.iter().zip(&f).map(|(a, b)| richardson(*a, *b)).collect();
        let target = r[band - 1];
        let clear = r
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != band - 1)
            .map(|(_, v)| (v - target).abs())
            .fold(f64::INFINITY, f64::min);
        let w = (0.02 * target).min(0.45 * clear);
        let b = find_band_lambda(&cell, p, (target - w, target + w))?.lambda;
        let relative = (b - target).abs() / b;
        points.push(OraclePoint {
            p,
            band,
            fd_coarse: c[band - 1],
            fd_fine: f[band - 1],
            richardson: target,
            boundary_integral: b,
            relative,
        });
    }
    let max_relative = points.iter().map(|q| q.relative).fold(0.0, f64::max);
    let tol = ctx.cfg.numerics.tolerances.oracle_rtol;
    println!("oracle: {n} points, max relative difference {max_relative:.3e} (tolerance {tol:.1e})");
    if ctx.cfg.wants(Format::Json) {
        let report = OracleReport {
            nx: [nx, 2 * nx],
            points,
            max_relative,
            tolerance: tol,
        };
        ctx.write_json("oracle.json", &report)?;
    }
    if !(max_relative < tol) {
        return Err(Failure::Oracle(format!("band difference {max_relative:.3e} above {tol:.1e}")));
    }
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Outcome<()> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}
