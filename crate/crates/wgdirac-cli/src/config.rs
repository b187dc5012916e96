//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wgdirac::dirac::Steps;
use wgdirac::geometry::{make_disk, ObstacleShape, DELTA_MAX};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub numerics: NumericsConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Cosine coefficients of `r(theta)`; overrides `radius` when present.
    pub shape_coeffs: Option<Vec<f64>>,
    pub radius: f64,
    pub n_nodes: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            shape_coeffs: None,
            radius: 0.1,
            n_nodes: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub m_trunc: usize,
    pub fd_steps: StepsConfig,
    pub n_bands: usize,
    pub n_p_nodes: usize,
    pub m_gamma_nodes: usize,
    /// FD resolution (cells per unit length) for bracketing charts.
    pub fd_nx: usize,
    pub tolerances: Tolerances,
    /// Bloch table cache; defaults to `<output>/tables`.
    pub table_cache: Option<PathBuf>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            m_trunc: 16,
            fd_steps: StepsConfig::default(),
            n_bands: 6,
            n_p_nodes: 32,
            m_gamma_nodes: 24,
            fd_nx: 60,
            tolerances: Tolerances::default(),
            table_cache: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepsConfig {
    pub dp: f64,
    pub dl: f64,
    pub dd: f64,
}

impl Default for StepsConfig {
    fn default() -> Self {
        let s = Steps::default();
        Self {
            dp: s.dp,
            dl: s.dl,
            dd: s.dd,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative band agreement for the FD oracle.
    pub oracle_rtol: f64,
    /// Relative coefficient shift allowed under step halving.
    pub step_rtol: f64,
    /// Interface eigenvalue agreement with FD, as a fraction of the gap width.
    pub interface_gap_fraction: f64,
    pub min_r_squared: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_rtol: 5e-3,
            step_rtol: 1e-2,
            interface_gap_fraction: 0.2,
            min_r_squared: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
    pub p_grid: PGridConfig,
    pub c: f64,
    /// Number of `(p, band)` pairs compared by the `oracle` command.
    pub oracle_points: usize,
    /// FD supercell half-length in periods for interface verification.
    pub supercell_cells: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.01],
            p_grid: PGridConfig::default(),
            c: 0.9,
            oracle_points: 10,
            supercell_cells: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PGridConfig {
    pub n_uniform: usize,
    pub n_refined: usize,
    pub width: f64,
}

impl Default for PGridConfig {
    fn default() -> Self {
        Self {
            n_uniform: 41,
            n_refined: 21,
            width: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Gnuplot],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Gnuplot,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = &self.numerics;
        let t = &n.tolerances;
        for (name, v) in [
            ("tolerances.oracle_rtol", t.oracle_rtol),
            ("tolerances.step_rtol", t.step_rtol),
            ("tolerances.interface_gap_fraction", t.interface_gap_fraction),
            ("tolerances.min_r_squared", t.min_r_squared),
            ("fd_steps.dp", n.fd_steps.dp),
            ("fd_steps.dl", n.fd_steps.dl),
            ("fd_steps.dd", n.fd_steps.dd),
            ("p_grid.width", self.sweep.p_grid.width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        for &d in &self.sweep.deltas {
            if !(d > 0.0 && d < DELTA_MAX) {
                return Err(format!("delta {d} outside (0, {DELTA_MAX})"));
            }
        }
        if !(self.sweep.c > 0.0 && self.sweep.c < 1.0) {
            return Err(format!("c = {} outside (0, 1)", self.sweep.c));
        }
        if n.m_trunc < 8 {
            return Err(format!("m_trunc = {} < 8", n.m_trunc));
        }
        if self.sweep.p_grid.n_uniform < 2 || self.sweep.p_grid.n_refined < 2 {
            return Err("p_grid needs at least two uniform and two refined points".into());
        }
        if self.output.formats.is_empty() {
            return Err("no output formats".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> Steps {
        let s = self.numerics.fd_steps;
        Steps {
            dp: s.dp,
            dl: s.dl,
            dd: s.dd,
        }
    }

    pub fn shape(&self) -> wgdirac::Result<ObstacleShape> {
        let g = &self.geometry;
        match &g.shape_coeffs {
            Some(c) => ObstacleShape::new(c.clone(), g.n_nodes),
            None => make_disk(g.radius, g.n_nodes),
        }
    }

    pub fn table_dir(&self, out: &Path) -> PathBuf {
        self.numerics.table_cache.clone().unwrap_or_else(|| out.join("tables"))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.sweep.deltas, vec![0.01]);
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        assert!(RunConfig::parse("[geometry]\nradius = 0.1\ncolour = 2\n").is_err());
        assert!(RunConfig::parse("[sweep]\ndeltas = [0.07]\n").is_err());
        assert!(RunConfig::parse("[sweep]\nc = 1.0\n").is_err());
        assert!(RunConfig::parse("[numerics.tolerances]\noracle_rtol = 0.0\n").is_err());
        assert!(RunConfig::parse("[output]\nformats = [\"png\"]\n").is_err());
    }
}
