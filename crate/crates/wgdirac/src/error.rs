use thiserror::Error;

/// Failures raised by the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("kernel error: |K^2 - lambda| = {gap:.3e} below guard {guard:.1e} (m = {m}, n = {n})")]
    SingularFrequency { m: i64, n: i64, gap: f64, guard: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),
    #[error("no kernel: sigma ratio {ratio:.3e} above threshold {threshold:.1e}")]
    NoKernel { ratio: f64, threshold: f64 },
    #[error("no band in bracket [{lo}, {hi}] at p = {p}")]
    NoBand { p: f64, lo: f64, hi: f64 },
    #[error("ambiguous bracket [{lo}, {hi}] at p = {p}: {count} dips")]
    AmbiguousBracket { p: f64, lo: f64, hi: f64, count: usize },
    #[error("band refinement failed at p = {p}: {reason}")]
    Refinement { p: f64, reason: String },
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("degenerate gap: t* = {0:.3e}")]
    DegenerateGap(f64),
    #[error("symmetry failure: residual {0:.3e}")]
    SymmetryFailure(f64),
    #[error("pairing structure violated: {0}")]
    StructureViolation(String),
    #[error("swap inconclusive: largest overlap {0:.3}")]
    SwapInconclusive(f64),
    #[error("bloch table error at p = {p}: {reason}")]
    Table { p: f64, reason: String },
    #[error("pole risk: lambda = {lambda} outside certified gap ({e1}, {e2})")]
    PoleRisk { lambda: f64, e1: f64, e2: f64 },
    #[error("no interface mode found in gap")]
    NoMode,
    #[error("uniqueness violated: {0} dips in gap")]
    UniquenessViolation(usize),
    #[error("reconstruction inconsistent: {0}")]
    Reconstruction(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
