#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use wgdirac::gapgreens::{load_or_build_table, BlochTable};
use wgdirac::geometry::{make_disk, ObstacleShape};

pub const LAMBDA_STAR: f64 = 52.6736490629;

pub fn disk() -> ObstacleShape {
    make_disk(0.1, 64).unwrap()
}

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bloch_tables")
}

/// Six-band, 32-node table for the default disk, cached on disk and per process.
pub fn table(delta: f64) -> Arc<BlochTable> {
    static TABLES: OnceLock<Mutex<HashMap<u64, Arc<BlochTable>>>> = OnceLock::new();
    let mut map = TABLES.get_or_init(Default::default).lock().unwrap();
    map.entry(delta.to_bits())
        .or_insert_with(|| Arc::new(load_or_build_table(&cache_dir(), delta, 6, 32, &disk()).unwrap()))
        .clone()
}

pub fn dirac() -> &'static wgdirac::dirac::DiracData {
    static D: OnceLock<wgdirac::dirac::DiracData> = OnceLock::new();
    D.get_or_init(|| {
        let shape = disk();
        let cell = wgdirac::layerops::CellOperator::new(&shape, 0.0).unwrap();
        let (_, ls) = wgdirac::bands::dirac_point(&cell, (52.3, 53.0)).unwrap();
        wgdirac::dirac::analyze(&shape, ls, &wgdirac::dirac::Steps::default()).unwrap()
    })
}

pub fn problem(delta: f64, m_nodes: usize) -> wgdirac::interface::InterfaceProblem {
    let tables = [(*table(delta)).clone(), (*table(-delta)).clone()];
    wgdirac::interface::InterfaceProblem::new(&disk(), delta, tables, m_nodes).unwrap()
}
