//! CSV and manifest emission, plus a small reader for re-plotting.
//!
//! Every CSV starts with a `# schema: <name> v1` line followed by a header row.
//! Floats use Rust's shortest round-trip `Display`, so identical runs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::{RunOutput, SweepPoint};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const OBSERVER_CSV: &str = "observer.csv";
pub const CONTROLLER_CSV: &str = "controller.csv";
pub const GOALS_CSV: &str = "goals.csv";
pub const SWITCHES_CSV: &str = "switches.csv";
pub const FEATURES_CSV: &str = "features.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub fault: Option<String>,
    /// File name to sha256 hex digest.
    pub files: BTreeMap<String, String>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// In-memory CSV builder that fixes the schema line and column set up front.
struct Table {
    name: &'static str,
    writer: csv::Writer<Vec<u8>>,
    width: usize,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_err)?;
        Ok(Self { name, writer, width: header.len() })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.width, "column count for {}", self.name);
        self.writer.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<Vec<u8>> {
        let body = self.writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let mut out = format!("# schema: {} v{SCHEMA_VERSION}\n", self.name).into_bytes();
        out.extend_from_slice(&body);
        Ok(out)
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<usize>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files into `dir` and records their digests.
struct Emitter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn manifest(self, cfg: &ScenarioConfig, fault: Option<String>) -> Result<Manifest> {
        let manifest =
            Manifest { schema_version: SCHEMA_VERSION, config_hash: cfg.hash()?, seed: cfg.seed, fault, files: self.files };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.into()))?;
        fs::write(self.dir.join(MANIFEST_JSON), json)?;
        Ok(manifest)
    }
}

pub fn trajectory_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t = Table::new(
        "trajectory",
        &[
            "t", "x", "y", "z", "vx", "vy", "vz", "x_hat", "y_hat", "z_hat", "p_gb_err", "chain_bound", "inspected",
            "active", "holding",
        ],
    )?;
    for r in &out.log.trajectory {
        t.row(&[
            f(r.t),
            f(r.p[0]),
            f(r.p[1]),
            f(r.p[2]),
            f(r.v[0]),
            f(r.v[1]),
            f(r.v[2]),
            f(r.p_b_hat[0]),
            f(r.p_b_hat[1]),
            f(r.p_b_hat[2]),
            f(r.p_gb_err),
            f(r.chain_bound),
            r.inspected.to_string(),
            opt(r.active),
            r.holding.to_string(),
        ])?;
    }
    t.finish()
}

pub fn observer_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t = Table::new(
        "observer",
        &[
            "t", "id", "sigma", "r_bh", "r_bh_hat", "r_bk", "r_bk_hat", "r_kh", "r_kh_hat", "lambda_min_sigma_y",
            "cond_sigma_y", "lambda_min_yty",
        ],
    )?;
    for r in &out.log.observer {
        t.row(&[
            f(r.t),
            r.id.to_string(),
            r.sigma.as_str().to_string(),
            f(r.r_bh),
            f(r.r_bh_hat),
            f(r.r_bk),
            f(r.r_bk_hat),
            f(r.r_kh),
            f(r.r_kh_hat),
            f(r.sigma_y),
            f(r.cond),
            f(r.lambda_min_y),
        ])?;
    }
    t.finish()
}

pub fn controller_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t =
        Table::new("controller", &["t", "ux", "uy", "uz", "lambda", "phi", "h", "h_r", "range", "xpx", "c_after"])?;
    for r in &out.log.controller {
        t.row(&[
            f(r.t),
            f(r.u[0]),
            f(r.u[1]),
            f(r.u[2]),
            f(r.lambda),
            f(r.phi),
            f(r.h),
            f(r.h_r),
            f(r.range),
            f(r.xpx),
            f(r.c_after),
        ])?;
    }
    t.finish()
}

pub fn goals_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t = Table::new("goals", &["t", "ux", "uy", "uz", "cluster_sizes", "inspected", "status", "epsilon_r"])?;
    for r in &out.log.goals {
        let sizes: Vec<String> = r.cluster_sizes.iter().map(|s| s.to_string()).collect();
        t.row(&[
            f(r.t),
            f(r.u_gh[0]),
            f(r.u_gh[1]),
            f(r.u_gh[2]),
            sizes.join(";"),
            r.inspected.to_string(),
            r.status.clone(),
            f(r.epsilon_r),
        ])?;
    }
    t.finish()
}

pub fn switches_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t =
        Table::new("switches", &["t", "old", "new", "prev_bound", "bound", "required_dwell", "actual_dwell"])?;
    for e in &out.log.switches {
        t.row(&[
            f(e.t),
            opt(e.old),
            e.new.to_string(),
            f(e.prev_bound),
            f(e.bound),
            f(e.required_dwell),
            f(e.actual_dwell),
        ])?;
    }
    t.finish()
}

pub fn features_csv(out: &RunOutput) -> Result<Vec<u8>> {
    let mut t = Table::new("features", &["id", "x", "y", "z", "inspected", "first_inspected_time"])?;
    for ft in &out.log.features {
        t.row(&[
            ft.id.to_string(),
            f(ft.p_h.x),
            f(ft.p_h.y),
            f(ft.p_h.z),
            ft.inspected.to_string(),
            ft.first_inspected_time.map_or_else(String::new, f),
        ])?;
    }
    t.finish()
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<Vec<u8>> {
    let mut t = Table::new("sweep", &["gamma_c", "median_cond", "samples", "fault"])?;
    for p in points {
        t.row(&[
            f(p.gamma_c),
            p.median_cond.map_or_else(String::new, f),
            p.samples.to_string(),
            p.fault.clone().unwrap_or_default(),
        ])?;
    }
    t.finish()
}

/// Writes all run artifacts and the manifest into `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<Manifest> {
    let mut em = Emitter::new(dir)?;
    em.put(TRAJECTORY_CSV, &trajectory_csv(out)?)?;
    em.put(OBSERVER_CSV, &observer_csv(out)?)?;
    em.put(CONTROLLER_CSV, &controller_csv(out)?)?;
    em.put(GOALS_CSV, &goals_csv(out)?)?;
    em.put(SWITCHES_CSV, &switches_csv(out)?)?;
    em.put(FEATURES_CSV, &features_csv(out)?)?;
    let metrics = serde_json::to_vec_pretty(&out.metrics).map_err(|e| Error::Io(e.into()))?;
    em.put(METRICS_JSON, &metrics)?;
    em.put(CONFIG_TOML, out.config.to_toml_string()?.as_bytes())?;
    em.manifest(&out.config, out.metrics.fault.clone())
}

pub fn write_sweep(base: &ScenarioConfig, points: &[SweepPoint], dir: &Path) -> Result<Manifest> {
    let mut em = Emitter::new(dir)?;
    em.put(SWEEP_CSV, &sweep_csv(points)?)?;
    em.put(CONFIG_TOML, base.to_toml_string()?.as_bytes())?;
    let fault = points.iter().find_map(|p| p.fault.clone());
    em.manifest(base, fault)
}

/// A CSV read back by column name.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("column {name} missing from {}", self.schema)))
    }

    /// Parses a numeric column; blank cells become `NaN`.
    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[i].trim();
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("{}: bad number {cell:?} in {name}", self.schema)))
            })
            .collect()
    }

    pub fn str_column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let schema = first
        .strip_prefix("# schema: ")
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no schema line", path.display())))?
        .to_string();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { schema, header, rows })
}
