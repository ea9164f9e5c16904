//! File formats, configuration parsing and run manifests.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use qdpair::correlator::{CorrelationHistogram, CorrelationMatrix, CorrelationMode};
use qdpair::fit::Series;
use qdpair::polarization::Basis;
use qdpair::sim::CascadeParams;

pub const MANIFEST: &str = "manifest.json";
const MATRIX_INDEX: &str = "matrix.json";

/// Bad invocation or malformed user input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Parse a JSON document, reporting syntax and schema errors with their
/// line and column.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        usage(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

pub fn load_params(path: Option<&Path>) -> Result<CascadeParams> {
    let p = match path {
        Some(path) => parse_json::<CascadeParams>(path)?,
        None => CascadeParams::reference(),
    };
    p.validate().map_err(|e| usage(format!("invalid configuration: {e}")))?;
    Ok(p)
}

/// First two numeric columns of a CSV file with a header row.
pub fn read_series(path: &Path) -> Result<Series> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let cell = |k: usize| -> Result<f64> {
            let s = rec.get(k).ok_or_else(|| usage(format!("{}: row {} has fewer than two columns", path.display(), i + 2)))?;
            s.parse::<f64>().map_err(|_| usage(format!("{}: row {} column {}: {s:?} is not a number", path.display(), i + 2, k + 1)))
        };
        x.push(cell(0)?);
        y.push(cell(1)?);
    }
    Series::new(x, y).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn read_histogram(path: &Path, mode: CorrelationMode) -> Result<CorrelationHistogram> {
    let s = read_series(path)?;
    CorrelationHistogram::from_series(&s, 0, 0, mode).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Columns of equal length under a header row.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram(path: &Path, h: &CorrelationHistogram) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["bin_center_ps", "counts"])?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([h.center(i).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// JSON to `path`, or to stdout when no path is given.
pub fn emit_json(path: Option<&Path>, v: &Value) -> Result<()> {
    match path {
        Some(p) => write_json(p, v),
        None => {
            println!("{}", serde_json::to_string_pretty(v)?);
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixIndex {
    bin_ps: i64,
    mode: CorrelationMode,
    entries: Vec<MatrixEntry>,
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    xx: Basis,
    x: Basis,
    ch_a: u8,
    ch_b: u8,
    acquisition_s: f64,
    file: String,
}

/// One `bin_center_ps,counts` CSV per basis pair plus a `matrix.json` index
/// holding detector pairs and acquisition times.
pub fn write_matrix(dir: &Path, m: &CorrelationMatrix) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::new();
    let mut mode = CorrelationMode::TtrSifted;
    for (&(a, b), h) in &m.entries {
        let file = format!("{a}{b}.csv");
        write_histogram(&dir.join(&file), h)?;
        mode = h.mode;
        entries.push(MatrixEntry { xx: a, x: b, ch_a: h.ch_a, ch_b: h.ch_b, acquisition_s: m.acquisition(a, b), file });
    }
    let index = MatrixIndex { bin_ps: m.bin_ps(), mode, entries };
    write_json(&dir.join(MATRIX_INDEX), &serde_json::to_value(&index)?)
}

pub fn read_matrix(dir: &Path) -> Result<CorrelationMatrix> {
    let index: MatrixIndex = parse_json(&dir.join(MATRIX_INDEX))?;
    let mut m = CorrelationMatrix { entries: Default::default(), acquisition_s: Default::default() };
    for e in index.entries {
        let mut h = read_histogram(&dir.join(&e.file), index.mode)?;
        if h.bin_ps != index.bin_ps {
            return Err(usage(format!("{}: bin width {} ps, index says {} ps", e.file, h.bin_ps, index.bin_ps)));
        }
        h.ch_a = e.ch_a;
        h.ch_b = e.ch_b;
        h.bases = Some((e.xx, e.x));
        m.entries.insert((e.xx, e.x), h);
        m.acquisition_s.insert((e.xx, e.x), e.acquisition_s);
    }
    m.check_complete().map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    Ok(m)
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// SHA-256 of the effective configuration as compact JSON.
    pub config_sha256: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub threads: usize,
    pub wall_time_s: f64,
}

/// Collects inputs and outputs of one invocation and writes its manifest.
pub struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Directories that receive a manifest even if no file is listed in them.
    dirs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &'static str, argv: &[String]) -> Self {
        Run {
            command,
            argv: argv.to_vec(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            dirs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn output_dir(&mut self, p: &Path) {
        self.dirs.push(p.to_path_buf());
    }

    /// Write `manifest.json` into every directory that received output, the
    /// working directory when results went to stdout only.
    pub fn finish(self, config: Value, seed: Option<u64>) -> Result<()> {
        let mut dirs: BTreeSet<PathBuf> = self.dirs.iter().cloned().collect();
        for o in &self.outputs {
            let d = o.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            dirs.insert(d.to_path_buf());
        }
        if dirs.is_empty() {
            dirs.insert(PathBuf::from("."));
        }
        let m = RunManifest {
            command: self.command.to_string(),
            argv: self.argv,
            config_sha256: hex::encode(Sha256::digest(serde_json::to_vec(&config)?)),
            config,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let v = serde_json::to_value(&m)?;
        for d in dirs {
            write_json(&d.join(MANIFEST), &v)?;
        }
        Ok(())
    }
}
