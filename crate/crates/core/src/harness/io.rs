use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::observables::EnsembleSeries;
use crate::scaling::ScalingDataset;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Content hash of the configuration and code version.
pub fn run_id(config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(config.to_toml().as_bytes());
    h.update(b"\0");
    h.update(CODE_VERSION.as_bytes());
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub code_version: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    pub fn start(config: &RunConfig) -> Self {
        Self {
            run_id: run_id(config),
            code_version: CODE_VERSION.to_string(),
            config: config.clone(),
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: 0,
            elapsed_seconds: 0.0,
        }
    }

    pub fn finish(&mut self, outputs: &[PathBuf], dir: &Path) -> Result<()> {
        self.outputs = outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
        self.finished_unix = now();
        self.elapsed_seconds = (self.finished_unix - self.started_unix) as f64;
        write_atomic(
            &dir.join("manifest.toml"),
            &toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?,
        )
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub const SERIES_HEADER: &str = "run_id,K,epsilon,kbar,t,p2_mean,p2_sem,n_traj,saturated_flag";

/// Appends the per-time records of `series` in the series-file format.
pub fn series_records(out: &mut String, run_id: &str, series: &EnsembleSeries) {
    let p = &series.params;
    let sat = series.is_saturated() as u8;
    for (i, t) in series.times.iter().enumerate() {
        let _ = writeln!(
            out,
            "{run_id},{},{},{},{t},{},{},{},{sat}",
            p.k, p.epsilon, p.kbar, series.p2_mean[i], series.p2_sem[i], series.n_traj
        );
    }
}

pub fn write_series_csv(path: &Path, run_id: &str, series: &[EnsembleSeries]) -> Result<()> {
    let mut s = String::from(SERIES_HEADER);
    s.push('\n');
    for e in series {
        series_records(&mut s, run_id, e);
    }
    write_atomic(path, &s)
}

pub const DISTRIBUTION_HEADER: &str = "run_id,K,epsilon,kbar,t,p,density,density_sem";

pub fn write_distributions_csv(path: &Path, run_id: &str, series: &[EnsembleSeries]) -> Result<()> {
    let mut s = String::from(DISTRIBUTION_HEADER);
    s.push('\n');
    for e in series {
        let p = &e.params;
        for (t, d) in &e.distributions {
            for i in 0..d.mass.len() {
                let sem = d.mass_sem.as_ref().map_or(f64::NAN, |m| m[i] / d.bin_width);
                let _ = writeln!(
                    s,
                    "{run_id},{},{},{},{t},{},{},{sem}",
                    p.k,
                    p.epsilon,
                    p.kbar,
                    d.center(i),
                    d.density(i)
                );
            }
        }
    }
    write_atomic(path, &s)
}

pub const DATASET_HEADER: &str = "K,t,ln_lambda,sigma";

pub fn write_dataset_csv(path: &Path, d: &ScalingDataset) -> Result<()> {
    let mut s = String::from(DATASET_HEADER);
    s.push('\n');
    for i in 0..d.n_k() {
        for j in 0..d.n_t() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                d.k[i], d.t[j], d.ln_lambda[i][j], d.sigma[i][j]
            );
        }
    }
    write_atomic(path, &s)
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad number `{field}`")))
}

/// Reads a dataset file (`K,t,ln_lambda,sigma` rows, any order).
pub fn read_dataset_csv(path: &Path) -> Result<ScalingDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 fields", n + 1)));
        }
        rows.push([
            parse_f64(f[0], n + 1)?,
            parse_f64(f[1], n + 1)?,
            parse_f64(f[2], n + 1)?,
            parse_f64(f[3], n + 1)?,
        ]);
    }
    let mut k: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut t: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    k.sort_by(f64::total_cmp);
    k.dedup();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let mut ln = vec![vec![f64::NAN; t.len()]; k.len()];
    let mut sg = vec![vec![f64::NAN; t.len()]; k.len()];
    for r in &rows {
        let i = k.binary_search_by(|v| v.total_cmp(&r[0])).unwrap();
        let j = t.binary_search_by(|v| v.total_cmp(&r[1])).unwrap();
        ln[i][j] = r[2];
        sg[i][j] = r[3];
    }
    ScalingDataset::new(k, t, ln, sg)
}

/// Reads a series file back into `(K, epsilon, kbar, t, p2_mean, p2_sem)` rows.
pub fn read_series_csv(path: &Path) -> Result<Vec<[f64; 6]>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse(format!("line {}: expected 9 fields", n + 1)));
        }
        let mut r = [0.0; 6];
        for (k, v) in r.iter_mut().enumerate() {
            *v = parse_f64(f[k + 1], n + 1)?;
        }
        out.push(r);
    }
    Ok(out)
}

/// Generic delimited table with one header line.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    write_atomic(path, &s)
}

/// Serializes a fit report as TOML.
pub fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let text = toml::to_string(report).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, &text)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
