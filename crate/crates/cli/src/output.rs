//! CSV and manifest writers. Floats are written with 17 significant digits.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;
use spinamo::observables::ObservableRecord;

use crate::CliError;

pub const RECORD_HEADER: [&str; 9] = ["t", "q", "K", "F_singlet", "F_twinfock", "xi2", "pc", "norm", "n_current"];

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> Result<CsvFile, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header).map_err(|e| CliError::csv(&path, e))?;
        Ok(CsvFile { writer, path })
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn records(&self, name: &str, records: &[ObservableRecord]) -> Result<(), CliError> {
        let mut out = self.csv(name, &RECORD_HEADER)?;
        for r in records {
            out.row(&record_fields(r))?;
        }
        out.finish()
    }
}

pub struct CsvFile {
    writer: csv::Writer<File>,
    path: PathBuf,
}

impl CsvFile {
    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(|e| CliError::csv(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn record_fields(r: &ObservableRecord) -> Vec<String> {
    vec![
        float(r.t),
        float(r.q),
        r.k.to_string(),
        float(r.f_singlet),
        float(r.f_twinfock),
        float(r.xi2),
        float(r.pc),
        float(r.norm),
        float(r.n_current),
    ]
}

/// Run metadata. Everything except `runtime` is a function of (config, seed).
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub convention: &'a str,
    pub config: &'a C,
    pub runtime: Runtime,
}

#[derive(Serialize)]
pub struct Runtime {
    pub wall_clock_s: f64,
    pub threads: usize,
}
