//! Output directory with checksummed files and the run manifest.
//!
//! Binary dumps share one layout, all little-endian:
//!
//! ```text
//! magic    8 bytes   b"QWDENS01" (density fields) or b"QWRHO001" (one matrix)
//! dims     u64 × 2   steps × nodes, or rows × cols
//! payload  f64 pairs (re, im), row-major; density fields store each node's
//!          2×2 matrix as ρ00, ρ01, ρ10, ρ11
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use qwalk::geometry::DensityField;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const DENSITY_MAGIC: &[u8; 8] = b"QWDENS01";
pub const MATRIX_MAGIC: &[u8; 8] = b"QWRHO001";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileRecord>,
}

/// Full-precision decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileRecord>,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::File::create(&path).and_then(|mut f| f.write_all(data)).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileRecord { name: name.to_string(), bytes: data.len() as u64, sha256: hex::encode(Sha256::digest(data)) });
        Ok(())
    }

    /// Comma-separated table with one header row.
    pub fn write_table<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_io = |e: csv::Error| CliError::io(&self.root.join(name), e.into());
        w.write_record(header).map_err(to_io)?;
        for row in rows {
            w.write_record(&row).map_err(to_io)?;
        }
        let data = w.into_inner().map_err(|e| CliError::io(&self.root.join(name), e.into_error()))?;
        self.write_bytes(name, &data)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut data = serde_json::to_vec_pretty(value).expect("output serializes");
        data.push(b'\n');
        self.write_bytes(name, &data)
    }

    pub fn write_density_fields(&mut self, name: &str, fields: &[DensityField]) -> Result<(), CliError> {
        let nodes = fields.first().map_or(0, |f| f.len());
        let mut data = header(DENSITY_MAGIC, fields.len(), nodes);
        for f in fields {
            for m in f.matrices() {
                for row in &m.0 {
                    for z in row {
                        push_c64(&mut data, *z);
                    }
                }
            }
        }
        self.write_bytes(name, &data)
    }

    pub fn write_matrix(&mut self, name: &str, m: &DMatrix<C64>) -> Result<(), CliError> {
        let mut data = header(MATRIX_MAGIC, m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                push_c64(&mut data, m[(i, j)]);
            }
        }
        self.write_bytes(name, &data)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, config: &RunConfig) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files,
        };
        let path = self.root.join("manifest.json");
        let mut data = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        data.push(b'\n');
        fs::write(&path, data).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

fn header(magic: &[u8; 8], a: usize, b: usize) -> Vec<u8> {
    let mut v = magic.to_vec();
    v.extend_from_slice(&(a as u64).to_le_bytes());
    v.extend_from_slice(&(b as u64).to_le_bytes());
    v
}

fn push_c64(v: &mut Vec<u8>, z: C64) {
    v.extend_from_slice(&z.re.to_le_bytes());
    v.extend_from_slice(&z.im.to_le_bytes());
}

/// Reads a matrix written by [`OutputDir::write_matrix`].
pub fn read_matrix(data: &[u8]) -> Option<DMatrix<C64>> {
    if data.len() < 24 || &data[..8] != MATRIX_MAGIC {
        return None;
    }
    let dim = |i: usize| u64::from_le_bytes(data[i..i + 8].try_into().unwrap()) as usize;
    let (r, c) = (dim(8), dim(16));
    if data.len() != 24 + 16 * r * c {
        return None;
    }
    let f = |i: usize| f64::from_le_bytes(data[i..i + 8].try_into().unwrap());
    Some(DMatrix::from_fn(r, c, |i, j| {
        let o = 24 + 16 * (i * c + j);
        C64::new(f(o), f(o + 8))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn matrix_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let m = DMatrix::from_fn(3, 2, |i, j| C64::new(i as f64 + 0.25, -(j as f64) / 3.0));
        out.write_matrix("m.bin", &m).unwrap();
        let back = read_matrix(&fs::read(dir.path().join("m.bin")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(out.files()[0].bytes, 24 + 16 * 6);
    }
}
