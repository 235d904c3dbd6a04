//! Output directory, run manifest, CSV and VTK writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub status: RunStatus,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Output directory of one run. The manifest is written on creation and
/// rewritten whenever the run finishes.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
    clock: Instant,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config_bytes: &[u8], seed: u64, threads: usize) -> Result<Self> {
        fs::create_dir_all(root)?;
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let dir = RunDir {
            root: root.to_path_buf(),
            manifest: Manifest {
                tool: "fascicle",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config_sha256: sha256_hex(config_bytes),
                seed,
                threads,
                status: RunStatus::Running,
                started_unix,
                wall_time_s: 0.0,
                outputs: Vec::new(),
                error: None,
            },
            clock: Instant::now(),
        };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(self.root.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), contents)?;
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        self.write(name, (text + "\n").as_bytes())
    }

    pub fn finish(mut self, status: RunStatus, error: Option<&Error>) -> Result<Manifest> {
        self.manifest.status = status;
        self.manifest.wall_time_s = self.clock.elapsed().as_secs_f64();
        self.manifest.error = error.map(|e| e.to_string());
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

/// Comma-separated table; floats use the shortest round-trip form.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns);
        let mut first = true;
        for v in values {
            if !first {
                self.text.push(',');
            }
            first = false;
            let _ = write!(self.text, "{v:?}");
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Legacy-format VTK file on a uniform grid with point or cell data.
pub struct Vtk {
    text: String,
    count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtkData {
    Point,
    Cell,
}

impl Vtk {
    /// `dims` are point counts along each axis.
    pub fn structured_points(title: &str, dims: [usize; 3], origin: [f64; 3], spacing: [f64; 3], data: VtkData) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# vtk DataFile Version 3.0");
        let _ = writeln!(text, "{title}");
        let _ = writeln!(text, "ASCII");
        let _ = writeln!(text, "DATASET STRUCTURED_POINTS");
        let _ = writeln!(text, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]);
        let _ = writeln!(text, "ORIGIN {} {} {}", origin[0], origin[1], origin[2]);
        let _ = writeln!(text, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2]);
        let count = match data {
            VtkData::Point => dims.iter().product(),
            VtkData::Cell => dims.iter().map(|d| d.saturating_sub(1).max(1)).product(),
        };
        let section = match data {
            VtkData::Point => "POINT_DATA",
            VtkData::Cell => "CELL_DATA",
        };
        let _ = writeln!(text, "{section} {count}");
        Vtk { text, count }
    }

    pub fn scalars(&mut self, name: &str, values: &[f64]) -> Result<()> {
        if values.len() != self.count {
            return Err(Error::input(format!(
                "VTK field {name} has {} values for {} points",
                values.len(),
                self.count
            )));
        }
        let _ = writeln!(self.text, "SCALARS {name} double 1");
        let _ = writeln!(self.text, "LOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(self.text, "{v:?}");
        }
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}
