//! Table emission as CSV and/or JSON, into a directory or onto stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Csv,
    Json,
    Both,
}

impl FromStr for Emit {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Emit::Csv),
            "json" => Ok(Emit::Json),
            "both" => Ok(Emit::Both),
            other => Err(CliError::Usage(format!("unknown --emit value `{other}`"))),
        }
    }
}

impl Emit {
    fn csv(self) -> bool {
        self != Emit::Json
    }

    fn json(self) -> bool {
        self != Emit::Csv
    }
}

/// Destination of every table a command produces. With a directory, table
/// `name` lands in `name.csv` / `name.json`; without one, tables go to
/// stdout behind a `# name` line.
#[derive(Debug, Clone)]
pub struct Sink {
    dir: Option<PathBuf>,
    emit: Emit,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, emit: Emit) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(Self { dir, emit })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Rows of a flat struct: one CSV column per field.
    pub fn table<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        if self.emit.csv() {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Usage(format!("serializing {name}: {e}")))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            self.write(name, "csv", &bytes)?;
        }
        if self.emit.json() {
            self.json(name, rows)?;
        }
        Ok(())
    }

    /// Rows with a caller-built header, for tables whose columns vary, and
    /// a separate JSON rendering.
    pub fn columns<J: Serialize + ?Sized>(&self, name: &str, header: &[String], rows: &[Vec<String>], json: &J) -> Result<()> {
        if self.emit.csv() {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| CliError::Usage(format!("serializing {name}: {e}"));
            w.write_record(header).map_err(io)?;
            for r in rows {
                w.write_record(r).map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            self.write(name, "csv", &bytes)?;
        }
        if self.emit.json() {
            self.json(name, json)?;
        }
        Ok(())
    }

    /// A single JSON document (always JSON, whatever `emit` says).
    pub fn document<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        self.json(name, value)
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, "json", &bytes)
    }

    fn write(&self, name: &str, ext: &str, bytes: &[u8]) -> Result<()> {
        match &self.dir {
            Some(d) => {
                let path = d.join(format!("{name}.{ext}"));
                fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
            }
            None => {
                let mut out = std::io::stdout().lock();
                let res = writeln!(out, "# {name}").and_then(|_| out.write_all(bytes));
                res.map_err(|e| CliError::io("<stdout>", e))
            }
        }
    }
}

/// Shortest round-trip rendering, so equal values always print equally.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
