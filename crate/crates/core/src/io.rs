//! CSV tables and JSON sidecars.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diffusion::GridFunction;
use crate::error::{Error, Result};
use crate::kinetic::EmpiricalDistribution;
use crate::moments::MomentCurve;
use crate::real::Real;
use crate::refdist::LatticePmf;

/// Anything that can be written as a headed CSV table.
pub trait CsvTable {
    fn header(&self) -> &'static str;
    fn write_rows(&self, out: &mut dyn Write) -> io::Result<()>;

    fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "{}", self.header())?;
        self.write_rows(out)
    }

    fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

impl<T: Real> CsvTable for MomentCurve<T> {
    fn header(&self) -> &'static str {
        "tau,mean,variance,second_moment"
    }

    fn write_rows(&self, out: &mut dyn Write) -> io::Result<()> {
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.times[i], self.mean[i], self.variance[i], self.second_moment[i]
            )?;
        }
        Ok(())
    }
}

impl<T: Real> CsvTable for EmpiricalDistribution<T> {
    fn header(&self) -> &'static str {
        "k,probability"
    }

    fn write_rows(&self, out: &mut dyn Write) -> io::Result<()> {
        for (k, p) in self.probabilities() {
            writeln!(out, "{k},{p}")?;
        }
        Ok(())
    }
}

impl<T: Real> CsvTable for LatticePmf<T> {
    fn header(&self) -> &'static str {
        "k,probability"
    }

    fn write_rows(&self, out: &mut dyn Write) -> io::Result<()> {
        for (k, p) in self.probs.iter().enumerate() {
            writeln!(out, "{k},{p}")?;
        }
        Ok(())
    }
}

impl<T: Real> CsvTable for GridFunction<T> {
    fn header(&self) -> &'static str {
        "m,density"
    }

    fn write_rows(&self, out: &mut dyn Write) -> io::Result<()> {
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", self.center(j), v)?;
        }
        Ok(())
    }
}

fn io_error(path: &Path, err: io::Error) -> Error {
    Error::Io(io::Error::new(err.kind(), format!("{}: {err}", path.display())))
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub fn write_csv_file(path: &Path, table: &dyn CsvTable) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    table.write_csv(&mut out).map_err(|e| io_error(path, e))?;
    out.flush().map_err(|e| io_error(path, e))
}

/// Pretty JSON with a trailing newline. Keys keep declaration order.
pub fn write_json_file<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes `<dir>/<stem>.csv` and its sidecar `<dir>/<stem>.json`, returning
/// both paths.
pub fn write_artifact<S: Serialize + ?Sized>(
    dir: &Path,
    stem: &str,
    table: &dyn CsvTable,
    sidecar: &S,
) -> Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    write_csv_file(&csv, table)?;
    write_json_file(&json, sidecar)?;
    Ok((csv, json))
}
