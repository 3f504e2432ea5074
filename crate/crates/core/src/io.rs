//! File formats: matrices and embeddings as headerless CSV or
//! `{"n": .., "data": [[..]]}` JSON, binary PGM heatmaps, JSON-lines traces.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub n: usize,
    pub data: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            n: m.nrows(),
            data: rows_of(m),
        }
    }

    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.n {
            return Err(Error::SizeMismatch {
                expected: self.n,
                found: self.data.len(),
            });
        }
        crate::matrices::grid_from_rows_rect(&self.data)
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a matrix from CSV or (for a `.json` extension) the JSON matrix format.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if is_json(path) {
        let parsed: MatrixJson = serde_json::from_reader(File::open(path)?)?;
        parsed.into_matrix()
    } else {
        read_csv(path)
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if is_json(path) {
        write_json(path, &MatrixJson::from_matrix(m))
    } else {
        write_csv(path, m)
    }
}

pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_csv(
        csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?,
    )
}

pub fn parse_csv_str(text: &str) -> Result<DMatrix<f64>> {
    parse_csv(
        csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes()),
    )
}

fn parse_csv<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| Error::BadParameter(format!("bad number {field:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    crate::matrices::grid_from_rows_rect(&rows)
}

/// Row-major decimal text; `f64` Display is the shortest exact round-trip form.
pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    ensure_parent(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(csv_string(m).as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn csv_string(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes a table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Gray level for a cosine in `[-1, 1]`: `floor((c + 1) * 127.5 + 0.5)`.
pub fn cosine_to_gray(c: f64) -> u8 {
    let c = if c.is_nan() { 0.0 } else { c.clamp(-1.0, 1.0) };
    ((c + 1.0) * 127.5 + 0.5).floor() as u8
}

/// Binary (P5) PGM of a cosine matrix.
pub fn pgm_bytes(cosines: &DMatrix<f64>) -> Vec<u8> {
    let (h, w) = cosines.shape();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            bytes.push(cosine_to_gray(cosines[(i, j)]));
        }
    }
    bytes
}

pub fn write_pgm(path: &Path, cosines: &DMatrix<f64>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, pgm_bytes(cosines))?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}
