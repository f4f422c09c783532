//! File interchange: the CSV batch contract (`u1,...,um,y1,...,yp`, one
//! sample per row, 17-significant-digit decimals) and the versioned JSON
//! model file with row-major matrices.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{N2sidError, Result};
use crate::model::{IoBatch, StateSpaceModel};

fn format_value(v: f64) -> String {
    // 17 significant digits round-trip f64 exactly
    format!("{:.16e}", v)
}

/// Write a batch in the sample-major CSV contract.
pub fn write_csv<W: Write>(writer: W, io: &IoBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = io.num_inputs();
    let p = io.num_outputs();
    let mut header = Vec::with_capacity(m + p);
    for i in 0..m {
        header.push(format!("u{}", i + 1));
    }
    for i in 0..p {
        header.push(format!("y{}", i + 1));
    }
    w.write_record(&header)
        .map_err(|e| N2sidError::Parse { line: 1, msg: e.to_string() })?;
    for k in 0..io.len() {
        let mut rec = Vec::with_capacity(m + p);
        for ch in 0..m {
            rec.push(format_value(io.u[(ch, k)]));
        }
        for ch in 0..p {
            rec.push(format_value(io.y[(ch, k)]));
        }
        w.write_record(&rec)
            .map_err(|e| N2sidError::Parse { line: k + 2, msg: e.to_string() })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, io: &IoBatch) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, io)
}

/// Read a batch from the CSV contract. Columns whose header starts with `u`
/// are inputs, `y` are outputs; a file without `u` columns is output-only.
pub fn read_csv<R: Read>(reader: R) -> Result<IoBatch> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r
        .headers()
        .map_err(|e| N2sidError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let mut u_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h.starts_with('u') {
            u_cols.push(i);
        } else if h.starts_with('y') {
            y_cols.push(i);
        } else {
            return Err(N2sidError::Parse {
                line: 1,
                msg: format!("unknown column '{h}', expected u*/y* headers"),
            });
        }
    }
    if y_cols.is_empty() {
        return Err(N2sidError::Parse {
            line: 1,
            msg: "no output columns found".into(),
        });
    }
    let mut u_data: Vec<f64> = Vec::new();
    let mut y_data: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (row_idx, record) in r.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| N2sidError::Parse { line, msg: e.to_string() })?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| N2sidError::Parse { line, msg: "missing field".into() })?
                .trim()
                .parse::<f64>()
                .map_err(|e| N2sidError::Parse { line, msg: e.to_string() })
        };
        for &i in &u_cols {
            u_data.push(parse(i)?);
        }
        for &i in &y_cols {
            y_data.push(parse(i)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(N2sidError::Parse { line: 2, msg: "no data rows".into() });
    }
    // stored column-by-column: sample k occupies a contiguous run
    let u = DMatrix::from_vec(u_cols.len(), n, u_data);
    let y = DMatrix::from_vec(y_cols.len(), n, y_data);
    IoBatch::new(u, y)
}

pub fn read_csv_file(path: &Path) -> Result<IoBatch> {
    let file = std::fs::File::open(path).map_err(|e| N2sidError::Parse {
        line: 0,
        msg: format!("{}: {e}", path.display()),
    })?;
    read_csv(file)
}

/// Versioned on-disk model format with explicit row-major matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(N2sidError::Parse {
            line: 0,
            msg: format!("matrix is not {nrows}x{ncols}"),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn from_model(model: &StateSpaceModel) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            n: model.order(),
            m: model.num_inputs(),
            p: model.num_outputs(),
            a: to_rows(&model.a),
            b: to_rows(&model.b),
            c: to_rows(&model.c),
            d: to_rows(&model.d),
            k: to_rows(&model.k),
        }
    }

    pub fn to_model(&self) -> Result<StateSpaceModel> {
        if self.schema_version != Self::SCHEMA_VERSION {
            return Err(N2sidError::Parse {
                line: 0,
                msg: format!("unsupported schema version {}", self.schema_version),
            });
        }
        StateSpaceModel::new(
            from_rows(&self.a, self.n, self.n)?,
            from_rows(&self.b, self.n, self.m)?,
            from_rows(&self.c, self.p, self.n)?,
            from_rows(&self.d, self.p, self.m)?,
            from_rows(&self.k, self.n, self.p)?,
        )
    }
}

pub fn write_model_file(path: &Path, model: &StateSpaceModel) -> Result<()> {
    let file = ModelFile::from_model(model);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| N2sidError::Numerical(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<StateSpaceModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| N2sidError::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    file.to_model()
}
