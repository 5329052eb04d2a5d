//! Dataset CSV format: header `pool_id,z,x1,...,xp`, one row per individual.
//!
//! `pool_id` is an opaque key; all rows sharing it must carry the same `z`.
//! Pools are numbered in order of first appearance.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Dataset;

fn csv_error(line: u64, message: impl Into<String>) -> Error {
    Error::Csv { line, message: message.into() }
}

fn map_csv(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            csv_error(line, format!("expected {expected_len} fields, found {len}"))
        }
        other => csv_error(line, format!("{other:?}")),
    }
}

/// Parses a dataset, attaching the assumed assay accuracy.
pub fn read_dataset<R: Read>(reader: R, se: f64, sp: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(map_csv)?.clone();
    if header.len() < 2 || &header[0] != "pool_id" || &header[1] != "z" {
        return Err(csv_error(1, "header must start with `pool_id,z`"));
    }
    let p = header.len() - 2;

    let mut values: Vec<f64> = Vec::new();
    let mut pool_index: HashMap<String, usize> = HashMap::new();
    let mut pools: Vec<Vec<usize>> = Vec::new();
    let mut z: Vec<bool> = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(map_csv)?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        let label = record[0].to_string();
        let zi = match &record[1] {
            "0" => false,
            "1" => true,
            other => return Err(csv_error(line, format!("z must be 0 or 1, found `{other}`"))),
        };
        for field in record.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| csv_error(line, format!("not a number: `{field}`")))?;
            if !v.is_finite() {
                return Err(csv_error(line, format!("non-finite covariate `{field}`")));
            }
            values.push(v);
        }
        match pool_index.get(&label) {
            Some(&j) => {
                if z[j] != zi {
                    return Err(csv_error(line, format!("pool `{label}` has inconsistent z values")));
                }
                pools[j].push(i);
            }
            None => {
                pool_index.insert(label.clone(), pools.len());
                pools.push(vec![i]);
                z.push(zi);
                labels.push(label);
            }
        }
    }
    let n: usize = pools.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(csv_error(1, "no data rows"));
    }
    let x = DMatrix::from_row_slice(n, p, &values);
    Dataset::with_labels(x, pools, z, labels, se, sp)
}

/// Writes a dataset in the CSV format read by [`read_dataset`]; values use
/// the shortest representation that parses back to the same `f64`.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["pool_id".to_string(), "z".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    wtr.write_record(&header).map_err(map_csv)?;
    for i in 0..data.n() {
        let j = data.pool_of(i);
        let mut row = vec![data.pool_labels()[j].clone(), if data.z()[j] { "1" } else { "0" }.to_string()];
        row.extend(data.x().row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&row).map_err(map_csv)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes latent true statuses as `id,y_true` (ids are 1-based row numbers).
pub fn write_truth<W: Write>(writer: W, y_true: &[bool]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "y_true"]).map_err(map_csv)?;
    for (i, &y) in y_true.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), u8::from(y).to_string()]).map_err(map_csv)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an `id,y_true` file back into row order.
pub fn read_truth<R: Read>(reader: R) -> Result<Vec<bool>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(map_csv)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let y = match record.get(1) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(csv_error(line, "y_true must be 0 or 1")),
        };
        out.push(y);
    }
    Ok(out)
}
