use anyhow::{Context, Result};
use physfit::data::format_f64;
use physfit::DMatrix;
use serde::Serialize;

/// Writes a numeric table with a header row.
pub fn write_table(path: &str, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {path}"))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| format_f64(v)))?;
    }
    w.flush().with_context(|| format!("writing {path}"))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {path}"))
}

/// Reads a headerless CSV of numbers into a matrix.
pub fn read_matrix(path: &str) -> Result<DMatrix<f64>> {
    let mut r =
        csv::ReaderBuilder::new().has_headers(false).from_path(path).with_context(|| format!("opening {path}"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.trim().parse::<f64>().map_err(|_| physfit::Error::BadCell {
                    row: i + 1,
                    column: j.to_string(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    physfit::linalg::from_rows(&rows).with_context(|| format!("reading matrix {path}"))
}
