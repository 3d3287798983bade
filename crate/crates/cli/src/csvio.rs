//! CSV load/save for series data: UTF-8, header row, optional leading
//! timestamp column, float cells. Errors cite row and column so a broken
//! export is findable without a hex editor.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fldmamba_core::data::{SeriesDataset, SplitPolicy};
use fldmamba_core::tensor::Tensor;

use crate::config::SplitChoice;
use crate::{data_error, CliError};

/// Loads a series CSV. The first column is treated as a timestamp when its
/// first data cell does not parse as a number; every other cell must be a
/// finite float.
pub fn load_csv(
    path: &Path,
    name: &str,
    granularity: &str,
    policy: SplitPolicy,
) -> Result<SeriesDataset, CliError> {
    let (values, timestamps) = read_table(path)?;
    SeriesDataset::new(name, values, timestamps, granularity, policy).map_err(data_error)
}

/// Like `load_csv`, but resolves the split choice against the row count,
/// which an `Auto` choice cannot know before the file is read.
pub fn load_csv_with_choice(
    path: &Path,
    name: &str,
    granularity: &str,
    choice: SplitChoice,
) -> Result<SeriesDataset, CliError> {
    let (values, timestamps) = read_table(path)?;
    let policy = choice.policy(values.shape[0]);
    SeriesDataset::new(name, values, timestamps, granularity, policy).map_err(data_error)
}

fn read_table(path: &Path) -> Result<(Tensor, Option<Vec<String>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_error(format!("{}: {e}", path.display())))?;

    let n_cols = reader
        .headers()
        .map_err(|e| data_error(format!("{}: header: {e}", path.display())))?
        .len();
    if n_cols == 0 {
        return Err(data_error(format!("{}: empty header", path.display())));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut timestamps: Vec<String> = Vec::new();
    let mut has_timestamp = false;
    for (i, record) in reader.records().enumerate() {
        // Header is line 1, so data row i sits on line i + 2.
        let line = i + 2;
        let record = record.map_err(|e| data_error(format!("{}: {e}", path.display())))?;
        if record.len() != n_cols {
            return Err(data_error(format!(
                "{}: line {line}: {} cells, header has {n_cols}",
                path.display(),
                record.len()
            )));
        }
        if i == 0 {
            has_timestamp = record[0].parse::<f64>().is_err();
            if has_timestamp && n_cols == 1 {
                return Err(data_error(format!(
                    "{}: only a timestamp column, no values",
                    path.display()
                )));
            }
        }
        let skip = usize::from(has_timestamp);
        if has_timestamp {
            timestamps.push(record[0].to_string());
        }
        let mut row = Vec::with_capacity(n_cols - skip);
        for (c, cell) in record.iter().enumerate().skip(skip) {
            let v: f64 = cell.parse().map_err(|_| {
                data_error(format!(
                    "{}: line {line}, column {}: `{cell}` is not a number",
                    path.display(),
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(data_error(format!(
                    "{}: line {line}, column {}: non-finite value {v}",
                    path.display(),
                    c + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_error(format!("{}: no data rows", path.display())));
    }

    let t = rows.len();
    let v = rows[0].len();
    let values = Tensor::new(rows.into_iter().flatten().collect(), &[t, v])
        .map_err(|e| data_error(e))?;
    Ok((values, has_timestamp.then_some(timestamps)))
}

/// Writes a dataset back out. Floats print in Rust's shortest roundtrip
/// form, so load(save(ds)) reproduces every bit.
pub fn save_csv(path: &Path, ds: &SeriesDataset) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| data_error(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let v = ds.n_variates();
    let mut run = || -> std::io::Result<()> {
        if ds.timestamps.is_some() {
            write!(w, "date")?;
            for i in 0..v {
                write!(w, ",v{i}")?;
            }
        } else {
            for i in 0..v {
                if i > 0 {
                    write!(w, ",")?;
                }
                write!(w, "v{i}")?;
            }
        }
        writeln!(w)?;
        for row in 0..ds.len() {
            if let Some(ts) = &ds.timestamps {
                write!(w, "{},", ts[row])?;
            }
            for col in 0..v {
                if col > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{}", ds.values.values[row * v + col])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    run().map_err(|e| data_error(format!("{}: {e}", path.display())))
}
