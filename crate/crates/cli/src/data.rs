//! CSV input and output of count series.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use countcp::CountSeries;

use crate::CliError;

pub struct DataFile {
    pub series: CountSeries,
    pub timestamps: Option<Vec<String>>,
}

impl DataFile {
    pub fn timestamp(&self, t: usize) -> Option<&str> {
        self.timestamps.as_ref()?.get(t.checked_sub(1)?).map(String::as_str)
    }
}

/// Reads a CSV with a `count` column and an optional `timestamp` column.
pub fn read_counts(path: &Path) -> Result<DataFile, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    let count_col = headers
        .iter()
        .position(|h| h == "count")
        .ok_or_else(|| CliError::input(format!("{}: no `count` column", path.display())))?;
    let ts_col = headers.iter().position(|h| h == "timestamp");

    let mut counts = Vec::new();
    let mut stamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| CliError::input(format!("line {row}: {e}")))?;
        let cell = record.get(count_col).unwrap_or("");
        if cell.is_empty() {
            return Err(CliError::input(format!("line {row}: missing count")));
        }
        let value: u64 = cell
            .parse()
            .map_err(|_| CliError::input(format!("line {row}: {cell:?} is not a non-negative integer")))?;
        counts.push(value);
        if let Some(c) = ts_col {
            stamps.push(record.get(c).unwrap_or("").to_string());
        }
    }
    if counts.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Ok(DataFile {
        series: CountSeries::new(counts)?,
        timestamps: ts_col.map(|_| stamps),
    })
}

pub fn write_counts(path: &Path, series: &CountSeries) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "t,count")?;
    for (t, c) in series.counts().iter().enumerate() {
        writeln!(w, "{},{c}", t + 1)?;
    }
    w.flush()?;
    Ok(())
}
