//! Small helpers around the `csv` crate shared by the readers and writers.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::MONTHS;

/// `{prefix}01` .. `{prefix}12`.
pub(crate) fn month_columns(prefix: &str) -> Vec<String> {
    (1..=MONTHS).map(|j| format!("{prefix}{j:02}")).collect()
}

pub(crate) fn reader_from_path(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn expect_header<R: std::io::Read>(
    path: &Path,
    reader: &mut csv::Reader<R>,
    expected: &[String],
) -> Result<()> {
    let found = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let matches = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a == b);
    if matches {
        Ok(())
    } else {
        Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

pub(crate) fn parse_scalar<T: Scalar>(field: &str, column: &str) -> std::result::Result<T, String> {
    let v: T = field
        .parse()
        .map_err(|_| format!("column `{column}`: `{field}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("column `{column}`: `{field}` is not finite"))
    }
}

pub(crate) fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

pub(crate) fn writer_to_path(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn finish<W: Write>(path: &Path, mut writer: csv::Writer<W>) -> Result<()> {
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Formats a scalar with Rust's shortest round-trip representation.
pub(crate) fn fmt<T: Scalar>(v: T) -> String {
    v.to_string()
}
