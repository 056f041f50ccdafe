//! Line-delimited JSON helpers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

/// Parse every non-blank line with `parse`, collecting rejections instead
/// of stopping at the first bad line.
pub fn parse_lines<R, T, F>(reader: R, mut parse: F) -> std::io::Result<(Vec<T>, Vec<LineRejection>)>
where
    R: BufRead,
    F: FnMut(&str, usize) -> Result<T, String>,
{
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line, idx + 1) {
            Ok(rec) => records.push(rec),
            Err(reason) => rejections.push(LineRejection { line: idx + 1, reason }),
        }
    }
    Ok((records, rejections))
}

pub fn read_typed<T: DeserializeOwned>(path: &Path) -> std::io::Result<(Vec<T>, Vec<LineRejection>)> {
    let reader = BufReader::new(File::open(path)?);
    parse_lines(reader, |line, _| serde_json::from_str(line).map_err(|e| e.to_string()))
}

/// Write one compact JSON object per line. Returns the number of lines.
pub fn write_all<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(items.len())
}
