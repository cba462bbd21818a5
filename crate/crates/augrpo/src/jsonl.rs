//! Line-delimited JSON records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Appends one record per line; `flush_each` makes every record durable
/// before the next one is produced.
pub struct JsonlWriter {
    out: BufWriter<File>,
    flush_each: bool,
}

impl JsonlWriter {
    pub fn create(path: &Path, flush_each: bool) -> CliResult<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = File::create(path).map_err(|e| CliError::at(path, e))?;
        Ok(JsonlWriter { out: BufWriter::new(f), flush_each })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        if self.flush_each {
            self.out.flush()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_all<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = JsonlWriter::create(path, false)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Reads every non-blank line; errors name the file and line number.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = File::open(path).map_err(|e| CliError::at(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::at(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
