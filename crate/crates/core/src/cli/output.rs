use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "text",
        }
    }
}

/// A command result that can be printed in each supported format.
pub(crate) trait Render: Serialize {
    fn csv(&self) -> Option<String> {
        None
    }

    fn text(&self) -> Option<String> {
        None
    }
}

pub(crate) fn render<R: Render>(value: &R, format: Format, command: &str) -> Result<String, CliError> {
    let out = match format {
        Format::Json => Some(to_json(value)?),
        Format::Csv => value.csv(),
        Format::Text => value.text(),
    };
    out.ok_or_else(|| CliError::Usage(format!("{command} does not support --format {}", format.name())))
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(format!("serializing output: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Serializes `rows` as CSV with a header taken from the field names.
pub(crate) fn csv_rows<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

/// Writes `content` to `out` when given, otherwise to `stdout`.
pub(crate) fn emit(out: Option<&Path>, stdout: &mut dyn Write, content: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => stdout.write_all(content).map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}
