use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, PropertyCatalog};
use crate::psmiles::Psmiles;

/// One homopolymer with its sparse property labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerRecord {
    pub id: String,
    pub psmiles: Psmiles,
    pub values: BTreeMap<String, f64>,
}

/// A non-fatal ingestion issue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Warning {
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome {
    pub records: Vec<PolymerRecord>,
    pub warnings: Vec<Warning>,
}

/// Reads a CSV with a `psmiles` column, an optional `id` column and one
/// column per catalog symbol. Rows without an `id` use their PSMILES.
pub fn load_csv(path: impl AsRef<Path>, catalog: &PropertyCatalog) -> Result<LoadOutcome, PipelineError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
    read_csv(file, catalog)
}

pub fn read_csv(reader: impl Read, catalog: &PropertyCatalog) -> Result<LoadOutcome, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| PipelineError::Csv(e.to_string()))?.clone();
    let psmiles_col = headers.iter().position(|h| h == "psmiles").ok_or(PipelineError::MissingPsmilesColumn)?;
    let id_col = headers.iter().position(|h| h == "id");

    let mut warnings = Vec::new();
    let mut columns = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == psmiles_col || Some(i) == id_col {
            continue;
        }
        match catalog.get(h) {
            Some(spec) => columns.push((i, spec)),
            None => warnings.push(Warning { line: 1, message: format!("ignoring unknown column {h:?}") }),
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. }) {
                    warnings.push(Warning { line, message: "wrong number of fields; row skipped".into() });
                    continue;
                }
                return Err(PipelineError::Csv(e.to_string()));
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let psmiles = match Psmiles::parse(&row[psmiles_col]) {
            Ok(p) => p,
            Err(e) => {
                warnings.push(Warning { line, message: format!("{e}; row skipped") });
                continue;
            }
        };
        let id = match id_col.map(|c| &row[c]) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => psmiles.as_str().to_string(),
        };
        if !seen.insert(id.clone()) {
            return Err(PipelineError::DuplicateId { id, line });
        }

        let mut values = BTreeMap::new();
        let mut malformed = false;
        for &(col, spec) in &columns {
            let cell = &row[col];
            if cell.is_empty() {
                continue;
            }
            let value = match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    warnings.push(Warning {
                        line,
                        message: format!("{} = {cell:?} is not a number; row skipped", spec.symbol),
                    });
                    malformed = true;
                    break;
                }
            };
            if spec.log_scale && value <= 0.0 {
                warnings.push(Warning {
                    line,
                    message: format!(
                        "{} = {value} is not positive and cannot be log-scaled; value dropped",
                        spec.symbol
                    ),
                });
                continue;
            }
            if !spec.in_range(value) {
                warnings.push(Warning {
                    line,
                    message: format!("{} = {value} outside {}", spec.symbol, spec.range_label()),
                });
            }
            values.insert(spec.symbol.to_string(), value);
        }
        if !malformed {
            records.push(PolymerRecord { id, psmiles, values });
        }
    }
    Ok(LoadOutcome { records, warnings })
}

pub fn write_jsonl(records: &[PolymerRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<PolymerRecord>, PipelineError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Csv(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PolymerRecord = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Jsonl { line: i as u64 + 1, message: e.to_string() })?;
        if !seen.insert(rec.id.clone()) {
            return Err(PipelineError::DuplicateId { id: rec.id, line: i as u64 + 1 });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads either a CSV or a JSON-lines dataset, chosen by extension.
pub fn load_dataset(path: impl AsRef<Path>, catalog: &PropertyCatalog) -> Result<LoadOutcome, PipelineError> {
    let path = path.as_ref();
    let is_jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    if is_jsonl {
        let file = std::fs::File::open(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
        let records = read_jsonl(std::io::BufReader::new(file))?;
        Ok(LoadOutcome { records, warnings: Vec::new() })
    } else {
        load_csv(path, catalog)
    }
}

/// One labelled example for a single property.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub psmiles: String,
    pub value: f64,
}

/// Records where `property` is present, in dataset order.
pub fn property_subset(records: &[PolymerRecord], property: &str) -> Vec<Sample> {
    records
        .iter()
        .filter_map(|r| {
            r.values.get(property).map(|&value| Sample {
                id: r.id.clone(),
                psmiles: r.psmiles.as_str().to_string(),
                value,
            })
        })
        .collect()
}
