use std::collections::BTreeSet;
use std::fs::File;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::descriptor::{
    Aggregation, CategoricalEncoding, ColumnKind, DatasetDescriptor, KeySpec,
};
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    Fips,
    Zip,
    /// Geohash cell derived from a lat/lon pair.
    Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub aggregation: Aggregation,
    pub weight_by: Option<String>,
    pub units: Option<String>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierColumn {
    pub name: String,
    pub values: Vec<Option<String>>,
}

/// A parsed source table. Categorical columns have already been expanded
/// into `name=value` indicator columns (or dropped), so every data column
/// is numeric.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub dataset_id: String,
    pub key_kind: KeyKind,
    pub keys: Vec<String>,
    pub columns: Vec<RawColumn>,
    pub identifiers: Vec<IdentifierColumn>,
    /// Non-empty cells that failed to parse as a finite number.
    pub parse_warnings: usize,
    /// Rows whose key could not be normalized.
    pub skipped_keys: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Zero-pads a numeric county code to five digits. Accepts a trailing `.0`
/// left behind by spreadsheet exports.
pub fn normalize_fips(raw: &str) -> Option<String> {
    pad_code(raw, 5)
}

fn pad_code(raw: &str, width: usize) -> Option<String> {
    let s = raw.trim();
    let s = s.strip_suffix(".0").unwrap_or(s);
    if s.is_empty() || s.len() > width || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(format!("{s:0>width$}"))
}

pub(super) fn normalize_source_key(raw: &str) -> String {
    pad_code(raw, 5).unwrap_or_else(|| raw.trim().to_string())
}

enum Cell {
    Missing,
    Value(f64),
    Malformed,
}

fn parse_cell(raw: &str) -> Cell {
    let s = raw.trim();
    if s.is_empty() {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        _ => Cell::Malformed,
    }
}

fn cell_key(lat: &str, lon: &str, precision: usize) -> Option<String> {
    let lat: f64 = lat.trim().parse().ok()?;
    let lon: f64 = lon.trim().parse().ok()?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return None;
    }
    geohash::encode(geohash::Coord { x: lon, y: lat }, precision).ok()
}

type KeyFn = Box<dyn Fn(&csv::StringRecord) -> Option<String>>;

/// Reads one CSV source according to its descriptor.
pub fn load_table(descriptor: &DatasetDescriptor) -> Result<RawTable, IngestError> {
    descriptor.validate()?;
    let path = &descriptor.path;
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.clone()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(File::open(path)?);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_string())
        .collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let mut missing: Vec<String> = descriptor
        .key
        .columns()
        .into_iter()
        .chain(descriptor.columns.iter().map(|c| c.name.as_str()))
        .filter(|name| position(name).is_none())
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        missing.dedup();
        return Err(IngestError::HeaderMismatch {
            path: path.clone(),
            missing,
        });
    }

    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    if records.is_empty() {
        return Err(IngestError::EmptyTable(path.clone()));
    }

    let (key_kind, key_of): (KeyKind, KeyFn) =
        match &descriptor.key {
            KeySpec::Fips { column } => {
                let i = position(column).unwrap();
                (
                    KeyKind::Fips,
                    Box::new(move |r| normalize_fips(r.get(i).unwrap_or(""))),
                )
            }
            KeySpec::Zip { column } => {
                let i = position(column).unwrap();
                (
                    KeyKind::Zip,
                    Box::new(move |r| pad_code(r.get(i).unwrap_or(""), 5)),
                )
            }
            KeySpec::Point {
                lat,
                lon,
                precision,
            } => {
                let (i, j, p) = (position(lat).unwrap(), position(lon).unwrap(), *precision);
                (
                    KeyKind::Cell,
                    Box::new(move |r| cell_key(r.get(i).unwrap_or(""), r.get(j).unwrap_or(""), p)),
                )
            }
        };

    let mut keys = Vec::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    let mut skipped_keys = 0;
    for record in &records {
        match key_of(record) {
            Some(k) => {
                keys.push(k);
                kept.push(record);
            }
            None => skipped_keys += 1,
        }
    }
    if skipped_keys > 0 {
        warn!(dataset = %descriptor.id, skipped_keys, "rows with unusable keys skipped");
    }

    let mut parse_warnings = 0;
    let mut columns = Vec::new();
    let mut identifiers = Vec::new();
    for spec in &descriptor.columns {
        let idx = position(&spec.name).unwrap();
        let raw = || kept.iter().map(move |r| r.get(idx).unwrap_or("").trim());
        match spec.kind {
            ColumnKind::Numeric => {
                let values = raw()
                    .map(|s| match parse_cell(s) {
                        Cell::Value(v) => Some(v),
                        Cell::Missing => None,
                        Cell::Malformed => {
                            parse_warnings += 1;
                            None
                        }
                    })
                    .collect();
                columns.push(RawColumn {
                    name: spec.name.clone(),
                    aggregation: spec.aggregation,
                    weight_by: spec.weight_by.clone(),
                    units: spec.units.clone(),
                    values,
                });
            }
            ColumnKind::Categorical => {
                if spec.encoding == CategoricalEncoding::Drop {
                    continue;
                }
                let levels: BTreeSet<&str> = raw().filter(|s| !s.is_empty()).collect();
                for level in levels {
                    let values = raw()
                        .map(|s| (!s.is_empty()).then(|| f64::from(u8::from(s == level))))
                        .collect();
                    columns.push(RawColumn {
                        name: format!("{}={}", spec.name, level),
                        aggregation: Aggregation::Mean,
                        weight_by: None,
                        units: Some("indicator".into()),
                        values,
                    });
                }
            }
            ColumnKind::Identifier => identifiers.push(IdentifierColumn {
                name: spec.name.clone(),
                values: raw()
                    .map(|s| (!s.is_empty()).then(|| s.to_string()))
                    .collect(),
            }),
        }
    }
    debug!(dataset = %descriptor.id, rows = keys.len(), parse_warnings, "table loaded");

    Ok(RawTable {
        dataset_id: descriptor.id.clone(),
        key_kind,
        keys,
        columns,
        identifiers,
        parse_warnings,
        skipped_keys,
    })
}
