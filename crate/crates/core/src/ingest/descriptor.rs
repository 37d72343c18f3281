use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// How rows of a source table are keyed to geography.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeySpec {
    /// Already county level.
    Fips { column: String },
    /// Postal code, mapped to counties through a crosswalk.
    Zip { column: String },
    /// Latitude / longitude pair, bucketed into a geohash cell of `precision`
    /// characters and mapped to counties through a crosswalk.
    Point {
        lat: String,
        lon: String,
        #[serde(default = "default_geohash_precision")]
        precision: usize,
    },
}

fn default_geohash_precision() -> usize {
    5
}

impl KeySpec {
    pub fn columns(&self) -> Vec<&str> {
        match self {
            KeySpec::Fips { column } | KeySpec::Zip { column } => vec![column.as_str()],
            KeySpec::Point { lat, lon, .. } => vec![lat.as_str(), lon.as_str()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    #[default]
    Numeric,
    Categorical,
    Identifier,
}

/// How a column is combined when several source rows land in one county.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    PopulationWeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    #[default]
    OneHot,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Population column used by `population_weighted_mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_by: Option<String>,
    #[serde(default)]
    pub encoding: CategoricalEncoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            aggregation: Aggregation::Mean,
            weight_by: None,
            encoding: CategoricalEncoding::OneHot,
            units: None,
        }
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn identifier(name: impl Into<String>) -> Self {
        Self {
            kind: ColumnKind::Identifier,
            ..Self::numeric(name)
        }
    }

    pub fn categorical(name: impl Into<String>, encoding: CategoricalEncoding) -> Self {
        Self {
            kind: ColumnKind::Categorical,
            encoding,
            ..Self::numeric(name)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub path: PathBuf,
    pub key: KeySpec,
    pub columns: Vec<ColumnSpec>,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |reason: String| IngestError::InvalidDescriptor {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty dataset id".into()));
        }
        let key_cols = self.key.columns();
        let mut seen = HashSet::new();
        for col in &self.columns {
            if key_cols.contains(&col.name.as_str()) {
                return Err(invalid(format!(
                    "key column {} must not be declared as a data column",
                    col.name
                )));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(invalid(format!("column {} declared twice", col.name)));
            }
        }
        for col in &self.columns {
            match (col.aggregation, &col.weight_by) {
                (Aggregation::PopulationWeightedMean, None) => {
                    return Err(invalid(format!(
                        "column {} uses population_weighted_mean without weight_by",
                        col.name
                    )))
                }
                (_, Some(w)) => {
                    let numeric = self
                        .columns
                        .iter()
                        .any(|c| &c.name == w && c.kind == ColumnKind::Numeric);
                    if !numeric {
                        return Err(invalid(format!(
                            "weight_by column {w} of {} is not a declared numeric column",
                            col.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}
