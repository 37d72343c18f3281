use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::info;

use super::descriptor::Aggregation;
use super::table::{normalize_fips, KeyKind, RawTable};
use super::IngestError;

pub const MASTER_FILE: &str = "master.csv";
pub const DICTIONARY_FILE: &str = "dictionary.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountyRecord {
    pub fips: String,
    pub state: String,
    pub county_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    /// Id of the dataset the column came from.
    pub source: String,
    pub aggregation: Aggregation,
    pub units: Option<String>,
    pub values: Vec<Option<f64>>,
}

impl FeatureColumn {
    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.missing() as f64 / self.values.len() as f64
    }
}

/// The fused county table. Rows are sorted by FIPS; features are stored
/// column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterTable {
    counties: Vec<CountyRecord>,
    features: Vec<FeatureColumn>,
}

impl MasterTable {
    pub fn new(
        counties: Vec<CountyRecord>,
        features: Vec<FeatureColumn>,
    ) -> Result<Self, IngestError> {
        let mut fips = HashSet::new();
        for c in &counties {
            if !fips.insert(c.fips.as_str()) {
                return Err(IngestError::MalformedMaster(format!("duplicate fips {}", c.fips)));
            }
        }
        let mut names = HashSet::new();
        for f in &features {
            if !names.insert(f.name.as_str()) {
                return Err(IngestError::MalformedMaster(format!(
                    "duplicate feature {}",
                    f.name
                )));
            }
            if f.values.len() != counties.len() {
                return Err(IngestError::MalformedMaster(format!(
                    "feature {} has {} values for {} counties",
                    f.name,
                    f.values.len(),
                    counties.len()
                )));
            }
        }
        let mut table = Self { counties, features };
        table.sort_rows();
        Ok(table)
    }

    fn sort_rows(&mut self) {
        if self.counties.windows(2).all(|w| w[0].fips < w[1].fips) {
            return;
        }
        let mut order: Vec<usize> = (0..self.counties.len()).collect();
        order.sort_by(|&a, &b| self.counties[a].fips.cmp(&self.counties[b].fips));
        self.counties = order.iter().map(|&i| self.counties[i].clone()).collect();
        for f in &mut self.features {
            f.values = order.iter().map(|&i| f.values[i]).collect();
        }
    }

    pub fn counties(&self) -> &[CountyRecord] {
        &self.counties
    }

    pub fn features(&self) -> &[FeatureColumn] {
        &self.features
    }

    pub fn n_rows(&self) -> usize {
        self.counties.len()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureColumn> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn row_index(&self, fips: &str) -> Option<usize> {
        self.counties
            .binary_search_by(|c| c.fips.as_str().cmp(fips))
            .ok()
    }

    pub fn value(&self, row: usize, feature: usize) -> Option<f64> {
        self.features[feature].values[row]
    }

    pub fn dictionary(&self) -> DataDictionary {
        DataDictionary {
            features: self
                .features
                .iter()
                .map(|f| {
                    (
                        f.name.clone(),
                        FeatureMeta {
                            source: f.source.clone(),
                            aggregation: f.aggregation,
                            units: f.units.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Keeps the features for which `keep` returns true.
    pub(crate) fn retain_features(&mut self, mut keep: impl FnMut(&FeatureColumn) -> bool) {
        self.features.retain(|f| keep(f));
    }

    /// Keeps the rows whose index satisfies `keep`.
    pub(crate) fn retain_rows(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.counties.retain(|_| *it.next().unwrap());
        for f in &mut self.features {
            let mut it = keep.iter();
            f.values.retain(|_| *it.next().unwrap());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub source: String,
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

/// Sidecar metadata for `master.csv`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataDictionary {
    pub features: BTreeMap<String, FeatureMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupEntry {
    pub dataset: String,
    pub fips: String,
    /// Zero-based data row of the discarded duplicate.
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JoinReport {
    pub tables: usize,
    pub counties: usize,
    pub dedup: Vec<DedupEntry>,
    /// Feature names that collided across datasets and were suffixed.
    pub renamed: Vec<String>,
}

const STATE_COLUMN: &str = "state";
const NAME_COLUMN: &str = "county_name";

/// Outer-joins county-keyed tables on FIPS. Duplicate FIPS rows within a
/// table keep their first occurrence. Tables are processed in dataset-id
/// order so the result does not depend on input order.
pub fn join_on_fips(tables: &[RawTable]) -> Result<(MasterTable, JoinReport), IngestError> {
    if tables.is_empty() {
        return Err(IngestError::NoTables);
    }
    if let Some(t) = tables.iter().find(|t| t.key_kind != KeyKind::Fips) {
        return Err(IngestError::WrongKeyKind {
            id: t.dataset_id.clone(),
            kind: t.key_kind,
            expected: KeyKind::Fips,
        });
    }
    let mut ordered: Vec<&RawTable> = tables.iter().collect();
    ordered.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));

    let mut report = JoinReport {
        tables: tables.len(),
        ..JoinReport::default()
    };

    // First occurrence of every fips within each table.
    let firsts: Vec<HashMap<&str, usize>> = ordered
        .iter()
        .map(|t| {
            let mut first = HashMap::new();
            for (row, key) in t.keys.iter().enumerate() {
                if first.contains_key(key.as_str()) {
                    info!(dataset = %t.dataset_id, fips = %key, row, "duplicate fips dropped");
                    report.dedup.push(DedupEntry {
                        dataset: t.dataset_id.clone(),
                        fips: key.clone(),
                        row,
                    });
                } else {
                    first.insert(key.as_str(), row);
                }
            }
            first
        })
        .collect();

    let universe: Vec<&str> = firsts
        .iter()
        .flat_map(|m| m.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let counties = universe
        .iter()
        .map(|&fips| {
            let lookup = |name: &str| {
                ordered.iter().zip(&firsts).find_map(|(t, first)| {
                    let row = *first.get(fips)?;
                    t.identifiers
                        .iter()
                        .find(|c| c.name == name)?
                        .values[row]
                        .clone()
                })
            };
            CountyRecord {
                fips: fips.to_string(),
                state: lookup(STATE_COLUMN)
                    .or_else(|| state_from_fips(fips).map(str::to_string))
                    .unwrap_or_default(),
                county_name: lookup(NAME_COLUMN).unwrap_or_default(),
            }
        })
        .collect();

    let mut name_count: HashMap<&str, usize> = HashMap::new();
    for t in &ordered {
        for c in &t.columns {
            *name_count.entry(c.name.as_str()).or_default() += 1;
        }
    }
    let mut used = HashSet::new();
    let mut features = Vec::new();
    for (t, first) in ordered.iter().zip(&firsts) {
        for col in &t.columns {
            let mut name = if name_count[col.name.as_str()] > 1 {
                report.renamed.push(col.name.clone());
                format!("{}__{}", col.name, t.dataset_id)
            } else {
                col.name.clone()
            };
            let base = name.clone();
            let mut n = 2;
            while !used.insert(name.clone()) {
                name = format!("{base}_{n}");
                n += 1;
            }
            features.push(FeatureColumn {
                name,
                source: t.dataset_id.clone(),
                aggregation: col.aggregation,
                units: col.units.clone(),
                values: universe
                    .iter()
                    .map(|fips| first.get(fips).and_then(|&row| col.values[row]))
                    .collect(),
            });
        }
    }
    report.renamed.sort();
    report.renamed.dedup();
    report.counties = universe.len();

    Ok((MasterTable::new(counties, features)?, report))
}

/// Writes `master.csv` and `dictionary.json` into `dir`.
pub fn write_master(master: &MasterTable, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(MASTER_FILE))?);
    write_master_csv(master, &mut out)?;
    out.flush()?;
    let mut dict = serde_json::to_string_pretty(&master.dictionary())?;
    dict.push('\n');
    std::fs::write(dir.join(DICTIONARY_FILE), dict)?;
    Ok(())
}

pub(crate) fn write_master_csv(master: &MasterTable, out: impl Write) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["fips", "state", "county_name"];
    header.extend(master.feature_names());
    w.write_record(&header)?;
    for (row, county) in master.counties.iter().enumerate() {
        let mut record = vec![
            county.fips.clone(),
            county.state.clone(),
            county.county_name.clone(),
        ];
        // f64 Display is the shortest string that parses back to the same value.
        record.extend(
            master
                .features
                .iter()
                .map(|f| f.values[row].map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a master table written by [`write_master`].
pub fn read_master(dir: &Path) -> Result<MasterTable, IngestError> {
    let csv_path = dir.join(MASTER_FILE);
    let dict_path = dir.join(DICTIONARY_FILE);
    for p in [&csv_path, &dict_path] {
        if !p.is_file() {
            return Err(IngestError::MissingFile(p.clone()));
        }
    }
    let dictionary: DataDictionary =
        serde_json::from_reader(BufReader::new(File::open(&dict_path)?))?;
    read_master_csv(File::open(&csv_path)?, &dictionary)
}

pub(crate) fn read_master_csv(
    input: impl Read,
    dictionary: &DataDictionary,
) -> Result<MasterTable, IngestError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[..3] != ["fips", "state", "county_name"] {
        return Err(IngestError::MalformedMaster(
            "header must start with fips,state,county_name".into(),
        ));
    }
    let names = &header[3..];
    let mut counties = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for record in r.records() {
        let record = record?;
        let fips = normalize_fips(&record[0])
            .ok_or_else(|| IngestError::MalformedMaster(format!("bad fips {:?}", &record[0])))?;
        counties.push(CountyRecord {
            fips,
            state: record[1].to_string(),
            county_name: record[2].to_string(),
        });
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = record.get(j + 3).unwrap_or("");
            col.push(if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    IngestError::MalformedMaster(format!("bad value {cell:?} in {}", names[j]))
                })?)
            });
        }
    }
    let features = names
        .iter()
        .zip(columns)
        .map(|(name, values)| {
            let meta = dictionary.features.get(name);
            FeatureColumn {
                name: name.clone(),
                source: meta.map(|m| m.source.clone()).unwrap_or_default(),
                aggregation: meta.map(|m| m.aggregation).unwrap_or_default(),
                units: meta.and_then(|m| m.units.clone()),
                values,
            }
        })
        .collect();
    MasterTable::new(counties, features)
}

/// Postal abbreviation for the state part of a county FIPS code.
#[rustfmt::skip]
pub(crate) fn state_from_fips(fips: &str) -> Option<&'static str> {
    let code = match fips.get(..2)? {
        "01" => "AL", "02" => "AK", "04" => "AZ", "05" => "AR", "06" => "CA",
        "08" => "CO", "09" => "CT", "10" => "DE", "11" => "DC", "12" => "FL",
        "13" => "GA", "15" => "HI", "16" => "ID", "17" => "IL", "18" => "IN",
        "19" => "IA", "20" => "KS", "21" => "KY", "22" => "LA", "23" => "ME",
        "24" => "MD", "25" => "MA", "26" => "MI", "27" => "MN", "28" => "MS",
        "29" => "MO", "30" => "MT", "31" => "NE", "32" => "NV", "33" => "NH",
        "34" => "NJ", "35" => "NM", "36" => "NY", "37" => "NC", "38" => "ND",
        "39" => "OH", "40" => "OK", "41" => "OR", "42" => "PA", "44" => "RI",
        "45" => "SC", "46" => "SD", "47" => "TN", "48" => "TX", "49" => "UT",
        "50" => "VT", "51" => "VA", "53" => "WA", "54" => "WV", "55" => "WI",
        "56" => "WY", "72" => "PR",
        _ => return None,
    };
    Some(code)
}
