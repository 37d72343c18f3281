use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::info;

use super::descriptor::Aggregation;
use super::table::{normalize_fips, normalize_source_key, KeyKind, RawColumn, RawTable};
use super::IngestError;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkEntry {
    pub source_key: String,
    pub fips: String,
    pub weight: f64,
}

/// Weighted mapping from zip codes / geohash cells onto counties.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Crosswalk {
    targets: BTreeMap<String, Vec<(String, f64)>>,
}

impl Crosswalk {
    pub fn from_entries(
        entries: impl IntoIterator<Item = CrosswalkEntry>,
    ) -> Result<Self, IngestError> {
        let mut targets: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for e in entries {
            let fips = normalize_fips(&e.fips).ok_or_else(|| {
                IngestError::InvalidCrosswalk(format!("bad fips {:?} for {}", e.fips, e.source_key))
            })?;
            if !(0.0..=1.0).contains(&e.weight) {
                return Err(IngestError::InvalidCrosswalk(format!(
                    "weight {} for {} -> {} outside [0, 1]",
                    e.weight, e.source_key, fips
                )));
            }
            targets
                .entry(normalize_source_key(&e.source_key))
                .or_default()
                .push((fips, e.weight));
        }
        for (key, rows) in &targets {
            let total: f64 = rows.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(IngestError::InvalidCrosswalk(format!(
                    "weights for {key} sum to {total}"
                )));
            }
        }
        Ok(Self { targets })
    }

    /// Reads a `source_key,fips,weight` CSV.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        if !path.is_file() {
            return Err(IngestError::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_reader(File::open(path)?);
        let entries: Vec<CrosswalkEntry> = reader.deserialize().collect::<Result<_, _>>()?;
        Self::from_entries(entries)
    }

    pub fn targets(&self, source_key: &str) -> Option<&[(String, f64)]> {
        self.targets.get(source_key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub matched_rows: usize,
    pub dropped_rows: usize,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    num: f64,
    den: f64,
    present: bool,
}

/// Rolls a zip- or cell-keyed table up to counties. `sum` columns are split
/// across counties by weight; `mean` columns are weight-averaged; population
/// weighted means use weight × population as the averaging weight.
pub fn aggregate_by_crosswalk(
    table: &RawTable,
    crosswalk: &Crosswalk,
) -> Result<(RawTable, AggregateReport), IngestError> {
    if table.key_kind == KeyKind::Fips {
        return Err(IngestError::WrongKeyKind {
            id: table.dataset_id.clone(),
            kind: KeyKind::Fips,
            expected: KeyKind::Zip,
        });
    }
    let weight_cols: Vec<Option<&RawColumn>> = table
        .columns
        .iter()
        .map(|c| c.weight_by.as_deref().and_then(|w| table.column(w)))
        .collect();

    let mut counties: BTreeMap<&str, Vec<Acc>> = BTreeMap::new();
    let (mut matched, mut dropped) = (0, 0);
    for (row, key) in table.keys.iter().enumerate() {
        let Some(targets) = crosswalk.targets(key) else {
            dropped += 1;
            continue;
        };
        matched += 1;
        for (fips, weight) in targets {
            let accs = counties
                .entry(fips.as_str())
                .or_insert_with(|| vec![Acc::default(); table.columns.len()]);
            for (j, col) in table.columns.iter().enumerate() {
                let Some(v) = col.values[row] else { continue };
                let acc = &mut accs[j];
                match col.aggregation {
                    Aggregation::Sum => {
                        acc.num += weight * v;
                        acc.present = true;
                    }
                    Aggregation::Mean => {
                        acc.num += weight * v;
                        acc.den += weight;
                        acc.present = true;
                    }
                    Aggregation::PopulationWeightedMean => {
                        let Some(pop) = weight_cols[j].and_then(|c| c.values[row]) else {
                            continue;
                        };
                        acc.num += weight * pop * v;
                        acc.den += weight * pop;
                        acc.present = true;
                    }
                }
            }
        }
    }
    if matched == 0 {
        return Err(IngestError::NoOverlap(table.dataset_id.clone()));
    }
    info!(dataset = %table.dataset_id, matched, dropped, counties = counties.len(), "aggregated to counties");

    let keys: Vec<String> = counties.keys().map(|k| k.to_string()).collect();
    let columns = table
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| RawColumn {
            values: counties
                .values()
                .map(|accs| {
                    let acc = accs[j];
                    match col.aggregation {
                        _ if !acc.present => None,
                        Aggregation::Sum => Some(acc.num),
                        _ if acc.den > 0.0 => Some(acc.num / acc.den),
                        _ => None,
                    }
                })
                .collect(),
            ..col.clone()
        })
        .collect();

    Ok((
        RawTable {
            dataset_id: table.dataset_id.clone(),
            key_kind: KeyKind::Fips,
            keys,
            columns,
            identifiers: Vec::new(),
            parse_warnings: table.parse_warnings,
            skipped_keys: table.skipped_keys,
        },
        AggregateReport {
            dataset: table.dataset_id.clone(),
            matched_rows: matched,
            dropped_rows: dropped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn entry(key: &str, fips: &str, weight: f64) -> CrosswalkEntry {
        CrosswalkEntry {
            source_key: key.into(),
            fips: fips.into(),
            weight,
        }
    }

    fn zip_table(keys: &[&str], agg: Aggregation, values: &[f64]) -> RawTable {
        RawTable {
            dataset_id: "z".into(),
            key_kind: KeyKind::Zip,
            keys: keys.iter().map(|k| k.to_string()).collect(),
            columns: vec![RawColumn {
                name: "v".into(),
                aggregation: agg,
                weight_by: None,
                units: None,
                values: values.iter().copied().map(Some).collect(),
            }],
            identifiers: vec![],
            parse_warnings: 0,
            skipped_keys: 0,
        }
    }

    #[test]
    fn sum_splits_by_weight() {
        let cw = Crosswalk::from_entries([entry("08540", "01001", 0.6), entry("08540", "01003", 0.4)])
            .unwrap();
        let (t, _) = aggregate_by_crosswalk(&zip_table(&["08540"], Aggregation::Sum, &[10.0]), &cw)
            .unwrap();
        assert_eq!(t.keys, vec!["01001", "01003"]);
        let v = &t.columns[0].values;
        assert!((v[0].unwrap() - 6.0).abs() < 1e-12);
        assert!((v[1].unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identity_weight_mean() {
        let cw = Crosswalk::from_entries([entry("08540", "01001", 1.0)]).unwrap();
        let (t, _) =
            aggregate_by_crosswalk(&zip_table(&["08540"], Aggregation::Mean, &[7.0]), &cw).unwrap();
        assert_eq!(t.columns[0].values, vec![Some(7.0)]);
    }

    #[test]
    fn equal_weight_mean_of_two_zips() {
        // (1*2 + 1*4) / (1 + 1) = 3
        let cw = Crosswalk::from_entries([entry("10001", "01001", 1.0), entry("10002", "01001", 1.0)])
            .unwrap();
        let (t, _) = aggregate_by_crosswalk(
            &zip_table(&["10001", "10002"], Aggregation::Mean, &[2.0, 4.0]),
            &cw,
        )
        .unwrap();
        assert_eq!(t.columns[0].values, vec![Some(3.0)]);
    }

    #[test]
    fn population_weighted_mean() {
        let cw = Crosswalk::from_entries([entry("10001", "01001", 1.0), entry("10002", "01001", 1.0)])
            .unwrap();
        let mut t = zip_table(&["10001", "10002"], Aggregation::PopulationWeightedMean, &[2.0, 4.0]);
        t.columns[0].weight_by = Some("pop".into());
        t.columns.push(RawColumn {
            name: "pop".into(),
            aggregation: Aggregation::Sum,
            weight_by: None,
            units: None,
            values: vec![Some(100.0), Some(300.0)],
        });
        let (out, _) = aggregate_by_crosswalk(&t, &cw).unwrap();
        // (100*2 + 300*4) / 400 = 3.5
        assert_eq!(out.columns[0].values, vec![Some(3.5)]);
        assert_eq!(out.columns[1].values, vec![Some(400.0)]);
    }

    #[test]
    fn unmatched_keys_are_counted_and_no_overlap_errors() {
        let cw = Crosswalk::from_entries([entry("10001", "01001", 1.0)]).unwrap();
        let (_, report) = aggregate_by_crosswalk(
            &zip_table(&["10001", "99999"], Aggregation::Sum, &[1.0, 2.0]),
            &cw,
        )
        .unwrap();
        assert_eq!((report.matched_rows, report.dropped_rows), (1, 1));
        assert!(matches!(
            aggregate_by_crosswalk(&zip_table(&["99999"], Aggregation::Sum, &[2.0]), &cw),
            Err(IngestError::NoOverlap(_))
        ));
    }

    #[test]
    fn crosswalk_rejects_bad_weights_and_fips() {
        assert!(Crosswalk::from_entries([entry("1", "01001", 0.5)]).is_err());
        assert!(Crosswalk::from_entries([entry("1", "0100x", 1.0)]).is_err());
        let cw = Crosswalk::from_entries([entry("501", "1001", 1.0)]).unwrap();
        assert_eq!(cw.targets("00501").unwrap()[0].0, "01001");
    }

    proptest! {
        #[test]
        fn sum_aggregation_conserves_total(
            values in prop::collection::vec(0.0f64..1e6, 1..20),
            splits in prop::collection::vec((0.0f64..1.0, 0usize..5, 0usize..5), 20),
        ) {
            let mut entries = Vec::new();
            let keys: Vec<String> = (0..values.len()).map(|i| format!("{:05}", 10000 + i)).collect();
            for (i, key) in keys.iter().enumerate() {
                let (w, a, b) = splits[i];
                if a == b {
                    entries.push(entry(key, &format!("0100{a}"), 1.0));
                } else {
                    entries.push(entry(key, &format!("0100{a}"), w));
                    entries.push(entry(key, &format!("0100{b}"), 1.0 - w));
                }
            }
            let cw = Crosswalk::from_entries(entries).unwrap();
            let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
            let (t, _) = aggregate_by_crosswalk(&zip_table(&key_refs, Aggregation::Sum, &values), &cw).unwrap();
            let before: f64 = values.iter().sum();
            let after: f64 = t.columns[0].values.iter().flatten().sum();
            prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
        }
    }
}
