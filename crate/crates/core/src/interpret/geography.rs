use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{InterpretError, Membership};
use crate::ingest::MasterTable;
use crate::preprocess::ScalerStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub state: String,
    pub total: usize,
    /// Indexed by cluster.
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFlag {
    pub state: String,
    pub cluster: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub threshold: f64,
    /// Sorted by state.
    pub states: Vec<StateRow>,
    /// States with more than `threshold` of their clustered counties in one
    /// cluster.
    pub flagged: Vec<StateFlag>,
}

/// Cluster make-up of every state among clustered counties.
pub fn state_distribution(
    master: &MasterTable,
    membership: &Membership,
    threshold: f64,
) -> Result<StateDistribution, InterpretError> {
    let rows = membership.rows(master)?;
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (&row, &c) in rows.iter().zip(&membership.labels) {
        let state = master.counties()[row].state.as_str();
        counts.entry(state).or_insert_with(|| vec![0; membership.k])[c] += 1;
    }
    let mut flagged = Vec::new();
    let states = counts
        .into_iter()
        .map(|(state, counts)| {
            let total: usize = counts.iter().sum();
            let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            for (cluster, &fraction) in fractions.iter().enumerate() {
                if fraction > threshold {
                    flagged.push(StateFlag {
                        state: state.to_string(),
                        cluster,
                        fraction,
                    });
                }
            }
            StateRow {
                state: state.to_string(),
                total,
                counts,
                fractions,
            }
        })
        .collect();
    Ok(StateDistribution {
        threshold,
        states,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub fips: String,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub x_feature: String,
    pub y_feature: String,
    pub points: Vec<ScatterPoint>,
    /// Clustered counties missing either value.
    pub excluded: usize,
}

/// Raw (x, y) pairs of clustered counties, coloured by cluster.
pub fn scatter_pairs(
    master: &MasterTable,
    membership: &Membership,
    x_feature: &str,
    y_feature: &str,
) -> Result<Scatter, InterpretError> {
    let column = |name: &str| {
        master
            .feature(name)
            .ok_or_else(|| InterpretError::UnknownFeature(name.to_string()))
    };
    let (xs, ys) = (column(x_feature)?, column(y_feature)?);
    let rows = membership.rows(master)?;
    let mut points = Vec::new();
    let mut excluded = 0;
    for (i, (&row, &cluster)) in rows.iter().zip(&membership.labels).enumerate() {
        match (xs.values[row], ys.values[row]) {
            (Some(x), Some(y)) => points.push(ScatterPoint {
                fips: membership.fips[i].clone(),
                x,
                y,
                cluster,
            }),
            _ => excluded += 1,
        }
    }
    Ok(Scatter {
        x_feature: x_feature.to_string(),
        y_feature: y_feature.to_string(),
        points,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGap {
    pub feature: String,
    /// |z_a - z_b| in standardized units.
    pub gap: f64,
    pub raw_a: Option<f64>,
    pub raw_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyGap {
    pub fips_a: String,
    pub fips_b: String,
    /// Euclidean distance between the two counties in standardized space.
    pub total_distance: f64,
    /// Largest gap first.
    pub features: Vec<FeatureGap>,
}

/// Per-feature standardized differences between two counties over the
/// features the scaler knows. Missing cells take the scaler's fill value, as
/// they did when the counties were clustered.
pub fn county_gap(
    master: &MasterTable,
    fips_a: &str,
    fips_b: &str,
    scaler: &ScalerStats,
) -> Result<CountyGap, InterpretError> {
    let row = |fips: &str| {
        master
            .row_index(fips)
            .ok_or_else(|| InterpretError::UnknownCounty(fips.to_string()))
    };
    let (ra, rb) = (row(fips_a)?, row(fips_b)?);
    let mut features = Vec::with_capacity(scaler.columns.len());
    for col in &scaler.columns {
        let f = master
            .feature(&col.name)
            .ok_or_else(|| InterpretError::UnknownFeature(col.name.clone()))?;
        let (raw_a, raw_b) = (f.values[ra], f.values[rb]);
        let z = |raw: Option<f64>| raw.or(col.fill).map(|v| (v - col.mean) / col.std);
        let gap = match (z(raw_a), z(raw_b)) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => 0.0,
        };
        features.push(FeatureGap {
            feature: col.name.clone(),
            gap,
            raw_a,
            raw_b,
        });
    }
    let total_distance = features.iter().map(|g| g.gap * g.gap).sum::<f64>().sqrt();
    features.sort_by(|a, b| b.gap.total_cmp(&a.gap).then_with(|| a.feature.cmp(&b.feature)));
    Ok(CountyGap {
        fips_a: fips_a.to_string(),
        fips_b: fips_b.to_string(),
        total_distance,
        features,
    })
}
