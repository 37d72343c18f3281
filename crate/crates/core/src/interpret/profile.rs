use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Membership, InterpretError};
use crate::config::OutcomeFeature;
use crate::ingest::MasterTable;

/// Composite scores closer than this are treated as tied.
const COMPOSITE_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rating {
    High,
    Medium,
    Low,
}

impl Rating {
    /// Rating for a 0-based competition rank among `k` clusters (0 = largest
    /// mean). Tertiles in between; the last place is always Low.
    fn from_position(position: usize, k: usize) -> Self {
        if k == 1 {
            return Rating::Medium;
        }
        if position == 0 {
            return Rating::High;
        }
        if position == k - 1 {
            return Rating::Low;
        }
        match 3 * position / k {
            0 => Rating::High,
            1 => Rating::Medium,
            _ => Rating::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    /// `None` when no county in the cluster reports the feature.
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub present: usize,
    /// 1 = largest mean. Clusters with equal means share the better rank.
    pub rank: Option<usize>,
    pub rating: Option<Rating>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub feature: String,
    pub overall_mean: Option<f64>,
    pub overall_std: Option<f64>,
    /// Indexed by cluster.
    pub clusters: Vec<ClusterStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub features: Vec<FeatureProfile>,
}

impl ClusterProfile {
    pub fn feature(&self, name: &str) -> Option<&FeatureProfile> {
        self.features.iter().find(|f| f.feature == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,cluster,mean,median,std,present,rank,rating\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for f in &self.features {
            for (c, s) in f.clusters.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    f.feature,
                    c,
                    opt(s.mean),
                    opt(s.median),
                    opt(s.std),
                    s.present,
                    s.rank.map(|r| r.to_string()).unwrap_or_default(),
                    s.rating.map(|r| format!("{r:?}")).unwrap_or_default(),
                );
            }
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Per-cluster summary statistics of every master feature in raw units.
/// Missing cells are skipped.
pub fn cluster_profile(
    master: &MasterTable,
    membership: &Membership,
) -> Result<ClusterProfile, InterpretError> {
    let rows = membership.rows(master)?;
    let k = membership.k;
    let features = master
        .features()
        .iter()
        .map(|f| {
            let mut by_cluster = vec![Vec::new(); k];
            let mut all = Vec::new();
            for (&row, &c) in rows.iter().zip(&membership.labels) {
                if let Some(v) = f.values[row] {
                    by_cluster[c].push(v);
                    all.push(v);
                }
            }
            let (overall_mean, overall_std) = mean_std(&all);
            let mut clusters: Vec<ClusterStats> = by_cluster
                .iter()
                .map(|values| {
                    let (mean, std) = mean_std(values);
                    ClusterStats {
                        mean,
                        median: median(values),
                        std,
                        present: values.len(),
                        rank: None,
                        rating: None,
                    }
                })
                .collect();
            let means: Vec<Option<f64>> = clusters.iter().map(|s| s.mean).collect();
            let ranked = means.iter().filter(|m| m.is_some()).count();
            for (c, stats) in clusters.iter_mut().enumerate() {
                let Some(m) = means[c] else { continue };
                let position = means.iter().flatten().filter(|&&o| o > m).count();
                stats.rank = Some(position + 1);
                stats.rating = Some(Rating::from_position(position, ranked));
            }
            FeatureProfile {
                feature: f.name.clone(),
                overall_mean,
                overall_std,
                clusters,
            }
        })
        .collect();
    Ok(ClusterProfile {
        k,
        sizes: membership.sizes(),
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerformanceLabel {
    HighPerforming,
    MediumPerforming,
    LowPerforming,
}

impl PerformanceLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerformanceLabel::HighPerforming => "high-performing",
            PerformanceLabel::MediumPerforming => "medium-performing",
            PerformanceLabel::LowPerforming => "low-performing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceLabeling {
    pub outcome_features: Vec<OutcomeFeature>,
    /// Per cluster: mean over outcome features of the standardized cluster
    /// mean, sign-flipped so that larger is better.
    pub composite: Vec<f64>,
    /// Per cluster: 1 = best.
    pub ranks: Vec<usize>,
    pub labels: Vec<PerformanceLabel>,
}

impl PerformanceLabeling {
    pub fn label(&self, cluster: usize) -> Option<PerformanceLabel> {
        self.labels.get(cluster).copied()
    }
}

/// Ranks clusters by their outcome features. Rank 1 is high-performing, the
/// last rank low-performing, everything between medium-performing.
pub fn performance_label(
    profile: &ClusterProfile,
    outcomes: &[OutcomeFeature],
) -> Result<PerformanceLabeling, InterpretError> {
    let k = profile.k;
    let mut composite = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for outcome in outcomes {
        let f = profile
            .feature(&outcome.name)
            .ok_or_else(|| InterpretError::UnknownFeature(outcome.name.clone()))?;
        let (Some(mean), Some(std)) = (f.overall_mean, f.overall_std) else {
            continue;
        };
        let sign = if outcome.lower_is_better { -1.0 } else { 1.0 };
        for (c, stats) in f.clusters.iter().enumerate() {
            if let Some(m) = stats.mean {
                let z = if std > 0.0 { (m - mean) / std } else { 0.0 };
                composite[c] += sign * z;
                counts[c] += 1;
            }
        }
    }
    for (v, &n) in composite.iter_mut().zip(&counts) {
        if n > 0 {
            *v /= n as f64;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        if (composite[a] - composite[b]).abs() <= COMPOSITE_TIE {
            a.cmp(&b)
        } else {
            composite[b].total_cmp(&composite[a])
        }
    });
    let mut ranks = vec![0; k];
    for (position, &c) in order.iter().enumerate() {
        ranks[c] = position + 1;
    }
    let labels = ranks
        .iter()
        .map(|&r| match r {
            1 => PerformanceLabel::HighPerforming,
            r if r == k => PerformanceLabel::LowPerforming,
            _ => PerformanceLabel::MediumPerforming,
        })
        .collect();
    Ok(PerformanceLabeling {
        outcome_features: outcomes.to_vec(),
        composite,
        ranks,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Aggregation, CountyRecord, FeatureColumn};

    fn master(columns: &[(&str, Vec<Option<f64>>)]) -> MasterTable {
        let n = columns[0].1.len();
        let counties = (0..n)
            .map(|i| CountyRecord {
                fips: format!("{:05}", 1000 + i),
                state: "AL".into(),
                county_name: format!("County {i}"),
            })
            .collect();
        let features = columns
            .iter()
            .map(|(name, values)| FeatureColumn {
                name: name.to_string(),
                source: "t".into(),
                aggregation: Aggregation::Mean,
                units: None,
                values: values.clone(),
            })
            .collect();
        MasterTable::new(counties, features).unwrap()
    }

    fn membership(labels: Vec<usize>, k: usize) -> Membership {
        Membership {
            k,
            fips: (0..labels.len()).map(|i| format!("{:05}", 1000 + i)).collect(),
            labels,
        }
    }

    fn outcome(name: &str, lower_is_better: bool) -> OutcomeFeature {
        OutcomeFeature {
            name: name.into(),
            lower_is_better,
        }
    }

    #[test]
    fn three_ratings() {
        let m = master(&[("f", vec![Some(30.0), Some(10.0), Some(20.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 1, 2], 3)).unwrap();
        let ratings: Vec<Rating> = p.features[0].clusters.iter().map(|s| s.rating.unwrap()).collect();
        assert_eq!(ratings, vec![Rating::High, Rating::Low, Rating::Medium]);
    }

    #[test]
    fn two_clusters_high_low() {
        let m = master(&[("f", vec![Some(1.0), Some(5.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 1], 2)).unwrap();
        let ratings: Vec<Rating> = p.features[0].clusters.iter().map(|s| s.rating.unwrap()).collect();
        assert_eq!(ratings, vec![Rating::Low, Rating::High]);
    }

    #[test]
    fn ties_share_the_higher_rating() {
        let m = master(&[("f", vec![Some(5.0), Some(5.0), Some(1.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 1, 2], 3)).unwrap();
        let s = &p.features[0].clusters;
        assert_eq!((s[0].rank, s[1].rank, s[2].rank), (Some(1), Some(1), Some(3)));
        assert_eq!(s[1].rating, Some(Rating::High));
    }

    #[test]
    fn stats_skip_missing_and_use_raw_units() {
        let m = master(&[("f", vec![Some(1.0), None, Some(3.0), Some(10.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 0, 0, 1], 2)).unwrap();
        let c0 = &p.features[0].clusters[0];
        assert_eq!((c0.mean, c0.median, c0.std, c0.present), (Some(2.0), Some(2.0), Some(1.0), 2));
        assert_eq!(p.sizes, vec![3, 1]);
    }

    #[test]
    fn misaligned_membership() {
        let m = master(&[("f", vec![Some(1.0), Some(2.0)])]);
        let bad = Membership {
            k: 2,
            fips: vec!["99999".into(), "01000".into()],
            labels: vec![0, 1],
        };
        assert!(matches!(
            cluster_profile(&m, &bad),
            Err(InterpretError::Alignment(_))
        ));
    }

    #[test]
    fn single_outcome_lower_is_better() {
        let m = master(&[("pos", vec![Some(1.0), Some(2.0), Some(3.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 1, 2], 3)).unwrap();
        let l = performance_label(&p, &[outcome("pos", true)]).unwrap();
        assert_eq!(
            l.labels,
            vec![
                PerformanceLabel::HighPerforming,
                PerformanceLabel::MediumPerforming,
                PerformanceLabel::LowPerforming
            ]
        );
    }

    #[test]
    fn opposite_outcomes_tie_by_cluster_index() {
        let m = master(&[
            ("a", vec![Some(1.0), Some(3.0)]),
            ("b", vec![Some(3.0), Some(1.0)]),
        ]);
        let p = cluster_profile(&m, &membership(vec![0, 1], 2)).unwrap();
        let l = performance_label(&p, &[outcome("a", true), outcome("b", true)]).unwrap();
        assert_eq!(l.ranks, vec![1, 2]);
    }

    #[test]
    fn rescaling_an_outcome_keeps_labels() {
        let raw = vec![Some(0.2), Some(0.1), Some(0.4), Some(0.3)];
        let scaled: Vec<Option<f64>> = raw.iter().map(|v| v.map(|x| x * 1000.0)).collect();
        let labels = |values: Vec<Option<f64>>| {
            let m = master(&[("pos", values), ("deaths", vec![Some(4.0), Some(1.0), Some(2.0), Some(3.0)])]);
            let p = cluster_profile(&m, &membership(vec![0, 1, 2, 2], 3)).unwrap();
            performance_label(&p, &[outcome("pos", true), outcome("deaths", true)])
                .unwrap()
                .labels
        };
        assert_eq!(labels(raw), labels(scaled));
    }

    #[test]
    fn unknown_outcome() {
        let m = master(&[("f", vec![Some(1.0), Some(2.0)])]);
        let p = cluster_profile(&m, &membership(vec![0, 1], 2)).unwrap();
        assert_eq!(
            performance_label(&p, &[outcome("nope", true)]).unwrap_err(),
            InterpretError::UnknownFeature("nope".into())
        );
    }
}
