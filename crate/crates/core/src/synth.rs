//! Synthetic fixtures with known structure: isotropic Gaussian blobs and a
//! multi-table county corpus with three latent county profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use crate::ingest::{
    Aggregation, CategoricalEncoding, ColumnSpec, DatasetDescriptor, KeySpec,
};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub n_points: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub sigma: f64,
    /// Minimum Euclidean distance between any two centers.
    pub min_separation: f64,
    /// Centers are drawn uniformly from `[-half_width, half_width]^dim`.
    pub half_width: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_points: 300,
            dim: 10,
            n_clusters: 3,
            sigma: 0.5,
            min_separation: 5.0,
            half_width: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub points: Array2<f64>,
    /// Generating cluster of every point; point i belongs to `i % n_clusters`.
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
}

pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> Blobs {
    assert!(spec.n_clusters >= 1 && spec.dim >= 1, "empty blob spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, d) = (spec.n_clusters, spec.dim);
    let mut centers = Array2::zeros((k, d));
    let mut placed = 0;
    let mut attempts = 0;
    while placed < k {
        attempts += 1;
        assert!(attempts < 100_000, "cannot place {k} centers {} apart", spec.min_separation);
        let candidate: Vec<f64> = (0..d)
            .map(|_| rng.random_range(-spec.half_width..=spec.half_width))
            .collect();
        let far_enough = (0..placed).all(|c| {
            let dist2: f64 = centers
                .row(c)
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist2.sqrt() >= spec.min_separation
        });
        if far_enough {
            for (j, v) in candidate.into_iter().enumerate() {
                centers[[placed, j]] = v;
            }
            placed += 1;
        }
    }
    let labels: Vec<usize> = (0..spec.n_points).map(|i| i % k).collect();
    let mut points = Array2::zeros((spec.n_points, d));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            points[[i, j]] = centers[[label, j]] + spec.sigma * z;
        }
    }
    Blobs {
        points,
        labels,
        centers,
    }
}

/// Latent county profile. High-performing counties have the lowest COVID
/// outcome rates.
pub const LATENT_HIGH: usize = 0;
pub const LATENT_MEDIUM: usize = 1;
pub const LATENT_LOW: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub counties_per_state: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            counties_per_state: 60,
            seed: 2021,
        }
    }
}

/// Paths and ground truth of a written corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub descriptors: PathBuf,
    pub crosswalk: PathBuf,
    pub tables: usize,
    /// Latent profile of every county, by FIPS.
    pub latent: BTreeMap<String, usize>,
    /// The state with most of its counties in the low profile.
    pub concentrated_state: String,
    /// Counties left mostly blank, which the row filter should remove.
    pub sparse_counties: Vec<String>,
    /// Counties written twice to the demographics table.
    pub duplicated: Vec<String>,
    /// Columns that are mostly missing.
    pub sparse_columns: Vec<String>,
}

const STATES: [(&str, &str, [f64; 3]); 5] = [
    ("Avalon", "81", [0.5, 0.3, 0.2]),
    ("Borealis", "82", [0.3, 0.5, 0.2]),
    ("Cascadia", "83", [0.4, 0.3, 0.3]),
    ("Dorado", "84", [0.1, 0.2, 0.7]),
    ("Estrella", "85", [0.3, 0.4, 0.3]),
];

/// A generated numeric feature: `base + scale * (effect[profile] + NOISE * z)`
/// with standard normal z, floored at `floor`.
const NOISE: f64 = 0.4;

struct Feature {
    name: &'static str,
    effects: [f64; 3],
    base: f64,
    scale: f64,
    floor: f64,
    decimals: usize,
}

const fn feature(
    name: &'static str,
    effects: [f64; 3],
    base: f64,
    scale: f64,
    decimals: usize,
) -> Feature {
    Feature {
        name,
        effects,
        base,
        scale,
        floor: 0.0,
        decimals,
    }
}

struct County {
    fips: String,
    state: &'static str,
    name: String,
    latent: usize,
    lat: f64,
    lon: f64,
    sparse: bool,
}

struct Writer<'a> {
    dir: &'a Path,
    rng: ChaCha8Rng,
    descriptors: Vec<DatasetDescriptor>,
}

impl Writer<'_> {
    fn value(&mut self, f: &Feature, latent: usize) -> String {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let v = (f.base + f.scale * (f.effects[latent] + NOISE * z)).max(f.floor);
        format!("{v:.*}", f.decimals)
    }

    fn write(&self, file: &str, body: &str) -> Result<()> {
        std::fs::write(self.dir.join(file), body)?;
        Ok(())
    }

    fn describe(&mut self, id: &str, key: KeySpec, columns: Vec<ColumnSpec>) {
        self.descriptors.push(DatasetDescriptor {
            id: id.to_string(),
            path: PathBuf::from(format!("{id}.csv")),
            key,
            columns,
        });
    }

    /// A county-keyed table of generated features. Sparse counties get
    /// empty cells.
    fn fips_table(&mut self, id: &str, counties: &[County], features: &[Feature]) -> Result<()> {
        let mut body = String::from("fips");
        for f in features {
            let _ = write!(body, ",{}", f.name);
        }
        body.push('\n');
        for c in counties {
            body.push_str(&c.fips);
            for f in features {
                let v = self.value(f, c.latent);
                if c.sparse {
                    body.push(',');
                } else {
                    let _ = write!(body, ",{v}");
                }
            }
            body.push('\n');
        }
        self.write(&format!("{id}.csv"), &body)?;
        let columns = features.iter().map(|f| ColumnSpec::numeric(f.name)).collect();
        self.describe(id, KeySpec::Fips { column: "fips".into() }, columns);
        Ok(())
    }
}

/// Writes an 18-table corpus plus `descriptors.json`, `crosswalk.csv` and
/// `config.json` into `dir`.
///
/// Counties fall into three latent profiles; one state holds 70% of its
/// counties in the low profile, and the high profile has the lowest
/// positivity. The tables carry the usual defects: duplicate rows, `N/A`
/// cells, FIPS written as floats, mostly-empty columns and counties, a
/// categorical column, and zip- and coordinate-keyed sources that go through
/// the crosswalk.
pub fn write_county_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Corpus> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut counties = Vec::new();
    for (s, &(state, prefix, mix)) in STATES.iter().enumerate() {
        let n = spec.counties_per_state;
        let high = (mix[0] * n as f64).round() as usize;
        let medium = (mix[1] * n as f64).round() as usize;
        let mut latent: Vec<usize> = (0..n)
            .map(|i| {
                if i < high {
                    LATENT_HIGH
                } else if i < high + medium {
                    LATENT_MEDIUM
                } else {
                    LATENT_LOW
                }
            })
            .collect();
        latent.shuffle(&mut rng);
        for (j, l) in latent.into_iter().enumerate() {
            counties.push(County {
                fips: format!("{prefix}{:03}", 2 * j + 1),
                state,
                name: format!("{state} County {}", j + 1),
                latent: l,
                lat: 30.0 + 3.0 * s as f64 + 0.3 * (j / 10) as f64,
                lon: -100.0 + 0.3 * (j % 10) as f64,
                sparse: false,
            });
        }
    }
    let sparse_counties: Vec<String> = counties
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| i % 61 == 7)
        .map(|(_, c)| {
            c.sparse = true;
            c.fips.clone()
        })
        .collect();

    let mut w = Writer {
        dir,
        rng: ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1)),
        descriptors: Vec::new(),
    };

    // demographics: identifiers plus three features; a few duplicate rows
    // whose values must be ignored.
    let demo = [
        Feature {
            floor: 1000.0,
            ..feature("population", [0.0, 1.5, -0.5], 60000.0, 20000.0, 0)
        },
        feature("median_age", [-0.5, -1.5, 1.0], 40.0, 3.0, 1),
        Feature {
            floor: 1.0,
            ..feature("pop_density", [-0.5, 2.0, -1.0], 150.0, 60.0, 1)
        },
    ];
    let mut body = String::from("fips,state,county_name,population,median_age,pop_density\n");
    let mut duplicated = Vec::new();
    for (i, c) in counties.iter().enumerate() {
        let values: Vec<String> = demo.iter().map(|f| w.value(f, c.latent)).collect();
        let _ = writeln!(
            body,
            "{},{},{},{}",
            c.fips,
            c.state,
            c.name,
            values.join(",")
        );
        if i % 97 == 3 {
            duplicated.push(c.fips.clone());
        }
    }
    for fips in &duplicated {
        let _ = writeln!(body, "{fips},Nowhere,Duplicate,-1,-1,-1");
    }
    w.write("demographics.csv", &body)?;
    w.describe(
        "demographics",
        KeySpec::Fips { column: "fips".into() },
        vec![
            ColumnSpec::identifier("state"),
            ColumnSpec::identifier("county_name"),
            ColumnSpec::numeric("population").with_aggregation(Aggregation::Sum),
            ColumnSpec::numeric("median_age"),
            ColumnSpec::numeric("pop_density"),
        ],
    );

    w.fips_table(
        "education",
        &counties,
        &[
            feature("hs_education_pct", [1.0, 0.5, -1.5], 0.86, 0.04, 4),
            feature("bachelors_pct", [1.5, 1.0, -1.2], 0.25, 0.06, 4),
        ],
    )?;

    // income: a handful of N/A cells.
    let income = [
        feature("median_income", [1.2, 1.5, -1.5], 55000.0, 8000.0, 0),
        feature("poverty_rate", [-1.0, -1.0, 1.5], 0.14, 0.03, 4),
    ];
    let mut body = String::from("fips,median_income,poverty_rate\n");
    for (i, c) in counties.iter().enumerate() {
        let a = w.value(&income[0], c.latent);
        let b = w.value(&income[1], c.latent);
        let a = if c.sparse {
            String::new()
        } else if i % 53 == 11 {
            "N/A".to_string()
        } else {
            a
        };
        let b = if c.sparse { String::new() } else { b };
        let _ = writeln!(body, "{},{a},{b}", c.fips);
    }
    w.write("income.csv", &body)?;
    w.describe(
        "income",
        KeySpec::Fips { column: "fips".into() },
        vec![
            ColumnSpec::numeric("median_income"),
            ColumnSpec::numeric("poverty_rate"),
        ],
    );

    w.fips_table(
        "employment",
        &counties,
        &[
            feature("unemployment_rate", [-0.8, 0.5, 1.2], 0.05, 0.01, 4),
            feature("essential_workers_pct", [-1.2, 1.0, 0.8], 0.30, 0.04, 4),
        ],
    )?;
    w.fips_table(
        "health_insurance",
        &counties,
        &[feature("uninsured_rate", [-1.5, 0.0, 1.2], 0.10, 0.03, 4)],
    )?;
    w.fips_table(
        "chronic_conditions",
        &counties,
        &[
            feature("diabetes_rate", [-1.5, 0.0, 1.5], 0.11, 0.015, 4),
            feature("obesity_rate", [-1.2, -0.3, 1.5], 0.32, 0.03, 4),
        ],
    )?;
    w.fips_table(
        "vaccination",
        &counties,
        &[feature("vaccination_rate", [1.5, -0.3, -1.5], 0.55, 0.08, 4)],
    )?;
    w.fips_table(
        "mask_usage",
        &counties,
        &[feature("mask_usage_score", [1.5, 0.3, -1.5], 0.60, 0.08, 4)],
    )?;
    w.fips_table(
        "election",
        &counties,
        &[feature("biden_vote_share", [0.5, 2.0, -1.2], 0.45, 0.08, 4)],
    )?;
    w.fips_table(
        "covid_cases",
        &counties,
        &[
            feature("positivity_rate", [-1.5, 0.3, 1.5], 0.10, 0.02, 5),
            feature("cases_per_person", [-1.5, 0.2, 1.5], 0.12, 0.02, 5),
        ],
    )?;
    w.fips_table(
        "covid_deaths",
        &counties,
        &[feature("deaths_per_person", [-1.5, 0.0, 1.5], 0.002, 0.0004, 6)],
    )?;
    w.fips_table(
        "broadband",
        &counties,
        &[feature("broadband_pct", [1.2, 1.2, -1.2], 0.78, 0.06, 4)],
    )?;

    // air quality: uninformative, FIPS written the way spreadsheets export
    // them.
    let pm25 = feature("pm25", [0.0, 0.0, 0.0], 8.0, 1.5, 2);
    let mut body = String::from("county_fips,pm25\n");
    for c in &counties {
        let v = w.value(&pm25, c.latent);
        let v = if c.sparse { String::new() } else { v };
        let _ = writeln!(body, "{}.0,{v}", c.fips);
    }
    w.write("air_quality.csv", &body)?;
    w.describe(
        "air_quality",
        KeySpec::Fips {
            column: "county_fips".into(),
        },
        vec![ColumnSpec::numeric("pm25")],
    );

    // housing: a categorical column expanded to indicators.
    let crowded = feature("crowded_housing_pct", [-0.5, 1.5, 0.0], 0.03, 0.01, 4);
    let mut body = String::from("fips,crowded_housing_pct,metro\n");
    for c in &counties {
        let v = w.value(&crowded, c.latent);
        let urban_p = if c.latent == LATENT_MEDIUM { 0.8 } else { 0.2 };
        let metro = if w.rng.random_bool(urban_p) { "urban" } else { "rural" };
        if c.sparse {
            let _ = writeln!(body, "{},,", c.fips);
        } else {
            let _ = writeln!(body, "{},{v},{metro}", c.fips);
        }
    }
    w.write("housing.csv", &body)?;
    w.describe(
        "housing",
        KeySpec::Fips { column: "fips".into() },
        vec![
            ColumnSpec::numeric("crowded_housing_pct"),
            ColumnSpec::categorical("metro", CategoricalEncoding::OneHot),
        ],
    );

    // federal education investment: reported for 30% of counties only.
    let invest = feature("federal_education_investment", [0.5, 0.5, -0.5], 2.0e6, 5.0e5, 0);
    let mut body = String::from("fips,federal_education_investment\n");
    for (i, c) in counties.iter().enumerate() {
        let v = w.value(&invest, c.latent);
        let v = if i % 10 < 3 && !c.sparse { v } else { String::new() };
        let _ = writeln!(body, "{},{v}", c.fips);
    }
    w.write("federal_education.csv", &body)?;
    w.describe(
        "federal_education",
        KeySpec::Fips { column: "fips".into() },
        vec![ColumnSpec::numeric("federal_education_investment").with_aggregation(Aggregation::Sum)],
    );

    // Zip codes: two per county; every tenth county shares its second zip
    // with the next county.
    let mut crosswalk = String::from("source_key,fips,weight\n");
    let mut zips: Vec<(String, usize)> = Vec::new();
    for (i, c) in counties.iter().enumerate() {
        for d in 0..2 {
            let zip = format!("{:05}", 10000 + 2 * i + d);
            let shared = d == 1 && i % 10 == 9 && i + 1 < counties.len();
            if shared {
                let _ = writeln!(crosswalk, "{zip},{},0.5", c.fips);
                let _ = writeln!(crosswalk, "{zip},{},0.5", counties[i + 1].fips);
            } else {
                let _ = writeln!(crosswalk, "{zip},{},1", c.fips);
            }
            zips.push((zip, i));
        }
    }

    // testing sites per zip (summed to counties) and mobility change (mean).
    let sites = feature("test_sites", [1.0, 1.0, -1.0], 3.0, 1.0, 0);
    let mobility = feature("mobility_change", [-1.0, 1.5, 0.5], 0.5, 0.05, 4);
    let mut testing = String::from("zip,test_sites\n");
    let mut moving = String::from("zip_code,mobility_change\n");
    for (zip, i) in &zips {
        let c = &counties[*i];
        if c.sparse {
            continue;
        }
        let _ = writeln!(testing, "{zip},{}", w.value(&sites, c.latent));
        let _ = writeln!(moving, "{zip},{}", w.value(&mobility, c.latent));
    }
    w.write("testing_sites.csv", &testing)?;
    w.describe(
        "testing_sites",
        KeySpec::Zip { column: "zip".into() },
        vec![ColumnSpec::numeric("test_sites").with_aggregation(Aggregation::Sum)],
    );
    w.write("mobility.csv", &moving)?;
    w.describe(
        "mobility",
        KeySpec::Zip {
            column: "zip_code".into(),
        },
        vec![ColumnSpec::numeric("mobility_change")],
    );

    // hospitals by coordinates: beds are summed, ICU occupancy is reported
    // by 40% of counties.
    let beds = feature("hospital_beds", [0.5, 1.0, -1.0], 80.0, 20.0, 0);
    let icu = feature("icu_occupancy", [-0.5, 0.5, 1.0], 0.7, 0.1, 3);
    let mut hospitals = String::from("lat,lon,hospital_beds,icu_occupancy\n");
    let mut cells: BTreeMap<String, String> = BTreeMap::new();
    for (i, c) in counties.iter().enumerate() {
        if c.sparse {
            continue;
        }
        let count = 1 + i % 3;
        for _ in 0..count {
            let lat = c.lat + w.rng.random_range(-0.01..0.01);
            let lon = c.lon + w.rng.random_range(-0.01..0.01);
            let cell = geohash::encode(geohash::Coord { x: lon, y: lat }, 5)
                .expect("coordinates in range");
            cells.insert(cell, c.fips.clone());
            let b = w.value(&beds, c.latent);
            let o = w.value(&icu, c.latent);
            let o = if i % 5 < 2 { o } else { String::new() };
            let _ = writeln!(hospitals, "{lat:.5},{lon:.5},{b},{o}");
        }
    }
    for (cell, fips) in &cells {
        let _ = writeln!(crosswalk, "{cell},{fips},1");
    }
    w.write("hospitals.csv", &hospitals)?;
    w.describe(
        "hospitals",
        KeySpec::Point {
            lat: "lat".into(),
            lon: "lon".into(),
            precision: 5,
        },
        vec![
            ColumnSpec::numeric("hospital_beds").with_aggregation(Aggregation::Sum),
            ColumnSpec::numeric("icu_occupancy"),
        ],
    );
    w.write("crosswalk.csv", &crosswalk)?;

    let tables = w.descriptors.len();
    let descriptors = dir.join("descriptors.json");
    std::fs::write(
        &descriptors,
        serde_json::to_string_pretty(&w.descriptors)? + "\n",
    )?;
    let config = dir.join("config.json");
    let config_body = json!({
        "descriptors": "descriptors.json",
        "crosswalk": "crosswalk.csv",
        "seed": spec.seed,
        "output_dir": "bundle",
        "display_features": [
            "positivity_rate", "cases_per_person", "deaths_per_person",
            "vaccination_rate", "mask_usage_score", "hs_education_pct"
        ],
    });
    std::fs::write(&config, serde_json::to_string_pretty(&config_body)? + "\n")?;

    let concentrated_state = STATES
        .iter()
        .max_by(|a, b| a.2[LATENT_LOW].total_cmp(&b.2[LATENT_LOW]))
        .map(|s| s.0.to_string())
        .expect("states listed");
    Ok(Corpus {
        dir: dir.to_path_buf(),
        config,
        descriptors,
        crosswalk: dir.join("crosswalk.csv"),
        tables,
        latent: counties.iter().map(|c| (c.fips.clone(), c.latent)).collect(),
        concentrated_state,
        sparse_counties,
        duplicated,
        sparse_columns: vec![
            "federal_education_investment".into(),
            "icu_occupancy".into(),
        ],
    })
}

/// Writes `blobs` as a single county-keyed table (`blobs.csv`, columns
/// `x0..x{d-1}`) with `descriptors.json` and a `config.json` using `seed`.
/// Point i becomes county `{10000 + i}`. Returns the config path.
pub fn write_blob_dataset(dir: &Path, blobs: &Blobs, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (n, d) = blobs.points.dim();
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let mut body = format!("fips,{}\n", names.join(","));
    for i in 0..n {
        let _ = write!(body, "{}", 10000 + i);
        for v in blobs.points.row(i) {
            let _ = write!(body, ",{v:?}");
        }
        body.push('\n');
    }
    std::fs::write(dir.join("blobs.csv"), body)?;
    let descriptors = vec![DatasetDescriptor {
        id: "blobs".into(),
        path: PathBuf::from("blobs.csv"),
        key: KeySpec::Fips {
            column: "fips".into(),
        },
        columns: names.iter().map(ColumnSpec::numeric).collect(),
    }];
    std::fs::write(
        dir.join("descriptors.json"),
        serde_json::to_string_pretty(&descriptors)? + "\n",
    )?;
    let config = dir.join("config.json");
    let body = json!({
        "descriptors": "descriptors.json",
        "seed": seed,
        "output_dir": "bundle",
        "outcome_features": [],
    });
    std::fs::write(&config, serde_json::to_string_pretty(&body)? + "\n")?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_reproducible_and_separated() {
        let spec = BlobSpec::default();
        let a = gaussian_blobs(&spec, 3);
        let b = gaussian_blobs(&spec, 3);
        assert_eq!(a, b);
        assert_eq!(a.points.dim(), (300, 10));
        for i in 0..3 {
            for j in i + 1..3 {
                let d: f64 = a
                    .centers
                    .row(i)
                    .iter()
                    .zip(a.centers.row(j))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                assert!(d.sqrt() >= 5.0);
            }
        }
        assert_ne!(gaussian_blobs(&spec, 4).points, a.points);
    }

    #[test]
    fn corpus_has_eighteen_tables() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_county_corpus(dir.path(), &CorpusSpec::default()).unwrap();
        assert_eq!(corpus.tables, 18);
        assert_eq!(corpus.latent.len(), 300);
        assert_eq!(corpus.concentrated_state, "Dorado");
        let dorado_low = corpus
            .latent
            .iter()
            .filter(|(f, &l)| f.starts_with("84") && l == LATENT_LOW)
            .count();
        assert_eq!(dorado_low, 42);
        assert!(corpus.config.is_file() && corpus.crosswalk.is_file());
    }
}
