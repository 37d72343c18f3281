use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use countylens_core::bundle::AnalysisBundle;
use countylens_core::config::RunConfig;
use countylens_core::ingest::{Aggregation, CountyRecord, FeatureColumn, MasterTable};
use countylens_core::pipeline::{run_cluster, CleaningReport, IngestOutput};
use countylens_serve::{bind, load_bundle, router, ServeError};

const FIPS: [&str; 6] = ["01001", "01003", "01005", "02001", "02003", "02005"];

/// Two obvious groups on `risk`; `hs_education_pct` is the filter target
/// and has median 0.945.
fn six_county_bundle() -> AnalysisBundle {
    let counties = FIPS
        .iter()
        .map(|f| CountyRecord {
            fips: f.to_string(),
            state: if f.starts_with("01") { "Avalon" } else { "Borealis" }.into(),
            county_name: format!("County {f}"),
        })
        .collect();
    let column = |name: &str, values: Vec<Option<f64>>| FeatureColumn {
        name: name.into(),
        source: "fixture".into(),
        aggregation: Aggregation::Mean,
        units: None,
        values,
    };
    let some = |v: [f64; 6]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
    let features = vec![
        column("risk", some([1.0, 1.2, 0.8, 10.0, 10.2, 9.8])),
        column("hs_education_pct", some([0.80, 0.96, 0.90, 0.97, 0.99, 0.93])),
        column("positivity_rate", some([0.05, 0.06, 0.04, 0.20, 0.22, 0.18])),
        column(
            "vaccination_rate",
            vec![Some(0.7), Some(0.6), None, Some(0.3), Some(0.4), Some(0.35)],
        ),
    ];
    let master = MasterTable::new(counties, features).unwrap();
    let mut cfg = RunConfig::new("unused.json", 11);
    cfg.k_max = 3;
    cfg.k = Some(2);
    cfg.outcome_features.truncate(1);
    let ingest = IngestOutput {
        clustered: master.clone(),
        master,
        report: CleaningReport::default(),
        input_digest: "fixture".into(),
    };
    run_cluster(&cfg, ingest).unwrap()
}

fn app() -> Router {
    router(six_county_bundle(), None).unwrap()
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let response = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn raw(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let response = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, bytes.to_vec())
}

/// Cluster index of the low-risk group.
fn low_group(bundle: &AnalysisBundle) -> usize {
    bundle.cluster_of(FIPS[0]).unwrap()
}

#[tokio::test]
async fn clusters_echo_the_model() {
    let bundle = six_county_bundle();
    let low = low_group(&bundle);
    let app = router(bundle, None).unwrap();
    let (status, body) = get(&app, "/api/clusters").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["k"], 2);
    assert_eq!(body["sizes"], serde_json::json!([3, 3]));
    assert_eq!(body["labels"][low], "high-performing");
    assert_eq!(body["labels"][1 - low], "low-performing");
    assert!(body["inertia"].as_f64().unwrap() > 0.0);
    assert!(body["silhouette"].as_f64().unwrap() > 0.5);
}

#[tokio::test]
async fn distribution_matches_hand_tally() {
    let bundle = six_county_bundle();
    let low = low_group(&bundle);
    let app = router(bundle, None).unwrap();
    // >= 0.945: 01003 (0.96) in the low-risk group; 02001 and 02003 in the other.
    let (status, body) = get(
        &app,
        "/api/distribution?feature=hs_education_pct&op=gte&threshold=0.945",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let mut expected = [0, 0];
    expected[low] = 1;
    expected[1 - low] = 2;
    assert_eq!(body["counts"], serde_json::json!(expected));
    assert_eq!(body["missing"], 0);
    assert_eq!(body["total"], 6);

    let (_, body) = get(
        &app,
        "/api/distribution?feature=hs_education_pct&op=lte&threshold=0.945",
    )
    .await;
    let mut expected = [0, 0];
    expected[low] = 2;
    expected[1 - low] = 1;
    assert_eq!(body["counts"], serde_json::json!(expected));

    let (_, body) = get(
        &app,
        "/api/distribution?feature=vaccination_rate&op=gte&threshold=0",
    )
    .await;
    assert_eq!(body["missing"], 1);
    let counted: u64 = body["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(counted, 5);
}

#[tokio::test]
async fn distribution_errors() {
    let app = app();
    let (status, body) = get(
        &app,
        "/api/distribution?feature=hs_education_pct&op=gt&threshold=1",
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_operator");

    let (status, body) = get(&app, "/api/distribution?feature=nope&op=gte&threshold=1").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_feature");

    let (status, body) = get(
        &app,
        "/api/distribution?feature=hs_education_pct&op=gte&threshold=abc",
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");

    let (status, body) = get(&app, "/api/distribution?feature=hs_education_pct").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("op"));
}

#[tokio::test]
async fn scatter_passes_pairs_through() {
    let app = app();
    let (status, body) = get(&app, "/api/scatter?x=vaccination_rate&y=positivity_rate").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["x_feature"], "vaccination_rate");
    assert_eq!(body["points"].as_array().unwrap().len(), 5);
    assert_eq!(body["excluded"], 1);
    assert_eq!(body["points"][0]["fips"], "01001");
    assert_eq!(body["points"][0]["x"], 0.7);
    assert_eq!(body["points"][0]["y"], 0.05);

    let (status, _) = get(&app, "/api/scatter?x=vaccination_rate&y=missing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn county_detail_and_gap() {
    let app = app();
    let (status, body) = get(&app, "/api/county/02003").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "Borealis");
    assert_eq!(body["values"]["hs_education_pct"], 0.99);
    assert_eq!(body["extremes"].as_array().unwrap().len(), 3);

    let (status, body) = get(&app, "/api/county/99999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_county");

    let (status, body) = get(&app, "/api/gap?a=01001&b=02001").await;
    assert_eq!(status, StatusCode::OK);
    let gaps: Vec<f64> = body["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["gap"].as_f64().unwrap())
        .collect();
    assert!(gaps.windows(2).all(|w| w[0] >= w[1]));
    let total = gaps.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!((body["total_distance"].as_f64().unwrap() - total).abs() < 1e-12);

    let (status, _) = get(&app, "/api/gap?a=01001").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn report_endpoints() {
    let app = app();
    let (_, features) = get(&app, "/api/features").await;
    let names: Vec<&str> = features
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec!["risk", "hs_education_pct", "positivity_rate", "vaccination_rate"]
    );
    let hs = &features[1];
    assert_eq!((hs["min"].as_f64(), hs["max"].as_f64()), (Some(0.80), Some(0.99)));

    let (_, meta) = get(&app, "/api/meta").await;
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);

    let (_, importance) = get(&app, "/api/importance").await;
    assert!(importance["method"].as_str().unwrap().contains("WCSS"));
    assert!(importance["post_hoc_importance"]["features"].is_array());

    let (_, profile) = get(&app, "/api/profile").await;
    assert_eq!(profile["profile"]["k"], 2);
    assert!(profile["labeling"]["labels"].is_array());

    let (_, states) = get(&app, "/api/states").await;
    assert_eq!(states["states"].as_array().unwrap().len(), 2);
    assert_eq!(states["flagged"].as_array().unwrap().len(), 2);

    let (_, pca) = get(&app, "/api/pca").await;
    assert_eq!(pca["scores"].as_array().unwrap().len(), 6);

    let (_, assignments) = get(&app, "/api/assignments").await;
    assert_eq!(assignments.as_object().unwrap().len(), 6);
}

#[tokio::test]
async fn responses_are_idempotent() {
    let app = app();
    for uri in [
        "/api/meta",
        "/api/clusters",
        "/api/features",
        "/api/county/01005",
        "/api/distribution?feature=risk&op=lte&threshold=5",
        "/api/scatter?x=risk&y=hs_education_pct",
        "/api/importance",
        "/api/profile",
        "/api/states",
        "/api/gap?a=01003&b=02005",
        "/api/pca",
    ] {
        let first = raw(&app, uri).await;
        let second = raw(&app, uri).await;
        assert_eq!(first.0, StatusCode::OK, "{uri}");
        assert_eq!(first, second, "{uri}");
    }
    // A fresh router over a re-read bundle answers identically.
    let dir = tempfile::tempdir().unwrap();
    six_county_bundle().write(dir.path()).unwrap();
    let reloaded = router(load_bundle(dir.path()).unwrap(), None).unwrap();
    assert_eq!(raw(&app, "/api/profile").await, raw(&reloaded, "/api/profile").await);
}

#[tokio::test]
async fn unknown_routes_are_json_404() {
    let (status, body) = get(&app(), "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn ui_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>map</html>").unwrap();
    let app = router(six_county_bundle(), Some(dir.path())).unwrap();
    let (status, body) = raw(&app, "/ui/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>map</html>");
    let (status, body) = raw(&app, "/ui/").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>map</html>");
}

#[test]
fn missing_bundle_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_bundle(&dir.path().join("absent")),
        Err(ServeError::BundleNotFound(_))
    ));
}

#[tokio::test]
async fn busy_port_is_reported() {
    let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = first.local_addr().unwrap();
    match bind(addr).await {
        Err(ServeError::PortInUse(port)) => assert_eq!(port, addr.port()),
        other => panic!("expected PortInUse, got {other:?}"),
    }
}
