mod common;

use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use coverage_core::sim::default_sites;
use coverage_server::ServiceConfig;
use serde_json::{json, Value};

use common::{app, app_with, get, heatmap_query, post, send, small_dataset};

const TACOMA: (f64, f64) = (47.2529, -122.4580);

fn record(lat: f64) -> String {
    json!({
        "device_id": "d-000000000001",
        "site_id": "David-TCN",
        "timestamp": "2021-03-01T12:00:00Z",
        "latitude": lat,
        "longitude": -122.458,
        "ping_ms": 31.5,
        "upload_mbps": 4.0,
        "download_mbps": 18.25
    })
    .to_string()
}

#[tokio::test]
async fn sites_endpoint_lists_configuration() {
    let app = app(&small_dataset());
    let r = get(&app, "/api/sites").await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    let ids: Vec<&str> = v["sites"].as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["David-TCN", "SURGEtacoma", "Filipino-Community-Center"]);
    assert_eq!(v["sites"][2]["status"], "confirmed");
    assert!(v["sites"][0]["available"].is_boolean());
}

#[tokio::test]
async fn heatmap_respects_privacy_rules() {
    let app = app(&small_dataset());
    let r = get(&app, &heatmap_query("David-TCN,SURGEtacoma", "download", TACOMA.0, TACOMA.1, 13, 512, 32)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let v = r.json();
    assert_eq!(v["metric"], "download");
    assert_eq!(v["unit"], "Mbps");
    assert_eq!(v["k_min"], 5);
    let cells = v["cells"].as_array().unwrap();
    assert!(!cells.is_empty());
    assert!(cells.iter().all(|c| c["count"].as_u64().unwrap() >= 5));
    let keys: Vec<(u64, u64)> = cells.iter().map(|c| (c["j"].as_u64().unwrap(), c["i"].as_u64().unwrap())).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));

    let fine = get(&app, &heatmap_query("David-TCN", "download", TACOMA.0, TACOMA.1, 13, 512, 16)).await;
    assert_eq!(fine.status, StatusCode::BAD_REQUEST);
    assert_eq!(fine.code(), "grid_too_fine");
    assert_eq!(fine.json()["field"], "cell_px");
}

#[tokio::test]
async fn heatmap_rejects_bad_parameters() {
    let app = app(&[]);
    let ok = heatmap_query("David-TCN", "ping", TACOMA.0, TACOMA.1, 13, 256, 32);
    let cases = [
        (ok.replace("David-TCN", "Nowhere"), "unknown_site"),
        (ok.replace("sites=David-TCN", "sites="), "no_sites"),
        (ok.replace("metric=ping", "metric=jitter"), "bad_metric"),
        (ok.replace("zoom=13", "zoom=thirteen"), "bad_request"),
        (ok.replace("&cell_px=32", ""), "bad_request"),
        (ok.replace("zoom=13", "zoom=31"), "invalid_grid"),
        (ok.replace("cell_px=32", "cell_px=0"), "invalid_grid"),
    ];
    for (uri, code) in cases {
        let r = get(&app, &uri).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{uri}: {}", r.text);
        assert_eq!(r.code(), code, "{uri}");
    }
    // An empty store gives an empty grid.
    let r = get(&app, &ok).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["cells"], json!([]));
}

#[tokio::test]
async fn timeseries_returns_one_series_per_site() {
    let app = app(&small_dataset());
    let r = get(
        &app,
        "/api/timeseries?sites=SURGEtacoma,David-TCN&metric=ping&from=2021-02-02T00:00:00Z&to=2021-02-03T00:00:00Z",
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    let v = r.json();
    assert_eq!(v["unit"], "ms");
    let series = v["series"].as_array().unwrap();
    let ids: Vec<&str> = series.iter().map(|s| s["site_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["David-TCN", "SURGEtacoma"]);
    for s in series {
        for p in s["points"].as_array().unwrap() {
            let t = p["t"].as_str().unwrap();
            assert!(t.starts_with("2021-02-02T") && t.ends_with(":00:00Z"), "{t}");
        }
    }

    let bad = get(
        &app,
        "/api/timeseries?sites=David-TCN&metric=ping&from=2021-02-03T00:00:00Z&to=2021-02-02T00:00:00Z",
    )
    .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.code(), "bad_range");

    let garbled = get(&app, "/api/timeseries?sites=David-TCN&metric=ping&from=yesterday").await;
    assert_eq!(garbled.status, StatusCode::BAD_REQUEST);
    assert_eq!(garbled.json()["field"], "from");

    // Without an explicit range the whole dataset is covered.
    let all = get(&app, "/api/timeseries?sites=David-TCN&metric=upload").await.json();
    let total: u64 = all["series"][0]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["count"].as_u64().unwrap())
        .sum();
    let expected = small_dataset().iter().filter(|m| &*m.site_id == "David-TCN").count() as u64;
    assert_eq!(total, expected);
}

#[tokio::test]
async fn site_summary_cases() {
    let app = app(&small_dataset());
    let missing = get(&app, "/api/site-summary?site=Atlantis").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.code(), "unknown_site");

    let r = get(&app, "/api/site-summary?site=David-TCN").await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(v["site_id"], "David-TCN");
    assert!(v["count"].as_u64().unwrap() > 0);
    assert!(v["avg_ping_ms"].as_f64().unwrap() > 0.0);

    let empty = app_with(ServiceConfig::default(), &[]);
    let v = get(&empty, "/api/site-summary?site=SURGEtacoma").await.json();
    assert_eq!(v["available"], false);
    assert_eq!(v["count"], 0);
    assert_eq!(v["avg_ping_ms"], Value::Null);
    assert_eq!(v["last_seen"], Value::Null);
}

#[tokio::test]
async fn ingest_validates_and_sequences() {
    let app = app(&[]);
    let ok = post(&app, "/api/measurements", &record(47.25)).await;
    assert_eq!(ok.status, StatusCode::CREATED, "{}", ok.text);
    assert_eq!(ok.json()["sequence"], 1);

    let bad = post(&app, "/api/measurements", &record(91.0)).await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(bad.json()["field"], "latitude");
    assert_eq!(bad.code(), "out_of_range");

    let mut v: Value = serde_json::from_str(&record(47.25)).unwrap();
    v.as_object_mut().unwrap().remove("ping_ms");
    let missing = post(&app, "/api/measurements", &v.to_string()).await;
    assert_eq!(missing.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(missing.json()["field"], "ping_ms");

    let other = post(&app, "/api/measurements", &record(47.25).replace("David-TCN", "Elsewhere")).await;
    assert_eq!(other.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(other.code(), "unknown_site");

    for junk in ["", "[1,2]", "{not json"] {
        let r = post(&app, "/api/measurements", junk).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{junk:?}");
    }

    let mut last = 1;
    for _ in 0..1_000 {
        let r = post(&app, "/api/measurements", &record(47.25)).await;
        let seq = r.json()["sequence"].as_u64().unwrap();
        assert!(seq > last);
        last = seq;
    }
    assert_eq!(get(&app, "/api/health").await.json()["records"], 1_001);
}

#[tokio::test]
async fn cors_headers() {
    let app = app(&[]);
    let req = Request::get("/api/sites")
        .header("origin", "http://localhost:3000")
        .body(Body::empty())
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.headers["access-control-allow-origin"], "*");

    let config = ServiceConfig {
        cors_origins: vec!["https://map.example.org".into()],
        ..ServiceConfig::default()
    };
    let app = app_with(config, &[]);
    let allowed = send(
        &app,
        Request::get("/api/sites").header("origin", "https://map.example.org").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(allowed.headers["access-control-allow-origin"], "https://map.example.org");
    let denied = send(
        &app,
        Request::get("/api/sites").header("origin", "https://evil.example").body(Body::empty()).unwrap(),
    )
    .await;
    assert!(!denied.headers.contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn responses_are_deterministic() {
    let data = small_dataset();
    let uris = [
        heatmap_query("David-TCN,SURGEtacoma,Filipino-Community-Center", "ping", TACOMA.0, TACOMA.1, 12, 768, 24),
        "/api/timeseries?sites=David-TCN,SURGEtacoma&metric=download".to_owned(),
        "/api/site-summary?site=SURGEtacoma".to_owned(),
        "/api/sites".to_owned(),
    ];
    let a = app(&data);
    let b = app(&data);
    for uri in &uris {
        let first = get(&a, uri).await.text;
        assert_eq!(first, get(&a, uri).await.text, "{uri}");
        assert_eq!(first, get(&b, uri).await.text, "{uri}");
    }
}

#[tokio::test]
async fn responses_do_not_leak_devices_or_positions() {
    let data = small_dataset();
    let app = app(&data);
    let devices: BTreeSet<String> = data.iter().map(|m| m.device_id.to_string()).collect();
    let mut bodies = vec![
        get(&app, "/api/sites").await.text,
        get(&app, "/api/timeseries?sites=David-TCN,SURGEtacoma,Filipino-Community-Center&metric=ping").await.text,
        get(&app, "/api/site-summary?site=David-TCN").await.text,
        get(&app, "/api/health").await.text,
    ];
    for site in default_sites() {
        for zoom in [11, 13, 15] {
            let cell = if zoom == 15 { 96 } else { 40 };
            bodies.push(get(&app, &heatmap_query(&site.site_id, "download", site.latitude, site.longitude, zoom, 1024, cell)).await.text);
        }
    }
    for body in &bodies {
        assert!(!body.contains("device_id"));
        assert!(!body.contains("\"d-"));
        for d in &devices {
            assert!(!body.contains(d.as_str()));
        }
        for m in data.iter().step_by(97) {
            assert!(!body.contains(&m.latitude.to_string()));
            assert!(!body.contains(&m.longitude.to_string()));
        }
    }
}
