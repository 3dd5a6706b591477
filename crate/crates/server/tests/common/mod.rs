#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use coverage_core::sim::{self, SimConfig};
use coverage_core::store::MeasurementStore;
use coverage_core::Measurement;
use coverage_server::{router, AppState, ServiceConfig};
use tower::ServiceExt;

/// One week of the default sites with a handful of devices each.
pub fn small_sim() -> SimConfig {
    SimConfig {
        devices_per_site: 6,
        period_start: Utc.with_ymd_and_hms(2021, 2, 1, 0, 0, 0).unwrap(),
        period_end: Utc.with_ymd_and_hms(2021, 2, 8, 0, 0, 0).unwrap(),
        seed: 42,
        ..SimConfig::default()
    }
}

pub fn small_dataset() -> Vec<Measurement> {
    sim::generate(&small_sim()).unwrap().collect()
}

pub fn app_with(config: ServiceConfig, data: &[Measurement]) -> Router {
    let store = MeasurementStore::in_memory(&config.sites);
    store.extend(data.iter().cloned()).unwrap();
    router(AppState::new(store, config))
}

pub fn app(data: &[Measurement]) -> Router {
    app_with(ServiceConfig::default(), data)
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_owned()
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    Reply {
        status,
        headers,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post(app: &Router, uri: &str, body: &str) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    send(app, req).await
}

/// Heatmap query string for a viewport centred on a point.
pub fn heatmap_query(sites: &str, metric: &str, lat: f64, lon: f64, zoom: u8, size: u32, cell_px: u32) -> String {
    let p = coverage_core::project(lat, lon, zoom).unwrap();
    let half = f64::from(size / 2);
    format!(
        "/api/heatmap?sites={sites}&metric={metric}&zoom={zoom}&origin_x={}&origin_y={}&width_px={size}&height_px={size}&cell_px={cell_px}",
        (p.x - half).floor(),
        (p.y - half).floor()
    )
}

pub mod process {
    use std::io::{BufRead, BufReader};
    use std::path::Path;
    use std::process::{Child, Command, Stdio};

    pub const BIN: &str = env!("CARGO_BIN_EXE_ccn-coverage");

    pub fn cli() -> Command {
        let mut c = Command::new(BIN);
        c.env("RUST_LOG", "warn");
        c
    }

    /// A running `serve` process; killed on drop.
    pub struct Server {
        pub child: Child,
        pub base: String,
    }

    impl Server {
        pub fn start(config: &Path, data: &Path) -> Server {
            let mut child = cli()
                .args(["serve", "--listen", "127.0.0.1:0", "--config"])
                .arg(config)
                .arg("--data")
                .arg(data)
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .expect("spawn server");
            let mut line = String::new();
            BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
            let addr = line
                .trim()
                .strip_prefix("listening on ")
                .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
                .to_owned();
            Server {
                child,
                base: format!("http://{addr}"),
            }
        }

        /// SIGKILL, no chance to clean up.
        pub fn kill(mut self) {
            self.child.kill().unwrap();
            self.child.wait().unwrap();
        }
    }

    impl Drop for Server {
        fn drop(&mut self) {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }

    pub fn agent() -> ureq::Agent {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into()
    }

    /// Status and body text.
    pub fn http_get(agent: &ureq::Agent, url: &str) -> (u16, String) {
        let mut r = agent.get(url).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    pub fn http_post(agent: &ureq::Agent, url: &str, body: &str) -> Result<(u16, String), ureq::Error> {
        let mut r = agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)?;
        Ok((r.status().as_u16(), r.body_mut().read_to_string()?))
    }
}
