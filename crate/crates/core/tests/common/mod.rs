#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use coverage_core::sim::default_sites;
use coverage_core::{Measurement, Site};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sites() -> Vec<Site> {
    default_sites()
}

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
}

/// Random measurements scattered within ~3 km of the configured sites over
/// four days. Positions are drawn from a small pool so cells fill up.
pub fn random_measurements(n: usize, seed: u64) -> Vec<Measurement> {
    let sites = sites();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let devices: Vec<Arc<str>> = (0..20).map(|i| Arc::from(format!("d-{i:012x}"))).collect();
    let pool: Vec<(usize, f64, f64)> = (0..60)
        .map(|_| {
            let s = rng.random_range(0..sites.len());
            (
                s,
                sites[s].latitude + rng.random_range(-0.03..0.03),
                sites[s].longitude + rng.random_range(-0.04..0.04),
            )
        })
        .collect();
    let site_ids: Vec<Arc<str>> = sites.iter().map(|s| Arc::from(s.site_id.as_str())).collect();
    (0..n)
        .map(|_| {
            let (s, lat, lon) = pool[rng.random_range(0..pool.len())];
            Measurement {
                device_id: devices[rng.random_range(0..devices.len())].clone(),
                site_id: site_ids[s].clone(),
                timestamp: start() + Duration::seconds(rng.random_range(0..4 * 86_400)),
                latitude: lat,
                longitude: lon,
                ping_ms: rng.random_range(5.0..200.0),
                upload_mbps: rng.random_range(0.0..20.0),
                download_mbps: rng.random_range(0.0..80.0),
            }
        })
        .collect()
}
