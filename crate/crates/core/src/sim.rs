//! Deterministic mock dataset generator.
//!
//! Each configured site gets `devices_per_site` devices placed uniformly over
//! its coverage disk. Devices alternate between exponentially distributed
//! connected and disconnected spells and, while connected, report on a fixed
//! cadence. Report values follow a synthetic distance-attenuated model with
//! multiplicative log-normal noise; none of it is calibrated against real
//! radio measurements.
//!
//! Every device draws from its own ChaCha stream seeded by hashing the run
//! seed with the device id, so output does not depend on generation order.

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use sha2::{Digest, Sha256};

use crate::model::{Measurement, Site, SiteStatus};

/// Mean Earth radius used for great-circle distances, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("bad simulation config: {0}")]
pub struct BadConfig(pub String);

/// Connected/disconnected spell lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionModel {
    pub mean_connected: Duration,
    pub mean_disconnected: Duration,
}

impl Default for SessionModel {
    fn default() -> Self {
        SessionModel {
            mean_connected: Duration::days(3),
            mean_disconnected: Duration::days(1),
        }
    }
}

/// Expected metric values at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricMeans {
    pub ping_ms: f64,
    pub upload_mbps: f64,
    pub download_mbps: f64,
}

/// Distance-attenuated quality model.
///
/// At distance `d` from a site with coverage radius `R`:
/// ping = `near_ping_ms · (1 + d/R)`,
/// download = `near_download_mbps · max(floor, 1 − slope · d/R)`,
/// upload = `download · upload_ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueModel {
    pub near_ping_ms: f64,
    pub near_download_mbps: f64,
    pub upload_ratio: f64,
    pub download_slope: f64,
    pub download_floor: f64,
    /// Standard deviation of the log of the multiplicative noise.
    pub noise_sigma: f64,
}

impl Default for ValueModel {
    fn default() -> Self {
        ValueModel {
            near_ping_ms: 20.0,
            near_download_mbps: 40.0,
            upload_ratio: 0.25,
            download_slope: 0.7,
            download_floor: 0.1,
            noise_sigma: 0.25,
        }
    }
}

impl ValueModel {
    pub fn means(&self, distance_m: f64, radius_m: f64) -> MetricMeans {
        let r = (distance_m / radius_m).max(0.0);
        let download = self.near_download_mbps * (1.0 - self.download_slope * r).max(self.download_floor);
        MetricMeans {
            ping_ms: self.near_ping_ms * (1.0 + r),
            upload_mbps: download * self.upload_ratio,
            download_mbps: download,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sites: Vec<Site>,
    pub devices_per_site: u32,
    pub period_start: DateTime<Utc>,
    pub period_end: DateTime<Utc>,
    pub cadence: Duration,
    pub coverage_radius_m: f64,
    /// Maximum per-report displacement from a device's home location.
    pub jitter_m: f64,
    pub sessions: SessionModel,
    pub values: ValueModel,
    pub seed: u64,
}

/// The three community sites of the original deployment. Coordinates and
/// addresses are approximate.
pub fn default_sites() -> Vec<Site> {
    vec![
        Site {
            site_id: "David-TCN".into(),
            name: "David-TCN".into(),
            address: "Hilltop, Tacoma, WA".into(),
            latitude: 47.2529,
            longitude: -122.4580,
            status: SiteStatus::Active,
        },
        Site {
            site_id: "SURGEtacoma".into(),
            name: "SURGEtacoma".into(),
            address: "2367 Tacoma Ave S, Tacoma, WA 98402".into(),
            latitude: 47.2375,
            longitude: -122.4450,
            status: SiteStatus::Active,
        },
        Site {
            site_id: "Filipino-Community-Center".into(),
            name: "Filipino Community Center".into(),
            address: "5740 Martin Luther King Jr Way S, Seattle, WA 98118".into(),
            latitude: 47.5515,
            longitude: -122.2847,
            status: SiteStatus::Confirmed,
        },
    ]
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sites: default_sites(),
            devices_per_site: 100,
            period_start: Utc.with_ymd_and_hms(2021, 2, 1, 0, 0, 0).unwrap(),
            period_end: Utc.with_ymd_and_hms(2021, 7, 1, 0, 0, 0).unwrap(),
            cadence: Duration::minutes(15),
            coverage_radius_m: 2000.0,
            jitter_m: 50.0,
            sessions: SessionModel::default(),
            values: ValueModel::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), BadConfig> {
        let fail = |m: &str| Err(BadConfig(m.to_owned()));
        if self.period_start >= self.period_end {
            return fail("period_start must be before period_end");
        }
        if self.devices_per_site == 0 {
            return fail("devices_per_site must be at least 1");
        }
        if self.cadence <= Duration::zero() {
            return fail("cadence must be positive");
        }
        if !(self.coverage_radius_m > 0.0) || !self.coverage_radius_m.is_finite() {
            return fail("coverage_radius_m must be positive");
        }
        if !(self.jitter_m >= 0.0) {
            return fail("jitter_m must be non-negative");
        }
        if self.sessions.mean_connected < Duration::seconds(1) {
            return fail("mean connected time must be at least one second");
        }
        if self.sessions.mean_disconnected < Duration::zero() {
            return fail("mean disconnected time must be non-negative");
        }
        let v = &self.values;
        let positive = [v.near_ping_ms, v.near_download_mbps, v.download_floor];
        if positive.iter().any(|x| !(*x > 0.0))
            || !(v.upload_ratio >= 0.0)
            || !(v.download_slope >= 0.0)
            || !(v.noise_sigma >= 0.0)
        {
            return fail("value model parameters must be positive");
        }
        crate::model::validate_sites(&self.sites).map_err(|e| BadConfig(e.to_string()))
    }
}

/// A simulated device bound to its home site.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_id: Arc<str>,
    pub site_id: Arc<str>,
    pub latitude: f64,
    pub longitude: f64,
    pub distance_m: f64,
    pub baseline: MetricMeans,
}

/// A connected interval `[connect, disconnect)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub connect: DateTime<Utc>,
    pub disconnect: DateTime<Utc>,
}

/// Great-circle distance in meters (haversine).
pub fn great_circle_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// The point `distance_m` away from `(lat, lon)` along initial `bearing` (radians).
pub fn destination(lat: f64, lon: f64, distance_m: f64, bearing: f64) -> (f64, f64) {
    let delta = distance_m / EARTH_RADIUS_M;
    let p1 = lat.to_radians();
    let l1 = lon.to_radians();
    let p2 = (p1.sin() * delta.cos() + p1.cos() * delta.sin() * bearing.cos()).asin();
    let l2 = l1
        + (bearing.sin() * delta.sin() * p1.cos()).atan2(delta.cos() - p1.sin() * p2.sin());
    let lon2 = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    (p2.to_degrees(), lon2)
}

/// A point drawn uniformly from the disk of `radius_m` around `(lat, lon)`.
fn point_in_disk(rng: &mut ChaCha8Rng, lat: f64, lon: f64, radius_m: f64) -> (f64, f64) {
    loop {
        let r = radius_m * rng.random::<f64>().sqrt();
        let bearing = 2.0 * PI * rng.random::<f64>();
        let p = destination(lat, lon, r, bearing);
        if great_circle_m(lat, lon, p.0, p.1) <= radius_m {
            return p;
        }
    }
}

fn device_rng(seed: u64, device_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(device_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn device_id(seed: u64, site_id: &str, index: u32) -> String {
    let mut h = Sha256::new();
    h.update(b"device");
    h.update(seed.to_le_bytes());
    h.update(site_id.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("d-{hex}")
}

/// Places a device and fixes its per-metric baselines.
pub fn sample_device(config: &SimConfig, site: &Site, device_id: &str, rng: &mut ChaCha8Rng) -> DeviceProfile {
    let (latitude, longitude) =
        point_in_disk(rng, site.latitude, site.longitude, config.coverage_radius_m);
    let distance_m = great_circle_m(site.latitude, site.longitude, latitude, longitude);
    DeviceProfile {
        device_id: Arc::from(device_id),
        site_id: Arc::from(site.site_id.as_str()),
        latitude,
        longitude,
        distance_m,
        baseline: config.values.means(distance_m, config.coverage_radius_m),
    }
}

/// Whole seconds drawn from an exponential distribution with the given mean.
fn exp_seconds(rng: &mut ChaCha8Rng, mean: Duration) -> i64 {
    let mean = mean.num_milliseconds() as f64 / 1000.0;
    if mean <= 0.0 {
        return 0;
    }
    let exp = Exp::new(1.0 / mean).expect("positive rate");
    exp.sample(rng).round() as i64
}

/// Alternating connected/disconnected spells over `[start, end)`.
///
/// The first spell's state is drawn from the stationary split between the
/// two means. Sessions separated by a zero-length gap are merged.
pub fn sample_sessions(
    model: &SessionModel,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    rng: &mut ChaCha8Rng,
) -> Vec<Session> {
    let on = model.mean_connected.num_milliseconds() as f64;
    let off = model.mean_disconnected.num_milliseconds() as f64;
    let mut connected = rng.random_bool((on / (on + off)).clamp(0.0, 1.0));
    let mut sessions: Vec<Session> = Vec::new();
    let mut t = start;
    while t < end {
        let mean = if connected {
            model.mean_connected
        } else {
            model.mean_disconnected
        };
        let next = (t + Duration::seconds(exp_seconds(rng, mean))).min(end);
        if connected && next > t {
            match sessions.last_mut() {
                Some(last) if last.disconnect == t => last.disconnect = next,
                _ => sessions.push(Session {
                    connect: t,
                    disconnect: next,
                }),
            }
        }
        t = next;
        connected = !connected;
    }
    sessions
}

/// Report instants of a session: `connect + k·cadence` strictly before `disconnect`.
pub fn emission_times(session: Session, cadence: Duration) -> impl Iterator<Item = DateTime<Utc>> {
    std::iter::successors(Some(session.connect), move |t| Some(*t + cadence))
        .take_while(move |t| *t < session.disconnect)
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    // Mean-one log-normal.
    LogNormal::new(-sigma * sigma / 2.0, sigma)
        .expect("finite sigma")
        .sample(rng)
}

/// One report from `device` at `t`.
pub fn sample_measurement(
    config: &SimConfig,
    device: &DeviceProfile,
    site: &Site,
    t: DateTime<Utc>,
    rng: &mut ChaCha8Rng,
) -> Measurement {
    let (mut latitude, mut longitude) =
        point_in_disk(rng, device.latitude, device.longitude, config.jitter_m);
    if great_circle_m(site.latitude, site.longitude, latitude, longitude) > config.coverage_radius_m {
        // Jitter never pushes a report out of coverage.
        latitude = device.latitude;
        longitude = device.longitude;
    }
    let sigma = config.values.noise_sigma;
    let ping_ms = device.baseline.ping_ms * noise(rng, sigma);
    let download_mbps = device.baseline.download_mbps * noise(rng, sigma);
    let upload_mbps = device.baseline.upload_mbps * noise(rng, sigma);
    Measurement {
        device_id: device.device_id.clone(),
        site_id: device.site_id.clone(),
        timestamp: t,
        latitude,
        longitude,
        ping_ms: ping_ms.max(f64::MIN_POSITIVE),
        upload_mbps,
        download_mbps,
    }
}

/// Every report of one device, in time order.
pub fn simulate_device(config: &SimConfig, site: &Site, index: u32) -> (DeviceProfile, Vec<Measurement>) {
    let id = device_id(config.seed, &site.site_id, index);
    let mut rng = device_rng(config.seed, &id);
    let device = sample_device(config, site, &id, &mut rng);
    let sessions = sample_sessions(&config.sessions, config.period_start, config.period_end, &mut rng);
    let mut out = Vec::new();
    for s in sessions {
        for t in emission_times(s, config.cadence) {
            out.push(sample_measurement(config, &device, site, t, &mut rng));
        }
    }
    (device, out)
}

/// Device profiles of a run, in generation order.
pub fn devices(config: &SimConfig) -> Result<Vec<DeviceProfile>, BadConfig> {
    config.validate()?;
    Ok(config
        .sites
        .iter()
        .flat_map(|site| {
            (0..config.devices_per_site).map(move |i| {
                let id = device_id(config.seed, &site.site_id, i);
                sample_device(config, site, &id, &mut device_rng(config.seed, &id))
            })
        })
        .collect())
}

/// The full mock dataset, site by site and device by device. Lazy: only one
/// device's reports are held at a time.
pub fn generate(config: &SimConfig) -> Result<impl Iterator<Item = Measurement> + '_, BadConfig> {
    config.validate()?;
    Ok(config.sites.iter().flat_map(move |site| {
        (0..config.devices_per_site).flat_map(move |i| simulate_device(config, site, i).1)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            devices_per_site: 3,
            period_end: Utc.with_ymd_and_hms(2021, 2, 8, 0, 0, 0).unwrap(),
            seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = small();
        c.period_end = c.period_start;
        assert!(c.validate().is_err());
        let mut c = small();
        c.devices_per_site = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.cadence = Duration::zero();
        assert!(c.validate().is_err());
        assert!(generate(&c).is_err());
    }

    #[test]
    fn degenerate_session_model_gives_one_session() {
        let c = SimConfig::default();
        let model = SessionModel {
            mean_connected: c.period_end - c.period_start,
            mean_disconnected: Duration::zero(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_sessions(&model, c.period_start, c.period_end, &mut rng);
        assert_eq!(
            s,
            vec![Session {
                connect: c.period_start,
                disconnect: c.period_end
            }]
        );
        // 150 days × 96 quarter hours.
        assert_eq!(emission_times(s[0], c.cadence).count(), 14_400);
    }

    #[test]
    fn single_cadence_session_emits_once() {
        let t = Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap();
        let s = Session {
            connect: t,
            disconnect: t + Duration::minutes(15),
        };
        let times: Vec<_> = emission_times(s, Duration::minutes(15)).collect();
        assert_eq!(times, vec![t]);
    }

    #[test]
    fn session_invariants_hold() {
        let c = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut total = 0;
        while total < 10_000 {
            let s = sample_sessions(&c.sessions, c.period_start, c.period_end, &mut rng);
            for w in s.windows(2) {
                assert!(w[0].disconnect < w[1].connect);
            }
            for x in &s {
                assert!(c.period_start <= x.connect && x.connect < x.disconnect);
                assert!(x.disconnect <= c.period_end);
            }
            total += s.len();
        }
    }

    #[test]
    fn mean_session_length_matches_model() {
        let model = SessionModel::default();
        let start = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
        let end = start + Duration::days(365 * 200);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sessions = sample_sessions(&model, start, end, &mut rng);
        // Drop the last one, which may be truncated by the period end.
        let lengths: Vec<f64> = sessions[..sessions.len() - 1]
            .iter()
            .take(10_000)
            .map(|s| (s.disconnect - s.connect).num_seconds() as f64)
            .collect();
        assert_eq!(lengths.len(), 10_000);
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let expected = model.mean_connected.num_seconds() as f64;
        assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn value_model_anchor_and_monotonicity() {
        let v = ValueModel::default();
        let m = v.means(0.0, 2000.0);
        assert_eq!(
            m,
            MetricMeans {
                ping_ms: 20.0,
                upload_mbps: 10.0,
                download_mbps: 40.0
            }
        );
        let mut prev = m;
        for step in 1..=400 {
            let cur = v.means(f64::from(step) * 5.0, 2000.0);
            assert!(cur.ping_ms >= prev.ping_ms);
            assert!(cur.download_mbps <= prev.download_mbps);
            assert!(cur.upload_mbps <= prev.upload_mbps);
            prev = cur;
        }
    }

    #[test]
    fn zero_noise_at_site_gives_baselines() {
        let mut c = small();
        c.values.noise_sigma = 0.0;
        let site = c.sites[0].clone();
        let mut dev = sample_device(&c, &site, "d-x", &mut ChaCha8Rng::seed_from_u64(1));
        dev.latitude = site.latitude;
        dev.longitude = site.longitude;
        dev.distance_m = 0.0;
        dev.baseline = c.values.means(0.0, c.coverage_radius_m);
        let m = sample_measurement(&c, &dev, &site, c.period_start, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!((m.ping_ms, m.download_mbps, m.upload_mbps), (20.0, 40.0, 10.0));
    }

    #[test]
    fn sample_means_match_model() {
        let c = SimConfig::default();
        let site = c.sites[1].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut dev = sample_device(&c, &site, "d-y", &mut rng);
        // Fix the device at 1200 m from the site.
        let (lat, lon) = destination(site.latitude, site.longitude, 1200.0, 1.0);
        dev.latitude = lat;
        dev.longitude = lon;
        dev.distance_m = 1200.0;
        dev.baseline = c.values.means(1200.0, c.coverage_radius_m);
        let n = 10_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let m = sample_measurement(&c, &dev, &site, c.period_start, &mut rng);
            assert!(m.ping_ms > 0.0 && m.upload_mbps >= 0.0 && m.download_mbps >= 0.0);
            assert!(great_circle_m(site.latitude, site.longitude, m.latitude, m.longitude) <= c.coverage_radius_m);
            sums[0] += m.ping_ms;
            sums[1] += m.upload_mbps;
            sums[2] += m.download_mbps;
        }
        // ping = 20·1.6 = 32, download = 40·(1 − 0.42) = 23.2, upload = 5.8
        let expected = [32.0, 5.8, 23.2];
        for (s, e) in sums.iter().zip(expected) {
            let mean = s / f64::from(n);
            assert!((mean / e - 1.0).abs() < 0.05, "{mean} vs {e}");
        }
    }

    #[test]
    fn geodesy_helpers_agree() {
        for (d, b) in [(0.0, 0.0), (10.0, 1.0), (1999.0, 4.0), (50_000.0, 2.5)] {
            let (lat, lon) = destination(47.6, -122.3, d, b);
            assert!((great_circle_m(47.6, -122.3, lat, lon) - d).abs() < 1e-6);
        }
    }

    #[test]
    fn generation_is_deterministic_and_plausible() {
        let c = small();
        let a: Vec<_> = generate(&c).unwrap().collect();
        let b: Vec<_> = generate(&c).unwrap().collect();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for m in &a {
            assert!(m.check().is_ok());
            assert!(c.period_start <= m.timestamp && m.timestamp < c.period_end);
            let site = c.sites.iter().find(|s| *s.site_id == *m.site_id).unwrap();
            assert!(great_circle_m(site.latitude, site.longitude, m.latitude, m.longitude) <= c.coverage_radius_m);
        }
        let mut other = c.clone();
        other.seed = 8;
        let d: Vec<_> = generate(&other).unwrap().collect();
        assert_ne!(a, d);
    }

    #[test]
    fn device_count_and_cadence() {
        let c = small();
        let profiles = devices(&c).unwrap();
        assert_eq!(profiles.len(), 9);
        let mut ids: Vec<_> = profiles.iter().map(|p| p.device_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 9);
        for p in &profiles {
            assert!(p.distance_m <= c.coverage_radius_m);
        }
    }

    #[test]
    fn reports_follow_the_cadence() {
        let c = small();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for s in sample_sessions(&c.sessions, c.period_start, c.period_end, &mut rng) {
            let times: Vec<_> = emission_times(s, c.cadence).collect();
            assert_eq!(times[0], s.connect);
            assert!(*times.last().unwrap() < s.disconnect);
            assert!(*times.last().unwrap() + c.cadence >= s.disconnect);
            for w in times.windows(2) {
                assert_eq!(w[1] - w[0], c.cadence);
            }
        }
    }
}
