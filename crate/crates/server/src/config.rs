//! Service configuration, read from TOML. See `config/example.toml`.

use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use coverage_core::aggregate::{PrivacyPolicy, Windows, DEFAULT_K_MIN, DEFAULT_MIN_CELL_METERS};
use coverage_core::model::{validate_sites, Site};
use coverage_core::sim::{default_sites, SessionModel, SimConfig, ValueModel};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    pub k_min: u32,
    pub min_cell_meters: f64,
    pub summary_window_minutes: i64,
    pub availability_window_minutes: i64,
    /// Origins allowed to call the API from a browser; empty allows any.
    pub cors_origins: Vec<String>,
    pub sites: Vec<Site>,
    pub simulation: SimulationSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            k_min: DEFAULT_K_MIN,
            min_cell_meters: DEFAULT_MIN_CELL_METERS,
            summary_window_minutes: 24 * 60,
            availability_window_minutes: 60,
            cors_origins: Vec::new(),
            sites: default_sites(),
            simulation: SimulationSettings::default(),
        }
    }
}

/// Knobs of the mock dataset generator; every field is optional.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub devices_per_site: u32,
    pub period_start: DateTime<Utc>,
    pub period_end: DateTime<Utc>,
    pub cadence_minutes: i64,
    pub coverage_radius_m: f64,
    pub jitter_m: f64,
    pub mean_connected_hours: f64,
    pub mean_disconnected_hours: f64,
    pub near_ping_ms: f64,
    pub near_download_mbps: f64,
    pub upload_ratio: f64,
    pub noise_sigma: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let c = SimConfig::default();
        SimulationSettings {
            devices_per_site: c.devices_per_site,
            period_start: c.period_start,
            period_end: c.period_end,
            cadence_minutes: c.cadence.num_minutes(),
            coverage_radius_m: c.coverage_radius_m,
            jitter_m: c.jitter_m,
            mean_connected_hours: c.sessions.mean_connected.num_hours() as f64,
            mean_disconnected_hours: c.sessions.mean_disconnected.num_hours() as f64,
            near_ping_ms: c.values.near_ping_ms,
            near_download_mbps: c.values.near_download_mbps,
            upload_ratio: c.values.upload_ratio,
            noise_sigma: c.values.noise_sigma,
        }
    }
}

fn hours(h: f64) -> Duration {
    Duration::milliseconds((h * 3_600_000.0).round() as i64)
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Invalid {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        validate_sites(&self.sites).map_err(|e| e.to_string())?;
        if self.k_min == 0 {
            return Err("k_min must be at least 1".into());
        }
        if !(self.min_cell_meters >= 0.0) {
            return Err("min_cell_meters must be non-negative".into());
        }
        if self.summary_window_minutes <= 0 || self.availability_window_minutes <= 0 {
            return Err("windows must be positive".into());
        }
        Ok(())
    }

    pub fn privacy(&self) -> PrivacyPolicy {
        PrivacyPolicy {
            k_min: self.k_min,
            min_cell_meters: self.min_cell_meters,
        }
    }

    pub fn windows(&self) -> Windows {
        Windows {
            summary: Duration::minutes(self.summary_window_minutes),
            availability: Duration::minutes(self.availability_window_minutes),
        }
    }

    /// Simulator settings for the configured sites.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            sites: self.sites.clone(),
            devices_per_site: s.devices_per_site,
            period_start: s.period_start,
            period_end: s.period_end,
            cadence: Duration::minutes(s.cadence_minutes),
            coverage_radius_m: s.coverage_radius_m,
            jitter_m: s.jitter_m,
            sessions: SessionModel {
                mean_connected: hours(s.mean_connected_hours),
                mean_disconnected: hours(s.mean_disconnected_hours),
            },
            values: ValueModel {
                near_ping_ms: s.near_ping_ms,
                near_download_mbps: s.near_download_mbps,
                upload_ratio: s.upload_ratio,
                noise_sigma: s.noise_sigma,
                ..ValueModel::default()
            },
            seed,
        }
    }
}
