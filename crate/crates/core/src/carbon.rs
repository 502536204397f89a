//! Carbon-intensity resolution: static override, local cache file, or an
//! HTTP provider, in that order.
//!
//! Resolution is best-effort by contract. A provider outage, bad key, or
//! malformed body downgrades the session to "carbon unavailable" — it never
//! aborts sampling.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CarbonError {
    #[error("latitude {0} outside [-90, 90]")]
    BadLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    BadLongitude(f64),
    #[error("API key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("could not parse provider response: {0}")]
    Parse(String),
    #[error("cache I/O failed: {0}")]
    CacheIo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityKind {
    Marginal,
    Average,
}

impl IntensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntensityKind::Marginal => "marginal",
            IntensityKind::Average => "average",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensitySource {
    Static,
    Cache,
    Provider(String),
}

/// A carbon-intensity record in gCO2eq/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityRecord {
    pub value: f64,
    pub kind: IntensityKind,
    pub zone: String,
    pub valid_at_ms: i64,
    pub source: IntensitySource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, CarbonError> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(CarbonError::BadLatitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(CarbonError::BadLongitude(lon));
        }
        Ok(GeoCoordinate { lat, lon })
    }
}

/// Which service answers lookup requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    ElectricityMaps,
    WattTime,
    /// Any endpoint speaking the same minimal JSON contract; used for stubs
    /// and self-hosted gateways.
    Custom,
}

impl Provider {
    pub fn name(&self) -> &'static str {
        match self {
            Provider::ElectricityMaps => "electricity-maps",
            Provider::WattTime => "watttime",
            Provider::Custom => "custom",
        }
    }

    pub fn from_name(s: &str) -> Option<Provider> {
        match s {
            "electricity-maps" => Some(Provider::ElectricityMaps),
            "watttime" => Some(Provider::WattTime),
            "custom" => Some(Provider::Custom),
            _ => None,
        }
    }

    fn default_base_url(&self) -> &'static str {
        match self {
            Provider::ElectricityMaps => "https://api.electricitymap.org",
            Provider::WattTime => "https://api.watttime.org",
            Provider::Custom => "http://127.0.0.1:0",
        }
    }

    /// Whether the latest-intensity endpoint accepts a marginal/average
    /// selector. WattTime's signal is marginal by construction.
    fn distinguishes_kind(&self) -> bool {
        !matches!(self, Provider::WattTime)
    }

    fn native_kind(&self) -> IntensityKind {
        match self {
            Provider::WattTime => IntensityKind::Marginal,
            _ => IntensityKind::Average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupConfig {
    pub coord: GeoCoordinate,
    pub provider: Provider,
    /// Override of the provider's default endpoint; used by tests and proxies.
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is never persisted.
    pub api_key_env: String,
    pub cache_path: PathBuf,
    pub staleness_limit_s: u64,
    pub kind: IntensityKind,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
}

fn default_timeout_s() -> f64 {
    5.0
}

pub const DEFAULT_STALENESS_LIMIT_S: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CarbonConfig {
    Off,
    Static { value: f64, kind: IntensityKind },
    Lookup(LookupConfig),
}

impl Default for CarbonConfig {
    fn default() -> Self {
        CarbonConfig::Off
    }
}

/// Cache file contents: one record plus the key it was fetched under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    provider: String,
    /// `lat,lon` the lookup was keyed by (zone is only known after a fetch).
    coord_key: String,
    kind: IntensityKind,
    fetched_at_ms: i64,
    record: IntensityRecord,
}

fn coord_key(coord: &GeoCoordinate) -> String {
    format!("{},{}", coord.lat, coord.lon)
}

fn read_cache(path: &Path) -> Option<CacheEntry> {
    let bytes = fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn write_cache(path: &Path, entry: &CacheEntry) -> Result<(), CarbonError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CarbonError::CacheIo(e.to_string()))?;
        }
    }
    let body = serde_json::to_vec_pretty(entry).map_err(|e| CarbonError::CacheIo(e.to_string()))?;
    fs::write(path, body).map_err(|e| CarbonError::CacheIo(e.to_string()))
}

/// Resolve an intensity record for the configured mode at time `at_ms`.
///
/// Lookup order: fresh cache entry, then provider (refreshing the cache on
/// success). All lookup failures are soft; the session proceeds without
/// carbon and the reason is logged.
pub fn resolve_intensity(config: &CarbonConfig, at_ms: i64) -> Option<IntensityRecord> {
    match config {
        CarbonConfig::Off => None,
        CarbonConfig::Static { value, kind } => Some(IntensityRecord {
            value: *value,
            kind: *kind,
            zone: "static".to_string(),
            valid_at_ms: at_ms,
            source: IntensitySource::Static,
        }),
        CarbonConfig::Lookup(lookup) => {
            let key = coord_key(&lookup.coord);
            if let Some(entry) = read_cache(&lookup.cache_path) {
                let fresh = at_ms - entry.fetched_at_ms < (lookup.staleness_limit_s as i64) * 1000;
                let matches = entry.provider == lookup.provider.name()
                    && entry.coord_key == key
                    && entry.kind == lookup.kind;
                if fresh && matches {
                    let mut record = entry.record;
                    record.source = IntensitySource::Cache;
                    return Some(record);
                }
            }
            match provider_fetch(lookup, at_ms) {
                Ok(record) => {
                    let entry = CacheEntry {
                        provider: lookup.provider.name().to_string(),
                        coord_key: key,
                        kind: lookup.kind,
                        fetched_at_ms: at_ms,
                        record: record.clone(),
                    };
                    if let Err(e) = write_cache(&lookup.cache_path, &entry) {
                        log::warn!("carbon cache write failed: {e}");
                    }
                    Some(record)
                }
                Err(e) => {
                    log::warn!("carbon intensity unavailable: {e}");
                    None
                }
            }
        }
    }
}

/// One HTTPS GET against the provider's latest-intensity endpoint.
pub fn provider_fetch(lookup: &LookupConfig, at_ms: i64) -> Result<IntensityRecord, CarbonError> {
    let api_key = std::env::var(&lookup.api_key_env)
        .map_err(|_| CarbonError::MissingApiKey(lookup.api_key_env.clone()))?;
    let base = lookup
        .base_url
        .clone()
        .unwrap_or_else(|| lookup.provider.default_base_url().to_string());
    let base = base.trim_end_matches('/');
    let coord = &lookup.coord;
    let url = match lookup.provider {
        Provider::ElectricityMaps => format!(
            "{base}/v3/carbon-intensity/latest?lat={}&lon={}&emissionFactorType={}",
            coord.lat,
            coord.lon,
            lookup.kind.name()
        ),
        Provider::WattTime => format!(
            "{base}/v3/signal-index?latitude={}&longitude={}&signal_type=co2_moer",
            coord.lat, coord.lon
        ),
        Provider::Custom => format!(
            "{base}/intensity/latest?lat={}&lon={}&kind={}",
            coord.lat,
            coord.lon,
            lookup.kind.name()
        ),
    };

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(lookup.timeout_s.max(0.1))))
        .build()
        .into();
    let mut request = agent.get(&url);
    request = match lookup.provider {
        Provider::ElectricityMaps => request.header("auth-token", &api_key),
        _ => request.header("Authorization", &format!("Bearer {api_key}")),
    };
    let mut response = request.call().map_err(|e| match e {
        ureq::Error::StatusCode(code) => CarbonError::Status(code),
        other => CarbonError::Transport(other.to_string()),
    })?;
    let body: serde_json::Value = response
        .body_mut()
        .read_json()
        .map_err(|e| CarbonError::Parse(e.to_string()))?;

    let kind = if lookup.provider.distinguishes_kind() {
        lookup.kind
    } else {
        lookup.provider.native_kind()
    };
    parse_intensity_body(&body, kind, at_ms, lookup.provider.name(), coord)
}

/// Pull value and zone out of a provider response. Field names differ per
/// service, so a short list of candidates is tried on the top-level object
/// and, failing that, on the first element of a `data` array.
fn parse_intensity_body(
    body: &serde_json::Value,
    kind: IntensityKind,
    at_ms: i64,
    provider_name: &str,
    coord: &GeoCoordinate,
) -> Result<IntensityRecord, CarbonError> {
    const VALUE_FIELDS: [&str; 4] = ["carbonIntensity", "value", "moer", "intensity"];
    const ZONE_FIELDS: [&str; 4] = ["zone", "region", "ba", "abbrev"];

    let candidates = [body, body.get("data").and_then(|d| d.get(0)).unwrap_or(body)];
    for obj in candidates {
        for field in VALUE_FIELDS {
            if let Some(raw) = obj.get(field) {
                let value = raw
                    .as_f64()
                    .ok_or_else(|| CarbonError::Parse(format!("field `{field}` is not a number: {raw}")))?;
                if !value.is_finite() || value < 0.0 {
                    return Err(CarbonError::Parse(format!("intensity {value} out of domain")));
                }
                let zone = ZONE_FIELDS
                    .iter()
                    .find_map(|z| obj.get(z).and_then(|v| v.as_str()))
                    .map(str::to_string)
                    .unwrap_or_else(|| coord_key(coord));
                return Ok(IntensityRecord {
                    value,
                    kind,
                    zone,
                    valid_at_ms: at_ms,
                    source: IntensitySource::Provider(provider_name.to_string()),
                });
            }
        }
    }
    Err(CarbonError::Parse("no intensity field in response".to_string()))
}
