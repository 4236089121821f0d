//! Per-identifier drift tracking across requests.
//!
//! Some attributes cannot change for a physical device: CPU core count,
//! memory, the navigator platform. When requests sharing a cookie disagree
//! on one of them, something is fabricating values. Likewise, requests from
//! one IP whose timezones imply UTC-offset sets that never overlap cannot
//! all be telling the truth.
//!
//! [`TemporalState`] holds the observed-value history per cookie and per
//! IP; [`TemporalState::observe`] checks an arriving record against that
//! history (flagging only the newcomer, never retroactively) and then folds
//! it in. History sets only grow — apart from the optional TTL, nothing is
//! forgotten.
//!
//! Callers present records in nondecreasing timestamp order per key; batch
//! pipelines sort by timestamp first. Timestamps are epoch milliseconds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{canonical_serialize, AttributeValue, FingerprintRecord};
use crate::normalize::timezone_to_offsets;

/// Attributes watched per cookie by default: immutable device properties.
pub const DEFAULT_WATCHED_ATTRS: [&str; 3] =
    ["device.memory", "hardware.concurrency", "platform"];

/// Snapshot format version; bump on any incompatible layout change.
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct CookieHistory {
    /// Attribute → canonical values seen under this cookie.
    attrs: BTreeMap<String, BTreeSet<String>>,
    last_seen: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct IpHistory {
    /// Union of UTC offsets (minutes) implied by every timezone seen.
    offsets: BTreeSet<i32>,
    /// Regions reported by geolocation-derived attributes.
    regions: BTreeSet<String>,
    last_seen: i64,
}

/// Observed-value state for temporal checks. Create with
/// [`TemporalState::new`] (default watch list) or
/// [`TemporalState::with_watches`]; persist with [`snapshot`](Self::snapshot)
/// / [`restore`](Self::restore).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalState {
    cookie_hist: BTreeMap<String, CookieHistory>,
    ip_hist: BTreeMap<String, IpHistory>,
    watched_cookie_attrs: BTreeSet<String>,
    watch_ip: bool,
    /// Optional history expiry: a key idle longer than this is reset before
    /// the next check. `None` (default) never expires.
    ttl_hours: Option<u32>,
    /// Timestamp of the first / latest observed record (epoch ms); `None`
    /// until something is observed. Derived from record timestamps so that
    /// identical inputs produce identical state bytes.
    created_at: Option<i64>,
    updated_at: Option<i64>,
}

impl Default for TemporalState {
    fn default() -> Self {
        Self::new()
    }
}

/// Which identifier keyed a flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    Cookie,
    Ip,
}

/// One temporal inconsistency: the arriving record enlarged the value set
/// of `attribute` under its key. `prior_values` is what history held
/// (non-empty by construction); `new_value` is the newcomer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFlag {
    pub record_id: String,
    pub key_kind: KeyKind,
    pub attribute: String,
    pub prior_values: Vec<String>,
    pub new_value: String,
}

impl TemporalState {
    pub fn new() -> Self {
        Self::with_watches(DEFAULT_WATCHED_ATTRS.iter().map(|s| s.to_string()), true)
    }

    pub fn with_watches(
        cookie_attrs: impl IntoIterator<Item = String>,
        watch_ip: bool,
    ) -> Self {
        TemporalState {
            cookie_hist: BTreeMap::new(),
            ip_hist: BTreeMap::new(),
            watched_cookie_attrs: cookie_attrs.into_iter().collect(),
            watch_ip,
            ttl_hours: None,
            created_at: None,
            updated_at: None,
        }
    }

    pub fn set_ttl_hours(&mut self, hours: Option<u32>) {
        self.ttl_hours = hours;
    }

    pub fn watched_cookie_attrs(&self) -> impl Iterator<Item = &str> {
        self.watched_cookie_attrs.iter().map(String::as_str)
    }

    pub fn watches_ip(&self) -> bool {
        self.watch_ip
    }

    pub fn is_empty(&self) -> bool {
        self.cookie_hist.is_empty() && self.ip_hist.is_empty()
    }

    fn expired(&self, last_seen: i64, now: i64) -> bool {
        match self.ttl_hours {
            Some(hours) => now.saturating_sub(last_seen) > i64::from(hours) * 3_600_000,
            None => false,
        }
    }

    /// Checks a record against history, returns flags for the record, then
    /// absorbs its values. Records without a cookie skip cookie checks;
    /// watched attributes that are `Absent` are skipped (missing data is
    /// not drift).
    pub fn observe(&mut self, record: &FingerprintRecord) -> Vec<TemporalFlag> {
        let mut flags = Vec::new();
        let now = record.timestamp;
        self.created_at.get_or_insert(now);
        self.updated_at = Some(self.updated_at.map_or(now, |t| t.max(now)));

        if let Some(cookie) = record.cookie_id.as_deref().filter(|c| !c.is_empty()) {
            let ttl_expired = self
                .cookie_hist
                .get(cookie)
                .is_some_and(|h| self.expired(h.last_seen, now));
            let hist = self.cookie_hist.entry(cookie.to_string()).or_default();
            if ttl_expired {
                hist.attrs.clear();
            }
            hist.last_seen = now;
            for attr in &self.watched_cookie_attrs {
                let value = record.attr(attr);
                if value.is_absent() {
                    continue;
                }
                let canon = canonical_serialize(value);
                let seen = hist.attrs.entry(attr.clone()).or_default();
                if !seen.is_empty() && !seen.contains(&canon) {
                    flags.push(TemporalFlag {
                        record_id: record.record_id.clone(),
                        key_kind: KeyKind::Cookie,
                        attribute: attr.clone(),
                        prior_values: seen.iter().cloned().collect(),
                        new_value: canon.clone(),
                    });
                }
                seen.insert(canon);
            }
        }

        if self.watch_ip && !record.ip.is_empty() {
            let ttl_expired = self
                .ip_hist
                .get(&record.ip)
                .is_some_and(|h| self.expired(h.last_seen, now));
            let hist = self.ip_hist.entry(record.ip.clone()).or_default();
            if ttl_expired {
                hist.offsets.clear();
                hist.regions.clear();
            }
            hist.last_seen = now;

            if let AttributeValue::Text(zone) = record.attr("timezone") {
                if let Some(offsets) = timezone_to_offsets(zone) {
                    let overlaps = offsets.iter().any(|m| hist.offsets.contains(&m));
                    if !hist.offsets.is_empty() && !overlaps {
                        flags.push(TemporalFlag {
                            record_id: record.record_id.clone(),
                            key_kind: KeyKind::Ip,
                            attribute: "timezone".to_string(),
                            prior_values: hist.offsets.iter().map(|m| m.to_string()).collect(),
                            new_value: offsets
                                .iter()
                                .map(|m| m.to_string())
                                .collect::<Vec<_>>()
                                .join(";"),
                        });
                    }
                    for m in offsets.iter() {
                        hist.offsets.insert(m);
                    }
                }
            }

            if let AttributeValue::Text(region) = record.attr("geo.region") {
                if !hist.regions.is_empty() && !hist.regions.contains(region) {
                    flags.push(TemporalFlag {
                        record_id: record.record_id.clone(),
                        key_kind: KeyKind::Ip,
                        attribute: "geo.region".to_string(),
                        prior_values: hist.regions.iter().cloned().collect(),
                        new_value: region.clone(),
                    });
                }
                hist.regions.insert(region.clone());
            }
        }

        flags
    }

    /// Serializes the state as versioned JSON bytes.
    pub fn snapshot(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Versioned<'a> {
            version: u32,
            state: &'a TemporalState,
        }
        serde_json::to_vec(&Versioned { version: SNAPSHOT_VERSION, state: self })
            .expect("state serializes")
    }

    /// Restores a snapshot. Corrupt or truncated bytes and unsupported
    /// versions yield an error and no state.
    pub fn restore(bytes: &[u8]) -> Result<TemporalState, TemporalError> {
        #[derive(Deserialize)]
        struct Versioned {
            version: u32,
            state: TemporalState,
        }
        let versioned: Versioned = serde_json::from_slice(bytes)
            .map_err(|e| TemporalError::CorruptSnapshot { message: e.to_string() })?;
        if versioned.version != SNAPSHOT_VERSION {
            return Err(TemporalError::UnsupportedVersion { found: versioned.version });
        }
        Ok(versioned.state)
    }
}

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("snapshot is corrupt: {message}")]
    CorruptSnapshot { message: String },
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    UnsupportedVersion { found: u32 },
}
