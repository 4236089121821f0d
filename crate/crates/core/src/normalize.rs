//! Log ingestion and normalization.
//!
//! - [`parse_user_agent`] — ordered pattern table that extracts device,
//!   browser and OS families. It reports what the string *claims*, never a
//!   corrected view: a Safari token on an X11 platform yields
//!   (Safari, Linux) verbatim, which is exactly the contradiction later
//!   stages want to see.
//! - [`timezone_to_offsets`] / [`region_to_offsets`] — static tables mapping
//!   IANA zone names and `Country/Subdivision` regions to their possible
//!   UTC offsets in minutes (standard time plus DST where observed).
//! - [`GeoTable`] — longest-prefix IPv4 → region lookup loaded from CSV.
//! - [`normalize_record`] — one JSONL log line → [`FingerprintRecord`],
//!   deriving `ua.*`, `ip.location` and `ip.offsets` without ever dropping
//!   or overwriting attributes the line already carried (normalization is
//!   idempotent).
//! - [`annotate_blocklists`] — adds `ip.blocklisted` / `asn.blocklisted`
//!   flags from offline lists.
//!
//! Ingestion is line-oriented and never aborts: every malformed line
//! produces a structured error carrying its line number, and processing
//! continues.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use once_cell::sync::Lazy;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    split_resolution, AttributeKind, AttributeRegistry, AttributeValue, FingerprintRecord,
    SourceLabel, Verdict,
};

/// Shipped IANA zone → UTC offset minutes table.
pub const SHIPPED_TZ_OFFSETS_CSV: &str = include_str!("../data/tz_offsets.csv");
/// Shipped `Country/Subdivision` region → UTC offset minutes table.
pub const SHIPPED_REGION_OFFSETS_CSV: &str = include_str!("../data/region_offsets.csv");
/// Shipped demonstration IP-prefix table (synthetic 10.0.0.0/8 space).
pub const SHIPPED_GEO_TABLE_CSV: &str = include_str!("../data/geo_table.csv");

// ── UTC offset sets ───────────────────────────────────────────────────────

/// Smallest representable UTC offset in minutes (UTC-12:00).
pub const MIN_OFFSET_MINUTES: i32 = -720;
/// Largest representable UTC offset in minutes (UTC+14:00).
pub const MAX_OFFSET_MINUTES: i32 = 840;

/// A set of UTC offsets in minutes. A zone or region observing DST has two
/// entries (standard and summer time); everything else has one.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, Deserialize)]
pub struct OffsetSet(BTreeSet<i32>);

impl OffsetSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting offsets outside
    /// [[`MIN_OFFSET_MINUTES`], [`MAX_OFFSET_MINUTES`]].
    pub fn from_minutes(minutes: impl IntoIterator<Item = i32>) -> Result<Self, NormalizeError> {
        let mut set = BTreeSet::new();
        for m in minutes {
            if !(MIN_OFFSET_MINUTES..=MAX_OFFSET_MINUTES).contains(&m) {
                return Err(NormalizeError::OffsetOutOfRange { minutes: m });
            }
            set.insert(m);
        }
        Ok(OffsetSet(set))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, minutes: i32) -> bool {
        self.0.contains(&minutes)
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> + '_ {
        self.0.iter().copied()
    }

    pub fn intersects(&self, other: &OffsetSet) -> bool {
        self.0.iter().any(|m| other.0.contains(m))
    }

    pub fn union_with(&mut self, other: &OffsetSet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn insert(&mut self, minutes: i32) {
        self.0.insert(minutes);
    }

    /// Encoding used for the derived `ip.offsets` attribute.
    pub fn to_text_list(&self) -> AttributeValue {
        AttributeValue::TextList(self.0.iter().map(|m| m.to_string()).collect())
    }

    /// Reads an `ip.offsets`-style text list back into a set.
    pub fn from_text_list(value: &AttributeValue) -> Option<Self> {
        match value {
            AttributeValue::TextList(items) => {
                let mut set = BTreeSet::new();
                for item in items {
                    set.insert(item.parse().ok()?);
                }
                Some(OffsetSet(set))
            }
            _ => None,
        }
    }
}

fn parse_offsets_csv(text: &str, what: &str) -> BTreeMap<String, OffsetSet> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, offsets) = line
            .rsplit_once(',')
            .unwrap_or_else(|| panic!("{what} line {}: missing comma", idx + 1));
        let minutes: Vec<i32> = offsets
            .split(';')
            .map(|o| o.trim().parse().unwrap_or_else(|_| panic!("{what} line {}: bad offset", idx + 1)))
            .collect();
        let set = OffsetSet::from_minutes(minutes)
            .unwrap_or_else(|e| panic!("{what} line {}: {e}", idx + 1));
        out.insert(name.to_string(), set);
    }
    out
}

static TZ_OFFSETS: Lazy<BTreeMap<String, OffsetSet>> =
    Lazy::new(|| parse_offsets_csv(SHIPPED_TZ_OFFSETS_CSV, "tz_offsets.csv"));
static REGION_OFFSETS: Lazy<BTreeMap<String, OffsetSet>> =
    Lazy::new(|| parse_offsets_csv(SHIPPED_REGION_OFFSETS_CSV, "region_offsets.csv"));

/// Possible UTC offsets for an IANA zone name, from the shipped table.
/// `None` means the zone is unknown; callers surface that as a warning.
pub fn timezone_to_offsets(zone: &str) -> Option<&'static OffsetSet> {
    TZ_OFFSETS.get(zone)
}

/// Possible UTC offsets for a `Country/Subdivision` region string.
pub fn region_to_offsets(region: &str) -> Option<&'static OffsetSet> {
    REGION_OFFSETS.get(region)
}

/// All zones in the shipped table (used by invariant checks and generators).
pub fn shipped_timezones() -> impl Iterator<Item = (&'static str, &'static OffsetSet)> {
    TZ_OFFSETS.iter().map(|(k, v)| (k.as_str(), v))
}

/// All regions in the shipped table.
pub fn shipped_regions() -> impl Iterator<Item = (&'static str, &'static OffsetSet)> {
    REGION_OFFSETS.iter().map(|(k, v)| (k.as_str(), v))
}

// ── User-agent parsing ────────────────────────────────────────────────────

/// Families extracted from a user-agent string. Fields are never empty:
/// anything unrecognized becomes `"Unknown"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UaFields {
    pub device: String,
    pub browser: String,
    pub os: String,
    pub raw: String,
}

const UNKNOWN: &str = "Unknown";

/// Ordered (pattern, family) rules; the first match wins.
static BROWSER_RULES: Lazy<Vec<(regex::Regex, &'static str)>> = Lazy::new(|| {
    [
        (r"Googlebot", "Googlebot"),
        (r"bingbot", "bingbot"),
        (r"HeadlessChrome/", "HeadlessChrome"),
        (r"^curl/", "curl"),
        (r"^python-requests/", "Python Requests"),
        (r"^Wget/", "Wget"),
        (r"FxiOS/", "Firefox iOS"),
        (r"CriOS/", "Chrome Mobile iOS"),
        (r"EdgiOS/|EdgA/", "Edge Mobile"),
        (r"Edge?/", "Edge"),
        (r"SamsungBrowser/", "Samsung Internet"),
        (r"MiuiBrowser/", "MiuiBrowser"),
        (r"UCBrowser/", "UC Browser"),
        (r"YaBrowser/", "Yandex Browser"),
        (r"Mobile.*OPR/", "Opera Mobile"),
        (r"OPR/|Opera", "Opera"),
        (r"; ?wv\).*Chrome/.*Mobile", "Chrome Mobile WebView"),
        (r"Chrome/.*Mobile", "Chrome Mobile"),
        (r"Chrome/", "Chrome"),
        (r"Version/.*Mobile.*Safari/", "Mobile Safari"),
        (r"Version/.*Safari/", "Safari"),
        (r"Firefox/", "Firefox"),
        (r"MSIE |Trident/", "IE"),
    ]
    .into_iter()
    .map(|(re, fam)| (regex::Regex::new(re).expect("browser rule compiles"), fam))
    .collect()
});

static OS_RULES: Lazy<Vec<(regex::Regex, &'static str)>> = Lazy::new(|| {
    [
        (r"Windows Phone", "Windows Phone"),
        (r"\((?:iPhone|iPad|iPod)", "iOS"),
        (r"Macintosh|Mac OS X", "Mac OS X"),
        (r"Android", "Android"),
        (r"CrOS", "Chrome OS"),
        (r"Windows", "Windows"),
        (r"Linux|X11", "Linux"),
    ]
    .into_iter()
    .map(|(re, fam)| (regex::Regex::new(re).expect("os rule compiles"), fam))
    .collect()
});

/// Locale segments ("en-us") and platform noise that may sit between the
/// Android version and the device model inside the UA parenthetical.
fn is_model_noise(segment: &str) -> bool {
    if segment.is_empty() || segment == "U" || segment == "wv" || segment.starts_with("rv:") {
        return true;
    }
    let bytes = segment.as_bytes();
    matches!(bytes.len(), 2 | 5)
        && bytes[..2].iter().all(|b| b.is_ascii_lowercase())
        && (bytes.len() == 2 || (bytes[2] == b'-' && bytes[3..].iter().all(|b| b.is_ascii_alphabetic())))
}

fn android_model(ua: &str) -> Option<String> {
    let open = ua.find('(')?;
    let close = ua[open..].find(')')? + open;
    let segments: Vec<&str> = ua[open + 1..close].split(';').map(str::trim).collect();
    let android_at = segments.iter().position(|s| s.starts_with("Android"))?;
    let model = segments[android_at + 1..]
        .iter()
        .copied()
        .find(|s| !is_model_noise(s))?;
    let model = model.split(" Build").next().unwrap_or(model).trim();
    if model.is_empty() {
        return None;
    }
    // Vendor prefixes mirroring how models are commonly reported upstream.
    if model.starts_with("SM-") {
        return Some(format!("Samsung {model}"));
    }
    if model.starts_with("Redmi") || model.starts_with("Mi ") || model.starts_with("MiPad") || model.starts_with("POCO") {
        return Some(format!("XiaoMi {model}"));
    }
    Some(model.to_string())
}

/// True when `token` occurs at a word start. A bare `contains` would let
/// Android models like "MiPad 3" masquerade as an iPad.
fn has_device_token(ua: &str, token: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = ua[start..].find(token) {
        let at = start + pos;
        if at == 0 || !ua.as_bytes()[at - 1].is_ascii_alphanumeric() {
            return true;
        }
        start = at + token.len();
    }
    false
}

/// Extracts (device, browser, os) families from a raw user-agent string.
///
/// The parser is deliberately literal: it reproduces the claims embedded in
/// the string and never reconciles them, so spoofed combinations such as
/// Safari-on-Linux survive for the rule engine to flag.
pub fn parse_user_agent(ua: &str) -> UaFields {
    let browser = BROWSER_RULES
        .iter()
        .find(|(re, _)| re.is_match(ua))
        .map_or(UNKNOWN, |(_, fam)| fam);
    let os = OS_RULES
        .iter()
        .find(|(re, _)| re.is_match(ua))
        .map_or(UNKNOWN, |(_, fam)| fam);
    // iPod before iPhone: "iPod touch" UAs also carry "iPhone OS".
    let device = if has_device_token(ua, "iPod") {
        "iPod".to_string()
    } else if has_device_token(ua, "iPad") {
        "iPad".to_string()
    } else if has_device_token(ua, "iPhone") {
        "iPhone".to_string()
    } else if ua.contains("Macintosh") {
        "Mac".to_string()
    } else {
        android_model(ua).unwrap_or_else(|| UNKNOWN.to_string())
    };
    UaFields {
        device,
        browser: browser.to_string(),
        os: os.to_string(),
        raw: ua.to_string(),
    }
}

// ── Geolocation table ─────────────────────────────────────────────────────

/// Parses a dotted-quad IPv4 string. Hashed or otherwise malformed
/// addresses return `None`.
pub fn parse_ipv4(s: &str) -> Option<u32> {
    let mut parts = s.split('.');
    let mut bits: u32 = 0;
    for _ in 0..4 {
        let part = parts.next()?;
        if part.is_empty() || part.len() > 3 || !part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let octet: u32 = part.parse().ok()?;
        if octet > 255 {
            return None;
        }
        bits = (bits << 8) | octet;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(bits)
}

/// One prefix row of a [`GeoTable`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoRow {
    pub prefix: u32,
    pub prefix_len: u8,
    /// `Country/Subdivision`.
    pub region: String,
    pub offsets: OffsetSet,
}

impl GeoRow {
    fn matches(&self, ip: u32) -> bool {
        if self.prefix_len == 0 {
            return true;
        }
        let shift = 32 - self.prefix_len as u32;
        (ip >> shift) == (self.prefix >> shift)
    }
}

/// Offline IP → region table with longest-prefix-wins lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeoTable {
    /// Sorted by descending prefix length, then ascending prefix, so the
    /// first match during lookup is the most specific one.
    rows: Vec<GeoRow>,
}

impl GeoTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The demonstration table shipped with the crate.
    pub fn shipped_demo() -> Self {
        Self::from_csv_str(SHIPPED_GEO_TABLE_CSV).expect("shipped geo table is valid")
    }

    /// Loads `prefix,region,offsets` CSV. `#` lines and blanks are skipped;
    /// a bare IP is treated as a /32.
    pub fn from_csv_str(text: &str) -> Result<Self, NormalizeError> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| NormalizeError::GeoTableParse { line: idx + 1, message };
            let mut fields = line.splitn(3, ',');
            let prefix_str = fields.next().unwrap_or_default().trim();
            let region = fields
                .next()
                .ok_or_else(|| err("missing region column".into()))?
                .trim();
            let offsets_str = fields
                .next()
                .ok_or_else(|| err("missing offsets column".into()))?
                .trim();
            let (addr, len) = match prefix_str.split_once('/') {
                Some((a, l)) => {
                    let len: u8 = l
                        .parse()
                        .map_err(|_| err(format!("bad prefix length {l:?}")))?;
                    if len > 32 {
                        return Err(err(format!("prefix length {len} exceeds 32")));
                    }
                    (a, len)
                }
                None => (prefix_str, 32),
            };
            let prefix =
                parse_ipv4(addr).ok_or_else(|| err(format!("bad IPv4 prefix {addr:?}")))?;
            let mut minutes = Vec::new();
            for o in offsets_str.split(';') {
                minutes.push(
                    o.trim()
                        .parse::<i32>()
                        .map_err(|_| err(format!("bad offset {o:?}")))?,
                );
            }
            let offsets = OffsetSet::from_minutes(minutes).map_err(|e| err(e.to_string()))?;
            if region.is_empty() {
                return Err(err("empty region".into()));
            }
            rows.push(GeoRow { prefix, prefix_len: len, region: region.to_string(), offsets });
        }
        rows.sort_by(|a, b| b.prefix_len.cmp(&a.prefix_len).then(a.prefix.cmp(&b.prefix)));
        Ok(GeoTable { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self, NormalizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NormalizeError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv_str(&text)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Longest-prefix lookup. `None` for unparseable addresses or when no
    /// prefix covers the address.
    pub fn lookup(&self, ip: &str) -> Option<&GeoRow> {
        let bits = parse_ipv4(ip)?;
        self.rows.iter().find(|row| row.matches(bits))
    }
}

// ── Blocklists ────────────────────────────────────────────────────────────

/// Offline IP / ASN blocklists for [`annotate_blocklists`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklists {
    pub ips: BTreeSet<String>,
    /// ASN → flag value from the CSV; an ASN absent from the map is simply
    /// not blocklisted.
    pub asns: BTreeMap<i64, bool>,
}

impl Blocklists {
    /// Newline-delimited IP list; `#` comments and blanks ignored.
    pub fn load_ips(text: &str) -> BTreeSet<String> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    }

    /// `asn,flag` CSV with a header row.
    pub fn load_asns(text: &str) -> Result<BTreeMap<i64, bool>, NormalizeError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || (idx == 0 && line.starts_with("asn")) {
                continue;
            }
            let err = |message: String| NormalizeError::AsnMapParse { line: idx + 1, message };
            let (asn, flag) = line
                .split_once(',')
                .ok_or_else(|| err("expected asn,flag".into()))?;
            let asn: i64 = asn
                .trim()
                .parse()
                .map_err(|_| err(format!("bad asn {asn:?}")))?;
            let flag: bool = flag
                .trim()
                .parse()
                .map_err(|_| err(format!("bad flag {flag:?}")))?;
            map.insert(asn, flag);
        }
        Ok(map)
    }
}

/// Adds `ip.blocklisted` / `asn.blocklisted` flags to a record.
///
/// A hashed or malformed IP is unresolvable, so both flags become `Absent`
/// for such records. The ASN is read from the record's `asn` attribute
/// (fingerprint logs carry it); a record without one gets `Absent` for the
/// ASN flag.
pub fn annotate_blocklists(record: &mut FingerprintRecord, lists: &Blocklists) {
    if parse_ipv4(&record.ip).is_none() {
        record.attributes.insert("ip.blocklisted".into(), AttributeValue::Absent);
        record.attributes.insert("asn.blocklisted".into(), AttributeValue::Absent);
        return;
    }
    let ip_flag = AttributeValue::Flag(lists.ips.contains(&record.ip));
    record.attributes.insert("ip.blocklisted".into(), ip_flag);
    let asn_flag = match record.attr("asn") {
        AttributeValue::Integer(asn) => {
            AttributeValue::Flag(lists.asns.get(asn).copied().unwrap_or(false))
        }
        _ => AttributeValue::Absent,
    };
    record.attributes.insert("asn.blocklisted".into(), asn_flag);
}

// ── Line normalization ────────────────────────────────────────────────────

#[derive(Deserialize)]
struct RawLine {
    record_id: Option<String>,
    timestamp: Option<i64>,
    ip: Option<String>,
    cookie_id: Option<String>,
    url_token: Option<String>,
    user_agent: Option<String>,
    attributes: Option<BTreeMap<String, serde_json::Value>>,
    #[serde(default)]
    verdicts: BTreeMap<String, String>,
    label: Option<String>,
}

/// Converts a raw JSON value into an [`AttributeValue`], honoring the
/// registry's expected shape for known attributes and inferring from the
/// JSON shape otherwise. Returns the value plus an optional coercion
/// warning.
fn coerce_value(
    name: &str,
    value: serde_json::Value,
    registry: &AttributeRegistry,
) -> (AttributeValue, Option<String>) {
    use serde_json::Value as J;
    if value.is_null() {
        return (AttributeValue::Absent, None);
    }
    let infer = |value: &J| -> AttributeValue {
        match value {
            J::Bool(b) => AttributeValue::Flag(*b),
            J::Number(n) => {
                if let Some(i) = n.as_i64() {
                    AttributeValue::Integer(i)
                } else {
                    AttributeValue::Real(n.as_f64().unwrap_or(0.0))
                }
            }
            J::String(s) => AttributeValue::Text(s.clone()),
            J::Array(items) => AttributeValue::TextList(
                items
                    .iter()
                    .map(|v| match v {
                        J::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect(),
            ),
            other => AttributeValue::Text(other.to_string()),
        }
    };
    let Some(kind) = registry.kind(name) else {
        let warn = matches!(value, J::Object(_))
            .then(|| format!("attribute {name}: object value kept as text"));
        return (infer(&value), warn);
    };
    let mismatch = |value: &J| {
        let inferred = infer(value);
        let warn = format!("attribute {name}: expected {kind:?}, kept value as-is");
        (inferred, Some(warn))
    };
    match kind {
        AttributeKind::Text => match &value {
            J::String(s) => (AttributeValue::Text(s.clone()), None),
            other => mismatch(other),
        },
        AttributeKind::Integer => match &value {
            J::Number(n) => {
                if let Some(i) = n.as_i64() {
                    (AttributeValue::Integer(i), None)
                } else {
                    mismatch(&value)
                }
            }
            J::String(s) => match s.parse::<i64>() {
                Ok(i) => (AttributeValue::Integer(i), None),
                Err(_) => mismatch(&value),
            },
            other => mismatch(other),
        },
        AttributeKind::Real => match &value {
            J::Number(n) => (AttributeValue::Real(n.as_f64().unwrap_or(0.0)), None),
            J::String(s) => match s.parse::<f64>() {
                Ok(r) if r.is_finite() => (AttributeValue::Real(r), None),
                _ => mismatch(&value),
            },
            other => mismatch(other),
        },
        AttributeKind::Flag => match &value {
            J::Bool(b) => (AttributeValue::Flag(*b), None),
            J::String(s) if s == "true" => (AttributeValue::Flag(true), None),
            J::String(s) if s == "false" => (AttributeValue::Flag(false), None),
            other => mismatch(other),
        },
        AttributeKind::TextList => match &value {
            J::Array(_) => (infer(&value), None),
            J::String(s) => (AttributeValue::TextList(vec![s.clone()]), None),
            other => mismatch(other),
        },
        AttributeKind::Resolution => match &value {
            J::String(s) => match split_resolution(s).and_then(|(w, h)| AttributeValue::resolution(w, h).ok()) {
                Some(v) => (v, None),
                None => mismatch(&value),
            },
            J::Array(items) if items.len() == 2 => {
                let dims: Option<(u32, u32)> = items[0]
                    .as_u64()
                    .zip(items[1].as_u64())
                    .and_then(|(w, h)| Some((u32::try_from(w).ok()?, u32::try_from(h).ok()?)));
                match dims.and_then(|(w, h)| AttributeValue::resolution(w, h).ok()) {
                    Some(v) => (v, None),
                    None => mismatch(&value),
                }
            }
            J::Object(map) => {
                let dims = map
                    .get("width")
                    .and_then(serde_json::Value::as_u64)
                    .zip(map.get("height").and_then(serde_json::Value::as_u64))
                    .and_then(|(w, h)| Some((u32::try_from(w).ok()?, u32::try_from(h).ok()?)));
                match dims.and_then(|(w, h)| AttributeValue::resolution(w, h).ok()) {
                    Some(v) => (v, None),
                    None => mismatch(&value),
                }
            }
            other => mismatch(other),
        },
    }
}

/// Normalizes one JSONL log line into a record.
///
/// Derived attributes (`ua.*` from the user-agent string, `ip.location` and
/// `ip.offsets` from the geo table) are only added when the line does not
/// already carry them, which makes the operation idempotent. Unknown
/// attribute names are preserved untouched.
pub fn normalize_record(
    line: &str,
    source: &str,
    line_no: usize,
    registry: &AttributeRegistry,
    geo: Option<&GeoTable>,
    warnings: &mut Vec<LineIssue>,
) -> Result<FingerprintRecord, NormalizeError> {
    let raw: RawLine = serde_json::from_str(line).map_err(|e| NormalizeError::Json {
        file: source.to_string(),
        line: line_no,
        message: e.to_string(),
    })?;
    let missing = |field: &'static str| NormalizeError::MissingField {
        file: source.to_string(),
        line: line_no,
        field,
    };
    let timestamp = raw.timestamp.ok_or_else(|| missing("timestamp"))?;
    let user_agent = raw.user_agent.ok_or_else(|| missing("user_agent"))?;
    let raw_attrs = raw.attributes.ok_or_else(|| missing("attributes"))?;
    let record_id = raw
        .record_id
        .unwrap_or_else(|| format!("{source}:{line_no}"));
    let source_label = match raw.label.as_deref() {
        None => SourceLabel::Unknown,
        Some(l) => SourceLabel::parse(l).map_err(|e| NormalizeError::BadLine {
            file: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?,
    };
    let mut verdicts = BTreeMap::new();
    for (service, verdict) in raw.verdicts {
        match verdict.as_str() {
            "bot" => verdicts.insert(service, Verdict::Bot),
            "human" => verdicts.insert(service, Verdict::Human),
            other => {
                warnings.push(LineIssue {
                    line: line_no,
                    message: format!("service {service}: unrecognized verdict {other:?}, skipped"),
                });
                None
            }
        };
    }

    let mut attributes = BTreeMap::new();
    for (name, value) in raw_attrs {
        let (coerced, warn) = coerce_value(&name, value, registry);
        if let Some(message) = warn {
            warnings.push(LineIssue { line: line_no, message });
        }
        attributes.insert(name, coerced);
    }

    let ua = parse_user_agent(&user_agent);
    for (name, value) in [
        ("ua.raw", ua.raw),
        ("ua.device", ua.device),
        ("ua.browser", ua.browser),
        ("ua.os", ua.os),
    ] {
        attributes
            .entry(name.to_string())
            .or_insert_with(|| AttributeValue::Text(value));
    }

    let ip = raw.ip.unwrap_or_default();
    if let Some(table) = geo {
        if !attributes.contains_key("ip.location") {
            if parse_ipv4(&ip).is_none() {
                warnings.push(LineIssue {
                    line: line_no,
                    message: format!("ip {ip:?} is hashed or malformed; location unresolvable"),
                });
                attributes.insert("ip.location".into(), AttributeValue::Absent);
            } else {
                match table.lookup(&ip) {
                    Some(row) => {
                        attributes
                            .insert("ip.location".into(), AttributeValue::Text(row.region.clone()));
                        attributes.insert("ip.offsets".into(), row.offsets.to_text_list());
                    }
                    None => {
                        attributes.insert("ip.location".into(), AttributeValue::Absent);
                    }
                }
            }
        }
    }

    Ok(FingerprintRecord {
        record_id,
        timestamp,
        ip,
        cookie_id: raw.cookie_id,
        url_token: raw.url_token,
        attributes,
        verdicts,
        source_label,
    })
}

/// Serializes a record back to the ingestion line format. Feeding the
/// output through [`normalize_record`] again is a no-op.
pub fn record_to_json_line(record: &FingerprintRecord) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("record_id".into(), record.record_id.clone().into());
    obj.insert("timestamp".into(), record.timestamp.into());
    obj.insert("ip".into(), record.ip.clone().into());
    if let Some(c) = &record.cookie_id {
        obj.insert("cookie_id".into(), c.clone().into());
    }
    if let Some(u) = &record.url_token {
        obj.insert("url_token".into(), u.clone().into());
    }
    let user_agent = match record.attr("ua.raw") {
        AttributeValue::Text(s) => s.clone(),
        _ => String::new(),
    };
    obj.insert("user_agent".into(), user_agent.into());
    let attrs: serde_json::Map<String, serde_json::Value> = record
        .attributes
        .iter()
        .map(|(k, v)| (k.clone(), v.to_plain_json()))
        .collect();
    obj.insert("attributes".into(), attrs.into());
    if !record.verdicts.is_empty() {
        let verdicts: serde_json::Map<String, serde_json::Value> = record
            .verdicts
            .iter()
            .map(|(k, v)| {
                (k.clone(), match v {
                    Verdict::Bot => "bot".into(),
                    Verdict::Human => "human".into(),
                })
            })
            .collect();
        obj.insert("verdicts".into(), verdicts.into());
    }
    obj.insert("label".into(), record.source_label.to_string().into());
    serde_json::Value::Object(obj).to_string()
}

/// One warning or error attached to an input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

/// Result of ingesting a whole stream: the records that parsed, plus every
/// per-line error and warning. `records.len() + errors.len()` always equals
/// the number of non-blank input lines.
#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub records: Vec<FingerprintRecord>,
    pub errors: Vec<LineIssue>,
    pub warnings: Vec<LineIssue>,
    /// Non-blank lines seen.
    pub lines: usize,
}

/// Ingests a JSONL document. Blank lines are skipped; malformed lines are
/// collected as errors and never abort the run. Duplicate record ids are
/// reported as warnings.
pub fn ingest_str(
    text: &str,
    source: &str,
    registry: &AttributeRegistry,
    geo: Option<&GeoTable>,
    blocklists: Option<&Blocklists>,
) -> IngestOutcome {
    let mut out = IngestOutcome::default();
    let mut seen_ids = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match normalize_record(line, source, line_no, registry, geo, &mut out.warnings) {
            Ok(mut record) => {
                if !seen_ids.insert(record.record_id.clone()) {
                    out.warnings.push(LineIssue {
                        line: line_no,
                        message: format!("duplicate record_id {:?}", record.record_id),
                    });
                }
                if let Some(lists) = blocklists {
                    annotate_blocklists(&mut record, lists);
                }
                out.records.push(record);
            }
            Err(e) => out.errors.push(LineIssue { line: line_no, message: e.to_string() }),
        }
    }
    out
}

// ── Errors ────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("UTC offset {minutes} min is outside [{MIN_OFFSET_MINUTES}, {MAX_OFFSET_MINUTES}]")]
    OffsetOutOfRange { minutes: i32 },
    #[error("geo table line {line}: {message}")]
    GeoTableParse { line: usize, message: String },
    #[error("asn map line {line}: {message}")]
    AsnMapParse { line: usize, message: String },
    #[error("{file}:{line}: invalid JSON: {message}")]
    Json { file: String, line: usize, message: String },
    #[error("{file}:{line}: missing required field {field:?}")]
    MissingField { file: String, line: usize, field: &'static str },
    #[error("{file}:{line}: {message}")]
    BadLine { file: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_sets_validate_range() {
        assert!(OffsetSet::from_minutes([-720, 840, 0]).is_ok());
        assert!(OffsetSet::from_minutes([-721]).is_err());
        assert!(OffsetSet::from_minutes([841]).is_err());
    }

    #[test]
    fn shipped_timezone_table_spot_values() {
        let la = timezone_to_offsets("America/Los_Angeles").unwrap();
        assert_eq!(la.iter().collect::<Vec<_>>(), vec![-480, -420]);
        let paris = timezone_to_offsets("Europe/Paris").unwrap();
        assert_eq!(paris.iter().collect::<Vec<_>>(), vec![60, 120]);
        let utc = timezone_to_offsets("UTC").unwrap();
        assert_eq!(utc.iter().collect::<Vec<_>>(), vec![0]);
        assert!(timezone_to_offsets("Mars/Olympus_Mons").is_none());
    }

    #[test]
    fn shipped_tables_obey_offset_invariants() {
        for (zone, offsets) in shipped_timezones() {
            let v: Vec<i32> = offsets.iter().collect();
            assert!((1..=2).contains(&v.len()), "{zone} has {} offsets", v.len());
            if v.len() == 2 {
                let delta = v[1] - v[0];
                assert!(delta == 30 || delta == 60, "{zone} DST delta {delta}");
            }
        }
        for (region, offsets) in shipped_regions() {
            assert!(!offsets.is_empty(), "{region} empty");
        }
        let hdf = region_to_offsets("France/Hauts-de-France").unwrap();
        assert_eq!(hdf.iter().collect::<Vec<_>>(), vec![60, 120]);
    }

    #[test]
    fn ipv4_parsing() {
        assert_eq!(parse_ipv4("10.1.2.3"), Some(0x0A010203));
        assert_eq!(parse_ipv4("255.255.255.255"), Some(u32::MAX));
        for bad in ["", "1.2.3", "1.2.3.4.5", "256.1.1.1", "a.b.c.d", "01c2a3f4", "1.2.3.04x"] {
            assert_eq!(parse_ipv4(bad), None, "{bad}");
        }
    }

    #[test]
    fn geo_lookup_prefers_longest_prefix() {
        let table = GeoTable::from_csv_str(
            "10.1.0.0/16,France/Hauts-de-France,60;120\n\
             10.1.128.0/20,France/Ile-de-France,60;120\n\
             10.1.128.77,Germany/Sachsen,60;120\n",
        )
        .unwrap();
        assert_eq!(table.lookup("10.1.1.1").unwrap().region, "France/Hauts-de-France");
        assert_eq!(table.lookup("10.1.129.1").unwrap().region, "France/Ile-de-France");
        assert_eq!(table.lookup("10.1.128.77").unwrap().region, "Germany/Sachsen");
        assert!(table.lookup("10.2.0.1").is_none());
        assert!(table.lookup("not-an-ip").is_none());
        assert!(GeoTable::empty().lookup("10.0.0.1").is_none());
    }

    #[test]
    fn geo_table_parse_errors_carry_line_numbers() {
        let err = GeoTable::from_csv_str("10.1.0.0/16,France/Hauts-de-France,60\nbad line\n")
            .unwrap_err();
        match err {
            NormalizeError::GeoTableParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(GeoTable::from_csv_str("10.1.0.0/40,X/Y,0\n").is_err());
        assert!(GeoTable::from_csv_str("10.1.0.0/16,X/Y,900\n").is_err());
    }

    #[test]
    fn safari_on_linux_is_reported_verbatim() {
        let ua = parse_user_agent(
            "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/605.1.15 (KHTML, like Gecko) (\
             )Version/16.0 Safari/605.1.15",
        );
        assert_eq!(ua.browser, "Safari");
        assert_eq!(ua.os, "Linux");
    }

    fn sample_line() -> String {
        serde_json::json!({
            "record_id": "r1",
            "timestamp": 1_700_000_000_000i64,
            "ip": "10.1.2.3",
            "cookie_id": "c1",
            "user_agent": "Mozilla/5.0 (iPhone; CPU iPhone OS 16_5 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/16.5 Mobile/15E148 Safari/604.1",
            "attributes": {
                "screen.resolution": "1170x2532",
                "hardware.concurrency": 6,
                "device.memory": 4.0,
                "screen.hdr": true,
                "languages": ["en-US", "en"],
                "timezone": "Europe/Paris",
                "custom.blob": "opaque",
                "asn": 64500
            },
            "verdicts": {"svc_a": "human", "svc_b": "bot"},
            "label": "bot:s1"
        })
        .to_string()
    }

    #[test]
    fn normalize_populates_derived_attributes() {
        let registry = AttributeRegistry::shipped();
        let geo = GeoTable::shipped_demo();
        let mut warnings = Vec::new();
        let rec =
            normalize_record(&sample_line(), "t.jsonl", 1, &registry, Some(&geo), &mut warnings)
                .unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(rec.attr("ua.device"), &AttributeValue::text("iPhone"));
        assert_eq!(rec.attr("ua.browser"), &AttributeValue::text("Mobile Safari"));
        assert_eq!(rec.attr("ua.os"), &AttributeValue::text("iOS"));
        assert_eq!(rec.attr("ip.location"), &AttributeValue::text("France/Hauts-de-France"));
        assert_eq!(
            rec.attr("ip.offsets"),
            &AttributeValue::TextList(vec!["60".into(), "120".into()])
        );
        assert_eq!(
            rec.attr("screen.resolution"),
            &AttributeValue::Resolution { width: 1170, height: 2532 }
        );
        assert_eq!(rec.attr("custom.blob"), &AttributeValue::text("opaque"));
        assert_eq!(rec.verdicts["svc_a"], Verdict::Human);
        assert_eq!(rec.source_label, SourceLabel::Bot("s1".into()));
    }

    #[test]
    fn normalize_is_idempotent() {
        let registry = AttributeRegistry::shipped();
        let geo = GeoTable::shipped_demo();
        let mut w = Vec::new();
        let rec =
            normalize_record(&sample_line(), "t.jsonl", 1, &registry, Some(&geo), &mut w).unwrap();
        let line2 = record_to_json_line(&rec);
        let rec2 = normalize_record(&line2, "u.jsonl", 9, &registry, Some(&geo), &mut w).unwrap();
        assert_eq!(rec, rec2);
        assert_eq!(record_to_json_line(&rec2), line2);
    }

    #[test]
    fn hashed_ip_yields_absent_location_and_warning() {
        let registry = AttributeRegistry::shipped();
        let geo = GeoTable::shipped_demo();
        let line = serde_json::json!({
            "timestamp": 1i64, "ip": "3f7a99c0de",
            "user_agent": "curl/7.88.1", "attributes": {}
        })
        .to_string();
        let mut warnings = Vec::new();
        let rec =
            normalize_record(&line, "h.jsonl", 4, &registry, Some(&geo), &mut warnings).unwrap();
        assert_eq!(rec.attr("ip.location"), &AttributeValue::Absent);
        assert_eq!(rec.record_id, "h.jsonl:4");
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].line, 4);
    }

    #[test]
    fn ingest_continues_past_bad_lines() {
        let registry = AttributeRegistry::shipped();
        let text = format!(
            "{}\nnot json at all\n\n{{\"timestamp\": 5}}\n{}\n",
            sample_line(),
            sample_line()
        );
        let out = ingest_str(&text, "mix.jsonl", &registry, None, None);
        assert_eq!(out.lines, 4);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.errors.len(), 2);
        assert_eq!(out.records.len() + out.errors.len(), out.lines);
        assert_eq!(out.errors[0].line, 2);
        assert_eq!(out.errors[1].line, 4);
        assert!(out.errors[1].message.contains("user_agent"));
        // Same record_id on lines 1 and 5.
        assert!(out.warnings.iter().any(|w| w.message.contains("duplicate record_id")));
    }

    #[test]
    fn blocklist_annotation() {
        let registry = AttributeRegistry::shipped();
        let lists = Blocklists {
            ips: Blocklists::load_ips("10.99.1.7\n# c\n\n10.99.2.44\n"),
            asns: Blocklists::load_asns("asn,flag\n64500,true\n64502,false\n").unwrap(),
        };
        let mut w = Vec::new();
        let mut rec =
            normalize_record(&sample_line(), "t.jsonl", 1, &registry, None, &mut w).unwrap();
        annotate_blocklists(&mut rec, &lists);
        assert_eq!(rec.attr("ip.blocklisted"), &AttributeValue::Flag(false));
        assert_eq!(rec.attr("asn.blocklisted"), &AttributeValue::Flag(true));

        rec.ip = "10.99.1.7".into();
        annotate_blocklists(&mut rec, &lists);
        assert_eq!(rec.attr("ip.blocklisted"), &AttributeValue::Flag(true));

        rec.ip = "deadbeef00".into();
        annotate_blocklists(&mut rec, &lists);
        assert_eq!(rec.attr("ip.blocklisted"), &AttributeValue::Absent);
        assert_eq!(rec.attr("asn.blocklisted"), &AttributeValue::Absent);
    }

    #[test]
    fn coercion_mismatches_warn_but_keep_data() {
        let registry = AttributeRegistry::shipped();
        let line = serde_json::json!({
            "timestamp": 1i64, "ip": "10.1.0.1", "user_agent": "curl/7.88.1",
            "attributes": {
                "hardware.concurrency": "not-a-number",
                "screen.resolution": [1920, 1080],
                "plugins": "single",
                "device.memory": "0.5"
            }
        })
        .to_string();
        let mut warnings = Vec::new();
        let rec = normalize_record(&line, "c.jsonl", 1, &registry, None, &mut warnings).unwrap();
        assert_eq!(rec.attr("hardware.concurrency"), &AttributeValue::text("not-a-number"));
        assert_eq!(
            rec.attr("screen.resolution"),
            &AttributeValue::Resolution { width: 1920, height: 1080 }
        );
        assert_eq!(rec.attr("plugins"), &AttributeValue::TextList(vec!["single".into()]));
        assert_eq!(rec.attr("device.memory"), &AttributeValue::Real(0.5));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].message.contains("hardware.concurrency"));
    }
}
