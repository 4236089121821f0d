//! Deterministic synthetic traffic generator.
//!
//! - humans are drawn straight from the device catalog, so every attribute
//!   is consistent by construction;
//! - bots start from the same catalog and then lie: per-attribute
//!   resampling, optional clock-zone mismatches, optional cookie reuse
//!   while the hardware story keeps changing;
//! - baseline anti-bot verdicts are simulated from configurable evasion
//!   probabilities, since no external service can be called offline;
//! - the seed determines every byte of the output.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AttributeRegistry, AttributeValue, FingerprintRecord, SourceLabel, Verdict};
use crate::normalize::{record_to_json_line, region_to_offsets, timezone_to_offsets};
use crate::rules::KnowledgeBase;

/// Label tag carried by every generated bot record.
pub const BOT_TAG: &str = "synth";

/// Generator settings for the shipped evaluation benchmark.
pub const SHIPPED_BENCH_CONFIG_JSON: &str = include_str!("../data/bench_config.json");

/// Parses [`SHIPPED_BENCH_CONFIG_JSON`].
pub fn shipped_bench_config() -> SynthConfig {
    SynthConfig::from_json(SHIPPED_BENCH_CONFIG_JSON).expect("shipped benchmark config parses")
}

/// (address prefix, table region, one zone whose offsets overlap it).
/// Every triple is checked against the shipped tables by a unit test, so
/// a data edit cannot silently break the generator's consistency promise.
const GEO_CHOICES: &[(&str, &str, &str)] = &[
    ("10.1", "France/Hauts-de-France", "Europe/Paris"),
    ("10.2", "Germany/Sachsen", "Europe/Berlin"),
    ("10.3", "Singapore/Singapore", "Asia/Singapore"),
    ("10.4", "United States of America/California", "America/Los_Angeles"),
    ("10.5", "United States of America/Virginia", "America/New_York"),
    ("10.6", "United Kingdom/England", "Europe/London"),
    ("10.7", "Japan/Tokyo", "Asia/Tokyo"),
    ("10.15", "South Korea/Seoul", "Asia/Seoul"),
];

/// Zones a mismatching bot may claim; between them they cover offsets far
/// enough east and west that every region above has a disjoint candidate.
const MISMATCH_ZONES: &[&str] = &[
    "Asia/Shanghai",
    "Asia/Tokyo",
    "America/Phoenix",
    "America/Los_Angeles",
    "Europe/Paris",
    "Pacific/Auckland",
];

const LANGUAGE_POOLS: &[&[&str]] = &[
    &["en-US", "en"],
    &["fr-FR", "fr"],
    &["de-DE", "de"],
    &["en-GB", "en"],
    &["ja-JP", "ja"],
    &["ko-KR", "ko"],
    &["es-ES", "es"],
];

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u32,
    pub max: u32,
}

/// How a bot identity departs from its catalog profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotAlteration {
    /// Attributes the bot is willing to lie about.
    pub attrs_altered: Vec<String>,
    /// `true`: each attribute is resampled on its own, which is what
    /// produces impossible combinations. `false`: the request borrows all
    /// altered attributes coherently from one other catalog device.
    pub independent: bool,
    /// Per-request, per-attribute probability that the lie actually
    /// happens. Without this sparsity every request would be inconsistent.
    pub alter_prob: f64,
    /// Probability that a request claims a clock zone disjoint from its
    /// network location.
    pub geo_mismatch_prob: f64,
    /// Probability that the identity keeps one cookie across requests
    /// (mutating attributes under a stable identifier).
    pub cookie_retention_prob: f64,
}

/// Simulated external anti-bot services.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineVerdictModel {
    /// service → attribute → probability the service is evaded when that
    /// attribute was altered on the request. The per-request evasion
    /// probability is the maximum over the attributes actually altered.
    pub evasion_prob_given_altered: BTreeMap<String, BTreeMap<String, f64>>,
    /// service → evasion probability for a bot request that kept its
    /// catalog profile untouched.
    #[serde(default)]
    pub base_evasion: BTreeMap<String, f64>,
}

impl BaselineVerdictModel {
    /// All service names the model knows about.
    pub fn services(&self) -> BTreeSet<String> {
        self.evasion_prob_given_altered
            .keys()
            .chain(self.base_evasion.keys())
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_humans: u32,
    pub n_bots: u32,
    pub requests_per_identity: IntRange,
    pub bot_alteration: BotAlteration,
    pub baseline_verdict_model: BaselineVerdictModel,
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        serde_json::from_str(text).map_err(|e| SynthError::Config { message: e.to_string() })
    }

    /// Rejects out-of-range probabilities, empty request ranges, and lies
    /// about attributes the registry does not know.
    pub fn validate(&self, registry: &AttributeRegistry) -> Result<(), SynthError> {
        let b = &self.bot_alteration;
        for (name, p) in [
            ("alter_prob", b.alter_prob),
            ("geo_mismatch_prob", b.geo_mismatch_prob),
            ("cookie_retention_prob", b.cookie_retention_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::BadProbability { field: name.into(), value: p });
            }
        }
        for per_attr in self.baseline_verdict_model.evasion_prob_given_altered.values() {
            for (attr, p) in per_attr {
                if !(0.0..=1.0).contains(p) {
                    return Err(SynthError::BadProbability {
                        field: format!("evasion_prob_given_altered[{attr}]"),
                        value: *p,
                    });
                }
            }
        }
        for (service, p) in &self.baseline_verdict_model.base_evasion {
            if !(0.0..=1.0).contains(p) {
                return Err(SynthError::BadProbability {
                    field: format!("base_evasion[{service}]"),
                    value: *p,
                });
            }
        }
        let r = self.requests_per_identity;
        if r.min == 0 || r.min > r.max {
            return Err(SynthError::BadRange { min: r.min, max: r.max });
        }
        for attr in &b.attrs_altered {
            if !registry.contains(attr) {
                return Err(SynthError::UnknownAttribute { name: attr.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad generator config: {message}")]
    Config { message: String },
    #[error("{field} = {value} is not a probability")]
    BadProbability { field: String, value: f64 },
    #[error("requests_per_identity {min}..{max} is empty or zero")]
    BadRange { min: u32, max: u32 },
    #[error("cannot alter unknown attribute {name:?}")]
    UnknownAttribute { name: String },
    #[error("the knowledge base has no devices to draw from")]
    EmptyCatalog,
}

// ── Profile drawing ───────────────────────────────────────────────────────

/// One identity's stable story: the device it claims to be plus where its
/// traffic comes from.
struct Profile {
    device: String,
    browser: String,
    os: String,
    platform: String,
    vendor: String,
    resolution: String,
    touch_support: String,
    max_touch_points: i64,
    concurrency: i64,
    memory: Option<f64>,
    color_depth: i64,
    color_gamut: Vec<String>,
    languages: Vec<String>,
    ip: String,
    region: String,
    timezone: String,
}

fn vendor_for(browser: &str) -> &'static str {
    match browser {
        "Safari" | "Mobile Safari" | "Chrome Mobile iOS" | "Firefox iOS" => "Apple Computer, Inc.",
        "Firefox" => "",
        _ => "Google Inc.",
    }
}

fn pick<'a, T>(rng: &mut ChaCha12Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn gamut_segments(bracket: &str) -> Vec<String> {
    bracket
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn draw_profile(rng: &mut ChaCha12Rng, kb: &KnowledgeBase) -> Result<Profile, SynthError> {
    let names: Vec<&String> = kb.devices.keys().collect();
    if names.is_empty() {
        return Err(SynthError::EmptyCatalog);
    }
    let device = (*pick(rng, &names)).clone();
    let d = &kb.devices[&device];
    let browser = if d.browsers.is_empty() {
        "Chrome".to_string()
    } else {
        pick(rng, &d.browsers).clone()
    };
    let (prefix, region, timezone) = *pick(rng, GEO_CHOICES);
    let ip = format!("{prefix}.{}.{}", rng.gen_range(1..=250), rng.gen_range(1..=250));
    Ok(Profile {
        vendor: vendor_for(&browser).to_string(),
        os: d.os.clone().unwrap_or_else(|| "Android".into()),
        platform: d.platform.clone().unwrap_or_else(|| "Linux armv8l".into()),
        resolution: pick(rng, &d.resolutions).clone(),
        touch_support: if d.touch_required == Some(true) {
            "touchEvent/touchStart".into()
        } else {
            "none".into()
        },
        max_touch_points: *pick(rng, &d.max_touch_points),
        concurrency: *pick(rng, &d.concurrency),
        memory: match &d.memory {
            Some(values) if !values.is_empty() => Some(*pick(rng, values)),
            _ => None,
        },
        color_depth: *pick(rng, &d.color_depths),
        color_gamut: gamut_segments(pick(rng, &d.color_gamuts)),
        languages: pick(rng, LANGUAGE_POOLS).iter().map(|s| s.to_string()).collect(),
        ip,
        region: region.to_string(),
        timezone: timezone.to_string(),
        device,
        browser,
    })
}

/// Renders a user-agent string that spells out exactly the claimed device,
/// browser and OS families. The string is texture: the generated records
/// also carry explicit `ua.*` attributes, which ingestion preserves.
fn build_user_agent(device: &str, browser: &str, os: &str) -> String {
    let paren = match device {
        "iPhone" => "(iPhone; CPU iPhone OS 15_6 like Mac OS X)".to_string(),
        "iPad" => "(iPad; CPU OS 15_6 like Mac OS X)".to_string(),
        "iPod" => "(iPod touch; CPU iPhone OS 15_6 like Mac OS X)".to_string(),
        "Mac" => "(Macintosh; Intel Mac OS X 10_15_7)".to_string(),
        _ if os == "Windows" => "(Windows NT 10.0; Win64; x64)".to_string(),
        other => {
            let model = other
                .strip_prefix("Samsung SM-")
                .map(|rest| format!("SM-{rest}"))
                .or_else(|| other.strip_prefix("XiaoMi ").map(str::to_string))
                .unwrap_or_else(|| other.to_string());
            format!("(Linux; Android 12; {model})")
        }
    };
    let engine = match browser {
        "Mobile Safari" => "Version/15.6 Mobile/15E148 Safari/604.1",
        "Safari" => "Version/16.5 Safari/605.1.15",
        "Chrome Mobile" => "Chrome/101.0.4951.61 Mobile Safari/537.36",
        "Chrome Mobile iOS" => "CriOS/103.0.5060.63 Mobile/15E148 Safari/604.1",
        "Chrome Mobile WebView" => "Chrome/101.0.4951.61 Mobile Safari/537.36 wv",
        "Chrome" => "Chrome/101.0.4951.64 Safari/537.36",
        "Samsung Internet" => "SamsungBrowser/17.0 Chrome/96.0.4664.104 Mobile Safari/537.36",
        "MiuiBrowser" => {
            "Version/4.0 Chrome/79.0.3945.116 Mobile Safari/537.36 XiaoMi/MiuiBrowser/12.10.5-gn"
        }
        "UC Browser" => "Version/4.0 Chrome/78.0.3904.108 UCBrowser/13.4.0.1306 Mobile Safari/537.36",
        "Firefox iOS" => "FxiOS/36.0 Mobile/15E148 Safari/605.1.15",
        "Firefox" => "Gecko/20100101 Firefox/100.0",
        "Edge" => "Chrome/100.0.4896.127 Safari/537.36 Edg/100.0.1185.44",
        _ => "CustomAgent/1.0",
    };
    format!("Mozilla/5.0 {paren} AppleWebKit/537.36 (KHTML, like Gecko) {engine}")
}

fn profile_attributes(p: &Profile) -> BTreeMap<String, AttributeValue> {
    let (width, height) = split_wh(&p.resolution);
    let mut attrs = BTreeMap::new();
    attrs.insert("ua.device".into(), AttributeValue::text(&p.device));
    attrs.insert("ua.browser".into(), AttributeValue::text(&p.browser));
    attrs.insert("ua.os".into(), AttributeValue::text(&p.os));
    attrs.insert("platform".into(), AttributeValue::text(&p.platform));
    attrs.insert("vendor".into(), AttributeValue::text(&p.vendor));
    attrs.insert(
        "screen.resolution".into(),
        AttributeValue::resolution(width, height).expect("catalog sizes are positive"),
    );
    attrs.insert("touch.support".into(), AttributeValue::text(&p.touch_support));
    attrs.insert("touch.max_points".into(), AttributeValue::Integer(p.max_touch_points));
    attrs.insert("hardware.concurrency".into(), AttributeValue::Integer(p.concurrency));
    if let Some(m) = p.memory {
        attrs.insert("device.memory".into(), AttributeValue::Real(m));
    }
    attrs.insert("screen.color_depth".into(), AttributeValue::Integer(p.color_depth));
    attrs.insert("screen.color_gamut".into(), AttributeValue::TextList(p.color_gamut.clone()));
    attrs.insert("languages".into(), AttributeValue::TextList(p.languages.clone()));
    attrs.insert("timezone".into(), AttributeValue::text(&p.timezone));
    attrs
}

fn split_wh(s: &str) -> (u32, u32) {
    let (w, h) = s.split_once('x').expect("catalog resolution is WxH");
    (w.parse().expect("width"), h.parse().expect("height"))
}

// ── Bot lies ──────────────────────────────────────────────────────────────

/// Per-attribute universes a lying bot draws from: the union of every
/// catalog device's values plus a few off-catalog ones, so a resample
/// usually lands on a value that is plausible somewhere — just not here.
struct LiePools {
    devices: Vec<String>,
    resolutions: Vec<String>,
    touch_points: Vec<i64>,
    concurrency: Vec<i64>,
    memory: Vec<f64>,
    color_depths: Vec<i64>,
    color_gamuts: Vec<Vec<String>>,
    browsers: Vec<String>,
    oses: Vec<String>,
    platforms: Vec<String>,
    vendors: Vec<String>,
}

impl LiePools {
    fn from_catalog(kb: &KnowledgeBase) -> LiePools {
        let mut resolutions = BTreeSet::new();
        let mut touch_points = BTreeSet::new();
        let mut concurrency = BTreeSet::new();
        let mut memory = BTreeSet::new();
        let mut color_depths = BTreeSet::new();
        let mut color_gamuts = BTreeSet::new();
        let mut browsers = BTreeSet::new();
        let mut oses = BTreeSet::new();
        let mut platforms = BTreeSet::new();
        for d in kb.devices.values() {
            resolutions.extend(d.resolutions.iter().cloned());
            touch_points.extend(d.max_touch_points.iter().copied());
            concurrency.extend(d.concurrency.iter().copied());
            memory.extend(d.memory.iter().flatten().map(|m| (m * 4.0) as i64));
            color_depths.extend(d.color_depths.iter().copied());
            color_gamuts.extend(d.color_gamuts.iter().cloned());
            browsers.extend(d.browsers.iter().cloned());
            oses.extend(d.os.iter().cloned());
            platforms.extend(d.platform.iter().cloned());
        }
        resolutions.extend(["1366x768".to_string(), "1920x1080".to_string()]);
        touch_points.extend([0, 1, 256]);
        concurrency.extend([1, 16, 64]);
        memory.extend([12i64, 64]); // quarter-GiB units: 3 and 16
        color_depths.extend([8, 16]);
        oses.extend(["Windows".to_string(), "Linux".to_string()]);
        platforms.extend(["Win32".to_string(), "Win64".to_string()]);
        LiePools {
            devices: kb.devices.keys().cloned().collect(),
            resolutions: resolutions.into_iter().collect(),
            touch_points: touch_points.into_iter().collect(),
            concurrency: concurrency.into_iter().collect(),
            memory: memory.into_iter().map(|q| q as f64 / 4.0).collect(),
            color_depths: color_depths.into_iter().collect(),
            color_gamuts: color_gamuts.iter().map(|g| gamut_segments(g)).collect(),
            browsers: browsers.into_iter().collect(),
            oses: oses.into_iter().collect(),
            platforms: platforms.into_iter().collect(),
            vendors: vec!["Apple Computer, Inc.".into(), "Google Inc.".into(), String::new()],
        }
    }

    fn resample(&self, rng: &mut ChaCha12Rng, attr: &str) -> Option<AttributeValue> {
        Some(match attr {
            "ua.device" => AttributeValue::text(pick(rng, &self.devices)),
            "ua.browser" => AttributeValue::text(pick(rng, &self.browsers)),
            "ua.os" => AttributeValue::text(pick(rng, &self.oses)),
            "platform" => AttributeValue::text(pick(rng, &self.platforms)),
            "vendor" => AttributeValue::text(pick(rng, &self.vendors)),
            "screen.resolution" => {
                let (w, h) = split_wh(pick(rng, &self.resolutions));
                AttributeValue::resolution(w, h).expect("pool sizes are positive")
            }
            "touch.support" => {
                AttributeValue::text(*pick(rng, &["none", "touchEvent/touchStart"]))
            }
            "touch.max_points" => AttributeValue::Integer(*pick(rng, &self.touch_points)),
            "hardware.concurrency" => AttributeValue::Integer(*pick(rng, &self.concurrency)),
            "device.memory" => AttributeValue::Real(*pick(rng, &self.memory)),
            "screen.color_depth" => AttributeValue::Integer(*pick(rng, &self.color_depths)),
            "screen.color_gamut" => {
                AttributeValue::TextList(pick(rng, &self.color_gamuts).clone())
            }
            "plugins" => AttributeValue::TextList(vec![]),
            "languages" => {
                AttributeValue::TextList(pick(rng, LANGUAGE_POOLS).iter().map(|s| s.to_string()).collect())
            }
            "timezone" => AttributeValue::text(*pick(rng, MISMATCH_ZONES)),
            _ => return None,
        })
    }

    /// Coherent value of `attr` on catalog device `device`, if it has one.
    fn coherent(&self, rng: &mut ChaCha12Rng, kb: &KnowledgeBase, device: &str, attr: &str) -> Option<AttributeValue> {
        let d = kb.device(device)?;
        Some(match attr {
            "ua.device" => AttributeValue::text(device),
            "ua.browser" if !d.browsers.is_empty() => AttributeValue::text(pick(rng, &d.browsers)),
            "ua.os" => AttributeValue::text(d.os.as_deref()?),
            "platform" => AttributeValue::text(d.platform.as_deref()?),
            "screen.resolution" => {
                let (w, h) = split_wh(pick(rng, &d.resolutions));
                AttributeValue::resolution(w, h).expect("catalog sizes are positive")
            }
            "touch.support" => AttributeValue::text(if d.touch_required? {
                "touchEvent/touchStart"
            } else {
                "none"
            }),
            "touch.max_points" => AttributeValue::Integer(*pick(rng, &d.max_touch_points)),
            "hardware.concurrency" => AttributeValue::Integer(*pick(rng, &d.concurrency)),
            "device.memory" => match d.memory.as_deref() {
                Some([]) | None => return None,
                Some(values) => AttributeValue::Real(*pick(rng, values)),
            },
            "screen.color_depth" => AttributeValue::Integer(*pick(rng, &d.color_depths)),
            "screen.color_gamut" => {
                AttributeValue::TextList(gamut_segments(pick(rng, &d.color_gamuts)))
            }
            _ => return None,
        })
    }
}

/// Picks a zone whose possible offsets are disjoint from the region's.
fn disjoint_zone(rng: &mut ChaCha12Rng, region: &str) -> Option<&'static str> {
    let region_offsets = region_to_offsets(region)?;
    let candidates: Vec<&'static str> = MISMATCH_ZONES
        .iter()
        .copied()
        .filter(|zone| {
            timezone_to_offsets(zone).is_some_and(|offsets| !offsets.intersects(region_offsets))
        })
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(pick(rng, &candidates))
    }
}

// ── Identity generation ───────────────────────────────────────────────────

const TIMESTAMP_BASE: i64 = 1_700_000_000_000;

fn identity_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn request_count(rng: &mut ChaCha12Rng, range: IntRange) -> u32 {
    rng.gen_range(range.min..=range.max)
}

/// All requests of one catalog-consistent human identity.
pub fn gen_human(config: &SynthConfig, kb: &KnowledgeBase, identity: u32) -> Result<Vec<FingerprintRecord>, SynthError> {
    let mut rng = identity_rng(config.seed, u64::from(identity) * 2);
    let profile = draw_profile(&mut rng, kb)?;
    let attrs = profile_attributes(&profile);
    let ua = build_user_agent(&profile.device, &profile.browser, &profile.os);
    let n = request_count(&mut rng, config.requests_per_identity);
    let start = TIMESTAMP_BASE + i64::from(identity) * 97_000;
    let services = config.baseline_verdict_model.services();

    let mut records = Vec::with_capacity(n as usize);
    for r in 0..n {
        let mut attributes = attrs.clone();
        attributes.insert("ua.raw".into(), AttributeValue::text(&ua));
        records.push(FingerprintRecord {
            record_id: format!("h{identity:05}-r{r:02}"),
            timestamp: start + i64::from(r) * 31_000,
            ip: profile.ip.clone(),
            cookie_id: Some(format!("hc{identity:05}")),
            url_token: Some(format!("tok{:02}", identity % 7)),
            attributes,
            verdicts: services.iter().map(|s| (s.clone(), Verdict::Human)).collect(),
            source_label: SourceLabel::Human,
        });
    }
    Ok(records)
}

/// All requests of one lying bot identity.
pub fn gen_bot(config: &SynthConfig, kb: &KnowledgeBase, identity: u32) -> Result<Vec<FingerprintRecord>, SynthError> {
    gen_bot_pooled(config, kb, &LiePools::from_catalog(kb), identity)
}

fn gen_bot_pooled(
    config: &SynthConfig,
    kb: &KnowledgeBase,
    pools: &LiePools,
    identity: u32,
) -> Result<Vec<FingerprintRecord>, SynthError> {
    let mut rng = identity_rng(config.seed, u64::from(identity) * 2 + 1);
    let profile = draw_profile(&mut rng, kb)?;
    let base_attrs = profile_attributes(&profile);
    let alteration = &config.bot_alteration;
    let n = request_count(&mut rng, config.requests_per_identity);
    let retained = rng.gen_bool(alteration.cookie_retention_prob);
    let start = TIMESTAMP_BASE + 13_000 + i64::from(identity) * 97_000;
    let model = &config.baseline_verdict_model;

    let mut records = Vec::with_capacity(n as usize);
    for r in 0..n {
        let mut attributes = base_attrs.clone();
        let mut altered: Vec<&str> = Vec::new();

        if alteration.independent {
            for attr in &alteration.attrs_altered {
                if rng.gen_bool(alteration.alter_prob) {
                    if let Some(value) = pools.resample(&mut rng, attr) {
                        attributes.insert(attr.clone(), value);
                        altered.push(attr);
                    }
                }
            }
        } else if rng.gen_bool(alteration.alter_prob) {
            // One coherent borrowed identity per request.
            let borrowed = pick(&mut rng, &pools.devices).clone();
            for attr in &alteration.attrs_altered {
                if let Some(value) = pools.coherent(&mut rng, kb, &borrowed, attr) {
                    attributes.insert(attr.clone(), value);
                    altered.push(attr);
                }
            }
        }

        if rng.gen_bool(alteration.geo_mismatch_prob) {
            if let Some(zone) = disjoint_zone(&mut rng, &profile.region) {
                attributes.insert("timezone".into(), AttributeValue::text(zone));
                altered.push("timezone");
            }
        }

        // The user-agent string restates whatever the record now claims.
        let claim = |name: &str| match attributes.get(name) {
            Some(AttributeValue::Text(s)) => s.clone(),
            _ => String::new(),
        };
        let ua = build_user_agent(&claim("ua.device"), &claim("ua.browser"), &claim("ua.os"));
        attributes.insert("ua.raw".into(), AttributeValue::text(&ua));

        let mut verdicts = BTreeMap::new();
        for service in model.services() {
            let evade = altered
                .iter()
                .filter_map(|attr| {
                    model
                        .evasion_prob_given_altered
                        .get(&service)
                        .and_then(|per| per.get(*attr))
                        .copied()
                })
                .fold(None::<f64>, |acc, p| Some(acc.map_or(p, |a| a.max(p))))
                .unwrap_or_else(|| model.base_evasion.get(&service).copied().unwrap_or(0.0));
            let verdict = if rng.gen_bool(evade) { Verdict::Human } else { Verdict::Bot };
            verdicts.insert(service, verdict);
        }

        let cookie = if retained {
            format!("bc{identity:05}")
        } else {
            format!("bc{identity:05}-{r:02}")
        };
        records.push(FingerprintRecord {
            record_id: format!("b{identity:05}-r{r:02}"),
            timestamp: start + i64::from(r) * 29_000,
            ip: profile.ip.clone(),
            cookie_id: Some(cookie),
            url_token: Some(format!("tok{:02}", (identity + 3) % 7)),
            attributes,
            verdicts,
            source_label: SourceLabel::Bot(BOT_TAG.into()),
        });
    }
    Ok(records)
}

/// The whole corpus: every identity generated independently, then the
/// line order shuffled by a seed-derived permutation.
pub fn gen_corpus(config: &SynthConfig, kb: &KnowledgeBase) -> Result<Vec<FingerprintRecord>, SynthError> {
    config.validate(&AttributeRegistry::shipped())?;
    let pools = LiePools::from_catalog(kb);
    let mut records = Vec::new();
    for i in 0..config.n_humans {
        records.extend(gen_human(config, kb, i)?);
    }
    for i in 0..config.n_bots {
        records.extend(gen_bot_pooled(config, kb, &pools, i)?);
    }
    let mut rng = identity_rng(config.seed, u64::MAX);
    records.shuffle(&mut rng);
    Ok(records)
}

/// Serializes a corpus in the ingestion line format.
pub fn corpus_to_jsonl(records: &[FingerprintRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&record_to_json_line(record));
        out.push('\n');
    }
    out
}
