//! The plausibility knowledge base: what real devices can actually report,
//! and which browser/OS/vendor/platform combinations exist in the wild.
//!
//! The KB adjudicates discovery candidates automatically where it can
//! ([`auto_adjudicate`]), so the discover → adjudicate → compile → detect
//! pipeline runs end to end without a reviewer; anything it has no data
//! for is marked `Unknown` and carried to the human review queue.

use std::collections::BTreeMap;
use std::path::Path;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::model::{split_resolution, AttributeValue};
use crate::spatial::{
    Adjudication, AdjudicationEntry, CandidateReport, CatalogField, ComboFamily, PairCount,
    PairVerdict, SetSource, ValuePredicate,
};

use super::matching::literal_matches;
use super::{Literal, RuleError};

/// The knowledge base shipped with the crate.
pub const SHIPPED_KB_JSON: &str = include_str!("../../data/kb.json");

/// What one device model can plausibly report. Empty lists mean "no data"
/// (the KB stays silent), with one exception: `memory` distinguishes
/// "no data" (field omitted) from "this device never exposes the attribute"
/// (explicit empty list) — Safari, for instance, implements no
/// `deviceMemory`, so an iPhone reporting one is a contradiction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resolutions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub touch_required: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub max_touch_points: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concurrency: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub color_depths: Vec<i64>,
    /// Gamut sets in canonical bracket form, e.g. `"[srgb,p3]"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub color_gamuts: Vec<String>,
    /// Profile hints used by the corpus synthesizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub os: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub browsers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

/// Valid attribute combinations, each family keyed by its anchor value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboTable {
    /// browser → valid OS families.
    #[serde(default)]
    pub browser_os: BTreeMap<String, Vec<String>>,
    /// browser → valid `navigator.vendor` strings.
    #[serde(default)]
    pub browser_vendor: BTreeMap<String, Vec<String>>,
    /// browser → valid `navigator.platform` strings.
    #[serde(default)]
    pub browser_platform: BTreeMap<String, Vec<String>>,
    /// vendor → valid platforms.
    #[serde(default)]
    pub platform_vendor: BTreeMap<String, Vec<String>>,
    /// OS family → valid platforms.
    #[serde(default)]
    pub platform_os: BTreeMap<String, Vec<String>>,
}

impl ComboTable {
    pub fn family(&self, family: ComboFamily) -> &BTreeMap<String, Vec<String>> {
        match family {
            ComboFamily::BrowserOs => &self.browser_os,
            ComboFamily::BrowserVendor => &self.browser_vendor,
            ComboFamily::BrowserPlatform => &self.browser_platform,
            ComboFamily::PlatformVendor => &self.platform_vendor,
            ComboFamily::PlatformOs => &self.platform_os,
        }
    }
}

#[derive(Deserialize)]
struct KbDoc {
    #[serde(default)]
    sets: BTreeMap<String, Vec<serde_json::Value>>,
    #[serde(default)]
    devices: BTreeMap<String, DeviceProfile>,
    #[serde(default)]
    valid_combos: ComboTable,
}

/// Device catalog, named value sets, and valid-combination tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    pub sets: BTreeMap<String, Vec<Literal>>,
    pub devices: BTreeMap<String, DeviceProfile>,
    pub valid_combos: ComboTable,
}

static SHIPPED_KB: Lazy<KnowledgeBase> =
    Lazy::new(|| KnowledgeBase::from_json(SHIPPED_KB_JSON).expect("shipped KB is valid"));

impl KnowledgeBase {
    pub fn shipped() -> KnowledgeBase {
        SHIPPED_KB.clone()
    }

    /// Parses the KB JSON document. Set values are strings (a `WxH` string
    /// becomes a resolution literal) or numbers.
    pub fn from_json(text: &str) -> Result<KnowledgeBase, RuleError> {
        let doc: KbDoc = serde_json::from_str(text)
            .map_err(|e| RuleError::KbParse { message: e.to_string() })?;
        let mut sets = BTreeMap::new();
        for (name, values) in doc.sets {
            let mut literals = Vec::with_capacity(values.len());
            for value in values {
                literals.push(json_to_literal(&name, value)?);
            }
            sets.insert(name, literals);
        }
        for (device, profile) in &doc.devices {
            for res in &profile.resolutions {
                if split_resolution(res).is_none() {
                    return Err(RuleError::KbParse {
                        message: format!("device {device:?}: {res:?} is not a WxH resolution"),
                    });
                }
            }
            for gamut in &profile.color_gamuts {
                if !(gamut.starts_with('[') && gamut.ends_with(']')) {
                    return Err(RuleError::KbParse {
                        message: format!(
                            "device {device:?}: gamut {gamut:?} must use bracket form like \"[srgb,p3]\""
                        ),
                    });
                }
            }
        }
        Ok(KnowledgeBase { sets, devices: doc.devices, valid_combos: doc.valid_combos })
    }

    pub fn from_path(path: &Path) -> Result<KnowledgeBase, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn set(&self, name: &str) -> Option<&[Literal]> {
        self.sets.get(name).map(Vec::as_slice)
    }

    pub fn device(&self, name: &str) -> Option<&DeviceProfile> {
        self.devices.get(name)
    }

    /// The literals of one catalog field, or `None` when the catalog has no
    /// data for it (an explicit empty `memory` list returns an empty vec —
    /// that *is* data).
    pub fn catalog_literals(&self, device: &str, field: CatalogField) -> Option<Vec<Literal>> {
        let profile = self.devices.get(device)?;
        match field {
            CatalogField::Resolutions => non_empty(
                profile
                    .resolutions
                    .iter()
                    .filter_map(|s| split_resolution(s))
                    .map(|(width, height)| Literal::Resolution { width, height })
                    .collect(),
            ),
            CatalogField::MaxTouchPoints => {
                non_empty(profile.max_touch_points.iter().map(|n| Literal::Num(*n as f64)).collect())
            }
            CatalogField::Concurrency => {
                non_empty(profile.concurrency.iter().map(|n| Literal::Num(*n as f64)).collect())
            }
            CatalogField::Memory => profile
                .memory
                .as_ref()
                .map(|m| m.iter().map(|n| Literal::Num(*n)).collect()),
            CatalogField::ColorDepths => {
                non_empty(profile.color_depths.iter().map(|n| Literal::Num(*n as f64)).collect())
            }
            CatalogField::ColorGamuts => {
                non_empty(profile.color_gamuts.iter().map(|s| Literal::Str(s.clone())).collect())
            }
        }
    }
}

fn non_empty(v: Vec<Literal>) -> Option<Vec<Literal>> {
    if v.is_empty() {
        None
    } else {
        Some(v)
    }
}

fn json_to_literal(set: &str, value: serde_json::Value) -> Result<Literal, RuleError> {
    match value {
        serde_json::Value::String(s) => Ok(match split_resolution(&s) {
            Some((width, height)) => Literal::Resolution { width, height },
            None => Literal::Str(s),
        }),
        serde_json::Value::Number(n) => n
            .as_f64()
            .map(Literal::Num)
            .ok_or_else(|| RuleError::KbParse { message: format!("set {set:?}: bad number") }),
        other => Err(RuleError::KbParse {
            message: format!("set {set:?}: unsupported literal {other}"),
        }),
    }
}

// ── Automatic adjudication ────────────────────────────────────────────────

/// What the KB knows about one (anchor attribute, companion attribute)
/// orientation.
enum Family {
    Catalog(CatalogField),
    TouchSupport,
    Combo(ComboFamily),
    GeoCovered,
}

fn family_for(attr_a: &str, attr_b: &str) -> Option<Family> {
    match (attr_a, attr_b) {
        ("ua.device", "screen.resolution") => Some(Family::Catalog(CatalogField::Resolutions)),
        ("ua.device", "touch.max_points") => Some(Family::Catalog(CatalogField::MaxTouchPoints)),
        ("ua.device", "hardware.concurrency") => Some(Family::Catalog(CatalogField::Concurrency)),
        ("ua.device", "device.memory") => Some(Family::Catalog(CatalogField::Memory)),
        ("ua.device", "screen.color_depth") => Some(Family::Catalog(CatalogField::ColorDepths)),
        ("ua.device", "screen.color_gamut") => Some(Family::Catalog(CatalogField::ColorGamuts)),
        ("ua.device", "touch.support") => Some(Family::TouchSupport),
        ("ua.browser", "ua.os") => Some(Family::Combo(ComboFamily::BrowserOs)),
        ("ua.browser", "vendor") => Some(Family::Combo(ComboFamily::BrowserVendor)),
        ("ua.browser", "platform") => Some(Family::Combo(ComboFamily::BrowserPlatform)),
        ("vendor", "platform") => Some(Family::Combo(ComboFamily::PlatformVendor)),
        ("ua.os", "platform") => Some(Family::Combo(ComboFamily::PlatformOs)),
        ("ip.location", "timezone") | ("timezone", "ip.location") => Some(Family::GeoCovered),
        _ => None,
    }
}

/// True when any observed companion value falls outside the allowed
/// literals. `Absent` companions are ignored — missing data is not a
/// contradiction.
fn any_violation(pair: &PairCount, allowed: &[Literal]) -> bool {
    pair.values_b
        .iter()
        .filter(|vc| !vc.value.is_absent())
        .any(|vc| !allowed.iter().any(|lit| literal_matches(lit, &vc.value)))
}

fn observed_equals(pair: &PairCount, bad: &AttributeValue) -> bool {
    pair.values_b.iter().any(|vc| &vc.value == bad)
}

/// Renders the KB's verdict over every pair the report ranked, for the
/// orientations the KB understands. Anchors it has no data for come back
/// `Unknown` (carried to human review); orientations outside its families
/// are skipped entirely.
pub fn auto_adjudicate(report: &CandidateReport, kb: &KnowledgeBase) -> Adjudication {
    let mut entries = Vec::new();
    for pair in &report.pairs {
        let Some(family) = family_for(&pair.attr_a, &pair.attr_b) else {
            continue;
        };
        let AttributeValue::Text(anchor) = &pair.value_a else {
            continue;
        };
        let entry = |predicate: ValuePredicate, verdict: PairVerdict, note: String| {
            AdjudicationEntry {
                attr_a: pair.attr_a.clone(),
                value_a: pair.value_a.clone(),
                attr_b: pair.attr_b.clone(),
                predicate,
                verdict,
                note,
            }
        };
        match family {
            Family::GeoCovered => {
                let observed = pair
                    .values_b
                    .first()
                    .map(|vc| vc.value.clone())
                    .unwrap_or(AttributeValue::Absent);
                entries.push(entry(
                    ValuePredicate::Equals { value: observed },
                    PairVerdict::Unknown,
                    "covered by the standing offset-disjointness rule".into(),
                ));
            }
            Family::TouchSupport => match kb.device(anchor).and_then(|d| d.touch_required) {
                Some(required) => {
                    let bad = AttributeValue::text(if required {
                        "none"
                    } else {
                        "touchEvent/touchStart"
                    });
                    let verdict = if observed_equals(pair, &bad) {
                        PairVerdict::Inconsistent
                    } else {
                        PairVerdict::Consistent
                    };
                    let note = if required {
                        format!("{anchor} panels are touchscreens; a no-touch report is fabricated")
                    } else {
                        format!("{anchor} hardware has no touchscreen")
                    };
                    entries.push(entry(ValuePredicate::Equals { value: bad }, verdict, note));
                }
                None => entries.push(entry(
                    ValuePredicate::Equals { value: AttributeValue::text("none") },
                    PairVerdict::Unknown,
                    format!("no touch data for device {anchor:?}"),
                )),
            },
            Family::Catalog(field) => match kb.catalog_literals(anchor, field) {
                Some(allowed) if allowed.is_empty() => {
                    // Known to never expose the attribute (memory only).
                    let violated = pair
                        .values_b
                        .iter()
                        .any(|vc| matches!(vc.value, AttributeValue::Integer(_) | AttributeValue::Real(_)));
                    entries.push(entry(
                        ValuePredicate::Above { bound: 0.0 },
                        if violated { PairVerdict::Inconsistent } else { PairVerdict::Consistent },
                        format!("{anchor} never exposes {}", pair.attr_b),
                    ));
                }
                Some(allowed) => {
                    let verdict = if any_violation(pair, &allowed) {
                        PairVerdict::Inconsistent
                    } else {
                        PairVerdict::Consistent
                    };
                    entries.push(entry(
                        ValuePredicate::NotInSet {
                            set: SetSource::Catalog { device: anchor.clone(), field },
                        },
                        verdict,
                        format!("catalog values for {anchor}"),
                    ));
                }
                None => entries.push(entry(
                    ValuePredicate::NotInSet {
                        set: SetSource::Catalog { device: anchor.clone(), field },
                    },
                    PairVerdict::Unknown,
                    format!("device {anchor:?} not in catalog"),
                )),
            },
            Family::Combo(combo) => match kb.valid_combos.family(combo).get(anchor) {
                Some(valid) => {
                    let allowed: Vec<Literal> =
                        valid.iter().map(|s| Literal::Str(s.clone())).collect();
                    let verdict = if any_violation(pair, &allowed) {
                        PairVerdict::Inconsistent
                    } else {
                        PairVerdict::Consistent
                    };
                    entries.push(entry(
                        ValuePredicate::NotInSet {
                            set: SetSource::Combo { family: combo, key: anchor.clone() },
                        },
                        verdict,
                        format!("valid {} values for {anchor}", pair.attr_b),
                    ));
                }
                None => entries.push(entry(
                    ValuePredicate::NotInSet {
                        set: SetSource::Combo { family: combo, key: anchor.clone() },
                    },
                    PairVerdict::Unknown,
                    format!("no combination data for {anchor:?}"),
                )),
            },
        }
    }
    Adjudication { entries }
}
