//! Core data model: attribute values, fingerprint records, category sets.
//!
//! - [`AttributeValue`] is the closed set of value shapes a fingerprint
//!   attribute can take, including an explicit [`AttributeValue::Absent`].
//! - [`canonical_serialize`] renders any value as a stable, injective string
//!   used everywhere distinctness matters (counting, history sets, digests).
//! - [`AttributeRegistry`] is the closed vocabulary of attribute names and
//!   their expected shapes; unknown names survive ingestion but are invisible
//!   to discovery.
//! - [`AttributeCategorySet`] groups registry attributes into the categories
//!   that pairwise discovery iterates over.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shipped attribute registry (name → expected value shape).
pub const SHIPPED_REGISTRY_JSON: &str = include_str!("../data/registry.json");
/// Shipped category file grouping registry attributes for discovery.
pub const SHIPPED_CATEGORIES_JSON: &str = include_str!("../data/categories.json");

// ── Attribute values ──────────────────────────────────────────────────────

/// One fingerprint attribute value.
///
/// `Absent` is a first-class value: it compares equal to itself, serializes
/// canonically, and participates in distinct-value counting. `Real` values
/// are expected to be finite; ingestion can never produce NaN or infinity
/// (JSON has no encoding for them) and the canonical parser rejects them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeValue {
    Text(String),
    Integer(i64),
    Real(f64),
    Flag(bool),
    /// Ordered list of strings (languages, plugins, gamut tiers, ...).
    TextList(Vec<String>),
    Resolution {
        width: u32,
        height: u32,
    },
    Absent,
}

impl AttributeValue {
    /// True when the value is [`AttributeValue::Absent`].
    pub fn is_absent(&self) -> bool {
        matches!(self, AttributeValue::Absent)
    }

    /// Shorthand used throughout tests and generators.
    pub fn text(s: impl Into<String>) -> Self {
        AttributeValue::Text(s.into())
    }

    /// Builds a resolution value; width and height must both be positive.
    pub fn resolution(width: u32, height: u32) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::InvalidResolution { width, height });
        }
        Ok(AttributeValue::Resolution { width, height })
    }

    /// Plain JSON encoding used by the ingestion line format: strings stay
    /// strings, numbers stay numbers, `Resolution` becomes `"WxH"`, `Absent`
    /// becomes `null`.
    pub fn to_plain_json(&self) -> serde_json::Value {
        match self {
            AttributeValue::Text(s) => serde_json::Value::String(s.clone()),
            AttributeValue::Integer(i) => serde_json::Value::from(*i),
            AttributeValue::Real(r) => serde_json::Value::from(*r),
            AttributeValue::Flag(b) => serde_json::Value::Bool(*b),
            AttributeValue::TextList(items) => {
                serde_json::Value::Array(items.iter().cloned().map(serde_json::Value::from).collect())
            }
            AttributeValue::Resolution { width, height } => {
                serde_json::Value::String(format!("{width}x{height}"))
            }
            AttributeValue::Absent => serde_json::Value::Null,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_serialize(self))
    }
}

/// Escapes one text-list item (`\`, `,`, `[`, `]` get a backslash prefix;
/// the empty item becomes the dedicated `\e` marker so that `[]` stays
/// unambiguous).
fn escape_list_item(item: &str) -> String {
    if item.is_empty() {
        return r"\e".to_string();
    }
    let mut out = String::with_capacity(item.len());
    for c in item.chars() {
        if matches!(c, '\\' | ',' | '[' | ']') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Renders a value as its canonical string form.
///
/// The encoding is injective (distinct values never collide) and stable:
///
/// - `Text("a")` → `"a"` (quoted, `"` and `\` escaped)
/// - `Integer(5)` → `5`
/// - `Real(4.0)` → `4.0` (shortest round-trip float form)
/// - `Flag(true)` → `true`
/// - `TextList(["en-US","en"])` → `[en-US,en]`
/// - `Resolution(1920,1080)` → `1920x1080`
/// - `Absent` → `⊥`
pub fn canonical_serialize(value: &AttributeValue) -> String {
    match value {
        AttributeValue::Text(s) => {
            let mut out = String::with_capacity(s.len() + 2);
            out.push('"');
            for c in s.chars() {
                if matches!(c, '"' | '\\') {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
            out
        }
        AttributeValue::Integer(i) => i.to_string(),
        AttributeValue::Real(r) => format!("{r:?}"),
        AttributeValue::Flag(b) => b.to_string(),
        AttributeValue::TextList(items) => {
            let body: Vec<String> = items.iter().map(|i| escape_list_item(i)).collect();
            format!("[{}]", body.join(","))
        }
        AttributeValue::Resolution { width, height } => format!("{width}x{height}"),
        AttributeValue::Absent => "⊥".to_string(),
    }
}

/// Parses a canonical string back into a value. Inverse of
/// [`canonical_serialize`] on everything that function can produce.
pub fn parse_canonical(s: &str) -> Result<AttributeValue, ModelError> {
    let err = |why: &str| ModelError::CanonicalParse {
        input: s.to_string(),
        reason: why.to_string(),
    };
    if s == "⊥" {
        return Ok(AttributeValue::Absent);
    }
    if s == "true" {
        return Ok(AttributeValue::Flag(true));
    }
    if s == "false" {
        return Ok(AttributeValue::Flag(false));
    }
    if let Some(rest) = s.strip_prefix('"') {
        let body = rest.strip_suffix('"').ok_or_else(|| err("unterminated quote"))?;
        let mut out = String::new();
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some(e @ ('"' | '\\')) => out.push(e),
                    _ => return Err(err("invalid escape in text")),
                }
            } else if c == '"' {
                return Err(err("unescaped quote inside text"));
            } else {
                out.push(c);
            }
        }
        return Ok(AttributeValue::Text(out));
    }
    if let Some(rest) = s.strip_prefix('[') {
        let body = rest.strip_suffix(']').ok_or_else(|| err("unterminated list"))?;
        if body.is_empty() {
            return Ok(AttributeValue::TextList(Vec::new()));
        }
        let mut items = Vec::new();
        let mut cur = String::new();
        let mut cur_is_empty_marker = false;
        let mut cur_len = 0usize;
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some(e @ ('\\' | ',' | '[' | ']')) => {
                        cur.push(e);
                        cur_len += 1;
                    }
                    Some('e') => {
                        cur_is_empty_marker = true;
                        cur_len += 1;
                    }
                    _ => return Err(err("invalid escape in list")),
                },
                ',' => {
                    if cur_is_empty_marker && cur_len != 1 {
                        return Err(err("empty-item marker mixed with content"));
                    }
                    items.push(std::mem::take(&mut cur));
                    cur_is_empty_marker = false;
                    cur_len = 0;
                }
                other => {
                    cur.push(other);
                    cur_len += 1;
                }
            }
        }
        if cur_is_empty_marker && cur_len != 1 {
            return Err(err("empty-item marker mixed with content"));
        }
        items.push(cur);
        return Ok(AttributeValue::TextList(items));
    }
    if let Some((w, h)) = split_resolution(s) {
        return AttributeValue::resolution(w, h);
    }
    if s.chars().next().is_some_and(|c| c == '-' || c.is_ascii_digit())
        && s.chars().skip(1).all(|c| c.is_ascii_digit())
        && s.chars().any(|c| c.is_ascii_digit())
    {
        let i: i64 = s.parse().map_err(|_| err("integer out of range"))?;
        return Ok(AttributeValue::Integer(i));
    }
    let r: f64 = s.parse().map_err(|_| err("not a recognized value form"))?;
    if !r.is_finite() {
        return Err(err("non-finite real"));
    }
    Ok(AttributeValue::Real(r))
}

/// Splits `"1920x1080"` into `(1920, 1080)`; `None` when the string is not
/// exactly `<digits>x<digits>`.
pub fn split_resolution(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once('x')?;
    if w.is_empty() || h.is_empty() {
        return None;
    }
    if !w.bytes().all(|b| b.is_ascii_digit()) || !h.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((w.parse().ok()?, h.parse().ok()?))
}

// ── Records ───────────────────────────────────────────────────────────────

/// Decision a third-party detection service attached to a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bot,
    Human,
}

/// Ground-truth provenance of a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    /// Traffic produced by a known bot source; the tag names it.
    Bot(String),
    Human,
    Unknown,
}

impl SourceLabel {
    /// Parses the `label` field of an ingestion line (`"bot:<tag>"`,
    /// `"human"`, `"unknown"`).
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if let Some(tag) = s.strip_prefix("bot:") {
            if tag.is_empty() {
                return Err(ModelError::BadLabel { label: s.to_string() });
            }
            return Ok(SourceLabel::Bot(tag.to_string()));
        }
        match s {
            "human" => Ok(SourceLabel::Human),
            "unknown" => Ok(SourceLabel::Unknown),
            _ => Err(ModelError::BadLabel { label: s.to_string() }),
        }
    }

    pub fn is_bot(&self) -> bool {
        matches!(self, SourceLabel::Bot(_))
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceLabel::Bot(tag) => write!(f, "bot:{tag}"),
            SourceLabel::Human => f.write_str("human"),
            SourceLabel::Unknown => f.write_str("unknown"),
        }
    }
}

/// One fingerprinting request with its attributes and any third-party
/// verdicts that were recorded alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    /// Unique within a dataset; ingestion synthesizes `<file>:<line>` when
    /// the log line carries none.
    pub record_id: String,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Dotted-quad IPv4, or an opaque hash when the source anonymizes.
    pub ip: String,
    pub cookie_id: Option<String>,
    pub url_token: Option<String>,
    /// Attribute name → value. Names outside the registry are preserved
    /// here but ignored by discovery.
    pub attributes: BTreeMap<String, AttributeValue>,
    /// Detection-service name → verdict.
    pub verdicts: BTreeMap<String, Verdict>,
    pub source_label: SourceLabel,
}

impl FingerprintRecord {
    /// Attribute lookup that folds "missing" into [`AttributeValue::Absent`].
    pub fn attr(&self, name: &str) -> &AttributeValue {
        self.attributes.get(name).unwrap_or(&AttributeValue::Absent)
    }
}

// ── Attribute registry ────────────────────────────────────────────────────

/// Expected shape of a registered attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Text,
    Integer,
    Real,
    Flag,
    TextList,
    Resolution,
}

/// Closed vocabulary of attribute names. Discovery and the rule language
/// only accept registered names; ingestion keeps unknown names as opaque
/// extras.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRegistry {
    kinds: BTreeMap<String, AttributeKind>,
}

impl AttributeRegistry {
    /// The registry shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_REGISTRY_JSON).expect("shipped registry is valid")
    }

    /// Loads a registry from a JSON object `{"name": "kind", ...}`.
    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let kinds: BTreeMap<String, AttributeKind> =
            serde_json::from_str(json).map_err(|e| ModelError::RegistryParse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        for name in kinds.keys() {
            if !is_valid_attribute_name(name) {
                return Err(ModelError::BadAttributeName { name: name.clone() });
            }
        }
        Ok(AttributeRegistry { kinds })
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn kind(&self, name: &str) -> Option<AttributeKind> {
        self.kinds.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kinds.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Registered names are lowercase dotted identifiers (`ua.device`,
/// `hardware.concurrency`, `platform`).
pub fn is_valid_attribute_name(name: &str) -> bool {
    !name.is_empty()
        && name.split('.').all(|seg| {
            !seg.is_empty()
                && seg.chars().next().is_some_and(|c| c.is_ascii_lowercase())
                && seg.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        })
}

// ── Category sets ─────────────────────────────────────────────────────────

/// Named groups of attributes; discovery enumerates attribute pairs inside
/// each group. An attribute may appear in any number of groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCategorySet {
    categories: BTreeMap<String, Vec<String>>,
}

impl AttributeCategorySet {
    /// The category set shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CATEGORIES_JSON, &AttributeRegistry::shipped())
            .expect("shipped categories are valid")
    }

    /// Parses `{"Category": ["attr", ...], ...}`, validating every attribute
    /// against the registry. An empty (or whitespace-only) document is a
    /// valid empty set.
    pub fn from_json(json: &str, registry: &AttributeRegistry) -> Result<Self, ModelError> {
        if json.trim().is_empty() {
            return Ok(AttributeCategorySet { categories: BTreeMap::new() });
        }
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| ModelError::CategoryParse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        let mut unknown = BTreeSet::new();
        let mut categories = BTreeMap::new();
        for (cat, attrs) in raw {
            let mut seen = BTreeSet::new();
            let mut list = Vec::new();
            for a in attrs {
                if !registry.contains(&a) {
                    unknown.insert(a.clone());
                }
                if seen.insert(a.clone()) {
                    list.push(a);
                }
            }
            categories.insert(cat, list);
        }
        if !unknown.is_empty() {
            return Err(ModelError::UnknownAttributes {
                names: unknown.into_iter().collect::<Vec<_>>().join(", "),
            });
        }
        Ok(AttributeCategorySet { categories })
    }

    pub fn from_path(path: &Path, registry: &AttributeRegistry) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, registry)
    }

    pub fn get(&self, category: &str) -> Option<&[String]> {
        self.categories.get(category).map(Vec::as_slice)
    }

    /// Categories in name order (stable across runs).
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

// ── Errors ────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid resolution {width}x{height}: dimensions must be positive")]
    InvalidResolution { width: u32, height: u32 },
    #[error("cannot parse canonical value {input:?}: {reason}")]
    CanonicalParse { input: String, reason: String },
    #[error("invalid source label {label:?} (expected \"bot:<tag>\", \"human\" or \"unknown\")")]
    BadLabel { label: String },
    #[error("registry parse error at line {line}, column {column}: {message}")]
    RegistryParse { line: usize, column: usize, message: String },
    #[error("attribute name {name:?} is not a lowercase dotted identifier")]
    BadAttributeName { name: String },
    #[error("category file parse error at line {line}, column {column}: {message}")]
    CategoryParse { line: usize, column: usize, message: String },
    #[error("category file references unknown attributes: {names}")]
    UnknownAttributes { names: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
