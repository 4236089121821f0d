//! The filter-rule language and its engines.
//!
//! Rules live in a line-oriented text format, diffable like an ad-block
//! filter list:
//!
//! ```text
//! # Sets are declared once, referenced by @name.
//! set @iphone_resolutions: 640x960, 640x1136, 750x1334
//!
//! spatial r_iphone_resolution: ua.device == "iPhone" AND screen.resolution NOT IN @iphone_resolutions
//! geo g_ip_timezone: offsets_disjoint(ip.location, timezone)
//! temporal t_concurrency: key=cookie watch=hardware.concurrency
//! ```
//!
//! A rule is an n-ary AND of atoms; OR is expressed as multiple rules.
//! Matching uses three-valued semantics collapsed to boolean: an `Absent`
//! attribute matches only the explicit `ABSENT` atom — comparisons and set
//! membership over missing data never match, so sparse logs cannot produce
//! false positives.
//!
//! Submodules: [`grammar`] (lexer/parser/serializer), [`kb`] (knowledge
//! base + automatic adjudication), [`compile`] (findings → rules),
//! [`matching`] (the record-matching engines and [`evaluate_record`]).

mod compile;
mod grammar;
mod kb;
mod matching;

pub use compile::{append_temporal_defaults, compile, GEO_RULE_ID};
pub use grammar::{parse_rules, serialize_rules};
pub use kb::{auto_adjudicate, ComboTable, DeviceProfile, KnowledgeBase};
pub use kb::SHIPPED_KB_JSON;
pub use matching::{
    evaluate_record, match_geo, match_spatial, offsets_for_attribute, CompiledMatcher, Decision,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AttributeRegistry;
use crate::temporal::TemporalState;

/// The stock filter list: the curated findings compiled, plus the standing
/// geographic rule and the default temporal directives.
pub const SHIPPED_RULES_TEXT: &str = include_str!("../../data/golden_rules.txt");

/// The reviewed contradiction table the stock list is compiled from.
pub const SHIPPED_FINDINGS_JSON: &str = include_str!("../../data/curated_findings.json");

/// Parses [`SHIPPED_RULES_TEXT`] against the shipped attribute registry.
pub fn shipped_ruleset() -> RuleSet {
    parse_rules(SHIPPED_RULES_TEXT, &AttributeRegistry::shipped())
        .expect("shipped rules are valid")
}

/// A literal value as written in rule text.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
    Resolution { width: u32, height: u32 },
}

impl Literal {
    /// Renders the literal exactly as the grammar spells it.
    pub fn to_text(&self) -> String {
        match self {
            Literal::Str(s) => {
                let escaped = s.replace('\\', "\\\\").replace('"', "\\\"");
                format!("\"{escaped}\"")
            }
            Literal::Num(n) => format_number(*n),
            Literal::Resolution { width, height } => format!("{width}x{height}"),
        }
    }
}

/// Number formatting shared by the serializer and the matcher: integral
/// values print without a fraction, everything else uses the shortest
/// round-tripping form.
pub(crate) fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 9e15 {
        format!("{}", n as i64)
    } else {
        format!("{n:?}")
    }
}

/// One condition over a record.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Eq { attr: String, value: Literal },
    Ne { attr: String, value: Literal },
    Lt { attr: String, bound: f64 },
    Gt { attr: String, bound: f64 },
    Between { attr: String, low: f64, high: f64 },
    InSet { attr: String, set: String },
    NotInSet { attr: String, set: String },
    Absent { attr: String },
    Present { attr: String },
    /// True when both attributes resolve to non-empty UTC-offset sets with
    /// an empty intersection.
    OffsetsDisjoint { region_attr: String, zone_attr: String },
}

impl Atom {
    /// Attribute names this atom reads.
    pub fn attributes(&self) -> Vec<&str> {
        match self {
            Atom::Eq { attr, .. }
            | Atom::Ne { attr, .. }
            | Atom::Lt { attr, .. }
            | Atom::Gt { attr, .. }
            | Atom::Between { attr, .. }
            | Atom::InSet { attr, .. }
            | Atom::NotInSet { attr, .. }
            | Atom::Absent { attr }
            | Atom::Present { attr } => vec![attr],
            Atom::OffsetsDisjoint { region_attr, zone_attr } => vec![region_attr, zone_attr],
        }
    }

    /// The set name this atom references, if any.
    pub fn set_ref(&self) -> Option<&str> {
        match self {
            Atom::InSet { set, .. } | Atom::NotInSet { set, .. } => Some(set),
            _ => None,
        }
    }
}

/// Conjunction of atoms (never empty in a parsed rule).
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
}

/// Which detection family a rule belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Spatial,
    Geo,
    TemporalDirective,
}

/// Key space of a temporal directive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKey {
    Cookie,
    Ip,
}

/// `key=<cookie|ip> watch=<attribute>` — enables drift tracking for one
/// attribute under one key space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalSpec {
    pub key: TemporalKey,
    pub watch: String,
}

/// Body of a rule: a predicate for spatial/geo rules, a directive for
/// temporal ones.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleBody {
    Predicate(Predicate),
    Temporal(TemporalSpec),
}

/// One line of a filter list.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRule {
    pub id: String,
    pub kind: RuleKind,
    /// Optional free-text origin (`from "..."` in the text format): which
    /// dataset, review round, or knowledge-base family produced the rule.
    pub provenance: Option<String>,
    pub body: RuleBody,
}

impl FilterRule {
    pub fn predicate(&self) -> Option<&Predicate> {
        match &self.body {
            RuleBody::Predicate(p) => Some(p),
            RuleBody::Temporal(_) => None,
        }
    }
}

/// A parsed filter list: named sets plus rules in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub sets: BTreeMap<String, Vec<Literal>>,
    pub rules: Vec<FilterRule>,
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.sets.is_empty() && self.rules.is_empty()
    }

    pub fn spatial_rules(&self) -> impl Iterator<Item = &FilterRule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Spatial)
    }

    pub fn geo_rules(&self) -> impl Iterator<Item = &FilterRule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Geo)
    }

    pub fn temporal_directives(&self) -> impl Iterator<Item = (&FilterRule, &TemporalSpec)> {
        self.rules.iter().filter_map(|r| match &r.body {
            RuleBody::Temporal(spec) => Some((r, spec)),
            _ => None,
        })
    }

    /// A temporal state watching exactly what this rule set's directives
    /// ask for. Empty directives → a state that watches nothing.
    pub fn temporal_state(&self) -> TemporalState {
        let cookie_attrs: Vec<String> = self
            .temporal_directives()
            .filter(|(_, s)| s.key == TemporalKey::Cookie)
            .map(|(_, s)| s.watch.clone())
            .collect();
        let watch_ip = self
            .temporal_directives()
            .any(|(_, s)| s.key == TemporalKey::Ip);
        TemporalState::with_watches(cookie_attrs, watch_ip)
    }
}

/// Errors from parsing, validating, or compiling rules.
#[derive(Debug, Error)]
pub enum RuleError {
    #[error("line {line}, column {column}: expected {}, found {found}", expected.join(" | "))]
    Syntax { line: usize, column: usize, expected: Vec<String>, found: String },
    #[error("line {line}, column {column}: set @{name} is not declared")]
    UndefinedSet { line: usize, column: usize, name: String },
    #[error("line {line}: duplicate rule id {id:?}")]
    DuplicateRule { line: usize, id: String },
    #[error("line {line}: duplicate set @{name}")]
    DuplicateSet { line: usize, name: String },
    #[error("line {line}, column {column}: attribute {name:?} is not registered")]
    UnknownAttribute { line: usize, column: usize, name: String },
    #[error("knowledge base: {message}")]
    KbParse { message: String },
    #[error("knowledge base has no set named {name:?}")]
    MissingKbSet { name: String },
    #[error("device {device:?} is not in the catalog")]
    DeviceNotInCatalog { device: String },
    #[error("no {family} entry for key {key:?}")]
    ComboKeyMissing { family: String, key: String },
    #[error("finding references unregistered attribute {name:?}")]
    FindingUnknownAttribute { name: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
