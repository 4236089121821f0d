//! Evaluating compiled rule sets against fingerprint records.
//!
//! Matching is anchored on canonical forms: every literal expands to the
//! small set of canonical serializations it is allowed to match (an
//! integral number literal matches both the integer and real renderings,
//! a bracket string matches list attributes), and equality is membership
//! in that set. Order comparisons apply to numeric attribute values only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{canonical_serialize, AttributeValue, FingerprintRecord};
use crate::normalize::{region_to_offsets, timezone_to_offsets, OffsetSet};
use crate::temporal::{TemporalFlag, TemporalState};

use super::{format_number, Atom, FilterRule, Literal, RuleBody, RuleKind, RuleSet};

fn literal_forms(lit: &Literal) -> Vec<String> {
    match lit {
        Literal::Str(s) => {
            let mut forms = vec![canonical_serialize(&AttributeValue::Text(s.clone()))];
            // The raw spelling doubles as the canonical form of a list
            // attribute ("[srgb,p3]") or of a flag ("true" / "false").
            if (s.starts_with('[') && s.ends_with(']')) || s == "true" || s == "false" {
                forms.push(s.clone());
            }
            forms
        }
        Literal::Num(n) => {
            if n.fract() == 0.0 && n.abs() < 9e15 {
                vec![format!("{}", *n as i64), format!("{}.0", *n as i64)]
            } else {
                vec![format_number(*n)]
            }
        }
        Literal::Resolution { width, height } => vec![format!("{width}x{height}")],
    }
}

/// Equality between a rule literal and an attribute value. `Absent` never
/// matches a literal.
pub(crate) fn literal_matches(lit: &Literal, value: &AttributeValue) -> bool {
    if value.is_absent() {
        return false;
    }
    literal_forms(lit).contains(&canonical_serialize(value))
}

fn numeric(value: &AttributeValue) -> Option<f64> {
    match value {
        AttributeValue::Integer(n) => Some(*n as f64),
        AttributeValue::Real(r) => Some(*r),
        _ => None,
    }
}

/// The UTC-offset set an attribute value denotes, if any. Zone names and
/// region names resolve through the shipped tables; a list value is read
/// as offsets in minutes; a bare integer is a single offset. For the
/// `ip.location` attribute, a resolved `ip.offsets` list on the record
/// takes precedence over the textual region lookup.
pub fn offsets_for_attribute(record: &FingerprintRecord, attr: &str) -> Option<OffsetSet> {
    if attr == "ip.location" {
        if let Some(set) = OffsetSet::from_text_list(record.attr("ip.offsets")) {
            if !set.is_empty() {
                return Some(set);
            }
        }
    }
    let value = record.attr(attr);
    match value {
        AttributeValue::Text(s) => timezone_to_offsets(s)
            .or_else(|| region_to_offsets(s))
            .cloned(),
        AttributeValue::TextList(_) => OffsetSet::from_text_list(value).filter(|s| !s.is_empty()),
        AttributeValue::Integer(n) => i32::try_from(*n)
            .ok()
            .and_then(|m| OffsetSet::from_minutes([m]).ok()),
        _ => None,
    }
}

fn set_literals<'a>(
    sets: &'a BTreeMap<String, Vec<Literal>>,
    name: &str,
) -> &'a [Literal] {
    sets.get(name).map(Vec::as_slice).unwrap_or(&[])
}

fn atom_matches(
    atom: &Atom,
    record: &FingerprintRecord,
    sets: &BTreeMap<String, Vec<Literal>>,
) -> bool {
    match atom {
        Atom::Eq { attr, value } => literal_matches(value, record.attr(attr)),
        Atom::Ne { attr, value } => {
            let observed = record.attr(attr);
            !observed.is_absent() && !literal_matches(value, observed)
        }
        Atom::Lt { attr, bound } => numeric(record.attr(attr)).is_some_and(|v| v < *bound),
        Atom::Gt { attr, bound } => numeric(record.attr(attr)).is_some_and(|v| v > *bound),
        Atom::Between { attr, low, high } => {
            numeric(record.attr(attr)).is_some_and(|v| *low <= v && v <= *high)
        }
        Atom::InSet { attr, set } => {
            let value = record.attr(attr);
            set_literals(sets, set).iter().any(|lit| literal_matches(lit, value))
        }
        Atom::NotInSet { attr, set } => {
            let value = record.attr(attr);
            !value.is_absent()
                && !set_literals(sets, set).iter().any(|lit| literal_matches(lit, value))
        }
        Atom::Absent { attr } => record.attr(attr).is_absent(),
        Atom::Present { attr } => !record.attr(attr).is_absent(),
        Atom::OffsetsDisjoint { region_attr, zone_attr } => {
            match (
                offsets_for_attribute(record, region_attr),
                offsets_for_attribute(record, zone_attr),
            ) {
                (Some(a), Some(b)) => !a.intersects(&b),
                _ => false,
            }
        }
    }
}

fn rule_matches(
    rule: &FilterRule,
    record: &FingerprintRecord,
    sets: &BTreeMap<String, Vec<Literal>>,
) -> bool {
    match &rule.body {
        RuleBody::Predicate(pred) => pred.atoms.iter().all(|a| atom_matches(a, record, sets)),
        RuleBody::Temporal(_) => false,
    }
}

/// Ids of every predicate rule (spatial and geo) the record satisfies, in
/// declaration order. This is the reference implementation; the
/// [`CompiledMatcher`] must agree with it on every record.
pub fn match_spatial(ruleset: &RuleSet, record: &FingerprintRecord) -> Vec<String> {
    ruleset
        .rules
        .iter()
        .filter(|r| rule_matches(r, record, &ruleset.sets))
        .map(|r| r.id.clone())
        .collect()
}

/// The standing geographic check on its own: does the record's IP-derived
/// region denote a UTC-offset set disjoint from its reported timezone's?
/// Conservative by construction — any shared offset means consistent, and
/// missing data on either side means no flag.
pub fn match_geo(record: &FingerprintRecord) -> bool {
    let disjoint = Atom::OffsetsDisjoint {
        region_attr: "ip.location".into(),
        zone_attr: "timezone".into(),
    };
    atom_matches(&disjoint, record, &BTreeMap::new())
}

/// A rule set indexed for corpus-scale evaluation.
///
/// Rules whose predicate starts from an equality atom are bucketed by that
/// atom's (attribute, canonical form); evaluating a record then touches
/// only the buckets its own attribute values select, plus the small
/// residue of rules with no equality anchor.
pub struct CompiledMatcher {
    sets: BTreeMap<String, Vec<Literal>>,
    rules: Vec<FilterRule>,
    /// attribute → canonical form → indices into `rules`.
    index: BTreeMap<String, BTreeMap<String, Vec<usize>>>,
    /// Rules with no indexable anchor, always evaluated.
    scan: Vec<usize>,
}

impl CompiledMatcher {
    pub fn new(ruleset: &RuleSet) -> CompiledMatcher {
        let rules: Vec<FilterRule> = ruleset
            .rules
            .iter()
            .filter(|r| matches!(r.body, RuleBody::Predicate(_)))
            .cloned()
            .collect();
        let mut index: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        let mut scan = Vec::new();
        for (i, rule) in rules.iter().enumerate() {
            let anchor = match &rule.body {
                RuleBody::Predicate(pred) => pred.atoms.iter().find_map(|a| match a {
                    Atom::Eq { attr, value } => Some((attr, value)),
                    _ => None,
                }),
                RuleBody::Temporal(_) => None,
            };
            match anchor {
                Some((attr, literal)) => {
                    for form in literal_forms(literal) {
                        index.entry(attr.clone()).or_default().entry(form).or_default().push(i);
                    }
                }
                None => scan.push(i),
            }
        }
        CompiledMatcher { sets: ruleset.sets.clone(), rules, index, scan }
    }

    /// Ids of the rules the record satisfies, in declaration order.
    pub fn matches(&self, record: &FingerprintRecord) -> Vec<String> {
        let mut candidates: BTreeSet<usize> = self.scan.iter().copied().collect();
        for (attr, buckets) in &self.index {
            let value = record.attr(attr);
            if value.is_absent() {
                continue;
            }
            if let Some(idxs) = buckets.get(&canonical_serialize(value)) {
                candidates.extend(idxs.iter().copied());
            }
        }
        candidates
            .into_iter()
            .filter(|&i| rule_matches(&self.rules[i], record, &self.sets))
            .map(|i| self.rules[i].id.clone())
            .collect()
    }

    fn kind_of(&self, id: &str) -> Option<RuleKind> {
        self.rules.iter().find(|r| r.id == id).map(|r| r.kind)
    }
}

/// The verdict the rule set renders on one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub record_id: String,
    /// True when anything fired: a predicate rule or a temporal flag.
    pub is_bot_by_rules: bool,
    /// Ids of the predicate rules that fired, in declaration order.
    pub matched: Vec<String>,
    /// Immutable-attribute drift observed against the running state.
    pub temporal_flags: Vec<TemporalFlag>,
    /// True when a geographic rule is among `matched`.
    pub geo_flag: bool,
}

/// Evaluates one record: predicate rules through the matcher, temporal
/// drift through the running state (which this call advances).
pub fn evaluate_record(
    matcher: &CompiledMatcher,
    state: &mut TemporalState,
    record: &FingerprintRecord,
) -> Decision {
    let matched = matcher.matches(record);
    let temporal_flags = state.observe(record);
    let geo_flag = matched
        .iter()
        .any(|id| matcher.kind_of(id) == Some(RuleKind::Geo));
    Decision {
        record_id: record.record_id.clone(),
        is_bot_by_rules: !matched.is_empty() || !temporal_flags.is_empty(),
        matched,
        temporal_flags,
        geo_flag,
    }
}
