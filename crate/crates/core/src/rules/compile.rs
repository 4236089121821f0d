//! Compiling confirmed findings into an executable rule set.
//!
//! Each finding becomes one two-atom rule: an equality anchor on the
//! finding's `(attr_a, value_a)` plus the companion condition its
//! predicate describes. Set-shaped predicates pull their member lists out
//! of the knowledge base and materialize them as named sets in the output,
//! so the compiled text is self-contained. Every compilation also appends
//! the standing geographic rule, and [`append_temporal_defaults`] adds the
//! stock drift directives.

use std::collections::BTreeMap;

use crate::model::{canonical_serialize, AttributeRegistry, AttributeValue};
use crate::spatial::{CatalogField, ComboFamily, ConfirmedFinding, SetSource, ValuePredicate};
use crate::temporal::DEFAULT_WATCHED_ATTRS;

use super::kb::KnowledgeBase;
use super::{
    Atom, FilterRule, Literal, Predicate, RuleBody, RuleError, RuleKind, RuleSet, TemporalKey,
    TemporalSpec,
};

/// Id of the standing geographic rule every compilation appends.
pub const GEO_RULE_ID: &str = "g_ip_timezone";

/// Lowercases and squeezes a string into identifier shape (the grammar's
/// ident charset, never digit-initial).
fn slug(s: &str) -> String {
    let mut out = String::new();
    let mut pending_sep = false;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
            pending_sep = false;
        } else {
            pending_sep = true;
        }
    }
    if out.is_empty() {
        out.push('x');
    }
    if out.as_bytes()[0].is_ascii_digit() {
        out.insert(0, 'v');
    }
    out
}

fn value_to_literal(value: &AttributeValue) -> Option<Literal> {
    match value {
        AttributeValue::Text(s) => Some(Literal::Str(s.clone())),
        AttributeValue::Integer(n) => Some(Literal::Num(*n as f64)),
        AttributeValue::Real(r) => Some(Literal::Num(*r)),
        AttributeValue::Flag(b) => Some(Literal::Str(b.to_string())),
        AttributeValue::TextList(_) => Some(Literal::Str(canonical_serialize(value))),
        AttributeValue::Resolution { width, height } => {
            Some(Literal::Resolution { width: *width, height: *height })
        }
        AttributeValue::Absent => None,
    }
}

fn catalog_suffix(field: CatalogField) -> &'static str {
    match field {
        CatalogField::Resolutions => "resolutions",
        CatalogField::MaxTouchPoints => "touch_points",
        CatalogField::Concurrency => "concurrency",
        CatalogField::Memory => "memory",
        CatalogField::ColorDepths => "color_depths",
        CatalogField::ColorGamuts => "color_gamuts",
    }
}

fn combo_suffix(family: ComboFamily) -> &'static str {
    match family {
        ComboFamily::BrowserOs => "valid_os",
        ComboFamily::BrowserVendor => "valid_vendor",
        ComboFamily::BrowserPlatform => "valid_platform",
        ComboFamily::PlatformVendor => "vendor_platforms",
        ComboFamily::PlatformOs => "os_platforms",
    }
}

fn combo_name(family: ComboFamily) -> &'static str {
    match family {
        ComboFamily::BrowserOs => "browser/os",
        ComboFamily::BrowserVendor => "browser/vendor",
        ComboFamily::BrowserPlatform => "browser/platform",
        ComboFamily::PlatformVendor => "vendor/platform",
        ComboFamily::PlatformOs => "os/platform",
    }
}

/// Adds `literals` to `sets` under `base` (or a `_2`, `_3`… variant on a
/// content clash) and returns the name actually used. Identical content
/// under the same name is reused, so repeated findings against one device
/// share one set.
fn intern_set(
    sets: &mut BTreeMap<String, Vec<Literal>>,
    base: String,
    literals: Vec<Literal>,
) -> String {
    let mut name = base.clone();
    let mut n = 1usize;
    loop {
        match sets.get(&name) {
            None => {
                sets.insert(name.clone(), literals);
                return name;
            }
            Some(existing) if *existing == literals => return name,
            Some(_) => {
                n += 1;
                name = format!("{base}_{n}");
            }
        }
    }
}

fn resolve_set(
    source: &SetSource,
    kb: &KnowledgeBase,
    sets: &mut BTreeMap<String, Vec<Literal>>,
    rule_id: &str,
) -> Result<String, RuleError> {
    match source {
        SetSource::Named { name } => {
            let literals = kb
                .set(name)
                .ok_or_else(|| RuleError::MissingKbSet { name: name.clone() })?;
            Ok(intern_set(sets, name.clone(), literals.to_vec()))
        }
        SetSource::Inline { values } => {
            let literals: Vec<Literal> = values.iter().filter_map(value_to_literal).collect();
            if literals.is_empty() {
                return Err(RuleError::KbParse {
                    message: format!("rule {rule_id}: inline set has no usable values"),
                });
            }
            Ok(intern_set(sets, format!("{rule_id}_set"), literals))
        }
        SetSource::Catalog { device, field } => {
            let literals = kb
                .catalog_literals(device, *field)
                .ok_or_else(|| RuleError::DeviceNotInCatalog { device: device.clone() })?;
            let base = format!("{}_{}", slug(device), catalog_suffix(*field));
            Ok(intern_set(sets, base, literals))
        }
        SetSource::Combo { family, key } => {
            let valid = kb.valid_combos.family(*family).get(key).ok_or_else(|| {
                RuleError::ComboKeyMissing { family: combo_name(*family).into(), key: key.clone() }
            })?;
            let literals = valid.iter().map(|s| Literal::Str(s.clone())).collect();
            let base = format!("{}_{}", slug(key), combo_suffix(*family));
            Ok(intern_set(sets, base, literals))
        }
    }
}

/// Lowers findings into a rule set: one spatial rule per finding (in
/// input order), the referenced knowledge-base sets materialized by name,
/// and the standing geographic rule appended last.
pub fn compile(
    findings: &[ConfirmedFinding],
    kb: &KnowledgeBase,
    registry: &AttributeRegistry,
) -> Result<RuleSet, RuleError> {
    let mut sets = BTreeMap::new();
    let mut rules: Vec<FilterRule> = Vec::with_capacity(findings.len() + 1);

    for finding in findings {
        for attr in [&finding.attr_a, &finding.attr_b] {
            if !registry.contains(attr) {
                return Err(RuleError::FindingUnknownAttribute { name: attr.clone() });
            }
        }

        let anchor_slug = match &finding.value_a {
            AttributeValue::Text(s) => slug(s),
            AttributeValue::Absent => "absent".to_string(),
            other => slug(&canonical_serialize(other)),
        };
        let companion_slug = slug(finding.attr_b.rsplit('.').next().unwrap_or(&finding.attr_b));
        let base_id = format!("r_{anchor_slug}_{companion_slug}");
        let mut id = base_id.clone();
        let mut n = 1usize;
        while rules.iter().any(|r| r.id == id) {
            n += 1;
            id = format!("{base_id}_{n}");
        }

        let anchor = match value_to_literal(&finding.value_a) {
            Some(lit) => Atom::Eq { attr: finding.attr_a.clone(), value: lit },
            None => Atom::Absent { attr: finding.attr_a.clone() },
        };
        let attr_b = finding.attr_b.clone();
        let companion = match &finding.predicate {
            ValuePredicate::Equals { value } => match value_to_literal(value) {
                Some(lit) => Atom::Eq { attr: attr_b, value: lit },
                None => Atom::Absent { attr: attr_b },
            },
            ValuePredicate::InSet { set } => {
                Atom::InSet { attr: attr_b, set: resolve_set(set, kb, &mut sets, &id)? }
            }
            ValuePredicate::NotInSet { set } => {
                Atom::NotInSet { attr: attr_b, set: resolve_set(set, kb, &mut sets, &id)? }
            }
            ValuePredicate::Above { bound } => Atom::Gt { attr: attr_b, bound: *bound },
            ValuePredicate::Below { bound } => Atom::Lt { attr: attr_b, bound: *bound },
            ValuePredicate::Between { low, high } => {
                Atom::Between { attr: attr_b, low: *low, high: *high }
            }
        };

        let provenance = if finding.note.is_empty() {
            format!("KB/{}", finding.category)
        } else {
            finding.note.clone()
        };
        rules.push(FilterRule {
            id,
            kind: RuleKind::Spatial,
            provenance: Some(provenance),
            body: RuleBody::Predicate(Predicate { atoms: vec![anchor, companion] }),
        });
    }

    rules.push(FilterRule {
        id: GEO_RULE_ID.to_string(),
        kind: RuleKind::Geo,
        provenance: Some("KB/geo-offsets".to_string()),
        body: RuleBody::Predicate(Predicate {
            atoms: vec![Atom::OffsetsDisjoint {
                region_attr: "ip.location".to_string(),
                zone_attr: "timezone".to_string(),
            }],
        }),
    });

    Ok(RuleSet { sets, rules })
}

/// Appends the stock temporal directives: cookie-keyed drift watches on
/// the default immutable attributes, plus an IP-keyed watch on `timezone`.
/// Directives already present (same key and attribute) are left alone.
pub fn append_temporal_defaults(ruleset: &mut RuleSet) {
    let mut add = |key: TemporalKey, watch: &str| {
        let exists = ruleset
            .temporal_directives()
            .any(|(_, spec)| spec.key == key && spec.watch == watch);
        if exists {
            return;
        }
        let prefix = match key {
            TemporalKey::Cookie => "t",
            TemporalKey::Ip => "t_ip",
        };
        let base_id = format!("{prefix}_{}", slug(watch));
        let mut id = base_id.clone();
        let mut n = 1usize;
        while ruleset.rules.iter().any(|r| r.id == id) {
            n += 1;
            id = format!("{base_id}_{n}");
        }
        ruleset.rules.push(FilterRule {
            id,
            kind: RuleKind::TemporalDirective,
            provenance: Some("KB/temporal-defaults".to_string()),
            body: RuleBody::Temporal(TemporalSpec { key, watch: watch.to_string() }),
        });
    };
    for attr in DEFAULT_WATCHED_ATTRS {
        add(TemporalKey::Cookie, attr);
    }
    add(TemporalKey::Ip, "timezone");
}
