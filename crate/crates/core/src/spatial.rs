//! Discovery of contradictory attribute pairs within single requests.
//!
//! The core operation is a per-category group-by: for every ordered
//! attribute pair `(a, b)` inside a category, count how many distinct `b`
//! values co-occur with each `a` value. A genuine device population keeps
//! those counts small (an iPhone has twelve possible screen resolutions);
//! traffic that fabricates attributes independently produces anchors with
//! implausibly many companions, which float to the top of the ranked
//! report for review.
//!
//! - [`count_pairs`] — exact counts for one ordered pair.
//! - [`PairAggregator`] / [`discover`] — all pairs across all categories;
//!   the aggregator is mergeable, so partitions of a corpus can be counted
//!   independently and combined.
//! - [`apply_adjudication`] — folds reviewer (or knowledge-base) verdicts
//!   over a report into confirmed findings ready for rule compilation;
//!   `Unknown` entries are carried forward for the next review round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    canonical_serialize, parse_canonical, AttributeCategorySet, AttributeRegistry, AttributeValue,
    FingerprintRecord, SourceLabel, Verdict,
};

/// Which slice of a labeled corpus discovery runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Bot-labeled records that slipped past at least one baseline service
    /// (or carry no baseline verdict at all). Proliferation is most visible
    /// here: this is the traffic nobody caught.
    EvadedOnly,
    /// Every bot-labeled record.
    AllBots,
    /// The whole corpus.
    All,
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterMode::EvadedOnly => "evaded-only",
            FilterMode::AllBots => "all-bots",
            FilterMode::All => "all",
        })
    }
}

/// Whether a record participates in discovery under the given mode.
pub fn record_passes_filter(record: &FingerprintRecord, mode: FilterMode) -> bool {
    match mode {
        FilterMode::All => true,
        FilterMode::AllBots => matches!(record.source_label, SourceLabel::Bot(_)),
        FilterMode::EvadedOnly => {
            matches!(record.source_label, SourceLabel::Bot(_))
                && (record.verdicts.is_empty()
                    || record.verdicts.values().any(|v| *v == Verdict::Human))
        }
    }
}

/// One companion value of an anchor, with how often it was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCount {
    pub value: AttributeValue,
    pub count: u64,
}

/// The distinct-companion profile of one anchor value.
///
/// Invariants: `distinct_b == values_b.len()`, and the counts in `values_b`
/// sum to `support_a` (an unobserved companion is counted as `Absent`, so
/// every anchored row contributes exactly one companion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub attr_a: String,
    pub value_a: AttributeValue,
    pub attr_b: String,
    pub distinct_b: u64,
    /// Sorted by count descending, then canonical value ascending.
    pub values_b: Vec<ValueCount>,
    pub support_a: u64,
}

/// Ranked discovery output for one attribute category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub category: String,
    /// Ranked by `distinct_b` (descending unless configured ascending),
    /// ties broken by `support_a` descending, then canonical `value_a`,
    /// then attribute names.
    pub pairs: Vec<PairCount>,
    /// SHA-256 over the sorted ids of the records that passed the filter;
    /// identifies the exact dataset a report (and any rules derived from
    /// it) came from.
    pub dataset_digest: String,
    pub filter_mode: FilterMode,
}

/// Tuning for [`discover`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub filter_mode: FilterMode,
    /// Anchors with fewer supporting rows are pruned.
    pub min_support: u64,
    /// Per ordered attribute pair, keep at most this many anchors from the
    /// review-frontier end. `None` keeps everything.
    pub top_k: Option<usize>,
    /// Rank ascending instead of descending (the frontier is normally the
    /// high-distinct end; ascending order is available for audit dumps).
    pub ascending: bool,
    /// Count rows whose anchor attribute is `Absent` as their own group.
    /// Off by default: an absent anchor says nothing about co-occurrence.
    pub include_absent_anchor: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            filter_mode: FilterMode::EvadedOnly,
            min_support: 1,
            top_k: None,
            ascending: false,
            include_absent_anchor: false,
        }
    }
}

/// Mergeable pairwise counter over one category set.
///
/// Feed any number of records through [`observe`](Self::observe) (order
/// irrelevant), or count partitions separately and [`merge`](Self::merge)
/// them; [`finish`](Self::finish) produces the ranked per-category reports.
#[derive(Debug, Clone)]
pub struct PairAggregator {
    config: DiscoveryConfig,
    categories: AttributeCategorySet,
    /// (category, attr_a, attr_b) → canonical value_a → canonical value_b → count.
    counts: BTreeMap<(String, String, String), BTreeMap<String, BTreeMap<String, u64>>>,
    used_ids: BTreeSet<String>,
    pub records_scanned: u64,
}

impl PairAggregator {
    pub fn new(categories: &AttributeCategorySet, config: DiscoveryConfig) -> Self {
        PairAggregator {
            config,
            categories: categories.clone(),
            counts: BTreeMap::new(),
            used_ids: BTreeSet::new(),
            records_scanned: 0,
        }
    }

    pub fn records_used(&self) -> u64 {
        self.used_ids.len() as u64
    }

    pub fn observe(&mut self, record: &FingerprintRecord) {
        self.records_scanned += 1;
        if !record_passes_filter(record, self.config.filter_mode) {
            return;
        }
        self.used_ids.insert(record.record_id.clone());
        for (category, attrs) in self.categories.iter() {
            for attr_a in attrs {
                let value_a = record.attr(attr_a);
                if value_a.is_absent() && !self.config.include_absent_anchor {
                    continue;
                }
                let canon_a = canonical_serialize(value_a);
                for attr_b in attrs {
                    if attr_a == attr_b {
                        continue;
                    }
                    let canon_b = canonical_serialize(record.attr(attr_b));
                    *self
                        .counts
                        .entry((category.to_string(), attr_a.clone(), attr_b.clone()))
                        .or_default()
                        .entry(canon_a.clone())
                        .or_default()
                        .entry(canon_b)
                        .or_insert(0) += 1;
                }
            }
        }
    }

    /// Combines two partial counts. Both sides must have been configured
    /// identically, otherwise the combined ranking would be meaningless.
    pub fn merge(&mut self, other: PairAggregator) -> Result<(), SpatialError> {
        if self.config != other.config || self.categories != other.categories {
            return Err(SpatialError::IncompatibleMerge);
        }
        self.records_scanned += other.records_scanned;
        self.used_ids.extend(other.used_ids);
        for (key, per_a) in other.counts {
            let dst = self.counts.entry(key).or_default();
            for (canon_a, per_b) in per_a {
                let dst_a = dst.entry(canon_a).or_default();
                for (canon_b, n) in per_b {
                    *dst_a.entry(canon_b).or_insert(0) += n;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<CandidateReport> {
        let digest = digest_of_ids(&self.used_ids);
        let mut reports = Vec::new();
        for (category, _) in self.categories.iter() {
            let mut pairs: Vec<PairCount> = Vec::new();
            for ((cat, attr_a, attr_b), per_a) in &self.counts {
                if cat != category {
                    continue;
                }
                let mut tuples: Vec<PairCount> = per_a
                    .iter()
                    .filter_map(|(canon_a, per_b)| {
                        build_pair_count(attr_a, canon_a, attr_b, per_b, self.config.min_support)
                    })
                    .collect::<Vec<_>>();
                sort_pairs(&mut tuples, self.config.ascending);
                if let Some(k) = self.config.top_k {
                    tuples.truncate(k);
                }
                pairs.extend(tuples);
            }
            sort_pairs(&mut pairs, self.config.ascending);
            reports.push(CandidateReport {
                category: category.to_string(),
                pairs,
                dataset_digest: digest.clone(),
                filter_mode: self.config.filter_mode,
            });
        }
        reports
    }
}

fn digest_of_ids(ids: &BTreeSet<String>) -> String {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in out {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to String");
    }
    hex
}

fn build_pair_count(
    attr_a: &str,
    canon_a: &str,
    attr_b: &str,
    per_b: &BTreeMap<String, u64>,
    min_support: u64,
) -> Option<PairCount> {
    let support_a: u64 = per_b.values().sum();
    if support_a < min_support {
        return None;
    }
    let mut values_b: Vec<ValueCount> = per_b
        .iter()
        .map(|(canon_b, count)| ValueCount {
            value: parse_canonical(canon_b).expect("stored canonical form parses back"),
            count: *count,
        })
        .collect();
    values_b.sort_by(|x, y| {
        y.count
            .cmp(&x.count)
            .then_with(|| canonical_serialize(&x.value).cmp(&canonical_serialize(&y.value)))
    });
    Some(PairCount {
        attr_a: attr_a.to_string(),
        value_a: parse_canonical(canon_a).expect("stored canonical form parses back"),
        attr_b: attr_b.to_string(),
        distinct_b: values_b.len() as u64,
        values_b,
        support_a,
    })
}

fn sort_pairs(pairs: &mut [PairCount], ascending: bool) {
    pairs.sort_by(|x, y| {
        let primary = if ascending {
            x.distinct_b.cmp(&y.distinct_b)
        } else {
            y.distinct_b.cmp(&x.distinct_b)
        };
        primary
            .then(y.support_a.cmp(&x.support_a))
            .then_with(|| canonical_serialize(&x.value_a).cmp(&canonical_serialize(&y.value_a)))
            .then_with(|| x.attr_a.cmp(&y.attr_a))
            .then_with(|| x.attr_b.cmp(&y.attr_b))
    });
}

/// Exact distinct-companion counts for one ordered attribute pair.
///
/// Rows where `attr_a` is `Absent` are excluded from grouping (see
/// [`DiscoveryConfig::include_absent_anchor`]); an absent `attr_b` counts
/// as a companion value, so supports always add up.
pub fn count_pairs<'a>(
    records: impl IntoIterator<Item = &'a FingerprintRecord>,
    attr_a: &str,
    attr_b: &str,
    filter_mode: FilterMode,
    registry: &AttributeRegistry,
) -> Result<Vec<PairCount>, SpatialError> {
    for name in [attr_a, attr_b] {
        if !registry.contains(name) {
            return Err(SpatialError::UnknownAttribute { name: name.to_string() });
        }
    }
    let mut per_a: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for record in records {
        if !record_passes_filter(record, filter_mode) {
            continue;
        }
        let value_a = record.attr(attr_a);
        if value_a.is_absent() {
            continue;
        }
        let canon_b = canonical_serialize(record.attr(attr_b));
        *per_a
            .entry(canonical_serialize(value_a))
            .or_default()
            .entry(canon_b)
            .or_insert(0) += 1;
    }
    let mut out: Vec<PairCount> = per_a
        .iter()
        .filter_map(|(canon_a, per_b)| build_pair_count(attr_a, canon_a, attr_b, per_b, 1))
        .collect();
    sort_pairs(&mut out, false);
    Ok(out)
}

/// Runs the full per-category discovery over a record slice.
pub fn discover<'a>(
    records: impl IntoIterator<Item = &'a FingerprintRecord>,
    categories: &AttributeCategorySet,
    config: DiscoveryConfig,
) -> Vec<CandidateReport> {
    let mut agg = PairAggregator::new(categories, config);
    for record in records {
        agg.observe(record);
    }
    agg.finish()
}

// ── Adjudication ──────────────────────────────────────────────────────────

/// Reviewer verdict over one (anchor, companion-shape) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairVerdict {
    Inconsistent,
    Consistent,
    Unknown,
}

/// Where the value set backing a set-shaped predicate comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetSource {
    /// A named set already present in the knowledge base.
    Named { name: String },
    /// Literal values spelled out in the adjudication itself.
    Inline { values: Vec<AttributeValue> },
    /// A per-device field of the knowledge-base catalog.
    Catalog { device: String, field: CatalogField },
    /// A keyed entry of one of the knowledge-base combination families.
    Combo { family: ComboFamily, key: String },
}

/// Catalog fields a [`SetSource::Catalog`] may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogField {
    Resolutions,
    MaxTouchPoints,
    Concurrency,
    Memory,
    ColorDepths,
    ColorGamuts,
}

/// Valid-combination families of the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComboFamily {
    BrowserOs,
    BrowserVendor,
    BrowserPlatform,
    PlatformVendor,
    PlatformOs,
}

/// The companion-value shape an adjudication pins down. `NotInSet` names
/// the *allowed* values (anything else is the contradiction); `InSet` and
/// `Equals` name the contradiction directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuePredicate {
    Equals { value: AttributeValue },
    InSet { set: SetSource },
    NotInSet { set: SetSource },
    Above { bound: f64 },
    Below { bound: f64 },
    Between { low: f64, high: f64 },
}

/// One reviewed combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationEntry {
    pub attr_a: String,
    pub value_a: AttributeValue,
    pub attr_b: String,
    pub predicate: ValuePredicate,
    pub verdict: PairVerdict,
    #[serde(default)]
    pub note: String,
}

/// A batch of review decisions over one candidate report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub entries: Vec<AdjudicationEntry>,
}

/// An adjudicated-inconsistent combination, ready for rule compilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedFinding {
    pub category: String,
    pub attr_a: String,
    pub value_a: AttributeValue,
    pub attr_b: String,
    pub predicate: ValuePredicate,
    #[serde(default)]
    pub note: String,
}

/// Findings plus the entries deferred to the next review round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjudicationOutcome {
    pub findings: Vec<ConfirmedFinding>,
    pub carried: Vec<AdjudicationEntry>,
}

/// Folds verdicts over a report: `Inconsistent` entries become findings,
/// `Consistent` ones are dropped, `Unknown` ones are carried forward.
/// Entries referencing attributes outside the report's category are
/// dangling and rejected.
pub fn apply_adjudication(
    report: &CandidateReport,
    adjudication: &Adjudication,
    categories: &AttributeCategorySet,
) -> Result<AdjudicationOutcome, SpatialError> {
    let category_attrs = categories
        .get(&report.category)
        .ok_or_else(|| SpatialError::UnknownCategory { name: report.category.clone() })?;
    let mut outcome = AdjudicationOutcome::default();
    for entry in &adjudication.entries {
        for name in [&entry.attr_a, &entry.attr_b] {
            if !category_attrs.iter().any(|a| a == name) {
                return Err(SpatialError::DanglingReference {
                    attribute: name.clone(),
                    category: report.category.clone(),
                });
            }
        }
        match entry.verdict {
            PairVerdict::Inconsistent => outcome.findings.push(ConfirmedFinding {
                category: report.category.clone(),
                attr_a: entry.attr_a.clone(),
                value_a: entry.value_a.clone(),
                attr_b: entry.attr_b.clone(),
                predicate: entry.predicate.clone(),
                note: entry.note.clone(),
            }),
            PairVerdict::Consistent => {}
            PairVerdict::Unknown => outcome.carried.push(entry.clone()),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("unknown attribute {name:?}")]
    UnknownAttribute { name: String },
    #[error("cannot merge aggregators with different configurations")]
    IncompatibleMerge,
    #[error("category {name:?} is not defined")]
    UnknownCategory { name: String },
    #[error("adjudication references attribute {attribute:?} outside category {category:?}")]
    DanglingReference { attribute: String, category: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, attrs: &[(&str, AttributeValue)]) -> FingerprintRecord {
        FingerprintRecord {
            record_id: id.to_string(),
            timestamp: 0,
            ip: "10.0.0.1".into(),
            cookie_id: None,
            url_token: None,
            attributes: attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            verdicts: BTreeMap::new(),
            source_label: SourceLabel::Bot("t".into()),
        }
    }

    fn device(n: &str) -> (&'static str, AttributeValue) {
        ("ua.device", AttributeValue::text(n.to_string()))
    }

    fn mtp(n: i64) -> (&'static str, AttributeValue) {
        ("touch.max_points", AttributeValue::Integer(n))
    }

    #[test]
    fn counts_match_hand_enumeration() {
        let registry = AttributeRegistry::shipped();
        let records = vec![
            rec("1", &[device("iPhone"), mtp(5)]),
            rec("2", &[device("iPhone"), mtp(0)]),
            rec("3", &[device("Mac"), mtp(0)]),
        ];
        let out = count_pairs(&records, "ua.device", "touch.max_points", FilterMode::All, &registry)
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].value_a, AttributeValue::text("iPhone"));
        assert_eq!(out[0].distinct_b, 2);
        assert_eq!(out[0].support_a, 2);
        assert_eq!(out[1].value_a, AttributeValue::text("Mac"));
        assert_eq!(out[1].distinct_b, 1);
        for pc in &out {
            assert_eq!(pc.distinct_b as usize, pc.values_b.len());
            assert_eq!(pc.values_b.iter().map(|v| v.count).sum::<u64>(), pc.support_a);
        }
    }

    #[test]
    fn empty_stream_and_unknown_attribute() {
        let registry = AttributeRegistry::shipped();
        let out =
            count_pairs(&[], "ua.device", "touch.max_points", FilterMode::All, &registry).unwrap();
        assert!(out.is_empty());
        let err = count_pairs(&[], "ua.device", "nope.nope", FilterMode::All, &registry);
        assert!(matches!(err, Err(SpatialError::UnknownAttribute { .. })));
    }

    #[test]
    fn absent_anchor_skipped_but_absent_companion_counted() {
        let registry = AttributeRegistry::shipped();
        let records = vec![
            rec("1", &[device("iPhone")]),
            rec("2", &[mtp(5)]),
            rec("3", &[device("iPhone"), mtp(5)]),
        ];
        let out = count_pairs(&records, "ua.device", "touch.max_points", FilterMode::All, &registry)
            .unwrap();
        assert_eq!(out.len(), 1);
        let pc = &out[0];
        // record 2 has no anchor, so only records 1 and 3 group; record 1's
        // companion is Absent.
        assert_eq!(pc.support_a, 2);
        assert_eq!(pc.distinct_b, 2);
        assert!(pc.values_b.iter().any(|v| v.value.is_absent()));
        assert_eq!(pc.values_b.iter().map(|v| v.count).sum::<u64>(), pc.support_a);
    }

    #[test]
    fn filter_modes_select_expected_slices() {
        let mut evaded = rec("e", &[device("iPhone")]);
        evaded.verdicts.insert("svc".into(), Verdict::Human);
        let mut caught = rec("c", &[device("iPhone")]);
        caught.verdicts.insert("svc".into(), Verdict::Bot);
        let unverdicted = rec("u", &[device("iPhone")]);
        let mut human = rec("h", &[device("iPhone")]);
        human.source_label = SourceLabel::Human;

        assert!(record_passes_filter(&evaded, FilterMode::EvadedOnly));
        assert!(!record_passes_filter(&caught, FilterMode::EvadedOnly));
        assert!(record_passes_filter(&unverdicted, FilterMode::EvadedOnly));
        assert!(!record_passes_filter(&human, FilterMode::EvadedOnly));
        assert!(record_passes_filter(&caught, FilterMode::AllBots));
        assert!(!record_passes_filter(&human, FilterMode::AllBots));
        assert!(record_passes_filter(&human, FilterMode::All));
    }

    fn small_categories() -> AttributeCategorySet {
        AttributeCategorySet::from_json(
            r#"{"Screen": ["ua.device", "touch.max_points", "screen.resolution"]}"#,
            &AttributeRegistry::shipped(),
        )
        .unwrap()
    }

    #[test]
    fn discover_is_shuffle_invariant_and_degenerate_corpus_is_flat() {
        let cats = small_categories();
        let mut records: Vec<FingerprintRecord> = (0..20)
            .map(|i| {
                rec(
                    &format!("r{i}"),
                    &[
                        device(if i % 3 == 0 { "iPhone" } else { "Mac" }),
                        mtp((i % 4) as i64),
                    ],
                )
            })
            .collect();
        let a = discover(&records, &cats, DiscoveryConfig::default());
        records.reverse();
        records.rotate_left(7);
        let b = discover(&records, &cats, DiscoveryConfig::default());
        assert_eq!(a, b);

        let identical: Vec<FingerprintRecord> =
            (0..10).map(|i| rec(&format!("s{i}"), &[device("Mac"), mtp(0)])).collect();
        for report in discover(&identical, &cats, DiscoveryConfig::default()) {
            for pc in &report.pairs {
                assert_eq!(pc.distinct_b, 1, "{pc:?}");
            }
        }
    }

    #[test]
    fn min_support_prunes_monotonically() {
        let cats = small_categories();
        let records: Vec<FingerprintRecord> = (0..30)
            .map(|i| {
                rec(
                    &format!("r{i}"),
                    &[device(if i < 25 { "Mac" } else { "iPhone" }), mtp((i % 5) as i64)],
                )
            })
            .collect();
        let mut previous: Option<usize> = None;
        for min_support in [1, 5, 20, 26, 1000] {
            let config = DiscoveryConfig { min_support, ..DiscoveryConfig::default() };
            let reports = discover(&records, &cats, config);
            let total: usize = reports.iter().map(|r| r.pairs.len()).sum();
            if let Some(prev) = previous {
                assert!(total <= prev, "min_support={min_support} grew the report");
            }
            previous = Some(total);
        }
        let all_pruned = discover(
            &records,
            &cats,
            DiscoveryConfig { min_support: 1000, ..DiscoveryConfig::default() },
        );
        assert!(all_pruned.iter().all(|r| r.pairs.is_empty()));
    }

    #[test]
    fn top_k_keeps_the_review_frontier() {
        let cats = small_categories();
        // "spread" pairs with 6 distinct companions, "tight" with 1.
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(rec(&format!("a{i}"), &[device("spread"), mtp(i)]));
        }
        records.push(rec("b", &[device("tight"), mtp(0)]));
        let config = DiscoveryConfig { top_k: Some(1), ..DiscoveryConfig::default() };
        let reports = discover(&records, &cats, config);
        let screen = &reports[0];
        let anchors: Vec<&PairCount> = screen
            .pairs
            .iter()
            .filter(|p| p.attr_a == "ua.device" && p.attr_b == "touch.max_points")
            .collect();
        assert_eq!(anchors.len(), 1);
        assert_eq!(anchors[0].value_a, AttributeValue::text("spread"));
        assert_eq!(anchors[0].distinct_b, 6);
    }

    #[test]
    fn merge_equals_single_pass() {
        let cats = small_categories();
        let records: Vec<FingerprintRecord> = (0..40)
            .map(|i| {
                rec(
                    &format!("r{i}"),
                    &[device(if i % 2 == 0 { "iPhone" } else { "Mac" }), mtp((i % 7) as i64)],
                )
            })
            .collect();
        let config = DiscoveryConfig::default();
        let mut whole = PairAggregator::new(&cats, config.clone());
        for r in &records {
            whole.observe(r);
        }
        let mut left = PairAggregator::new(&cats, config.clone());
        let mut right = PairAggregator::new(&cats, config);
        for (i, r) in records.iter().enumerate() {
            if i < 13 {
                left.observe(r);
            } else {
                right.observe(r);
            }
        }
        left.merge(right).unwrap();
        assert_eq!(whole.finish(), left.finish());

        let other_cfg =
            PairAggregator::new(&cats, DiscoveryConfig { min_support: 9, ..Default::default() });
        let mut base = PairAggregator::new(&cats, DiscoveryConfig::default());
        assert!(matches!(base.merge(other_cfg), Err(SpatialError::IncompatibleMerge)));
    }

    #[test]
    fn adjudication_splits_verdicts() {
        let cats = small_categories();
        let records = vec![rec("1", &[device("iPhone"), mtp(1)])];
        let reports = discover(&records, &cats, DiscoveryConfig::default());
        let report = &reports[0];
        let adj = Adjudication {
            entries: vec![
                AdjudicationEntry {
                    attr_a: "ua.device".into(),
                    value_a: AttributeValue::text("iPhone"),
                    attr_b: "screen.resolution".into(),
                    predicate: ValuePredicate::NotInSet {
                        set: SetSource::Named { name: "iphone_resolutions".into() },
                    },
                    verdict: PairVerdict::Inconsistent,
                    note: "resolution outside the device's panel set".into(),
                },
                AdjudicationEntry {
                    attr_a: "ua.device".into(),
                    value_a: AttributeValue::text("iPhone"),
                    attr_b: "touch.max_points".into(),
                    predicate: ValuePredicate::Equals { value: AttributeValue::Integer(5) },
                    verdict: PairVerdict::Consistent,
                    note: String::new(),
                },
                AdjudicationEntry {
                    attr_a: "ua.device".into(),
                    value_a: AttributeValue::text("Quest 3"),
                    attr_b: "screen.resolution".into(),
                    predicate: ValuePredicate::Equals {
                        value: AttributeValue::resolution(1832, 1920).unwrap(),
                    },
                    verdict: PairVerdict::Unknown,
                    note: "device not in catalog yet".into(),
                },
            ],
        };
        let outcome = apply_adjudication(report, &adj, &cats).unwrap();
        assert_eq!(outcome.findings.len(), 1);
        assert_eq!(outcome.findings[0].attr_b, "screen.resolution");
        assert_eq!(outcome.findings[0].category, "Screen");
        assert_eq!(outcome.carried.len(), 1);
        assert_eq!(outcome.carried[0].value_a, AttributeValue::text("Quest 3"));

        let empty = apply_adjudication(report, &Adjudication::default(), &cats).unwrap();
        assert!(empty.findings.is_empty() && empty.carried.is_empty());

        let dangling = Adjudication {
            entries: vec![AdjudicationEntry {
                attr_a: "ua.device".into(),
                value_a: AttributeValue::text("iPhone"),
                attr_b: "device.memory".into(),
                predicate: ValuePredicate::Above { bound: 0.0 },
                verdict: PairVerdict::Inconsistent,
                note: String::new(),
            }],
        };
        assert!(matches!(
            apply_adjudication(report, &dangling, &cats),
            Err(SpatialError::DanglingReference { .. })
        ));
    }

    #[test]
    fn digest_identifies_the_filtered_dataset() {
        let cats = small_categories();
        let mut bot = rec("b1", &[device("iPhone")]);
        bot.verdicts.insert("svc".into(), Verdict::Human);
        let mut human = rec("h1", &[device("Mac")]);
        human.source_label = SourceLabel::Human;
        let records = vec![bot, human];
        let evaded = discover(
            &records,
            &cats,
            DiscoveryConfig { filter_mode: FilterMode::EvadedOnly, ..Default::default() },
        );
        let all = discover(
            &records,
            &cats,
            DiscoveryConfig { filter_mode: FilterMode::All, ..Default::default() },
        );
        assert_ne!(evaded[0].dataset_digest, all[0].dataset_digest);
        assert_eq!(evaded[0].dataset_digest.len(), 64);
        // Same filtered set in a different order → same digest.
        let reversed: Vec<FingerprintRecord> = records.iter().rev().cloned().collect();
        let evaded2 = discover(
            &reversed,
            &cats,
            DiscoveryConfig { filter_mode: FilterMode::EvadedOnly, ..Default::default() },
        );
        assert_eq!(evaded[0].dataset_digest, evaded2[0].dataset_digest);
    }
}
