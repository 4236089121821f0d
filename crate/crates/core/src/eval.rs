//! Detection-rate evaluation and reporting.
//!
//! - a bot record counts as detected under a mode when the baseline
//!   service called it a bot OR the mode's rule signals fired, so the
//!   numbers read as "baseline + rules" improvements;
//! - rates are computed over bot-labeled records, the true-negative rate
//!   over human-labeled records, each per baseline service;
//! - the train/test split learns rules on one side and scores both,
//!   reporting how much detection drops on traffic the rules never saw;
//! - reports serialize as JSON (lossless), CSV, or a plain text table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AttributeCategorySet, AttributeRegistry, FingerprintRecord, SourceLabel, Verdict,
};
use crate::rules::{
    append_temporal_defaults, auto_adjudicate, compile, evaluate_record, CompiledMatcher,
    Decision, KnowledgeBase, RuleError, RuleSet,
};
use crate::spatial::{
    apply_adjudication, discover, DiscoveryConfig, FilterMode, SpatialError,
};

/// Which rule signals count towards a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Baseline service verdict alone.
    None,
    /// Baseline plus single-request contradictions (predicate and
    /// geographic rules).
    Spatial,
    /// Baseline plus immutable-attribute drift.
    Temporal,
    /// Baseline plus everything the rules produce.
    Combined,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::None, Mode::Spatial, Mode::Temporal, Mode::Combined];

    pub fn label(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Spatial => "spatial",
            Mode::Temporal => "temporal",
            Mode::Combined => "combined",
        }
    }

    /// Did the rules fire for this mode on the given decision?
    pub fn rule_signal(self, decision: &Decision) -> bool {
        match self {
            Mode::None => false,
            Mode::Spatial => !decision.matched.is_empty(),
            Mode::Temporal => !decision.temporal_flags.is_empty(),
            Mode::Combined => decision.is_bot_by_rules,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    TextTable,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" | "table" | "text-table" => Ok(Format::TextTable),
            other => Err(format!("unknown format {other:?} (expected json, csv or text)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::TextTable => "text",
        })
    }
}

// ── Report shape ──────────────────────────────────────────────────────────

/// Detection rates for one baseline service over one record population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRates {
    pub service: String,
    /// Detection by the baseline service alone.
    pub baseline_detection_rate: f64,
    /// Baseline OR single-request rules.
    pub spatial_rate: f64,
    /// Baseline OR drift flags.
    pub temporal_rate: f64,
    /// Baseline OR any rule signal.
    pub combined_rate: f64,
    /// Bot records the rates are computed over.
    pub bot_records: u64,
    /// Bot records skipped because this service rendered no verdict.
    pub excluded_missing_verdict: u64,
}

impl ServiceRates {
    pub fn rate(&self, mode: Mode) -> f64 {
        match mode {
            Mode::None => self.baseline_detection_rate,
            Mode::Spatial => self.spatial_rate,
            Mode::Temporal => self.temporal_rate,
            Mode::Combined => self.combined_rate,
        }
    }
}

/// Train/test generalization report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_fraction: f64,
    pub train_rates: Vec<ServiceRates>,
    pub test_rates: Vec<ServiceRates>,
    /// Per service: combined rate on train minus combined rate on test.
    /// Positive means the learned rules generalize worse to unseen traffic.
    pub drop: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub services: Vec<ServiceRates>,
    /// The same rates restricted to each bot campaign tag.
    pub per_tag: BTreeMap<String, Vec<ServiceRates>>,
    /// Fraction of human-labeled records with no rule signal at all.
    pub tnr_on_humans: f64,
    pub human_records: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<SplitReport>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no decision supplied for record {record_id:?}")]
    MissingDecision { record_id: String },
    #[error("split fraction {fraction} leaves one side empty ({total} records)")]
    DegenerateSplit { fraction: f64, total: usize },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

// ── Rate computation ──────────────────────────────────────────────────────

fn zip_decisions<'a>(
    records: &'a [FingerprintRecord],
    decisions: &'a [Decision],
) -> Result<Vec<(&'a FingerprintRecord, &'a Decision)>, EvalError> {
    let by_id: BTreeMap<&str, &Decision> =
        decisions.iter().map(|d| (d.record_id.as_str(), d)).collect();
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.record_id.as_str())
                .map(|d| (r, *d))
                .ok_or_else(|| EvalError::MissingDecision { record_id: r.record_id.clone() })
        })
        .collect()
}

fn all_services(records: &[FingerprintRecord]) -> BTreeSet<String> {
    records.iter().flat_map(|r| r.verdicts.keys().cloned()).collect()
}

fn rates_for<'a>(
    service: &str,
    bots: impl Iterator<Item = (&'a FingerprintRecord, &'a Decision)>,
) -> ServiceRates {
    let mut counted = 0u64;
    let mut excluded = 0u64;
    let mut detected = [0u64; 4];
    for (record, decision) in bots {
        let Some(verdict) = record.verdicts.get(service) else {
            excluded += 1;
            continue;
        };
        counted += 1;
        let baseline = *verdict == Verdict::Bot;
        for (slot, mode) in detected.iter_mut().zip(Mode::ALL) {
            if baseline || mode.rule_signal(decision) {
                *slot += 1;
            }
        }
    }
    let rate = |hits: u64| if counted == 0 { 0.0 } else { hits as f64 / counted as f64 };
    ServiceRates {
        service: service.to_string(),
        baseline_detection_rate: rate(detected[0]),
        spatial_rate: rate(detected[1]),
        temporal_rate: rate(detected[2]),
        combined_rate: rate(detected[3]),
        bot_records: counted,
        excluded_missing_verdict: excluded,
    }
}

/// Scores a decided corpus: detection rates per baseline service (overall
/// and per bot campaign tag) plus the true-negative rate on humans.
pub fn evaluate(
    records: &[FingerprintRecord],
    decisions: &[Decision],
) -> Result<EvalReport, EvalError> {
    let paired = zip_decisions(records, decisions)?;
    let services = all_services(records);

    let bot_pairs: Vec<_> = paired
        .iter()
        .filter(|(r, _)| matches!(r.source_label, SourceLabel::Bot(_)))
        .copied()
        .collect();
    let service_rates: Vec<ServiceRates> = services
        .iter()
        .map(|s| rates_for(s, bot_pairs.iter().copied()))
        .collect();

    let mut per_tag: BTreeMap<String, Vec<ServiceRates>> = BTreeMap::new();
    let tags: BTreeSet<&str> = bot_pairs
        .iter()
        .filter_map(|(r, _)| match &r.source_label {
            SourceLabel::Bot(tag) => Some(tag.as_str()),
            _ => None,
        })
        .collect();
    for tag in tags {
        let rows = services
            .iter()
            .map(|s| {
                rates_for(
                    s,
                    bot_pairs
                        .iter()
                        .filter(|(r, _)| r.source_label == SourceLabel::Bot(tag.to_string()))
                        .copied(),
                )
            })
            .collect();
        per_tag.insert(tag.to_string(), rows);
    }

    let mut humans = 0u64;
    let mut quiet = 0u64;
    for (record, decision) in &paired {
        if record.source_label == SourceLabel::Human {
            humans += 1;
            if !decision.is_bot_by_rules {
                quiet += 1;
            }
        }
    }
    let tnr_on_humans = if humans == 0 { 1.0 } else { quiet as f64 / humans as f64 };

    Ok(EvalReport {
        services: service_rates,
        per_tag,
        tnr_on_humans,
        human_records: humans,
        split: None,
    })
}

// ── Rule learning and replay ──────────────────────────────────────────────

/// Discovery → knowledge-base adjudication → compilation, in one call.
/// Candidates come from bot traffic the baseline services missed; the
/// standing geographic rule and drift watches are always appended.
pub fn learn_ruleset(
    records: &[FingerprintRecord],
    kb: &KnowledgeBase,
    categories: &AttributeCategorySet,
    registry: &AttributeRegistry,
    min_support: u64,
) -> Result<RuleSet, EvalError> {
    let reports = discover(
        records.iter(),
        categories,
        DiscoveryConfig {
            filter_mode: FilterMode::EvadedOnly,
            min_support,
            top_k: None,
            ascending: false,
            include_absent_anchor: false,
        },
    );
    let mut findings = Vec::new();
    for report in &reports {
        let adjudication = auto_adjudicate(report, kb);
        let outcome = apply_adjudication(report, &adjudication, categories)?;
        findings.extend(outcome.findings);
    }
    let mut ruleset = compile(&findings, kb, registry)?;
    append_temporal_defaults(&mut ruleset);
    Ok(ruleset)
}

/// Replays records in timestamp order against a cold-started rule set.
/// Returned decisions follow that replay order.
pub fn decide_in_time_order(ruleset: &RuleSet, records: &[FingerprintRecord]) -> Vec<Decision> {
    let mut ordered: Vec<&FingerprintRecord> = records.iter().collect();
    ordered.sort_by(|a, b| (a.timestamp, &a.record_id).cmp(&(b.timestamp, &b.record_id)));
    let matcher = CompiledMatcher::new(ruleset);
    let mut state = ruleset.temporal_state();
    ordered
        .into_iter()
        .map(|record| evaluate_record(&matcher, &mut state, record))
        .collect()
}

/// Learns rules on a seeded `fraction` of the corpus and scores both
/// sides, reporting the per-service combined-rate drop on the held-out
/// side. Each side is replayed from a cold temporal state.
pub fn split_eval(
    records: &[FingerprintRecord],
    fraction: f64,
    seed: u64,
    kb: &KnowledgeBase,
    categories: &AttributeCategorySet,
    registry: &AttributeRegistry,
    min_support: u64,
) -> Result<SplitReport, EvalError> {
    let total = records.len();
    let train_n = (total as f64 * fraction).round() as usize;
    if train_n == 0 || train_n >= total {
        return Err(EvalError::DegenerateSplit { fraction, total });
    }

    let mut indices: Vec<usize> = (0..total).collect();
    indices.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    let take = |slice: &[usize]| -> Vec<FingerprintRecord> {
        slice.iter().map(|&i| records[i].clone()).collect()
    };
    let train = take(&indices[..train_n]);
    let test = take(&indices[train_n..]);

    let ruleset = learn_ruleset(&train, kb, categories, registry, min_support)?;
    let score = |side: &[FingerprintRecord]| -> Result<Vec<ServiceRates>, EvalError> {
        let decisions = decide_in_time_order(&ruleset, side);
        Ok(evaluate(side, &decisions)?.services)
    };
    let train_rates = score(&train)?;
    let test_rates = score(&test)?;

    let mut drop = BTreeMap::new();
    for tr in &train_rates {
        if let Some(te) = test_rates.iter().find(|t| t.service == tr.service) {
            drop.insert(tr.service.clone(), tr.combined_rate - te.combined_rate);
        }
    }
    Ok(SplitReport { train_fraction: fraction, train_rates, test_rates, drop })
}

// ── Emission ──────────────────────────────────────────────────────────────

/// Renders a report. JSON is lossless; CSV carries one row per
/// service × mode; the text table has one row per mode.
pub fn emit_report(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
        Format::Csv => {
            let mut out = String::from("service,mode,detection_rate\n");
            for row in &report.services {
                for mode in Mode::ALL {
                    out.push_str(&format!("{},{},{}\n", row.service, mode.label(), row.rate(mode)));
                }
            }
            out
        }
        Format::TextTable => render_table(report),
    }
}

fn render_table(report: &EvalReport) -> String {
    let width = report
        .services
        .iter()
        .map(|r| r.service.len())
        .chain([8])
        .max()
        .unwrap_or(8)
        + 2;
    let mut out = format!("{:<10}", "mode");
    for row in &report.services {
        out.push_str(&format!("{:>width$}", row.service));
    }
    out.push('\n');
    for mode in Mode::ALL {
        out.push_str(&format!("{:<10}", mode.label()));
        for row in &report.services {
            out.push_str(&format!("{:>width$.4}", row.rate(mode)));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "\ntnr_on_humans {:.4} over {} human records\n",
        report.tnr_on_humans, report.human_records
    ));
    if let Some(split) = &report.split {
        out.push_str(&format!("split train_fraction {:.2}\n", split.train_fraction));
        for (service, drop) in &split.drop {
            out.push_str(&format!("  {service} combined drop {drop:+.4}\n"));
        }
    }
    out
}
