//! End-to-end acceptance checks, one test per criterion. Every test prints
//! a single `acceptance NN <name>: PASS/FAIL` line so a suite run doubles
//! as a checklist.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use fplint::eval::{decide_in_time_order, evaluate, learn_ruleset, split_eval};
use fplint::model::{
    canonical_serialize, AttributeCategorySet, AttributeRegistry, AttributeValue,
    FingerprintRecord, SourceLabel,
};
use fplint::normalize::{ingest_str, GeoTable, SHIPPED_GEO_TABLE_CSV};
use fplint::rules::{evaluate_record, shipped_ruleset, CompiledMatcher};
use fplint::spatial::{count_pairs, record_passes_filter, FilterMode};
use fplint::synth::{
    corpus_to_jsonl, gen_corpus, shipped_bench_config, BaselineVerdictModel, BotAlteration,
    IntRange, SynthConfig,
};

fn check(tag: &str, ok: bool, details: String) {
    println!("acceptance {tag}: {} — {details}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {tag} failed: {details}");
}

/// Serializes generated records and pushes them through real ingestion so
/// the derived attributes exist, then sorts into replay order.
fn ingested(records: &[FingerprintRecord]) -> Vec<FingerprintRecord> {
    let registry = AttributeRegistry::shipped();
    let geo = GeoTable::from_csv_str(SHIPPED_GEO_TABLE_CSV).unwrap();
    let outcome = ingest_str(&corpus_to_jsonl(records), "synth", &registry, Some(&geo), None);
    assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
    let mut records = outcome.records;
    records.sort_by(|a, b| (a.timestamp, &a.record_id).cmp(&(b.timestamp, &b.record_id)));
    records
}

fn humans_only_config(n_identities: u32, requests: u32) -> SynthConfig {
    SynthConfig {
        seed: 20_260_814,
        n_humans: n_identities,
        n_bots: 0,
        requests_per_identity: IntRange { min: requests, max: requests },
        bot_alteration: BotAlteration {
            attrs_altered: vec![],
            independent: true,
            alter_prob: 0.0,
            geo_mismatch_prob: 0.0,
            cookie_retention_prob: 1.0,
        },
        baseline_verdict_model: BaselineVerdictModel {
            evasion_prob_given_altered: BTreeMap::from([("svc_a".to_string(), BTreeMap::new())]),
            base_evasion: BTreeMap::new(),
        },
    }
}

// ── 01: the curated contradiction corpus is fully caught ─────────────────

#[test]
fn acceptance_01_regression_corpus_fully_flagged() {
    let registry = AttributeRegistry::shipped();
    let geo = GeoTable::from_csv_str(SHIPPED_GEO_TABLE_CSV).unwrap();
    let corpus = include_str!("data/regression_corpus.jsonl");

    let started = Instant::now();
    let outcome = ingest_str(corpus, "regression_corpus.jsonl", &registry, Some(&geo), None);
    assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
    let mut records = outcome.records;
    records.sort_by(|a, b| (a.timestamp, &a.record_id).cmp(&(b.timestamp, &b.record_id)));

    let ruleset = shipped_ruleset();
    let matcher = CompiledMatcher::new(&ruleset);
    let mut state = ruleset.temporal_state();
    let mut missed = Vec::new();
    let mut spatially_matched = 0usize;
    for record in &records {
        let decision = evaluate_record(&matcher, &mut state, record);
        if !decision.matched.is_empty() {
            spatially_matched += 1;
        }
        let is_bot_row = matches!(record.source_label, SourceLabel::Bot(_));
        // The first half of the drift pair is consistent on its own; every
        // other planted row must be flagged by the shipped rules.
        let setup_row = record.record_id.starts_with("reg-54");
        if is_bot_row && !setup_row && !decision.is_bot_by_rules {
            missed.push(record.record_id.clone());
        }
        if !is_bot_row && decision.is_bot_by_rules {
            missed.push(format!("{} (human flagged)", record.record_id));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    let ok = missed.is_empty() && spatially_matched >= 42 && elapsed < 1.0;
    check(
        "01 regression corpus",
        ok,
        format!(
            "{} records, {} spatial matches, missed: {:?}, {:.3}s",
            records.len(),
            spatially_matched,
            missed,
            elapsed
        ),
    );
}

// ── 02: humans never trip the rules; a 3% spoof costs exactly 3% ─────────

#[test]
fn acceptance_02_soundness_on_humans() {
    let kb = fplint::rules::KnowledgeBase::shipped();
    let records = ingested(&gen_corpus(&humans_only_config(2_500, 4), &kb).unwrap());
    assert_eq!(records.len(), 10_000);

    let ruleset = shipped_ruleset();
    let decisions = decide_in_time_order(&ruleset, &records);
    let clean_report = evaluate(&records, &decisions).unwrap();
    let clean = decisions.iter().filter(|d| d.is_bot_by_rules || d.geo_flag).count() == 0;

    // Spoof the browser/OS claim on an exact 3% of the records.
    let mut perturbed = records.clone();
    let spoofed: BTreeSet<String> = (0..300)
        .map(|k| {
            let record = &mut perturbed[k * 33];
            record
                .attributes
                .insert("ua.browser".to_string(), AttributeValue::text("Safari"));
            record.attributes.insert("ua.os".to_string(), AttributeValue::text("Windows"));
            record.record_id.clone()
        })
        .collect();
    let decisions = decide_in_time_order(&ruleset, &perturbed);
    let flagged: BTreeSet<String> = decisions
        .iter()
        .filter(|d| d.is_bot_by_rules)
        .map(|d| d.record_id.clone())
        .collect();
    let spoof_report = evaluate(&perturbed, &decisions).unwrap();

    let ok = clean
        && clean_report.tnr_on_humans == 1.0
        && flagged == spoofed
        && spoof_report.tnr_on_humans == 9_700.0 / 10_000.0;
    check(
        "02 human soundness",
        ok,
        format!(
            "clean TNR {}, spoofed TNR {} ({} of {} flagged, sets equal: {})",
            clean_report.tnr_on_humans,
            spoof_report.tnr_on_humans,
            flagged.len(),
            records.len(),
            flagged == spoofed
        ),
    );
}

// ── 03: discovery counting equals a brute-force oracle ───────────────────

type Triples = Vec<(String, u64, Vec<(String, u64)>)>;

fn oracle_counts(
    records: &[FingerprintRecord],
    attr_a: &str,
    attr_b: &str,
    mode: FilterMode,
) -> Triples {
    let mut table: HashMap<String, HashMap<String, u64>> = HashMap::new();
    for r in records {
        if !record_passes_filter(r, mode) {
            continue;
        }
        let a = r.attr(attr_a);
        if a.is_absent() {
            continue;
        }
        *table
            .entry(canonical_serialize(a))
            .or_default()
            .entry(canonical_serialize(r.attr(attr_b)))
            .or_insert(0) += 1;
    }
    let mut out: Triples = table
        .into_iter()
        .map(|(a, bs)| {
            let support = bs.values().sum();
            let mut companions: Vec<(String, u64)> = bs.into_iter().collect();
            companions.sort();
            (a, support, companions)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn acceptance_03_oracle_equivalence() {
    let kb = fplint::rules::KnowledgeBase::shipped();
    let mut config = shipped_bench_config();
    config.n_humans = 300;
    config.n_bots = 500;
    let records = ingested(&gen_corpus(&config, &kb).unwrap());
    assert!(records.len() <= 10_000, "oracle corpus must stay small");

    let registry = AttributeRegistry::shipped();
    let categories = AttributeCategorySet::shipped();
    let mut compared = 0usize;
    let mut disagreements = Vec::new();
    for (_, attrs) in categories.iter() {
        for a in attrs {
            for b in attrs {
                if a == b {
                    continue;
                }
                for mode in [FilterMode::EvadedOnly, FilterMode::AllBots, FilterMode::All] {
                    let engine: Triples = count_pairs(&records, a, b, mode, &registry)
                        .unwrap()
                        .iter()
                        .map(|pc| {
                            let mut companions: Vec<(String, u64)> = pc
                                .values_b
                                .iter()
                                .map(|vc| (canonical_serialize(&vc.value), vc.count))
                                .collect();
                            companions.sort();
                            (canonical_serialize(&pc.value_a), pc.support_a, companions)
                        })
                        .collect();
                    let mut engine = engine;
                    engine.sort();
                    if engine != oracle_counts(&records, a, b, mode) {
                        disagreements.push(format!("{a}/{b} under {mode:?}"));
                    }
                    compared += 1;
                }
            }
        }
    }
    check(
        "03 oracle equivalence",
        disagreements.is_empty(),
        format!(
            "{} records, {compared} pair/mode tables compared, disagreements: {disagreements:?}",
            records.len()
        ),
    );
}

// ── 04: benchmark detection-rate orderings ────────────────────────────────

#[test]
fn acceptance_04_benchmark_orderings() {
    let kb = fplint::rules::KnowledgeBase::shipped();
    let registry = AttributeRegistry::shipped();
    let categories = AttributeCategorySet::shipped();

    let started = Instant::now();
    let records = ingested(&gen_corpus(&shipped_bench_config(), &kb).unwrap());
    let ruleset = learn_ruleset(&records, &kb, &categories, &registry, 1).unwrap();
    let decisions = decide_in_time_order(&ruleset, &records);
    let report = evaluate(&records, &decisions).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let mut ok = report.tnr_on_humans == 1.0 && elapsed < 30.0;
    let mut lines = Vec::new();
    for row in &report.services {
        ok &= row.combined_rate > row.spatial_rate
            && row.spatial_rate > row.temporal_rate
            && row.temporal_rate > row.baseline_detection_rate
            && row.combined_rate - row.baseline_detection_rate >= 0.15;
        lines.push(format!(
            "{}: none {:.4} spatial {:.4} temporal {:.4} combined {:.4}",
            row.service,
            row.baseline_detection_rate,
            row.spatial_rate,
            row.temporal_rate,
            row.combined_rate
        ));
    }
    let svc_a = report.services.iter().find(|r| r.service == "svc_a").unwrap();
    ok &= (svc_a.baseline_detection_rate - 0.55).abs() <= 0.05;
    check(
        "04 benchmark orderings",
        ok,
        format!("{} | tnr {} | {:.1}s", lines.join(" | "), report.tnr_on_humans, elapsed),
    );
}

// ── 05: rules learned on 80% barely lose accuracy on the rest ────────────

#[test]
fn acceptance_05_split_generalization() {
    let kb = fplint::rules::KnowledgeBase::shipped();
    let registry = AttributeRegistry::shipped();
    let categories = AttributeCategorySet::shipped();
    let records = ingested(&gen_corpus(&shipped_bench_config(), &kb).unwrap());
    let split = split_eval(&records, 0.8, 20_260_814, &kb, &categories, &registry, 1).unwrap();
    let worst = split
        .drop
        .values()
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    check(
        "05 split generalization",
        worst <= 0.01,
        format!("drops {:?}, worst |drop| {:.4}", split.drop, worst),
    );
}

// ── 06: temporal and geographic exactness on targeted fixtures ───────────

#[test]
fn acceptance_06_temporal_and_geo_exactness() {
    let kb = fplint::rules::KnowledgeBase::shipped();

    // A privacy-browser-like population: cookies retained while memory and
    // concurrency re-randomize on every request.
    let drift_config = SynthConfig {
        seed: 4_242,
        n_humans: 0,
        n_bots: 30,
        requests_per_identity: IntRange { min: 4, max: 9 },
        bot_alteration: BotAlteration {
            attrs_altered: vec!["device.memory".into(), "hardware.concurrency".into()],
            independent: true,
            alter_prob: 0.7,
            geo_mismatch_prob: 0.0,
            cookie_retention_prob: 1.0,
        },
        baseline_verdict_model: BaselineVerdictModel {
            evasion_prob_given_altered: BTreeMap::from([("svc_a".to_string(), BTreeMap::new())]),
            base_evasion: BTreeMap::new(),
        },
    };
    let records = ingested(&gen_corpus(&drift_config, &kb).unwrap());

    // Replay oracle: a request raises one flag per watched attribute whose
    // value is new for its cookie's history.
    let watched = ["device.memory", "hardware.concurrency"];
    let mut seen: BTreeMap<(String, &str), BTreeSet<String>> = BTreeMap::new();
    let mut expected = 0usize;
    for record in &records {
        let cookie = record.cookie_id.clone().unwrap();
        for attr in watched {
            let observed = record.attr(attr);
            if observed.is_absent() {
                // Missing data is never drift, mirroring the tracker.
                continue;
            }
            let value = canonical_serialize(observed);
            let history = seen.entry((cookie.clone(), attr)).or_default();
            if !history.is_empty() && !history.contains(&value) {
                expected += 1;
            }
            history.insert(value);
        }
    }

    let ruleset = shipped_ruleset();
    let decisions = decide_in_time_order(&ruleset, &records);
    let observed = decisions
        .iter()
        .flat_map(|d| &d.temporal_flags)
        .filter(|f| watched.contains(&f.attribute.as_str()))
        .count();
    let drift_ok = observed == expected && expected > 0;

    // An onion-routed-like population: exit region and reported timezone
    // never share an offset.
    let mut tor_config = drift_config.clone();
    tor_config.seed = 4_243;
    tor_config.bot_alteration.alter_prob = 0.0;
    tor_config.bot_alteration.geo_mismatch_prob = 1.0;
    let records = ingested(&gen_corpus(&tor_config, &kb).unwrap());
    let decisions = decide_in_time_order(&ruleset, &records);
    let geo_flagged = decisions.iter().filter(|d| d.geo_flag).count();
    let geo_ok = geo_flagged == records.len() && !records.is_empty();

    check(
        "06 temporal/geo exactness",
        drift_ok && geo_ok,
        format!(
            "drift flags {observed} (oracle {expected}), geo flagged {geo_flagged}/{}",
            records.len()
        ),
    );
}

// ── 07: rule-language round-trip and error positions ──────────────────────

const ROUND_TRIP_ATTRS: &[&str] = &[
    "ua.device",
    "ua.browser",
    "ua.os",
    "platform",
    "vendor",
    "screen.resolution",
    "screen.color_depth",
    "screen.color_gamut",
    "device.memory",
    "hardware.concurrency",
    "touch.support",
    "touch.max_points",
    "timezone",
    "ip.location",
    "languages",
];

const ROUND_TRIP_STRINGS: &[&str] = &[
    "iPhone",
    "Mobile Safari",
    "Apple Computer, Inc.",
    "Linux armv8l",
    "[srgb,p3]",
    "[]",
    "true",
    "none",
    "Europe/Berlin",
    "France/Hauts-de-France",
    "he said \"hi\"",
    "back\\slash",
    "",
    "Gümüşhane",
];

fn random_ruleset(rng: &mut rand_chacha::ChaCha12Rng) -> fplint::rules::RuleSet {
    use rand::Rng;
    use fplint::rules::{
        Atom, FilterRule, Literal, Predicate, RuleBody, RuleKind, RuleSet, TemporalKey,
        TemporalSpec,
    };
    let pick_attr = |rng: &mut rand_chacha::ChaCha12Rng| {
        ROUND_TRIP_ATTRS[rng.gen_range(0..ROUND_TRIP_ATTRS.len() as u32) as usize].to_string()
    };
    let pick_str = |rng: &mut rand_chacha::ChaCha12Rng| {
        ROUND_TRIP_STRINGS[rng.gen_range(0..ROUND_TRIP_STRINGS.len() as u32) as usize].to_string()
    };
    // Quarters survive decimal formatting and reparsing exactly.
    let quarter = |rng: &mut rand_chacha::ChaCha12Rng| f64::from(rng.gen_range(-16_000..16_000i32)) / 4.0;
    let literal = |rng: &mut rand_chacha::ChaCha12Rng| match rng.gen_range(0..3u32) {
        0 => Literal::Str(pick_str(rng)),
        1 => Literal::Num(quarter(rng)),
        _ => Literal::Resolution {
            width: rng.gen_range(1..4000),
            height: rng.gen_range(1..4000),
        },
    };

    let mut sets = BTreeMap::new();
    for i in 0..rng.gen_range(0..4u32) {
        let values: Vec<_> = (0..rng.gen_range(1..5u32)).map(|_| literal(rng)).collect();
        sets.insert(format!("s{i}"), values);
    }
    let set_names: Vec<String> = sets.keys().cloned().collect();

    let atom = |rng: &mut rand_chacha::ChaCha12Rng| -> Atom {
        let max = if set_names.is_empty() { 8 } else { 10 };
        match rng.gen_range(0..max as u32) {
            0 => Atom::Eq { attr: pick_attr(rng), value: literal(rng) },
            1 => Atom::Ne { attr: pick_attr(rng), value: literal(rng) },
            2 => Atom::Lt { attr: pick_attr(rng), bound: quarter(rng) },
            3 => Atom::Gt { attr: pick_attr(rng), bound: quarter(rng) },
            4 => {
                let (a, b) = (quarter(rng), quarter(rng));
                Atom::Between { attr: pick_attr(rng), low: a.min(b), high: a.max(b) }
            }
            5 => Atom::Absent { attr: pick_attr(rng) },
            6 => Atom::Present { attr: pick_attr(rng) },
            7 => Atom::OffsetsDisjoint { region_attr: pick_attr(rng), zone_attr: pick_attr(rng) },
            8 => Atom::InSet {
                attr: pick_attr(rng),
                set: set_names[rng.gen_range(0..set_names.len() as u32) as usize].clone(),
            },
            _ => Atom::NotInSet {
                attr: pick_attr(rng),
                set: set_names[rng.gen_range(0..set_names.len() as u32) as usize].clone(),
            },
        }
    };

    let rules = (0..rng.gen_range(0..8u32))
        .map(|i| {
            let provenance =
                if rng.gen_bool(0.4) { Some(pick_str(rng)) } else { None };
            let (kind, body) = if rng.gen_bool(0.8) {
                let atoms = (0..rng.gen_range(1..4u32)).map(|_| atom(rng)).collect();
                let kind =
                    if rng.gen_bool(0.5) { RuleKind::Spatial } else { RuleKind::Geo };
                (kind, RuleBody::Predicate(Predicate { atoms }))
            } else {
                let key = if rng.gen_bool(0.5) { TemporalKey::Cookie } else { TemporalKey::Ip };
                (
                    RuleKind::TemporalDirective,
                    RuleBody::Temporal(TemporalSpec { key, watch: pick_attr(rng) }),
                )
            };
            FilterRule { id: format!("r{i}"), kind, provenance, body }
        })
        .collect();
    RuleSet { sets, rules }
}

#[test]
fn acceptance_07_rule_language_round_trip_and_error_positions() {
    use fplint::rules::{parse_rules, serialize_rules, RuleError};
    use rand::SeedableRng;

    let registry = AttributeRegistry::shipped();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7_777);
    let mut round_trip_failures = 0usize;
    for i in 0..1_000 {
        let rs = random_ruleset(&mut rng);
        let text = serialize_rules(&rs);
        match parse_rules(&text, &registry) {
            Ok(back) if back == rs => {}
            other => {
                round_trip_failures += 1;
                eprintln!("round trip {i} failed: {other:?}\n{text}");
            }
        }
    }

    #[derive(serde::Deserialize)]
    struct Case {
        name: String,
        text: String,
        line: usize,
        column: usize,
    }
    let mut case_count = 0usize;
    let mut position_failures = Vec::new();
    for raw in include_str!("data/malformed_rules.jsonl").lines() {
        if raw.trim().is_empty() {
            continue;
        }
        case_count += 1;
        let case: Case = serde_json::from_str(raw).unwrap();
        let got = match parse_rules(&case.text, &registry) {
            Ok(_) => None,
            Err(
                RuleError::Syntax { line, column, .. }
                | RuleError::UndefinedSet { line, column, .. }
                | RuleError::UnknownAttribute { line, column, .. },
            ) => Some((line, column)),
            Err(other) => {
                position_failures.push(format!("{}: positionless error {other:?}", case.name));
                continue;
            }
        };
        if got != Some((case.line, case.column)) {
            position_failures.push(format!(
                "{}: expected {}:{}, got {:?}",
                case.name, case.line, case.column, got
            ));
        }
    }

    let ok = round_trip_failures == 0 && position_failures.is_empty() && case_count >= 30;
    check(
        "07 rule language",
        ok,
        format!(
            "1000 round trips ({round_trip_failures} failures), \
             {case_count} malformed cases (mismatches: {position_failures:?})"
        ),
    );
}

// ── 09: corpus-scale matching throughput ──────────────────────────────────

#[test]
fn acceptance_09_throughput() {
    let kb = fplint::rules::KnowledgeBase::shipped();
    let config = SynthConfig {
        seed: 90_909,
        n_humans: 26_770,
        n_bots: 100_000,
        requests_per_identity: IntRange { min: 4, max: 4 },
        bot_alteration: BotAlteration {
            attrs_altered: vec!["screen.resolution".into(), "hardware.concurrency".into()],
            independent: true,
            alter_prob: 0.3,
            geo_mismatch_prob: 0.05,
            cookie_retention_prob: 0.5,
        },
        baseline_verdict_model: BaselineVerdictModel {
            evasion_prob_given_altered: BTreeMap::from([(
                "svc_a".to_string(),
                BTreeMap::from([
                    ("screen.resolution".to_string(), 0.5),
                    ("hardware.concurrency".to_string(), 0.5),
                ]),
            )]),
            base_evasion: BTreeMap::from([("svc_a".to_string(), 0.4)]),
        },
    };
    let records = gen_corpus(&config, &kb).unwrap();
    assert_eq!(records.len(), 507_080);

    let ruleset = shipped_ruleset();
    let matcher = CompiledMatcher::new(&ruleset);

    let started = Instant::now();
    let mut hits = 0usize;
    for record in &records {
        hits += matcher.matches(record).len();
    }
    let match_secs = started.elapsed().as_secs_f64();
    let rate = records.len() as f64 / match_secs;

    let mut ordered: Vec<&FingerprintRecord> = records.iter().collect();
    ordered.sort_by(|a, b| (a.timestamp, &a.record_id).cmp(&(b.timestamp, &b.record_id)));
    let started = Instant::now();
    let mut state = ruleset.temporal_state();
    let mut flagged = 0usize;
    for record in ordered {
        if evaluate_record(&matcher, &mut state, record).is_bot_by_rules {
            flagged += 1;
        }
    }
    let detect_secs = started.elapsed().as_secs_f64();

    let ok = rate >= 100_000.0 && detect_secs < 30.0;
    check(
        "09 throughput",
        ok,
        format!(
            "matched {} records in {match_secs:.2}s ({rate:.0}/s, {hits} rule hits), \
             full detect {detect_secs:.2}s ({flagged} flagged)",
            records.len()
        ),
    );
}
