//! `fplint` — the fingerprint inconsistency pipeline as one binary.
//!
//! - subcommands compose through files only: `synth` → `ingest` →
//!   `discover` → `compile` → `detect` → `eval`;
//! - identical inputs (and `--seed`) produce byte-identical outputs;
//! - every run prints a digest of the resolved configuration to stderr so
//!   results can be tied back to the exact data files that produced them;
//! - exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use fplint::eval::{emit_report, evaluate, split_eval, Format};
use fplint::model::{
    AttributeCategorySet, AttributeRegistry, FingerprintRecord, SHIPPED_CATEGORIES_JSON,
    SHIPPED_REGISTRY_JSON,
};
use fplint::normalize::{
    ingest_str, record_to_json_line, Blocklists, GeoTable, SHIPPED_GEO_TABLE_CSV,
};
use fplint::rules::{
    append_temporal_defaults, auto_adjudicate, compile, evaluate_record, parse_rules,
    serialize_rules, CompiledMatcher, Decision, KnowledgeBase, SHIPPED_KB_JSON,
    SHIPPED_RULES_TEXT,
};
use fplint::spatial::{
    apply_adjudication, discover, CandidateReport, ConfirmedFinding, DiscoveryConfig, FilterMode,
};
use fplint::synth::{corpus_to_jsonl, gen_corpus, SynthConfig, SHIPPED_BENCH_CONFIG_JSON};
use fplint::temporal::TemporalState;

#[derive(Parser)]
#[command(name = "fplint", version, about = "Detect fingerprint inconsistencies in bot traffic")]
struct Cli {
    /// Attribute registry JSON; defaults to the built-in registry.
    #[arg(long, global = true, value_name = "FILE")]
    registry: Option<PathBuf>,

    /// Attribute category JSON; defaults to the built-in set.
    #[arg(long, global = true, value_name = "FILE")]
    categories: Option<PathBuf>,

    /// Device knowledge base JSON; defaults to the built-in one.
    #[arg(long, global = true, value_name = "FILE")]
    kb: Option<PathBuf>,

    /// IP-prefix → region CSV; defaults to the built-in demo table.
    #[arg(long, global = true, value_name = "FILE")]
    geo_table: Option<PathBuf>,

    /// Overrides the seed of seeded subcommands (synth, eval --split).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress warnings and the config digest on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    /// Report format for eval: json, csv or text.
    #[arg(long, global = true, default_value = "json")]
    format: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus as JSONL.
    Synth {
        /// Generator config JSON; defaults to the built-in benchmark config.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output path (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Normalize raw JSONL: parse user agents, resolve IP regions, derive
    /// canonical attribute values.
    Ingest {
        /// Raw records, one JSON object per line.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Newline-delimited IP blocklist.
        #[arg(long, value_name = "FILE")]
        blocklist_ips: Option<PathBuf>,
        /// `asn,flag` CSV blocklist.
        #[arg(long, value_name = "FILE")]
        blocklist_asns: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Enumerate contradictory attribute pairs and rank review candidates.
    Discover {
        /// Normalized records (output of `ingest`).
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        /// Which records feed discovery: evaded-only, all-bots or all.
        #[arg(long, default_value = "evaded-only")]
        mode: String,
        /// Drop anchor values seen fewer times than this.
        #[arg(long, default_value_t = 1)]
        min_support: u64,
        /// Keep only the widest N pairs per attribute pair.
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Lower findings into an executable filter-rule list.
    Compile {
        /// Either confirmed findings (JSON array) or `discover` output, in
        /// which case the knowledge base adjudicates automatically.
        #[arg(long, value_name = "FILE")]
        findings: PathBuf,
        /// Skip the standing drift watches at the end of the list.
        #[arg(long)]
        no_temporal_defaults: bool,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Replay records through a rule list and emit one decision per record.
    Detect {
        /// Normalized records (output of `ingest`).
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        /// Filter-rule list; defaults to the built-in curated rules.
        #[arg(long, value_name = "FILE")]
        rules: Option<PathBuf>,
        /// Resume drift tracking from a snapshot.
        #[arg(long, value_name = "FILE")]
        state_in: Option<PathBuf>,
        /// Write the post-run drift state snapshot.
        #[arg(long, value_name = "FILE")]
        state_out: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score decisions against labels: detection rates, TNR, split drop.
    Eval {
        /// Normalized records (output of `ingest`).
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        /// Decisions JSONL (output of `detect`).
        #[arg(long, value_name = "FILE")]
        decisions: PathBuf,
        /// Restrict the report to one baseline service.
        #[arg(long)]
        baseline: Option<String>,
        /// Also learn rules on this fraction and report the held-out drop.
        #[arg(long)]
        split: Option<f64>,
        /// Discovery support threshold for --split.
        #[arg(long, default_value_t = 1)]
        min_support: u64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn data(err: impl std::fmt::Display) -> CliError {
        CliError::Data(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Data(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

/// Everything a subcommand may need, loaded once. Holds the raw texts too,
/// so the digest covers the exact bytes in use.
struct Resolved {
    registry: AttributeRegistry,
    categories: AttributeCategorySet,
    kb: KnowledgeBase,
    geo: GeoTable,
    seed: Option<u64>,
    quiet: bool,
    format: Format,
    digest: String,
}

fn read_or<'a>(path: &Option<PathBuf>, shipped: &'a str) -> Result<(String, bool), CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok((text, false))
        }
        None => Ok((shipped.to_string(), true)),
    }
}

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let (registry_text, _) = read_or(&cli.registry, SHIPPED_REGISTRY_JSON)?;
    let (categories_text, _) = read_or(&cli.categories, SHIPPED_CATEGORIES_JSON)?;
    let (kb_text, _) = read_or(&cli.kb, SHIPPED_KB_JSON)?;
    let (geo_text, _) = read_or(&cli.geo_table, SHIPPED_GEO_TABLE_CSV)?;

    let registry = AttributeRegistry::from_json(&registry_text).map_err(CliError::data)?;
    let categories =
        AttributeCategorySet::from_json(&categories_text, &registry).map_err(CliError::data)?;
    let kb = KnowledgeBase::from_json(&kb_text).map_err(CliError::data)?;
    let geo = GeoTable::from_csv_str(&geo_text).map_err(CliError::data)?;
    let format = cli
        .format
        .parse::<Format>()
        .map_err(CliError::Usage)?;

    let mut hasher = Sha256::new();
    for (label, text) in [
        ("registry", registry_text.as_str()),
        ("categories", categories_text.as_str()),
        ("kb", kb_text.as_str()),
        ("geo_table", geo_text.as_str()),
    ] {
        hasher.update(label.as_bytes());
        hasher.update([0]);
        hasher.update(text.as_bytes());
        hasher.update([0]);
    }
    hasher.update(format!("seed={:?};format={format}", cli.seed).as_bytes());
    let digest = format!("{:x}", hasher.finalize());

    Ok(Resolved {
        registry,
        categories,
        kb,
        geo,
        seed: cli.seed,
        quiet: cli.quiet,
        format,
        digest,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = resolve(&cli)?;
    if !resolved.quiet {
        eprintln!("config sha256 {}", resolved.digest);
    }
    match &cli.command {
        Command::Synth { config, out } => cmd_synth(&resolved, config, out),
        Command::Ingest { input, blocklist_ips, blocklist_asns, out } => {
            cmd_ingest(&resolved, input, blocklist_ips, blocklist_asns, out)
        }
        Command::Discover { records, mode, min_support, top_k, out } => {
            cmd_discover(&resolved, records, mode, *min_support, *top_k, out)
        }
        Command::Compile { findings, no_temporal_defaults, out } => {
            cmd_compile(&resolved, findings, *no_temporal_defaults, out)
        }
        Command::Detect { records, rules, state_in, state_out, out } => {
            cmd_detect(&resolved, records, rules, state_in, state_out, out)
        }
        Command::Eval { records, decisions, baseline, split, min_support, out } => {
            cmd_eval(&resolved, records, decisions, baseline, *split, *min_support, out)
        }
    }
}

fn emit(out: &Option<PathBuf>, data: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, data)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match lock.write_all(data.as_bytes()).and_then(|()| lock.flush()) {
                // A closed pipe (e.g. `fplint … | head`) is not our error.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => other.map_err(CliError::data),
            }
        }
    }
}

/// Loads an (already or not yet normalized) record file. Normalizing twice
/// is idempotent: derived attributes are only filled where missing.
fn load_records(resolved: &Resolved, path: &Path) -> Result<Vec<FingerprintRecord>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let source = path.display().to_string();
    let outcome = ingest_str(&text, &source, &resolved.registry, Some(&resolved.geo), None);
    report_issues(resolved, &source, &outcome.warnings);
    if !outcome.errors.is_empty() {
        for issue in outcome.errors.iter().take(10) {
            eprintln!("{source}:{}: {}", issue.line, issue.message);
        }
        return Err(CliError::Data(format!(
            "{source}: {} of {} lines failed to parse",
            outcome.errors.len(),
            outcome.lines
        )));
    }
    Ok(outcome.records)
}

fn report_issues(resolved: &Resolved, source: &str, warnings: &[fplint::normalize::LineIssue]) {
    if resolved.quiet {
        return;
    }
    for issue in warnings {
        eprintln!("{source}:{}: warning: {}", issue.line, issue.message);
    }
}

fn replay_order(records: &mut [FingerprintRecord]) {
    records.sort_by(|a, b| (a.timestamp, &a.record_id).cmp(&(b.timestamp, &b.record_id)));
}

// ── Subcommands ───────────────────────────────────────────────────────────

fn cmd_synth(
    resolved: &Resolved,
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let (text, _) = read_or(config, SHIPPED_BENCH_CONFIG_JSON)?;
    let mut config = SynthConfig::from_json(&text).map_err(CliError::data)?;
    if let Some(seed) = resolved.seed {
        config.seed = seed;
    }
    config.validate(&resolved.registry).map_err(CliError::data)?;
    let corpus = gen_corpus(&config, &resolved.kb).map_err(CliError::data)?;
    emit(out, &corpus_to_jsonl(&corpus))
}

fn cmd_ingest(
    resolved: &Resolved,
    input: &Path,
    blocklist_ips: &Option<PathBuf>,
    blocklist_asns: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(input)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let blocklists = match (blocklist_ips, blocklist_asns) {
        (None, None) => None,
        (ips, asns) => {
            let mut lists = Blocklists::default();
            if let Some(path) = ips {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                lists.ips = Blocklists::load_ips(&text);
            }
            if let Some(path) = asns {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                lists.asns = Blocklists::load_asns(&text).map_err(CliError::data)?;
            }
            Some(lists)
        }
    };

    let source = input.display().to_string();
    let outcome = ingest_str(
        &text,
        &source,
        &resolved.registry,
        Some(&resolved.geo),
        blocklists.as_ref(),
    );
    report_issues(resolved, &source, &outcome.warnings);

    let mut data = String::new();
    for record in &outcome.records {
        data.push_str(&record_to_json_line(record));
        data.push('\n');
    }
    emit(out, &data)?;
    if !outcome.errors.is_empty() {
        for issue in outcome.errors.iter().take(10) {
            eprintln!("{source}:{}: {}", issue.line, issue.message);
        }
        return Err(CliError::Data(format!(
            "{source}: {} of {} lines failed to parse (good lines were still written)",
            outcome.errors.len(),
            outcome.lines
        )));
    }
    Ok(())
}

fn cmd_discover(
    resolved: &Resolved,
    records: &Path,
    mode: &str,
    min_support: u64,
    top_k: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let filter_mode = match mode {
        "evaded-only" => FilterMode::EvadedOnly,
        "all-bots" => FilterMode::AllBots,
        "all" => FilterMode::All,
        other => {
            return Err(CliError::Usage(format!(
                "unknown --mode {other:?} (expected evaded-only, all-bots or all)"
            )))
        }
    };
    let records = load_records(resolved, records)?;
    let reports = discover(
        &records,
        &resolved.categories,
        DiscoveryConfig { filter_mode, min_support, top_k, ..DiscoveryConfig::default() },
    );
    let mut json = serde_json::to_string_pretty(&reports).map_err(CliError::data)?;
    json.push('\n');
    emit(out, &json)
}

fn cmd_compile(
    resolved: &Resolved,
    findings_path: &Path,
    no_temporal_defaults: bool,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(findings_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", findings_path.display())))?;

    // Accept confirmed findings directly, or discovery reports (recognised
    // by their `pairs` field), which the knowledge base then adjudicates.
    let findings: Vec<ConfirmedFinding> = match serde_json::from_str::<Vec<CandidateReport>>(&text)
    {
        Ok(reports) if text.contains("\"pairs\"") => {
            let mut findings = Vec::new();
            for report in &reports {
                let adjudication = auto_adjudicate(report, &resolved.kb);
                let outcome = apply_adjudication(report, &adjudication, &resolved.categories)
                    .map_err(CliError::data)?;
                findings.extend(outcome.findings);
            }
            findings
        }
        _ => serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", findings_path.display())))?,
    };

    let mut ruleset =
        compile(&findings, &resolved.kb, &resolved.registry).map_err(CliError::data)?;
    if !no_temporal_defaults {
        append_temporal_defaults(&mut ruleset);
    }
    emit(out, &serialize_rules(&ruleset))
}

fn cmd_detect(
    resolved: &Resolved,
    records: &Path,
    rules: &Option<PathBuf>,
    state_in: &Option<PathBuf>,
    state_out: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let (rules_text, _) = read_or(rules, SHIPPED_RULES_TEXT)?;
    let ruleset = parse_rules(&rules_text, &resolved.registry).map_err(CliError::data)?;

    let mut records = load_records(resolved, records)?;
    replay_order(&mut records);

    let mut state = match state_in {
        Some(path) => {
            let bytes =
                fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            TemporalState::restore(&bytes).map_err(CliError::data)?
        }
        None => ruleset.temporal_state(),
    };
    let matcher = CompiledMatcher::new(&ruleset);

    let mut data = String::new();
    for record in &records {
        let decision = evaluate_record(&matcher, &mut state, record);
        data.push_str(&serde_json::to_string(&decision).map_err(CliError::data)?);
        data.push('\n');
    }
    if let Some(path) = state_out {
        fs::write(path, state.snapshot())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    emit(out, &data)
}

fn cmd_eval(
    resolved: &Resolved,
    records: &Path,
    decisions: &Path,
    baseline: &Option<String>,
    split: Option<f64>,
    min_support: u64,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let records = load_records(resolved, records)?;
    let text = fs::read_to_string(decisions)
        .map_err(|e| CliError::Data(format!("{}: {e}", decisions.display())))?;
    let mut parsed: Vec<Decision> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        parsed.push(serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{}:{}: {e}", decisions.display(), idx + 1))
        })?);
    }

    let mut report = evaluate(&records, &parsed).map_err(CliError::data)?;
    if let Some(fraction) = split {
        report.split = Some(
            split_eval(
                &records,
                fraction,
                resolved.seed.unwrap_or(0),
                &resolved.kb,
                &resolved.categories,
                &resolved.registry,
                min_support,
            )
            .map_err(CliError::data)?,
        );
    }
    if let Some(service) = baseline {
        if !report.services.iter().any(|r| &r.service == service) {
            return Err(CliError::Usage(format!(
                "baseline service {service:?} does not appear in the records"
            )));
        }
        report.services.retain(|r| &r.service == service);
        for rows in report.per_tag.values_mut() {
            rows.retain(|r| &r.service == service);
        }
    }
    emit(out, &emit_report(&report, resolved.format))
}
