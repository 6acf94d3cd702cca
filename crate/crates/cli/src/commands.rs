//! One function per subcommand. Each resolves its flags into the config,
//! checks every input, does the work in memory and only then writes to the
//! output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gstd_core::corpus::{
    load_corpus, load_hypotheses, load_mustshe, read_jsonl_records, CorpusSchema, Gender, Lang,
    MustSheFormat, Utterance,
};
use gstd_core::genderloss::{self, CHECKPOINT_FORMAT};
use gstd_core::metrics::{self, BleuConfig, Smoothing, SplitFilter};
use gstd_core::reformulate::{
    builtin_exemplars, mock_backend, reformulate_batch, ChatBackend, Exemplar, GenderLexicon,
    HttpBackend, MorphPattern, PromptStrategy, ReformulateOptions, ReformulationResult, Validator,
    Verdict, PROMPT_VERSION,
};
use gstd_core::selection::{
    build_targets as build_target_records, partition_corpus, sample_balanced, training_text,
    DataClass, GenderedPair, MixConfig, ModeLayout, PronounFilter,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{require_file, BackendKind, LayoutChoice, PipelineConfig};
use crate::manifest::ArtifactWriter;
use crate::{
    parse_enum, BuildTargetsArgs, Outcome, ReformulateArgs, ScoreArgs, SelectArgs, SweepArgs,
};

fn parse_lang(s: &str) -> Result<Lang> {
    s.parse().map_err(anyhow::Error::msg)
}

/// Load a pipeline-internal utterance file; any malformed row is an error.
fn load_clean(path: &Path, what: &str) -> Result<Vec<Utterance>> {
    let loaded = load_corpus(path, CorpusSchema::JsonlV1)?;
    if let Some(first) = loaded.rejects.first() {
        bail!(
            "{what} '{}' has {} malformed rows (row {}: {})",
            path.display(),
            loaded.rejects.len(),
            first.row,
            first.reason
        );
    }
    Ok(loaded.utterances)
}

fn load_lexicon(path: &Option<PathBuf>, what: &str) -> Result<Option<GenderLexicon>> {
    path.as_ref()
        .map(|p| {
            require_file(p, what)?;
            Ok(GenderLexicon::from_tsv(p)?)
        })
        .transpose()
}

fn key_value_table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

pub fn select(mut cfg: PipelineConfig, args: &SelectArgs) -> Result<Outcome> {
    if let Some(c) = &args.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(s) = &args.schema {
        cfg.corpus_schema = s.clone();
    }
    if let Some(l) = &args.lang {
        cfg.lang = Some(parse_lang(l)?);
    }
    if let Some(p) = &args.pronouns {
        cfg.pronouns = Some(p.clone());
    }
    if args.sample_size.is_some() {
        cfg.sample_size = args.sample_size;
    }

    let seed = cfg.require_seed("select")?;
    let corpus_path = cfg
        .corpus
        .clone()
        .context("`select` needs a corpus: pass --corpus or set \"corpus\" in the config")?;
    require_file(&corpus_path, "corpus")?;
    let schema: CorpusSchema = cfg.corpus_schema.parse()?;
    if let Some(n) = cfg.sample_size {
        if n % 2 != 0 {
            bail!("sample size {n} is odd; a gender-balanced sample needs an even size");
        }
    }
    let filter = match &cfg.pronouns {
        Some(words) if words.iter().all(|w| w.trim().is_empty()) => {
            bail!("the pronoun list is empty")
        }
        Some(words) => PronounFilter::new(words.iter().map(|w| w.trim())),
        None => PronounFilter::default(),
    };

    let loaded = load_corpus(&corpus_path, schema)?;
    let (utterances, other_lang): (Vec<Utterance>, Vec<Utterance>) = match cfg.lang {
        Some(lang) => loaded
            .utterances
            .iter()
            .cloned()
            .partition(|u| u.lang == lang),
        None => (loaded.utterances.clone(), Vec::new()),
    };
    let part = partition_corpus(&utterances, &filter);
    let n = cfg
        .sample_size
        .unwrap_or(2 * part.stats.selected_male.min(part.stats.selected_female));
    let sample = sample_balanced(&part.selected, n, seed)?;
    let count = |g| sample.iter().filter(|u| u.speaker_gender == g).count();

    let stats = json!({
        "seed": seed,
        "rows": loaded.total_rows,
        "rejected_rows": loaded.rejects.len(),
        "other_language": other_lang.len(),
        "partition": part.stats,
        "sample_size": sample.len(),
        "sample_male": count(Gender::Male),
        "sample_female": count(Gender::Female),
    });
    let mut w = ArtifactWriter::new(&cfg.out_dir, "select")?;
    w.write_jsonl("selected.jsonl", &sample)?;
    w.write_jsonl("neutral.jsonl", &part.neutral)?;
    w.write_jsonl("rejects.jsonl", &loaded.rejects)?;
    w.write_json("selection_stats.json", &stats)?;
    w.finish()?;

    let s = &part.stats;
    let table = key_value_table(&[
        ("rows", loaded.total_rows.to_string()),
        ("rejected rows", loaded.rejects.len().to_string()),
        (
            "first-person",
            format!("{} ({:.2}%)", s.selected, 100.0 * s.selected_fraction),
        ),
        (
            "  male / female",
            format!("{} / {}", s.selected_male, s.selected_female),
        ),
        ("unknown gender", s.excluded_unknown_gender.to_string()),
        ("neutral pool", s.neutral_candidates.to_string()),
        ("balanced sample", sample.len().to_string()),
    ]);
    Ok(Outcome {
        summary: stats,
        table,
        hard_failure: false,
    })
}

// ---------------------------------------------------------------------------
// reformulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct QuarantineEntry<'a> {
    utterance_id: &'a str,
    original: &'a str,
    masculine: &'a str,
    feminine: &'a str,
    masculine_verdict: &'a Verdict,
    feminine_verdict: &'a Verdict,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    utterance_id: &'a str,
    prompt_hash: Option<&'a str>,
    response_hash: Option<&'a str>,
    verdict: &'static str,
}

#[derive(Serialize)]
struct FailureEntry {
    lang: Lang,
    chunk: usize,
    utterance_ids: Vec<String>,
    attempts: usize,
    reason: String,
}

struct Checked {
    result: ReformulationResult,
    masculine: Verdict,
    feminine: Verdict,
}

pub fn reformulate(mut cfg: PipelineConfig, args: &ReformulateArgs) -> Result<Outcome> {
    if let Some(p) = &args.input {
        cfg.selected = Some(p.clone());
    }
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.clone();
    }
    if let Some(p) = &args.exemplars {
        cfg.exemplars = Some(p.clone());
    }
    if let Some(n) = args.batch_size {
        cfg.batch_size = n;
    }
    if let Some(n) = args.retries {
        cfg.retries = n;
    }
    if let Some(n) = args.max_in_flight {
        cfg.max_in_flight = n;
    }
    if args.requests_per_minute.is_some() {
        cfg.requests_per_minute = args.requests_per_minute;
    }
    if let Some(m) = &args.request_mode {
        cfg.request_mode = parse_enum(m, "request mode")?;
    }
    if let Some(p) = &args.mock_lexicon {
        cfg.mock_lexicon = Some(p.clone());
    }
    if let Some(p) = &args.validator_lexicon {
        cfg.validator_lexicon = Some(p.clone());
    }

    let input = cfg.input_or_default(&cfg.selected, "selected.jsonl");
    require_file(&input, "input")?;
    let strategy: PromptStrategy = cfg.strategy.parse().map_err(anyhow::Error::msg)?;
    if cfg.batch_size == 0 {
        bail!("batch_size must be at least 1");
    }
    if cfg.max_in_flight == 0 {
        bail!("max_in_flight must be at least 1");
    }
    if let Some(rpm) = cfg.requests_per_minute {
        if !(rpm.is_finite() && rpm > 0.0) {
            bail!("requests_per_minute must be positive, got {rpm}");
        }
    }
    let http = match cfg.backend {
        BackendKind::Http => Some(HttpBackend::from_env()?),
        BackendKind::Mock => None,
    };
    let mock_lexicon = load_lexicon(&cfg.mock_lexicon, "mock lexicon")?;
    let validator_lexicon = load_lexicon(&cfg.validator_lexicon, "validator lexicon")?;
    let exemplar_sets: BTreeMap<Lang, Vec<Exemplar>> = match &cfg.exemplars {
        Some(path) => {
            require_file(path, "exemplar file")?;
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing exemplars {}", path.display()))?
        }
        None => BTreeMap::new(),
    };

    let utterances = load_clean(&input, "input")?;
    let mut groups: BTreeMap<Lang, Vec<Utterance>> = BTreeMap::new();
    for u in &utterances {
        groups.entry(u.lang).or_default().push(u.clone());
    }
    let mut plans = Vec::new();
    for (&lang, batch) in &groups {
        let exemplars = exemplar_sets
            .get(&lang)
            .cloned()
            .unwrap_or_else(|| builtin_exemplars(lang));
        if exemplars.len() < strategy.shots() {
            bail!(
                "{strategy} needs {} {} exemplars, only {} available",
                strategy.shots(),
                lang.name(),
                exemplars.len()
            );
        }
        plans.push((lang, batch, exemplars));
    }

    let mut checked: HashMap<String, Checked> = HashMap::new();
    let mut failures = Vec::new();
    let mut requests = 0;
    for (lang, batch, exemplars) in plans {
        let opts = ReformulateOptions {
            strategy,
            exemplars,
            batch_size: cfg.batch_size,
            retries: cfg.retries,
            request_mode: cfg.request_mode,
            max_in_flight: cfg.max_in_flight,
            requests_per_minute: cfg.requests_per_minute,
        };
        let mock;
        let backend: &dyn ChatBackend = match &http {
            Some(h) => h,
            None => {
                mock = mock_backend(
                    mock_lexicon
                        .clone()
                        .unwrap_or_else(|| GenderLexicon::builtin(lang)),
                );
                &mock
            }
        };
        let outcome = reformulate_batch(batch, lang, backend, &opts)?;
        requests += outcome.requests;
        let validator = Validator::new(
            validator_lexicon
                .clone()
                .unwrap_or_else(|| GenderLexicon::builtin(lang)),
            MorphPattern::for_lang(lang),
        );
        let originals: HashMap<&str, &str> = batch
            .iter()
            .map(|u| (u.id.as_str(), u.translation.as_str()))
            .collect();
        for result in outcome.results {
            let original = originals[result.utterance_id.as_str()];
            let masculine = validator.validate(original, &result.masculine);
            let feminine = validator.validate(original, &result.feminine);
            checked.insert(
                result.utterance_id.clone(),
                Checked {
                    result,
                    masculine,
                    feminine,
                },
            );
        }
        failures.extend(outcome.failures.into_iter().map(|f| FailureEntry {
            lang,
            chunk: f.chunk,
            utterance_ids: f.utterance_ids,
            attempts: f.attempts,
            reason: f.reason,
        }));
    }

    let mut accepted = Vec::new();
    let mut quarantine = Vec::new();
    let mut audit = Vec::new();
    for u in &utterances {
        let Some(c) = checked.get(&u.id) else {
            audit.push(AuditEntry {
                utterance_id: &u.id,
                prompt_hash: None,
                response_hash: None,
                verdict: "failed",
            });
            continue;
        };
        let pass = c.masculine.is_pass() && c.feminine.is_pass();
        audit.push(AuditEntry {
            utterance_id: &u.id,
            prompt_hash: Some(&c.result.prompt_ref),
            response_hash: Some(&c.result.raw_response_ref),
            verdict: if pass { "accepted" } else { "quarantined" },
        });
        if pass {
            accepted.push(c.result.clone());
        } else {
            quarantine.push(QuarantineEntry {
                utterance_id: &u.id,
                original: &u.translation,
                masculine: &c.result.masculine,
                feminine: &c.result.feminine,
                masculine_verdict: &c.masculine,
                feminine_verdict: &c.feminine,
            });
        }
    }
    let failed_items: usize = failures.iter().map(|f| f.utterance_ids.len()).sum();
    let summary = json!({
        "backend": match cfg.backend { BackendKind::Mock => "mock", BackendKind::Http => "http" },
        "strategy": strategy.to_string(),
        "prompt_version": PROMPT_VERSION,
        "utterances": utterances.len(),
        "accepted": accepted.len(),
        "quarantined": quarantine.len(),
        "failed": failed_items,
        "failed_chunks": failures.len(),
        "requests": requests,
    });

    let mut w = ArtifactWriter::new(&cfg.out_dir, "reformulate")?;
    w.write_jsonl("reformulations.jsonl", &accepted)?;
    w.write_jsonl("quarantine.jsonl", &quarantine)?;
    w.write_jsonl("failures.jsonl", &failures)?;
    w.write_jsonl("audit.jsonl", &audit)?;
    w.write_json("reformulate_summary.json", &summary)?;
    w.finish()?;

    let table = key_value_table(&[
        (
            "backend",
            summary["backend"].as_str().unwrap_or_default().to_owned(),
        ),
        ("strategy", strategy.to_string()),
        ("utterances", utterances.len().to_string()),
        ("accepted", accepted.len().to_string()),
        ("quarantined", quarantine.len().to_string()),
        (
            "failed",
            format!("{failed_items} ({} chunks)", failures.len()),
        ),
        ("requests", requests.to_string()),
    ]);
    Ok(Outcome {
        summary,
        table,
        hard_failure: !failures.is_empty(),
    })
}

// ---------------------------------------------------------------------------
// build-targets
// ---------------------------------------------------------------------------

pub fn build_targets(mut cfg: PipelineConfig, args: &BuildTargetsArgs) -> Result<Outcome> {
    if let Some(p) = &args.selected {
        cfg.selected = Some(p.clone());
    }
    if let Some(p) = &args.neutral {
        cfg.neutral = Some(p.clone());
    }
    if let Some(p) = &args.reformulations {
        cfg.reformulations = Some(p.clone());
    }
    if let Some(t) = args.theta_neut {
        cfg.mix.theta_neut = t;
    }
    if let Some(l) = args.layout {
        cfg.layout = l;
    }
    if let Some(m) = &args.neutral_modes {
        cfg.mix.neutral_mode_assignment = parse_enum(m, "neutral mode assignment")?;
    }
    cfg.emit_training_text |= args.emit_training_text;

    cfg.mix.seed = cfg.require_seed("build-targets")?;
    cfg.mix.validate()?;
    let selected_path = cfg.input_or_default(&cfg.selected, "selected.jsonl");
    let neutral_path = cfg.input_or_default(&cfg.neutral, "neutral.jsonl");
    let reform_path = cfg.input_or_default(&cfg.reformulations, "reformulations.jsonl");
    require_file(&selected_path, "selected utterances")?;
    require_file(&neutral_path, "neutral pool")?;
    require_file(&reform_path, "reformulations")?;

    let selected = load_clean(&selected_path, "selected utterances")?;
    let neutral = load_clean(&neutral_path, "neutral pool")?;
    let results: Vec<ReformulationResult> = read_jsonl_records(&reform_path)?;
    let pairs: HashMap<String, GenderedPair> = results
        .into_iter()
        .map(|r| {
            (
                r.utterance_id,
                GenderedPair {
                    masculine: r.masculine,
                    feminine: r.feminine,
                },
            )
        })
        .collect();
    // Quarantined or failed items have no accepted reformulation and are left out.
    let (usable, skipped): (Vec<Utterance>, Vec<Utterance>) = selected
        .into_iter()
        .partition(|u| pairs.contains_key(&u.id));

    let layouts: &[(ModeLayout, &str)] = match cfg.layout {
        LayoutChoice::OneMode => &[(ModeLayout::OneMode, "one_mode")],
        LayoutChoice::ThreeMode => &[(ModeLayout::ThreeMode, "three_mode")],
        LayoutChoice::Both => &[
            (ModeLayout::OneMode, "one_mode"),
            (ModeLayout::ThreeMode, "three_mode"),
        ],
    };
    let mut built = Vec::new();
    for &(layout, name) in layouts {
        let mix = MixConfig {
            mode_layout: layout,
            ..cfg.mix.clone()
        };
        built.push((name, build_target_records(&usable, &pairs, &neutral, &mix)?));
    }

    let mut w = ArtifactWriter::new(&cfg.out_dir, "build-targets")?;
    let mut per_layout = serde_json::Map::new();
    let mut rows = vec![("theta_neut", cfg.mix.theta_neut.to_string())];
    if !skipped.is_empty() {
        rows.push(("skipped (no reformulation)", skipped.len().to_string()));
    }
    for (name, records) in &built {
        w.write_jsonl(&format!("targets_{name}.jsonl"), records)?;
        if cfg.emit_training_text {
            w.write(
                &format!("targets_{name}.txt"),
                training_text(records).as_bytes(),
            )?;
        }
        let neutral_count = records
            .iter()
            .filter(|r| r.data_class == DataClass::Neutral)
            .count();
        let fraction = if records.is_empty() {
            0.0
        } else {
            neutral_count as f64 / records.len() as f64
        };
        per_layout.insert(
            (*name).to_owned(),
            json!({
                "records": records.len(),
                "debiased": records.len() - neutral_count,
                "neutral": neutral_count,
                "neutral_fraction": fraction,
            }),
        );
        rows.push((
            name,
            format!(
                "{} records, {neutral_count} neutral ({:.2}%)",
                records.len(),
                100.0 * fraction
            ),
        ));
    }
    let summary = json!({
        "seed": cfg.mix.seed,
        "theta_neut": cfg.mix.theta_neut,
        "selected_used": usable.len(),
        "skipped_without_reformulation": skipped.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
        "neutral_pool": neutral.len(),
        "layouts": per_layout,
    });
    w.write_json("build_summary.json", &summary)?;
    w.finish()?;

    Ok(Outcome {
        summary,
        table: key_value_table(&rows),
        hard_failure: false,
    })
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

pub fn score(mut cfg: PipelineConfig, args: &ScoreArgs) -> Result<Outcome> {
    if let Some(p) = &args.hyp {
        cfg.hypotheses = Some(p.clone());
    }
    if let Some(p) = &args.mustshe {
        cfg.mustshe = Some(p.clone());
    }
    if let Some(s) = &args.split {
        cfg.split = s.parse::<SplitFilter>().map_err(anyhow::Error::msg)?;
    }
    cfg.bleu_lowercase |= args.lowercase;
    cfg.bleu_smoothing |= args.smooth;

    let hyp_path = cfg
        .hypotheses
        .clone()
        .context("`score` needs hypotheses: pass --hyp or set \"hypotheses\" in the config")?;
    let ref_path = cfg
        .mustshe
        .clone()
        .context("`score` needs references: pass --mustshe or set \"mustshe\" in the config")?;
    require_file(&hyp_path, "hypothesis file")?;
    require_file(&ref_path, "MuST-SHE file")?;
    let bleu_cfg = BleuConfig {
        lowercase: cfg.bleu_lowercase,
        smoothing: if cfg.bleu_smoothing {
            Smoothing::AddOne
        } else {
            Smoothing::None
        },
    };

    let mut hypotheses = HashMap::new();
    for (id, text) in load_hypotheses(&hyp_path)? {
        if hypotheses.insert(id.clone(), text).is_some() {
            bail!("duplicate hypothesis id '{id}' in {}", hyp_path.display());
        }
    }
    let records = load_mustshe(&ref_path, &MustSheFormat::default())?;
    let report = metrics::score(&hypotheses, &records, cfg.split, &bleu_cfg)?;
    let summary = serde_json::to_value(&report)?;

    let mut w = ArtifactWriter::new(&cfg.out_dir, "score")?;
    w.write_json("score_report.json", &report)?;
    w.finish()?;

    Ok(Outcome {
        summary,
        table: metrics::render_table(&report, &args.system),
        hard_failure: false,
    })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn sweep(mut cfg: PipelineConfig, args: &SweepArgs) -> Result<Outcome> {
    if let Some(t) = &args.thetas {
        cfg.sweep.theta_values = t.clone();
    }
    if let Some(a) = &args.alphas {
        cfg.sweep.alpha_values = a.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.sweep.seeds = Some(s.clone());
    }
    if let Some(n) = args.steps {
        cfg.sweep.harness.steps = n;
    }
    let seed = cfg.require_seed("sweep")?;
    let seeds = cfg.sweep.seeds.clone().unwrap_or_else(|| {
        (0..cfg.sweep.runs_per_cell)
            .map(|i| seed.wrapping_add(i))
            .collect()
    });
    cfg.sweep.harness.validate()?;
    for (name, values) in [
        ("theta", &cfg.sweep.theta_values),
        ("alpha", &cfg.sweep.alpha_values),
    ] {
        if values.is_empty() {
            bail!("the {name} grid is empty");
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!("{name} values must lie in [0, 1], got {v}");
        }
    }
    if seeds.is_empty() {
        bail!("the seed list is empty");
    }

    let report = genderloss::sweep(
        &cfg.sweep.theta_values,
        &cfg.sweep.alpha_values,
        &seeds,
        &cfg.sweep.harness,
    )?;
    let table = report.summary_table();
    let summary = json!({
        "seeds": seeds,
        "harness": cfg.sweep.harness,
        "cells": report.cells,
    });

    let mut w = ArtifactWriter::new(&cfg.out_dir, "sweep")?;
    w.write("sweep.csv", report.to_csv().as_bytes())?;
    w.write_json("sweep_summary.json", &summary)?;
    w.write("sweep_summary.txt", table.as_bytes())?;
    w.finish()?;

    Ok(Outcome {
        summary,
        table,
        hard_failure: false,
    })
}

pub fn version() -> Outcome {
    let summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "prompt_version": PROMPT_VERSION,
        "checkpoint_format": CHECKPOINT_FORMAT,
    });
    let table = key_value_table(&[
        ("gstd", env!("CARGO_PKG_VERSION").to_owned()),
        ("prompt template", PROMPT_VERSION.to_owned()),
        ("checkpoint format", CHECKPOINT_FORMAT.to_owned()),
    ]);
    Outcome {
        summary,
        table,
        hard_failure: false,
    }
}
