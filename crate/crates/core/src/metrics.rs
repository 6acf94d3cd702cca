//! Gendered-translation accuracy (GTA), term coverage and corpus BLEU.
//!
//! A term is *covered* when either its correct or its wrong form shows up in
//! the hypothesis; GTA is the share of covered terms realized in the correct
//! form. Matching is greedy and in annotation order, and every hypothesis
//! token can satisfy at most one term.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Category, GenderTermPair, MustSheRecord, Split};
use crate::text::{bleu_tokens, word_tokens};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("all references are empty")]
    EmptyReferences,
    #[error("no hypothesis for reference id '{0}'")]
    MissingHypothesis(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TermOutcome {
    CorrectForm,
    WrongForm,
    NotCovered,
}

/// Outcome of one term plus whether a multi-word term was only partly present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMatch {
    pub outcome: TermOutcome,
    pub partial: bool,
}

/// Find `needle` as a contiguous run of unconsumed tokens; consume it.
fn take_run(tokens: &[String], consumed: &mut [bool], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    for start in 0..=tokens.len() - needle.len() {
        let span = start..start + needle.len();
        if consumed[span.clone()].iter().any(|&c| c) {
            continue;
        }
        if tokens[span.clone()] == *needle {
            consumed[span].iter_mut().for_each(|c| *c = true);
            return true;
        }
    }
    false
}

/// Greedy matching with partial-match detection for multi-word terms.
pub fn match_terms(hypothesis: &str, terms: &[GenderTermPair]) -> Vec<TermMatch> {
    let tokens = word_tokens(hypothesis);
    let mut consumed = vec![false; tokens.len()];
    terms
        .iter()
        .map(|pair| {
            let correct = word_tokens(&pair.correct);
            let wrong = word_tokens(&pair.wrong);
            if take_run(&tokens, &mut consumed, &correct) {
                return TermMatch {
                    outcome: TermOutcome::CorrectForm,
                    partial: false,
                };
            }
            if take_run(&tokens, &mut consumed, &wrong) {
                return TermMatch {
                    outcome: TermOutcome::WrongForm,
                    partial: false,
                };
            }
            let multiword = correct.len() > 1 || wrong.len() > 1;
            let partial = multiword
                && correct
                    .iter()
                    .chain(&wrong)
                    .any(|t| tokens.iter().zip(&consumed).any(|(h, &c)| !c && h == t));
            TermMatch {
                outcome: TermOutcome::NotCovered,
                partial,
            }
        })
        .collect()
}

/// Classify each annotated term against a hypothesis, in annotation order.
pub fn term_outcomes(hypothesis: &str, terms: &[GenderTermPair]) -> Vec<TermOutcome> {
    match_terms(hypothesis, terms)
        .into_iter()
        .map(|m| m.outcome)
        .collect()
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to numerator and denominator of orders 2 and up.
    AddOne,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BleuConfig {
    pub lowercase: bool,
    pub smoothing: Smoothing,
}

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    fn add_sentence(&mut self, hyp: &[&str], reference: &[&str]) {
        self.hyp_len += hyp.len() as u64;
        self.ref_len += reference.len() as u64;
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[&str], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[&str], u64> = HashMap::new();
            for gram in hyp.windows(n) {
                *hyp_counts.entry(gram).or_default() += 1;
            }
            let clipped: u64 = hyp_counts
                .iter()
                .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
            self.matches[n - 1] += clipped;
            self.totals[n - 1] += (hyp.len() + 1 - n) as u64;
        }
    }

    /// BLEU in [0, 100].
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let (m, t) = match smoothing {
                Smoothing::AddOne if n > 0 => (m + 1.0, t + 1.0),
                _ => (m, t),
            };
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let brevity = (1.0 - self.ref_len as f64 / self.hyp_len as f64)
            .min(0.0)
            .exp();
        100.0 * brevity * (log_sum / MAX_ORDER as f64).exp()
    }
}

pub fn bleu_stats(
    hypotheses: &[&str],
    references: &[&str],
    cfg: &BleuConfig,
) -> Result<BleuStats, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if references.iter().all(|r| r.trim().is_empty()) {
        return Err(MetricsError::EmptyReferences);
    }
    let mut stats = BleuStats::default();
    for (hyp, reference) in hypotheses.iter().zip(references) {
        if cfg.lowercase {
            let (h, r) = (hyp.to_lowercase(), reference.to_lowercase());
            stats.add_sentence(&bleu_tokens(&h), &bleu_tokens(&r));
        } else {
            stats.add_sentence(&bleu_tokens(hyp), &bleu_tokens(reference));
        }
    }
    Ok(stats)
}

/// Corpus BLEU-4 with the default configuration: case-sensitive, unsmoothed.
pub fn bleu<S: AsRef<str>>(hypotheses: &[S], references: &[S]) -> Result<f64, MetricsError> {
    bleu_with(hypotheses, references, &BleuConfig::default())
}

pub fn bleu_with<S: AsRef<str>>(
    hypotheses: &[S],
    references: &[S],
    cfg: &BleuConfig,
) -> Result<f64, MetricsError> {
    let h: Vec<&str> = hypotheses.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = references.iter().map(AsRef::as_ref).collect();
    Ok(bleu_stats(&h, &r, cfg)?.score(cfg.smoothing))
}

// ---------------------------------------------------------------------------
// Scoring against MuST-SHE references
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFilter {
    Dev,
    Test,
    All,
}

impl SplitFilter {
    fn admits(self, split: Split) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Dev => split == Split::Dev,
            SplitFilter::Test => split == Split::Test,
        }
    }
}

impl std::str::FromStr for SplitFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dev" => Ok(SplitFilter::Dev),
            "test" => Ok(SplitFilter::Test),
            "all" => Ok(SplitFilter::All),
            other => Err(format!(
                "unknown split '{other}' (expected dev, test or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScore {
    pub sentences: usize,
    pub total_terms: usize,
    pub covered: usize,
    pub correct: usize,
    /// `correct / covered`; absent when nothing was covered.
    pub gta: Option<f64>,
    /// `covered / total_terms`.
    pub coverage: f64,
    pub bleu: f64,
    /// Multi-word terms not covered but partly present.
    pub partial_multiword: usize,
}

#[derive(Default)]
struct CellAccum<'a> {
    sentences: usize,
    total_terms: usize,
    covered: usize,
    correct: usize,
    partial: usize,
    hyps: Vec<&'a str>,
    refs: Vec<&'a str>,
}

impl<'a> CellAccum<'a> {
    fn add(&mut self, hyp: &'a str, reference: &'a str, matches: &[TermMatch]) {
        self.sentences += 1;
        self.total_terms += matches.len();
        for m in matches {
            match m.outcome {
                TermOutcome::CorrectForm => {
                    self.covered += 1;
                    self.correct += 1;
                }
                TermOutcome::WrongForm => self.covered += 1,
                TermOutcome::NotCovered => self.partial += usize::from(m.partial),
            }
        }
        self.hyps.push(hyp);
        self.refs.push(reference);
    }

    fn merge(&mut self, other: &CellAccum<'a>) {
        self.sentences += other.sentences;
        self.total_terms += other.total_terms;
        self.covered += other.covered;
        self.correct += other.correct;
        self.partial += other.partial;
        self.hyps.extend(&other.hyps);
        self.refs.extend(&other.refs);
    }

    fn finish(&self, cfg: &BleuConfig) -> Option<CellScore> {
        if self.sentences == 0 {
            return None;
        }
        let bleu = bleu_stats(&self.hyps, &self.refs, cfg)
            .map(|s| s.score(cfg.smoothing))
            .unwrap_or(0.0);
        Some(CellScore {
            sentences: self.sentences,
            total_terms: self.total_terms,
            covered: self.covered,
            correct: self.correct,
            gta: (self.covered > 0).then(|| self.correct as f64 / self.covered as f64),
            coverage: if self.total_terms == 0 {
                0.0
            } else {
                self.covered as f64 / self.total_terms as f64
            },
            bleu,
            partial_multiword: self.partial,
        })
    }
}

/// Per-category scores plus the combined Category 2 cell and the overall cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub split: SplitFilter,
    pub bleu_config: BleuConfig,
    /// Populated categories only.
    pub cells: BTreeMap<Category, CellScore>,
    pub cat2: Option<CellScore>,
    pub overall: Option<CellScore>,
}

impl ScoreReport {
    pub fn cell(&self, category: Category) -> Option<&CellScore> {
        self.cells.get(&category)
    }
}

/// Score hypotheses (by id) against the records of `split`.
pub fn score(
    hypotheses: &HashMap<String, String>,
    refs: &[MustSheRecord],
    split: SplitFilter,
    cfg: &BleuConfig,
) -> Result<ScoreReport, MetricsError> {
    let selected: Vec<&MustSheRecord> = refs.iter().filter(|r| split.admits(r.split)).collect();
    if let Some(missing) = selected.iter().find(|r| !hypotheses.contains_key(&r.id)) {
        return Err(MetricsError::MissingHypothesis(missing.id.clone()));
    }
    let mut accums: BTreeMap<Category, CellAccum> = BTreeMap::new();
    for rec in &selected {
        let hyp = hypotheses[&rec.id].as_str();
        let matches = match_terms(hyp, &rec.terms);
        accums
            .entry(rec.category)
            .or_default()
            .add(hyp, &rec.reference, &matches);
    }
    let mut cat2 = CellAccum::default();
    let mut overall = CellAccum::default();
    for (cat, acc) in &accums {
        if cat.class() == 2 {
            cat2.merge(acc);
        }
        overall.merge(acc);
    }
    Ok(ScoreReport {
        split,
        bleu_config: *cfg,
        cells: accums
            .iter()
            .filter_map(|(cat, acc)| acc.finish(cfg).map(|c| (*cat, c)))
            .collect(),
        cat2: cat2.finish(cfg),
        overall: overall.finish(cfg),
    })
}

fn pct(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_owned(), |v| format!("{:.2}", 100.0 * v))
}

/// Aligned text table with Cat1-Masc / Cat1-Femi / Cat2 column groups,
/// each with Acc. and BLEU, followed by coverage and term counts.
pub fn render_table(report: &ScoreReport, system: &str) -> String {
    let columns = [
        ("Cat1-Masc", report.cell(Category::C1M)),
        ("Cat1-Femi", report.cell(Category::C1F)),
        ("Cat2", report.cat2.as_ref()),
    ];
    let label_w = system.len().max("coverage".len()).max("Model".len());
    let mut out = String::new();
    let split = match report.split {
        SplitFilter::Dev => "dev",
        SplitFilter::Test => "test",
        SplitFilter::All => "all",
    };
    let _ = writeln!(out, "split: {split}");
    let _ = write!(out, "{:label_w$} ", "");
    for (name, _) in &columns {
        let _ = write!(out, "| {name:^15} ");
    }
    out.push_str("|\n");
    let _ = write!(out, "{:label_w$} ", "Model");
    for _ in &columns {
        let _ = write!(out, "| {:>6}  {:>6} ", "Acc.", "BLEU");
    }
    out.push_str("|\n");
    let _ = write!(out, "{system:label_w$} ");
    for (_, cell) in &columns {
        let acc = pct(cell.and_then(|c| c.gta));
        let bleu = cell.map_or_else(|| "-".to_owned(), |c| format!("{:.2}", c.bleu));
        let _ = write!(out, "| {acc:>6}  {bleu:>6} ");
    }
    out.push_str("|\n");
    let _ = write!(out, "{:label_w$} ", "coverage");
    for (_, cell) in &columns {
        let cov = pct(cell.map(|c| c.coverage));
        let terms = cell.map_or_else(
            || "-".to_owned(),
            |c| format!("{}/{}", c.covered, c.total_terms),
        );
        let _ = write!(out, "| {cov:>6}  {terms:>6} ");
    }
    out.push_str("|\n");
    out
}
