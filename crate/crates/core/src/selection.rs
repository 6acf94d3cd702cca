//! Data selection and construction of fine-tuning targets.
//!
//! The flow is: keep utterances whose English transcript refers to the
//! speaker in the first person and whose speaker gender is known, sample a
//! gender-balanced subset of them for reformulation, then turn the
//! reformulated pairs plus a share of gender-neutral utterances into
//! 1-mode or 3-mode training targets.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Gender, GenderForm, Lang, Utterance};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("sample size {0} is odd; a gender-balanced sample needs an even size")]
    OddSampleSize(usize),
    #[error("{gender} stratum too small: need {needed}, have {available}")]
    StratumTooSmall {
        gender: Gender,
        needed: usize,
        available: usize,
    },
    #[error("no reformulation for utterance '{0}'")]
    MissingReformulation(String),
    #[error("utterance '{0}' has unknown speaker gender and cannot be debiased")]
    UnknownGender(String),
    #[error("theta_neut = {0} requires gender-neutral utterances but the neutral pool is empty")]
    EmptyNeutralPool(f64),
    #[error("invalid mix configuration: {0}")]
    InvalidConfig(String),
}

pub const DEFAULT_PRONOUNS: [&str; 5] = ["i", "me", "my", "mine", "myself"];

/// First-person pronoun filter over English transcripts.
#[derive(Debug, Clone)]
pub struct PronounFilter {
    pronouns: HashSet<String>,
}

impl Default for PronounFilter {
    fn default() -> Self {
        Self::new(DEFAULT_PRONOUNS)
    }
}

impl PronounFilter {
    pub fn new<I, S>(pronouns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            pronouns: pronouns
                .into_iter()
                .map(|p| p.as_ref().trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    pub fn matches(&self, transcript: &str) -> bool {
        crate::text::word_tokens(transcript)
            .iter()
            .any(|tok| self.pronouns.contains(tok))
    }
}

/// True iff the transcript contains one of the default singular first-person
/// pronouns, after case folding and splitting at punctuation.
pub fn contains_first_person_pronoun(transcript: &str) -> bool {
    PronounFilter::default().matches(transcript)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub total: usize,
    pub selected: usize,
    pub selected_fraction: f64,
    pub selected_male: usize,
    pub selected_female: usize,
    /// Passed the pronoun filter but the speaker gender is unknown.
    pub excluded_unknown_gender: usize,
    /// Failed the pronoun filter with a known speaker gender.
    pub neutral_candidates: usize,
}

/// Split of a corpus into the debiasing subset and the gender-neutral pool.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub selected: Vec<Utterance>,
    pub neutral: Vec<Utterance>,
    pub stats: SelectionStats,
}

/// Partition a corpus with the given pronoun filter. Unknown-gender
/// utterances end up in neither side.
pub fn partition_corpus(corpus: &[Utterance], filter: &PronounFilter) -> Partition {
    let mut part = Partition::default();
    for utt in corpus {
        let first_person = filter.matches(&utt.transcript);
        match (first_person, utt.speaker_gender.is_known()) {
            (true, true) => part.selected.push(utt.clone()),
            (true, false) => part.stats.excluded_unknown_gender += 1,
            (false, true) => part.neutral.push(utt.clone()),
            (false, false) => {}
        }
    }
    let stats = &mut part.stats;
    stats.total = corpus.len();
    stats.selected = part.selected.len();
    stats.selected_fraction = if corpus.is_empty() {
        0.0
    } else {
        part.selected.len() as f64 / corpus.len() as f64
    };
    stats.selected_male = count_gender(&part.selected, Gender::Male);
    stats.selected_female = count_gender(&part.selected, Gender::Female);
    stats.neutral_candidates = part.neutral.len();
    part
}

fn count_gender(utts: &[Utterance], gender: Gender) -> usize {
    utts.iter().filter(|u| u.speaker_gender == gender).count()
}

/// Utterances that pass the default pronoun filter and have a known speaker gender.
pub fn select_subset(corpus: &[Utterance]) -> (Vec<Utterance>, SelectionStats) {
    let part = partition_corpus(corpus, &PronounFilter::default());
    (part.selected, part.stats)
}

/// Draw `n/2` male and `n/2` female utterances without replacement. Each
/// stratum is shuffled with a ChaCha8 generator seeded by `seed`; the sample
/// keeps the pool's order.
pub fn sample_balanced(
    pool: &[Utterance],
    n: usize,
    seed: u64,
) -> Result<Vec<Utterance>, SelectionError> {
    if !n.is_multiple_of(2) {
        return Err(SelectionError::OddSampleSize(n));
    }
    let half = n / 2;
    let stratum = |gender| -> Vec<usize> {
        pool.iter()
            .enumerate()
            .filter(|(_, u)| u.speaker_gender == gender)
            .map(|(i, _)| i)
            .collect()
    };
    let mut male = stratum(Gender::Male);
    let mut female = stratum(Gender::Female);
    for (gender, idx) in [(Gender::Male, &male), (Gender::Female, &female)] {
        if idx.len() < half {
            return Err(SelectionError::StratumTooSmall {
                gender,
                needed: half,
                available: idx.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    male.shuffle(&mut rng);
    female.shuffle(&mut rng);
    let mut chosen: Vec<usize> = male[..half]
        .iter()
        .chain(&female[..half])
        .copied()
        .collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Auto,
    Masc,
    Femi,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Auto, Mode::Masc, Mode::Femi];

    fn tag(self) -> &'static str {
        match self {
            Mode::Auto => "AUTO",
            Mode::Masc => "MASC",
            Mode::Femi => "FEMI",
        }
    }
}

/// Start-of-sentence token: `<ES>` without a mode, `<ES_AUTO>` etc. with one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SosToken {
    pub lang: Lang,
    pub mode: Option<Mode>,
}

impl SosToken {
    pub fn new(lang: Lang, mode: Option<Mode>) -> Self {
        Self { lang, mode }
    }
}

impl fmt::Display for SosToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            None => write!(f, "<{}>", self.lang.code()),
            Some(mode) => write!(f, "<{}_{}>", self.lang.code(), mode.tag()),
        }
    }
}

impl FromStr for SosToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .strip_prefix('<')
            .and_then(|rest| rest.strip_suffix('>'))
            .ok_or_else(|| format!("malformed SOS token '{s}'"))?;
        let (lang, mode) = match inner.split_once('_') {
            None => (inner, None),
            Some((lang, tag)) => {
                let mode = Mode::ALL
                    .into_iter()
                    .find(|m| m.tag() == tag)
                    .ok_or_else(|| format!("unknown mode in SOS token '{s}'"))?;
                (lang, Some(mode))
            }
        };
        Ok(Self {
            lang: lang.parse()?,
            mode,
        })
    }
}

impl From<SosToken> for String {
    fn from(tok: SosToken) -> Self {
        tok.to_string()
    }
}

impl TryFrom<String> for SosToken {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataClass {
    Debiased,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Reformulated,
}

/// A finished fine-tuning example. `target_text` never contains the SOS token.
///
/// Serialized as the corpus JSONL line with `translation` holding the target
/// text, followed by `sos`, `form`, `data_class` and `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    #[serde(rename = "id")]
    pub utterance_id: String,
    pub audio_ref: Option<String>,
    pub transcript: String,
    #[serde(rename = "translation")]
    pub target_text: String,
    pub lang: Lang,
    pub speaker_gender: Gender,
    pub duration_s: Option<f64>,
    pub sos: SosToken,
    pub form: GenderForm,
    pub data_class: DataClass,
    pub source: Source,
}

impl TargetRecord {
    fn from_utterance(utt: &Utterance, sos: SosToken, text: &str, form: GenderForm) -> Self {
        let (data_class, source) = match form {
            GenderForm::Neutral => (DataClass::Neutral, Source::Original),
            _ => (DataClass::Debiased, Source::Reformulated),
        };
        Self {
            utterance_id: utt.id.clone(),
            audio_ref: utt.audio_ref.clone(),
            transcript: utt.transcript.clone(),
            target_text: text.to_owned(),
            lang: utt.lang,
            speaker_gender: utt.speaker_gender,
            duration_s: utt.duration_s,
            sos,
            form,
            data_class,
            source,
        }
    }

    /// Data class and form agree.
    pub fn is_consistent(&self) -> bool {
        match self.data_class {
            DataClass::Debiased => {
                matches!(self.form, GenderForm::Masculine | GenderForm::Feminine)
            }
            DataClass::Neutral => self.form == GenderForm::Neutral,
        }
    }

    /// Plain-text training line: `<SOS>\t<target text>`.
    pub fn training_line(&self) -> String {
        let text: String = self
            .target_text
            .chars()
            .map(|c| {
                if matches!(c, '\t' | '\n' | '\r') {
                    ' '
                } else {
                    c
                }
            })
            .collect();
        format!("{}\t{}", self.sos, text)
    }
}

/// Masculine and feminine renderings of one translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderedPair {
    pub masculine: String,
    pub feminine: String,
}

impl GenderedPair {
    pub fn form(&self, form: GenderForm) -> Option<&str> {
        match form {
            GenderForm::Masculine => Some(&self.masculine),
            GenderForm::Feminine => Some(&self.feminine),
            GenderForm::Neutral => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLayout {
    #[default]
    OneMode,
    ThreeMode,
}

/// How neutral records are spread over mode tokens in a 3-mode layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralModeAssignment {
    #[default]
    RoundRobin,
    MascOnly,
}

/// Mixing parameters for fine-tuning data and the loss weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub theta_neut: f64,
    pub alpha: f64,
    pub seed: u64,
    pub mode_layout: ModeLayout,
    pub neutral_mode_assignment: NeutralModeAssignment,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            theta_neut: 0.2,
            alpha: 0.1,
            seed: 0,
            mode_layout: ModeLayout::OneMode,
            neutral_mode_assignment: NeutralModeAssignment::RoundRobin,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        for (name, value) in [("theta_neut", self.theta_neut), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SelectionError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {value}"
                )));
            }
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    // The epsilon keeps exact halves that picked up rounding noise on the right side.
    (x + 0.5 + 1e-9).floor() as usize
}

/// Decide how many debiased source utterances (`kept_units`) and how many
/// neutral records to emit so that neutral records make up `theta` of the
/// stream. Each unit yields `per_unit` debiased records. The larger side is
/// subsampled; the neutral count is round-half-up of the exact share.
pub fn mix_counts(
    units: usize,
    per_unit: usize,
    neutral_available: usize,
    theta: f64,
) -> (usize, usize) {
    if theta <= 0.0 {
        return (units, 0);
    }
    if theta >= 1.0 {
        return (0, neutral_available);
    }
    let ratio = theta / (1.0 - theta);
    let needed = |k: usize| round_half_up(ratio * (per_unit * k) as f64);
    if needed(units) <= neutral_available {
        return (units, needed(units));
    }
    // Largest k with needed(k) <= available; needed is monotone in k.
    let (mut lo, mut hi) = (0usize, units);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if needed(mid) <= neutral_available {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    (lo, needed(lo))
}

/// Pick `k` of `n` indices uniformly, returned in increasing order.
fn subsample(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Build fine-tuning targets from reformulated utterances and the neutral pool.
///
/// OneMode emits one record per selected utterance in the speaker's own form
/// under `<Lang>`. ThreeMode emits three: AUTO with the speaker's form, MASC
/// with the masculine text and FEMI with the feminine text. Neutral records
/// keep the original translation.
pub fn build_targets(
    selected: &[Utterance],
    reformulations: &HashMap<String, GenderedPair>,
    neutral: &[Utterance],
    cfg: &MixConfig,
) -> Result<Vec<TargetRecord>, SelectionError> {
    cfg.validate()?;
    for utt in selected {
        if !reformulations.contains_key(&utt.id) {
            return Err(SelectionError::MissingReformulation(utt.id.clone()));
        }
        if !utt.speaker_gender.is_known() {
            return Err(SelectionError::UnknownGender(utt.id.clone()));
        }
    }
    if cfg.theta_neut > 0.0 && neutral.is_empty() && (!selected.is_empty() || cfg.theta_neut >= 1.0)
    {
        return Err(SelectionError::EmptyNeutralPool(cfg.theta_neut));
    }

    let per_unit = match cfg.mode_layout {
        ModeLayout::OneMode => 1,
        ModeLayout::ThreeMode => 3,
    };
    let (kept_units, neutral_count) =
        mix_counts(selected.len(), per_unit, neutral.len(), cfg.theta_neut);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kept = subsample(selected.len(), kept_units, &mut rng);
    let kept_neutral = subsample(neutral.len(), neutral_count, &mut rng);

    let mut out = Vec::with_capacity(kept.len() * per_unit + kept_neutral.len());
    for &i in &kept {
        let utt = &selected[i];
        let pair = &reformulations[&utt.id];
        let own_form = utt
            .speaker_gender
            .matching_form()
            .expect("known gender checked above");
        match cfg.mode_layout {
            ModeLayout::OneMode => {
                let text = pair.form(own_form).expect("gendered form");
                out.push(TargetRecord::from_utterance(
                    utt,
                    SosToken::new(utt.lang, None),
                    text,
                    own_form,
                ));
            }
            ModeLayout::ThreeMode => {
                for (mode, form) in [
                    (Mode::Auto, own_form),
                    (Mode::Masc, GenderForm::Masculine),
                    (Mode::Femi, GenderForm::Feminine),
                ] {
                    let text = pair.form(form).expect("gendered form");
                    out.push(TargetRecord::from_utterance(
                        utt,
                        SosToken::new(utt.lang, Some(mode)),
                        text,
                        form,
                    ));
                }
            }
        }
    }

    let offset = match cfg.mode_layout {
        ModeLayout::ThreeMode => rng.random_range(0..Mode::ALL.len()),
        ModeLayout::OneMode => 0,
    };
    for (n, &i) in kept_neutral.iter().enumerate() {
        let utt = &neutral[i];
        let mode = match (cfg.mode_layout, cfg.neutral_mode_assignment) {
            (ModeLayout::OneMode, _) => None,
            (ModeLayout::ThreeMode, NeutralModeAssignment::MascOnly) => Some(Mode::Masc),
            (ModeLayout::ThreeMode, NeutralModeAssignment::RoundRobin) => {
                Some(Mode::ALL[(offset + n) % Mode::ALL.len()])
            }
        };
        out.push(TargetRecord::from_utterance(
            utt,
            SosToken::new(utt.lang, mode),
            &utt.translation,
            GenderForm::Neutral,
        ));
    }
    Ok(out)
}

/// The plain-text sidecar for downstream trainers, one `<SOS>\t<text>` per line.
pub fn training_text(records: &[TargetRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&rec.training_line());
        out.push('\n');
    }
    out
}
