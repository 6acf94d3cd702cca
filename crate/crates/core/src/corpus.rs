//! Data model and file formats for training corpora and MuST-SHE style
//! evaluation sets.
//!
//! Training corpora are JSONL (`jsonl-v1`) or, for convenience, TSV with the
//! same column names (`tsv-v1`). Evaluation sets are MuST-SHE style TSV.
//! Loading a training corpus never silently drops a row: invalid rows end up
//! in a [`Rejection`] list next to the accepted utterances.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::selection::TargetRecord;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("unknown corpus schema '{0}' (expected jsonl-v1 or tsv-v1)")]
    UnknownSchema(String),
    #[error(
        "{path}: {rejected} of {total} rows rejected (first: row {first_row}: {first_reason}); \
         the file probably does not match the requested schema"
    )]
    SchemaMismatch {
        path: PathBuf,
        rejected: usize,
        total: usize,
        first_row: usize,
        first_reason: String,
    },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} row {row}: {reason}")]
    BadRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("{path}: malformed TSV: {source}")]
    Tsv { path: PathBuf, source: csv::Error },
}

/// Speaker gender label attached to an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    /// Male and Female are the only labels usable for debiased targets.
    pub fn is_known(self) -> bool {
        !matches!(self, Gender::Unknown)
    }

    /// The grammatical form matching this speaker, if any.
    pub fn matching_form(self) -> Option<GenderForm> {
        match self {
            Gender::Male => Some(GenderForm::Masculine),
            Gender::Female => Some(GenderForm::Feminine),
            Gender::Unknown => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    /// Accepts the corpus spellings plus the MuST-SHE `He`/`She` labels.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "he" => Ok(Gender::Male),
            "female" | "f" | "she" => Ok(Gender::Female),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(format!("unknown speaker_gender '{other}'")),
        }
    }
}

/// Grammatical form of the speaker-referential words in a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderForm {
    Masculine,
    Feminine,
    Neutral,
}

impl GenderForm {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderForm::Masculine => "masculine",
            GenderForm::Feminine => "feminine",
            GenderForm::Neutral => "neutral",
        }
    }
}

impl fmt::Display for GenderForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Target language of a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Es,
    It,
}

impl Lang {
    /// Upper-case code used inside SOS tokens.
    pub fn code(self) -> &'static str {
        match self {
            Lang::Es => "ES",
            Lang::It => "IT",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Lang::Es => "Spanish",
            Lang::It => "Italian",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code().to_ascii_lowercase())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "es" => Ok(Lang::Es),
            "it" => Ok(Lang::It),
            other => Err(format!("unknown lang '{other}'")),
        }
    }
}

/// One training tuple: audio reference, English transcript, translation and
/// speaker gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub audio_ref: Option<String>,
    pub transcript: String,
    pub translation: String,
    pub lang: Lang,
    pub speaker_gender: Gender,
    pub duration_s: Option<f64>,
}

/// Input format of a training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusSchema {
    JsonlV1,
    TsvV1,
}

impl FromStr for CorpusSchema {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl-v1" => Ok(CorpusSchema::JsonlV1),
            "tsv-v1" => Ok(CorpusSchema::TsvV1),
            other => Err(CorpusError::UnknownSchema(other.to_owned())),
        }
    }
}

/// A row that failed validation. `row` is the 1-based line number in the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
}

/// Result of [`load_corpus`]: accepted utterances in file order plus rejects.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub utterances: Vec<Utterance>,
    pub rejects: Vec<Rejection>,
    /// Number of data rows seen (blank lines excluded).
    pub total_rows: usize,
}

/// Fields of one input row before validation. `None` means absent.
#[derive(Default)]
struct RawRow {
    id: Option<String>,
    audio_ref: Option<String>,
    transcript: Option<String>,
    translation: Option<String>,
    lang: Option<String>,
    speaker_gender: Option<String>,
    duration_s: Option<String>,
}

fn validate_row(raw: RawRow) -> Result<Utterance, String> {
    fn required(value: Option<String>, field: &str) -> Result<String, String> {
        value.ok_or_else(|| format!("missing field '{field}'"))
    }
    let id = required(raw.id, "id")?;
    let transcript = required(raw.transcript, "transcript")?;
    let translation = required(raw.translation, "translation")?;
    let lang = required(raw.lang, "lang")?;
    let gender = required(raw.speaker_gender, "speaker_gender")?;

    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    if transcript.trim().is_empty() {
        return Err("empty transcript".into());
    }
    if translation.trim().is_empty() {
        return Err("empty translation".into());
    }
    let lang: Lang = lang.parse()?;
    let speaker_gender = match gender.trim().to_ascii_lowercase().as_str() {
        "male" => Gender::Male,
        "female" => Gender::Female,
        "unknown" => Gender::Unknown,
        other => return Err(format!("unknown speaker_gender '{other}'")),
    };
    let duration_s = match raw.duration_s {
        None => None,
        Some(text) => {
            let value: f64 = text
                .trim()
                .parse()
                .map_err(|_| format!("duration_s '{text}' is not a number"))?;
            if !value.is_finite() || value < 0.0 {
                return Err(format!(
                    "duration_s must be a non-negative number, got {text}"
                ));
            }
            Some(value)
        }
    };
    Ok(Utterance {
        id,
        audio_ref: raw.audio_ref.filter(|s| !s.is_empty()),
        transcript,
        translation,
        lang,
        speaker_gender,
        duration_s,
    })
}

fn json_row(line: &str) -> Result<RawRow, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(object) = value else {
        return Err("record is not a JSON object".into());
    };

    fn string_field(object: &Map<String, Value>, field: &str) -> Result<Option<String>, String> {
        match object.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(format!("field '{field}' must be a string")),
        }
    }

    let duration_s = match object.get("duration_s") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(_) => return Err("field 'duration_s' must be a number".into()),
    };
    Ok(RawRow {
        id: string_field(&object, "id")?,
        audio_ref: string_field(&object, "audio_ref")?,
        transcript: string_field(&object, "transcript")?,
        translation: string_field(&object, "translation")?,
        lang: string_field(&object, "lang")?,
        speaker_gender: string_field(&object, "speaker_gender")?,
        duration_s,
    })
}

fn read_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Read {
        path: path.to_owned(),
        source,
    }
}

/// A corpus row: line number and raw fields or the parse failure.
type NumberedRow = (usize, Result<RawRow, String>);

fn raw_rows(path: &Path, schema: CorpusSchema) -> Result<Vec<NumberedRow>, CorpusError> {
    let file = File::open(path).map_err(read_err(path))?;
    let mut rows = Vec::new();
    match schema {
        CorpusSchema::JsonlV1 => {
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(read_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push((idx + 1, json_row(&line)));
            }
        }
        CorpusSchema::TsvV1 => {
            let mut reader = tsv_reader(file);
            let headers = reader
                .headers()
                .map_err(|source| CorpusError::Tsv {
                    path: path.to_owned(),
                    source,
                })?
                .clone();
            let column = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(name))
            };
            let cols = [
                column("id"),
                column("audio_ref"),
                column("transcript"),
                column("translation"),
                column("lang"),
                column("speaker_gender"),
                column("duration_s"),
            ];
            for record in reader.records() {
                let record = record.map_err(|source| CorpusError::Tsv {
                    path: path.to_owned(),
                    source,
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                if record.iter().all(|cell| cell.trim().is_empty()) {
                    continue;
                }
                let cell = |i: usize| -> Option<String> {
                    cols[i].and_then(|c| record.get(c)).map(str::to_owned)
                };
                let optional = |i: usize| cell(i).filter(|s| !s.trim().is_empty());
                rows.push((
                    line,
                    Ok(RawRow {
                        id: cell(0),
                        audio_ref: optional(1),
                        transcript: cell(2),
                        translation: cell(3),
                        lang: cell(4),
                        speaker_gender: cell(5),
                        duration_s: optional(6),
                    }),
                ));
            }
        }
    }
    Ok(rows)
}

fn tsv_reader<R: io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(input)
}

/// Load a training corpus. Invalid rows are collected as rejections; if more
/// than half of the rows are rejected the whole load fails, since that almost
/// always means the wrong schema was requested.
pub fn load_corpus(path: &Path, schema: CorpusSchema) -> Result<LoadedCorpus, CorpusError> {
    let rows = raw_rows(path, schema)?;
    let mut loaded = LoadedCorpus {
        total_rows: rows.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (row, raw) in rows {
        match raw.and_then(validate_row) {
            Ok(utt) if !seen.insert(utt.id.clone()) => loaded.rejects.push(Rejection {
                row,
                reason: format!("duplicate id '{}'", utt.id),
            }),
            Ok(utt) => loaded.utterances.push(utt),
            Err(reason) => loaded.rejects.push(Rejection { row, reason }),
        }
    }
    if loaded.rejects.len() * 2 > loaded.total_rows {
        let first = &loaded.rejects[0];
        return Err(CorpusError::SchemaMismatch {
            path: path.to_owned(),
            rejected: loaded.rejects.len(),
            total: loaded.total_rows,
            first_row: first.row,
            first_reason: first.reason.clone(),
        });
    }
    Ok(loaded)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    let write_err = |source| CorpusError::Write {
        path: path.to_owned(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(write_err)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| write_err(e.into()))?;
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(read_err(path))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(read_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::BadRow {
            path: path.to_owned(),
            row: idx + 1,
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Write fine-tuning targets as JSONL: one record per line, fixed key order,
/// trailing newline. An empty list produces an empty file.
pub fn write_corpus(records: &[TargetRecord], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(records, path)
}

/// Read back a file produced by [`write_corpus`]. Any malformed line is an error.
pub fn read_targets(path: &Path) -> Result<Vec<TargetRecord>, CorpusError> {
    read_jsonl(path)
}

/// Write utterances in `jsonl-v1`.
pub fn write_utterances(utterances: &[Utterance], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(utterances, path)
}

/// Generic JSONL writer for other pipeline artifacts.
pub fn write_jsonl_records<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(items, path)
}

/// Generic strict JSONL reader for other pipeline artifacts.
pub fn read_jsonl_records<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<Vec<T>, CorpusError> {
    read_jsonl(path)
}

// ---------------------------------------------------------------------------
// MuST-SHE
// ---------------------------------------------------------------------------

/// An annotated gender-marked term: the form a correct translation uses and
/// its opposite-gender counterpart. Either side may span several tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderTermPair {
    pub correct: String,
    pub wrong: String,
}

impl GenderTermPair {
    pub fn new(correct: impl Into<String>, wrong: impl Into<String>) -> Result<Self, String> {
        let correct = correct.into().trim().to_owned();
        let wrong = wrong.into().trim().to_owned();
        if correct.is_empty() || wrong.is_empty() {
            return Err("empty side in gender term pair".into());
        }
        if correct == wrong {
            return Err(format!("gender term pair has identical sides '{correct}'"));
        }
        Ok(Self { correct, wrong })
    }

    /// The same pair with correct and wrong exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            correct: self.wrong.clone(),
            wrong: self.correct.clone(),
        }
    }
}

/// MuST-SHE category: class 1 (gender only in the audio) or 2 (gender in the
/// English text), crossed with the gender of the correct form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1M")]
    C1M,
    #[serde(rename = "1F")]
    C1F,
    #[serde(rename = "2M")]
    C2M,
    #[serde(rename = "2F")]
    C2F,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::C1M, Category::C1F, Category::C2M, Category::C2F];

    pub fn class(self) -> u8 {
        match self {
            Category::C1M | Category::C1F => 1,
            Category::C2M | Category::C2F => 2,
        }
    }

    /// Gender of the forms marked correct for this category.
    pub fn form(self) -> GenderForm {
        match self {
            Category::C1M | Category::C2M => GenderForm::Masculine,
            Category::C1F | Category::C2F => GenderForm::Feminine,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::C1M => "1M",
            Category::C1F => "1F",
            Category::C2M => "2M",
            Category::C2F => "2F",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1M" => Ok(Category::C1M),
            "1F" => Ok(Category::C1F),
            "2M" => Ok(Category::C2M),
            "2F" => Ok(Category::C2F),
            other => Err(format!("unknown category '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

impl Split {
    /// `"dev"` (any case, surrounding blanks ignored) is Dev; anything else is Test.
    pub fn from_set_column(value: &str) -> Self {
        if value.trim().eq_ignore_ascii_case("dev") {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

/// One evaluation sentence with its annotated gender terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MustSheRecord {
    pub id: String,
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub wrong_ref: String,
    pub speaker_gender: Gender,
    pub category: Category,
    pub terms: Vec<GenderTermPair>,
    pub split: Split,
}

/// Column names and separators of a MuST-SHE release. Column matching is
/// case-insensitive; unknown extra columns are ignored.
#[derive(Debug, Clone)]
pub struct MustSheFormat {
    pub id_column: String,
    pub src_column: String,
    pub ref_column: String,
    pub wrong_ref_column: String,
    pub gender_column: String,
    pub category_column: String,
    pub terms_column: String,
    pub set_column: String,
    /// Separates the correct and the wrong side of one pair.
    pub pair_separator: char,
    /// Separates pairs within the terms cell.
    pub term_separator: char,
}

impl Default for MustSheFormat {
    fn default() -> Self {
        Self {
            id_column: "ID".into(),
            src_column: "SRC".into(),
            ref_column: "REF".into(),
            wrong_ref_column: "WRONG-REF".into(),
            gender_column: "GENDER".into(),
            category_column: "CATEGORY".into(),
            terms_column: "GENDERTERMS".into(),
            set_column: "SET".into(),
            pair_separator: '>',
            term_separator: ';',
        }
    }
}

/// Parse a terms cell such as `"profesora>profesor;cansada>cansado"`.
pub fn parse_terms(cell: &str, format: &MustSheFormat) -> Result<Vec<GenderTermPair>, String> {
    let mut terms = Vec::new();
    for chunk in cell.split(format.term_separator) {
        if chunk.trim().is_empty() {
            continue;
        }
        let mut sides = chunk.split(format.pair_separator);
        let (Some(correct), Some(wrong), None) = (sides.next(), sides.next(), sides.next()) else {
            return Err(format!(
                "unparseable term pair '{}' (expected correct{}wrong)",
                chunk.trim(),
                format.pair_separator
            ));
        };
        terms.push(GenderTermPair::new(correct, wrong)?);
    }
    if terms.is_empty() {
        return Err("no gender terms annotated".into());
    }
    Ok(terms)
}

/// Load a MuST-SHE style TSV. The split comes from the set column.
pub fn load_mustshe(
    path: &Path,
    format: &MustSheFormat,
) -> Result<Vec<MustSheRecord>, CorpusError> {
    let file = File::open(path).map_err(read_err(path))?;
    let tsv_err = |source| CorpusError::Tsv {
        path: path.to_owned(),
        source,
    };
    let mut reader = tsv_reader(file);
    let headers = reader.headers().map_err(tsv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_owned(),
                column: name.to_owned(),
            })
    };
    let id_col = column(&format.id_column)?;
    let src_col = column(&format.src_column)?;
    let ref_col = column(&format.ref_column)?;
    let wrong_col = column(&format.wrong_ref_column)?;
    let gender_col = column(&format.gender_column)?;
    let cat_col = column(&format.category_column)?;
    let terms_col = column(&format.terms_column)?;
    let set_col = column(&format.set_column)?;

    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(tsv_err)?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|cell| cell.trim().is_empty()) {
            continue;
        }
        let bad = |reason: String| CorpusError::BadRow {
            path: path.to_owned(),
            row,
            reason,
        };
        let cell = |col: usize| record.get(col).unwrap_or("").to_owned();
        let id = cell(id_col).trim().to_owned();
        if id.is_empty() {
            return Err(bad("empty ID".into()));
        }
        let speaker_gender: Gender = cell(gender_col).parse().map_err(bad)?;
        let category: Category = cell(cat_col).parse().map_err(bad)?;
        let terms = parse_terms(&cell(terms_col), format).map_err(bad)?;
        records.push(MustSheRecord {
            id,
            src: cell(src_col),
            reference: cell(ref_col),
            wrong_ref: cell(wrong_col),
            speaker_gender,
            category,
            terms,
            split: Split::from_set_column(&cell(set_col)),
        });
    }
    Ok(records)
}

/// Read a hypothesis file of `id \t hypothesis_text` lines. A line without a
/// tab is an id with an empty hypothesis.
pub fn load_hypotheses(path: &Path) -> Result<Vec<(String, String)>, CorpusError> {
    let file = File::open(path).map_err(read_err(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(read_err(path))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, hyp) = line.split_once('\t').unwrap_or((line, ""));
        out.push((id.trim().to_owned(), hyp.to_owned()));
    }
    Ok(out)
}
