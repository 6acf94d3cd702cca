use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReformulateError;
use crate::corpus::{GenderForm, Lang};

/// Version stamp of the instruction text. Bump it whenever the wording of
/// [`build_prompt`] changes so audit logs stay interpretable.
pub const PROMPT_VERSION: &str = "gstd-reformulate-v1";

pub const DEFAULT_SHOTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "kebab-case")]
pub enum PromptStrategy {
    ZeroShot,
    FewShot(usize),
    FewShotCot(usize),
}

impl Default for PromptStrategy {
    fn default() -> Self {
        PromptStrategy::FewShotCot(DEFAULT_SHOTS)
    }
}

impl PromptStrategy {
    pub fn shots(self) -> usize {
        match self {
            PromptStrategy::ZeroShot => 0,
            PromptStrategy::FewShot(k) | PromptStrategy::FewShotCot(k) => k,
        }
    }

    pub fn with_reasoning(self) -> bool {
        matches!(self, PromptStrategy::FewShotCot(_))
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptStrategy::ZeroShot => f.write_str("zero-shot"),
            PromptStrategy::FewShot(k) => write!(f, "few-shot:{k}"),
            PromptStrategy::FewShotCot(k) => write!(f, "few-shot-cot:{k}"),
        }
    }
}

impl FromStr for PromptStrategy {
    type Err = String;

    /// `zero-shot`, `few-shot[:k]` or `few-shot-cot[:k]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => {
                let k: usize = k.parse().map_err(|_| format!("bad shot count in '{s}'"))?;
                (name, Some(k))
            }
            None => (s, None),
        };
        let k = k.unwrap_or(DEFAULT_SHOTS);
        if name != "zero-shot" && k == 0 {
            return Err("few-shot strategies need k >= 1".into());
        }
        match name {
            "zero-shot" => Ok(PromptStrategy::ZeroShot),
            "few-shot" => Ok(PromptStrategy::FewShot(k)),
            "few-shot-cot" => Ok(PromptStrategy::FewShotCot(k)),
            other => Err(format!("unknown prompt strategy '{other}'")),
        }
    }
}

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub source_translation: String,
    pub target_gender: GenderForm,
    pub rewritten: String,
    #[serde(default)]
    pub reasoning: Option<String>,
}

#[derive(Deserialize)]
struct ExemplarSets {
    es: Vec<Exemplar>,
    it: Vec<Exemplar>,
}

/// Ten built-in exemplars per language, each with a reasoning line.
pub fn builtin_exemplars(lang: Lang) -> Vec<Exemplar> {
    let sets: ExemplarSets = serde_json::from_str(include_str!("../../data/exemplars.json"))
        .expect("embedded exemplar file is valid");
    match lang {
        Lang::Es => sets.es,
        Lang::It => sets.it,
    }
}

/// What a single request asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptTarget {
    Form(GenderForm),
    Both,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Build a reformulation prompt asking for one target form.
pub fn build_prompt(
    batch: &[(usize, &str)],
    lang: Lang,
    target: GenderForm,
    strategy: PromptStrategy,
    exemplars: &[Exemplar],
) -> Result<String, ReformulateError> {
    build_prompt_for(batch, lang, PromptTarget::Form(target), strategy, exemplars)
}

/// Build a prompt for either a single form or both forms at once.
pub fn build_prompt_for(
    batch: &[(usize, &str)],
    lang: Lang,
    target: PromptTarget,
    strategy: PromptStrategy,
    exemplars: &[Exemplar],
) -> Result<String, ReformulateError> {
    if batch.is_empty() {
        return Err(ReformulateError::InvalidInput("empty batch".into()));
    }
    if matches!(target, PromptTarget::Form(GenderForm::Neutral)) {
        return Err(ReformulateError::InvalidInput(
            "neutral is not a reformulation target".into(),
        ));
    }
    let k = strategy.shots();
    if exemplars.len() < k {
        return Err(ReformulateError::InsufficientExemplars {
            strategy,
            needed: k,
            available: exemplars.len(),
        });
    }
    let shots = &exemplars[..k];
    if strategy.with_reasoning() {
        if let Some(pos) = shots
            .iter()
            .position(|e| e.reasoning.as_deref().is_none_or(str::is_empty))
        {
            return Err(ReformulateError::InvalidInput(format!(
                "exemplar {} has no reasoning, required for {strategy}",
                pos + 1
            )));
        }
    }

    let mut p = String::new();
    p.push_str(&format!("[prompt {PROMPT_VERSION}]\n"));
    p.push_str(&format!(
        "Each input below is a {} translation of an English sentence said by a single speaker.\n",
        lang.name()
    ));
    match target {
        PromptTarget::Form(form) => {
            p.push_str(&format!("Target form: {form}\n"));
            p.push_str(&format!(
                "Rewrite only the gender-marked words or segments that refer to the speaker (the person saying \"I\") into the {form} form.\n"
            ));
        }
        PromptTarget::Both => {
            p.push_str("Target form: both\n");
            p.push_str(
                "Rewrite only the gender-marked words or segments that refer to the speaker (the person saying \"I\"), once into the masculine form and once into the feminine form.\n",
            );
        }
    }
    p.push_str(
        "Leave every other word unchanged. Do not change words that refer to third persons or to the listener, even when they are gender-marked.\n",
    );
    match target {
        PromptTarget::Form(_) => p.push_str(
            "Output exactly one numbered line per input, as \"<number>. <rewritten translation>\", in input order, and nothing else.\n",
        ),
        PromptTarget::Both => p.push_str(
            "For each input output exactly two lines, \"<number>m. <masculine version>\" and \"<number>f. <feminine version>\", in input order, and nothing else.\n",
        ),
    }

    if !shots.is_empty() {
        p.push_str("\nExamples:\n");
        for ex in shots {
            p.push_str(&format!("Input: {}\n", one_line(&ex.source_translation)));
            p.push_str(&format!("Target: {}\n", ex.target_gender));
            if strategy.with_reasoning() {
                p.push_str(&format!(
                    "Reasoning: {}\n",
                    one_line(ex.reasoning.as_deref().unwrap_or(""))
                ));
            }
            p.push_str(&format!("Output: {}\n\n", one_line(&ex.rewritten)));
        }
    } else {
        p.push('\n');
    }

    p.push_str("Inputs:\n");
    for (idx, text) in batch {
        p.push_str(&format!("{idx}. {}\n", one_line(text)));
    }
    Ok(p)
}

/// Split `"12. text"` / `"12m. text"` into (12, Some('m'), "text").
fn numbered_line(line: &str) -> Option<(usize, Option<char>, &str)> {
    let line = line.trim();
    let digits_end = line.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let number: usize = line[..digits_end].parse().ok()?;
    let rest = &line[digits_end..];
    let (tag, rest) = match rest.chars().next()? {
        c @ ('m' | 'f' | 'M' | 'F') => (Some(c.to_ascii_lowercase()), &rest[1..]),
        _ => (None, rest),
    };
    let text = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some((number, tag, text.trim()))
}

/// Items of the `Inputs:` section of a prompt, plus the requested target.
pub fn parse_prompt_items(prompt: &str) -> Option<(PromptTarget, Vec<(usize, String)>)> {
    let target = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Target form: "))?;
    let target = match target.trim() {
        "both" => PromptTarget::Both,
        "masculine" => PromptTarget::Form(GenderForm::Masculine),
        "feminine" => PromptTarget::Form(GenderForm::Feminine),
        _ => return None,
    };
    let (_, inputs) = prompt.split_once("\nInputs:\n")?;
    let items = inputs
        .lines()
        .filter_map(numbered_line)
        .filter(|(_, tag, _)| tag.is_none())
        .map(|(n, _, text)| (n, text.to_owned()))
        .collect();
    Some((target, items))
}

/// Parse a single-form response. Every expected number must appear exactly
/// once with non-empty text; any unexpected number fails the parse.
pub fn parse_single_response(response: &str, expected: &[usize]) -> Option<Vec<String>> {
    let mut seen: BTreeMap<usize, String> = BTreeMap::new();
    for (n, tag, text) in response.lines().filter_map(numbered_line) {
        if tag.is_some() || text.is_empty() || seen.insert(n, text.to_owned()).is_some() {
            return None;
        }
    }
    collect_expected(seen, expected)
}

/// Parse a both-forms response into (masculine, feminine) per expected number.
pub fn parse_both_response(response: &str, expected: &[usize]) -> Option<Vec<(String, String)>> {
    let mut masc: BTreeMap<usize, String> = BTreeMap::new();
    let mut fem: BTreeMap<usize, String> = BTreeMap::new();
    for (n, tag, text) in response.lines().filter_map(numbered_line) {
        let side = match tag {
            Some('m') => &mut masc,
            Some('f') => &mut fem,
            _ => return None,
        };
        if text.is_empty() || side.insert(n, text.to_owned()).is_some() {
            return None;
        }
    }
    let masc = collect_expected(masc, expected)?;
    let fem = collect_expected(fem, expected)?;
    Some(masc.into_iter().zip(fem).collect())
}

fn collect_expected(mut seen: BTreeMap<usize, String>, expected: &[usize]) -> Option<Vec<String>> {
    if seen.len() != expected.len() {
        return None;
    }
    expected.iter().map(|n| seen.remove(n)).collect()
}
