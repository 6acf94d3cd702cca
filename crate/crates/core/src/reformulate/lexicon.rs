use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{CorpusError, GenderForm, Lang};

/// Known (masculine, feminine) word pairs. Entries may span several tokens;
/// only single-word entries take part in text rewriting.
#[derive(Debug, Clone, Default)]
pub struct GenderLexicon {
    pairs: Vec<(String, String)>,
    to_feminine: HashMap<String, String>,
    to_masculine: HashMap<String, String>,
}

impl GenderLexicon {
    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut lex = Self::default();
        for (masc, fem) in pairs {
            lex.insert(masc.as_ref(), fem.as_ref());
        }
        lex
    }

    pub fn insert(&mut self, masculine: &str, feminine: &str) {
        let masc = normalize(masculine);
        let fem = normalize(feminine);
        if masc.is_empty() || fem.is_empty() || masc == fem {
            return;
        }
        self.to_feminine.insert(masc.clone(), fem.clone());
        self.to_masculine.insert(fem.clone(), masc.clone());
        self.pairs.push((masc, fem));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Unordered, case-insensitive membership.
    pub fn contains_pair(&self, a: &str, b: &str) -> bool {
        let (a, b) = (normalize(a), normalize(b));
        self.to_feminine.get(&a) == Some(&b) || self.to_masculine.get(&a) == Some(&b)
    }

    /// The counterpart of `word` in `target` form, if the lexicon knows it.
    pub fn convert(&self, word: &str, target: GenderForm) -> Option<&str> {
        let key = word.to_lowercase();
        match target {
            GenderForm::Feminine => self.to_feminine.get(&key),
            GenderForm::Masculine => self.to_masculine.get(&key),
            GenderForm::Neutral => None,
        }
        .map(String::as_str)
    }

    /// Read a TSV of `masculine \t feminine` lines; `#` starts a comment.
    pub fn from_tsv(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut lex = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (masc, fem) = line.split_once('\t').ok_or_else(|| CorpusError::BadRow {
                path: path.to_owned(),
                row: idx + 1,
                reason: "expected 'masculine<TAB>feminine'".into(),
            })?;
            lex.insert(masc, fem);
        }
        Ok(lex)
    }

    /// A small built-in list of speaker-referential words.
    pub fn builtin(lang: Lang) -> Self {
        match lang {
            Lang::Es => Self::new(ES_PAIRS.iter().copied()),
            Lang::It => Self::new(IT_PAIRS.iter().copied()),
        }
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

const ES_PAIRS: &[(&str, &str)] = &[
    ("profesor", "profesora"),
    ("director", "directora"),
    ("escritor", "escritora"),
    ("investigador", "investigadora"),
    ("trabajador", "trabajadora"),
    ("cansado", "cansada"),
    ("cansados", "cansadas"),
    ("contento", "contenta"),
    ("nuevo", "nueva"),
    ("seguro", "segura"),
    ("listo", "lista"),
    ("solo", "sola"),
    ("orgulloso", "orgullosa"),
    ("preocupado", "preocupada"),
    ("casado", "casada"),
    ("nacido", "nacida"),
    ("niño", "niña"),
    ("primero", "primera"),
    ("enfermero", "enfermera"),
    ("ingeniero", "ingeniera"),
    ("abogado", "abogada"),
    ("alumno", "alumna"),
    ("encantado", "encantada"),
    ("agradecido", "agradecida"),
    ("emocionado", "emocionada"),
    ("sorprendido", "sorprendida"),
    ("equivocado", "equivocada"),
    ("convencido", "convencida"),
    ("invitado", "invitada"),
];

const IT_PAIRS: &[(&str, &str)] = &[
    ("stanco", "stanca"),
    ("contento", "contenta"),
    ("nuovo", "nuova"),
    ("sicuro", "sicura"),
    ("pronto", "pronta"),
    ("solo", "sola"),
    ("orgoglioso", "orgogliosa"),
    ("preoccupato", "preoccupata"),
    ("sposato", "sposata"),
    ("nato", "nata"),
    ("bambino", "bambina"),
    ("primo", "prima"),
    ("avvocato", "avvocata"),
    ("studente", "studentessa"),
    ("direttore", "direttrice"),
    ("infermiere", "infermiera"),
    ("professore", "professoressa"),
    ("stato", "stata"),
    ("arrivato", "arrivata"),
    ("andato", "andata"),
    ("grato", "grata"),
    ("emozionato", "emozionata"),
    ("sorpreso", "sorpresa"),
];

/// Morphological alternations accepted by the validator without a lexicon
/// entry: final-vowel `o`/`a` (optionally followed by a plural `s`) and a
/// list of irregular pairs such as articles.
#[derive(Debug, Clone)]
pub struct MorphPattern {
    pub final_vowel_alternation: bool,
    pub irregulars: GenderLexicon,
}

impl Default for MorphPattern {
    fn default() -> Self {
        Self {
            final_vowel_alternation: true,
            irregulars: GenderLexicon::default(),
        }
    }
}

impl MorphPattern {
    pub fn for_lang(lang: Lang) -> Self {
        let irregulars: &[(&str, &str)] = match lang {
            Lang::Es => &[
                ("el", "la"),
                ("un", "una"),
                ("uno", "una"),
                ("del", "de la"),
                ("al", "a la"),
                ("aquel", "aquella"),
                ("ese", "esa"),
                ("este", "esta"),
            ],
            Lang::It => &[
                ("il", "la"),
                ("lo", "la"),
                ("un", "una"),
                ("uno", "una"),
                ("del", "della"),
                ("al", "alla"),
                ("dal", "dalla"),
                ("nel", "nella"),
                ("sul", "sulla"),
                ("quel", "quella"),
            ],
        };
        Self {
            final_vowel_alternation: true,
            irregulars: GenderLexicon::new(irregulars.iter().copied()),
        }
    }

    /// Symmetric in its arguments.
    pub fn matches(&self, a: &str, b: &str) -> bool {
        if self.irregulars.contains_pair(a, b) {
            return true;
        }
        self.final_vowel_alternation && vowel_alternation(a, b)
    }
}

fn vowel_alternation(a: &str, b: &str) -> bool {
    let strip = |s: &str| -> Vec<char> {
        let mut chars: Vec<char> = s.to_lowercase().chars().collect();
        if chars.len() > 2 && chars.last() == Some(&'s') {
            chars.pop();
        }
        chars
    };
    let (a_plural, b_plural) = (a.ends_with(['s', 'S']), b.ends_with(['s', 'S']));
    if a_plural != b_plural {
        return false;
    }
    let (a, b) = (strip(a), strip(b));
    if a.len() != b.len() || a.len() < 2 {
        return false;
    }
    let n = a.len() - 1;
    a[..n] == b[..n] && matches!((a[n], b[n]), ('o', 'a') | ('a', 'o'))
}
