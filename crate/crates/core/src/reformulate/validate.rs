use serde::Serialize;

use super::lexicon::{GenderLexicon, MorphPattern};
use crate::text::folded_tokens;

/// A changed span that is neither a lexicon pair nor a known alternation.
/// Positions are token indices of the span start (case-folded tokenization,
/// punctuation marks counted as tokens).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlaggedEdit {
    pub original: String,
    pub rewritten: String,
    pub original_pos: usize,
    pub rewritten_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "flags", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Flag(Vec<FlaggedEdit>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Checks that a rewrite only touched known gendered words.
#[derive(Debug, Clone)]
pub struct Validator {
    pub lexicon: GenderLexicon,
    pub pattern: MorphPattern,
}

impl Validator {
    pub fn new(lexicon: GenderLexicon, pattern: MorphPattern) -> Self {
        Self { lexicon, pattern }
    }

    fn allowed(&self, a: &str, b: &str) -> bool {
        a == b || self.lexicon.contains_pair(a, b) || self.pattern.matches(a, b)
    }

    /// Whether `a` and `b` split into aligned runs (up to three tokens a side)
    /// that are each an allowed edit, e.g. `del nuevo` → `de la` + `nueva`.
    fn segmentable(&self, a: &[String], b: &[String]) -> bool {
        const MAX_RUN: usize = 3;
        let (n, m) = (a.len(), b.len());
        let mut ok = vec![vec![false; m + 1]; n + 1];
        ok[0][0] = true;
        for i in 0..=n {
            for j in 0..=m {
                if !ok[i][j] {
                    continue;
                }
                for di in 1..=MAX_RUN.min(n - i) {
                    for dj in 1..=MAX_RUN.min(m - j) {
                        if !ok[i + di][j + dj]
                            && self.allowed(&a[i..i + di].join(" "), &b[j..j + dj].join(" "))
                        {
                            ok[i + di][j + dj] = true;
                        }
                    }
                }
            }
        }
        ok[n][m]
    }

    pub fn validate(&self, original: &str, rewritten: &str) -> Verdict {
        let a = folded_tokens(original);
        let b = folded_tokens(rewritten);
        let mut flags = Vec::new();
        for hunk in diff_hunks(&a, &b) {
            let (ra, rb) = (&a[hunk.a.clone()], &b[hunk.b.clone()]);
            if ra.len() == rb.len() {
                for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
                    if !self.allowed(x, y) {
                        flags.push(FlaggedEdit {
                            original: x.clone(),
                            rewritten: y.clone(),
                            original_pos: hunk.a.start + i,
                            rewritten_pos: hunk.b.start + i,
                        });
                    }
                }
            } else if !self.segmentable(ra, rb) {
                let (ja, jb) = (ra.join(" "), rb.join(" "));
                {
                    flags.push(FlaggedEdit {
                        original: ja,
                        rewritten: jb,
                        original_pos: hunk.a.start,
                        rewritten_pos: hunk.b.start,
                    });
                }
            }
        }
        if flags.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Flag(flags)
        }
    }
}

/// Validate with an explicit lexicon and alternation pattern.
pub fn validate_reformulation(
    original: &str,
    rewritten: &str,
    allowed_edits: &GenderLexicon,
    pattern: &MorphPattern,
) -> Verdict {
    Validator::new(allowed_edits.clone(), pattern.clone()).validate(original, rewritten)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Hunk {
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
}

/// Non-matching regions between two token sequences. Equal-length inputs are
/// aligned position by position; otherwise an LCS alignment is used.
fn diff_hunks(a: &[String], b: &[String]) -> Vec<Hunk> {
    if a.len() == b.len() {
        let mut hunks = Vec::new();
        let mut i = 0;
        while i < a.len() {
            if a[i] == b[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < a.len() && a[i] != b[i] {
                i += 1;
            }
            hunks.push(Hunk {
                a: start..i,
                b: start..i,
            });
        }
        return hunks;
    }

    // lcs[i][j] = LCS length of a[i..] and b[j..]
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }
    let mut hunks = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut hs_a, mut hs_b) = (0, 0);
    let mut open = false;
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            if open {
                hunks.push(Hunk {
                    a: hs_a..i,
                    b: hs_b..j,
                });
                open = false;
            }
            i += 1;
            j += 1;
            continue;
        }
        if !open {
            open = true;
            hs_a = i;
            hs_b = j;
        }
        if j >= m || (i < n && lcs[i + 1][j] >= lcs[i][j + 1]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    if open {
        hunks.push(Hunk {
            a: hs_a..n,
            b: hs_b..m,
        });
    }
    hunks
}
