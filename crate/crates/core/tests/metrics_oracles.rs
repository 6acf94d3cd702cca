use std::collections::HashMap;
use std::io::Write as _;

use gstd_core::corpus::{load_mustshe, Category, GenderTermPair, MustSheFormat, Split};
use gstd_core::metrics::{bleu, score, term_outcomes, BleuConfig, SplitFilter, TermOutcome};
use proptest::prelude::*;

// Feminine/masculine forms; no form appears in two pairs.
const PAIRS: [(&str, &str); 4] = [
    ("cansada", "cansado"),
    ("profesora", "profesor"),
    ("nueva", "nuevo"),
    ("sola", "solo"),
];
const FILLER: [&str; 4] = ["hoy", "estoy", "muy", "aquí"];

fn rank(o: TermOutcome) -> u8 {
    match o {
        TermOutcome::CorrectForm => 2,
        TermOutcome::WrongForm => 1,
        TermOutcome::NotCovered => 0,
    }
}

/// Enumerate every outcome vector, keep those whose claims on each word form
/// fit the number of occurrences in the hypothesis, and pick the best by
/// (#correct, #covered), then by earliest terms doing best.
fn brute_force(hyp: &[&str], terms: &[GenderTermPair]) -> Vec<TermOutcome> {
    let options = [
        TermOutcome::CorrectForm,
        TermOutcome::WrongForm,
        TermOutcome::NotCovered,
    ];
    let mut best: Option<(usize, usize, Vec<u8>, Vec<TermOutcome>)> = None;
    for code in 0..3usize.pow(terms.len() as u32) {
        let mut c = code;
        let outcomes: Vec<TermOutcome> = terms
            .iter()
            .map(|_| {
                let o = options[c % 3];
                c /= 3;
                o
            })
            .collect();
        let mut claims: HashMap<&str, usize> = HashMap::new();
        for (t, o) in terms.iter().zip(&outcomes) {
            match o {
                TermOutcome::CorrectForm => *claims.entry(t.correct.as_str()).or_default() += 1,
                TermOutcome::WrongForm => *claims.entry(t.wrong.as_str()).or_default() += 1,
                TermOutcome::NotCovered => {}
            }
        }
        let feasible = claims
            .iter()
            .all(|(w, &n)| hyp.iter().filter(|h| **h == *w).count() >= n);
        if !feasible {
            continue;
        }
        let correct = outcomes
            .iter()
            .filter(|o| **o == TermOutcome::CorrectForm)
            .count();
        let covered = outcomes
            .iter()
            .filter(|o| **o != TermOutcome::NotCovered)
            .count();
        let ranks: Vec<u8> = outcomes.iter().map(|&o| rank(o)).collect();
        let key = (correct, covered, ranks);
        if best
            .as_ref()
            .is_none_or(|b| (b.0, b.1, &b.2) < (key.0, key.1, &key.2))
        {
            best = Some((key.0, key.1, key.2, outcomes));
        }
    }
    best.expect("all-uncovered is always feasible").3
}

fn fixture() -> impl Strategy<Value = (Vec<&'static str>, Vec<GenderTermPair>)> {
    let word = prop_oneof![
        (0..PAIRS.len(), any::<bool>()).prop_map(|(i, fem)| if fem {
            PAIRS[i].0
        } else {
            PAIRS[i].1
        }),
        (0..FILLER.len()).prop_map(|i| FILLER[i]),
    ];
    let hyp = prop::collection::vec(word, 0..=15);
    let terms =
        (any::<bool>(), prop::collection::vec(0..PAIRS.len(), 1..=5)).prop_map(|(fem, idx)| {
            idx.into_iter()
                .map(|i| {
                    let (f, m) = PAIRS[i];
                    if fem {
                        GenderTermPair::new(f, m).unwrap()
                    } else {
                        GenderTermPair::new(m, f).unwrap()
                    }
                })
                .collect::<Vec<_>>()
        });
    (hyp, terms)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn greedy_matching_agrees_with_brute_force((hyp, terms) in fixture()) {
        let text = hyp.join(" ");
        prop_assert_eq!(term_outcomes(&text, &terms), brute_force(&hyp, &terms));
    }
}

proptest! {
    #[test]
    fn swapping_annotation_complements_gta(choices in prop::collection::vec((0..PAIRS.len(), any::<bool>(), any::<bool>()), 1..=4)) {
        // One word per distinct pair, so a hypothesis never holds both forms.
        let mut seen = std::collections::HashSet::new();
        let choices: Vec<_> = choices.into_iter().filter(|(i, _, _)| seen.insert(*i)).collect();
        let hyp: Vec<&str> = choices.iter().map(|&(i, fem, _)| if fem { PAIRS[i].0 } else { PAIRS[i].1 }).collect();
        let terms: Vec<GenderTermPair> = choices
            .iter()
            .map(|&(i, _, ann_fem)| if ann_fem {
                GenderTermPair::new(PAIRS[i].0, PAIRS[i].1).unwrap()
            } else {
                GenderTermPair::new(PAIRS[i].1, PAIRS[i].0).unwrap()
            })
            .collect();
        let swapped: Vec<GenderTermPair> = terms.iter().map(GenderTermPair::swapped).collect();
        let text = hyp.join(" ");
        let gta = |outs: Vec<TermOutcome>| {
            let covered = outs.iter().filter(|o| **o != TermOutcome::NotCovered).count();
            outs.iter().filter(|o| **o == TermOutcome::CorrectForm).count() as f64 / covered as f64
        };
        let g = gta(term_outcomes(&text, &terms));
        let g_swapped = gta(term_outcomes(&text, &swapped));
        prop_assert!((g_swapped - (1.0 - g)).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Plain corpus BLEU-4 over whitespace tokens, written without hash maps.
fn reference_bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rf: Vec<&str> = rf.split_whitespace().collect();
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let hg: Vec<&[&str]> = h.windows(n).collect();
            let rg: Vec<&[&str]> = if rf.len() >= n {
                rf.windows(n).collect()
            } else {
                Vec::new()
            };
            total[n - 1] += hg.len();
            let mut distinct: Vec<&[&str]> = hg.clone();
            distinct.sort();
            distinct.dedup();
            for g in distinct {
                let in_h = hg.iter().filter(|x| **x == g).count();
                let in_r = rg.iter().filter(|x| **x == g).count();
                matched[n - 1] += in_h.min(in_r);
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * log_p.exp()
}

const BLEU_HYPS: [&str; 3] = [
    "el gato se sentó en la alfombra roja .",
    "hoy estoy muy cansada después del trabajo",
    "soy profesora de historia en una escuela pequeña",
];
const BLEU_REFS: [&str; 3] = [
    "el gato estaba sentado en la alfombra roja .",
    "hoy estoy muy cansada tras el trabajo",
    "soy profesora de historia en una escuela pequeña",
];

#[test]
fn bleu_fixture_matches_independent_implementations() {
    // Value produced by sacrebleu 2.6.0 (13a tokenization) on this fixture.
    const SACREBLEU: f64 = 66.36703361576491;
    let ours = bleu(&BLEU_HYPS, &BLEU_REFS).unwrap();
    assert!((ours - SACREBLEU).abs() < 0.1, "{ours} vs {SACREBLEU}");
    assert!((ours - reference_bleu(&BLEU_HYPS, &BLEU_REFS)).abs() < 1e-9);
    assert_eq!(bleu(&BLEU_REFS, &BLEU_REFS).unwrap(), 100.0);
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d", "e", "."]),
        0..12,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn bleu_matches_reference_implementation(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
        prop_assume!(pairs.iter().any(|(_, r)| !r.is_empty()));
        let hyps: Vec<&str> = pairs.iter().map(|(h, _)| h.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|(_, r)| r.as_str()).collect();
        let ours = bleu(&hyps, &refs).unwrap();
        prop_assert!((ours - reference_bleu(&hyps, &refs)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&ours));
    }

    #[test]
    fn bleu_ignores_sentence_order(pairs in prop::collection::vec((sentence(), sentence()), 1..6), rot in 0usize..6) {
        prop_assume!(pairs.iter().any(|(_, r)| !r.is_empty()));
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % pairs.len());
        let split = |p: &[(String, String)]| -> (Vec<String>, Vec<String>) { p.iter().cloned().unzip() };
        let (h1, r1) = split(&pairs);
        let (h2, r2) = split(&rotated);
        prop_assert_eq!(bleu(&h1, &r1).unwrap(), bleu(&h2, &r2).unwrap());
    }

    #[test]
    fn identical_corpora_score_100(refs in prop::collection::vec(sentence(), 1..6)) {
        let longest = refs.iter().map(|r| r.split_whitespace().count()).max().unwrap();
        prop_assume!(longest >= 4);
        prop_assert_eq!(bleu(&refs, &refs).unwrap(), 100.0);
    }
}

// ---------------------------------------------------------------------------
// Scoring against a MuST-SHE style file
// ---------------------------------------------------------------------------

fn tsv(rows: &[[&str; 8]]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        f,
        "ID\tSRC\tREF\tWRONG-REF\tGENDER\tCATEGORY\tGENDERTERMS\tSET"
    )
    .unwrap();
    for row in rows {
        writeln!(f, "{}", row.join("\t")).unwrap();
    }
    f
}

#[test]
fn hand_counted_fixture() {
    let f = tsv(&[
        [
            "s01",
            "I am tired",
            "estoy cansada",
            "estoy cansado",
            "She",
            "1F",
            "cansada>cansado",
            "test",
        ],
        [
            "s02",
            "I am alone",
            "estoy sola",
            "estoy solo",
            "She",
            "1F",
            "sola>solo",
            "test",
        ],
        [
            "s03",
            "I am a teacher",
            "soy profesora",
            "soy profesor",
            "She",
            "1F",
            "profesora>profesor",
            "test",
        ],
        [
            "s04",
            "I am new",
            "soy nuevo",
            "soy nueva",
            "He",
            "1M",
            "nuevo>nueva",
            "test",
        ],
        [
            "s05",
            "I am tired",
            "estoy cansado",
            "estoy cansada",
            "He",
            "1M",
            "cansado>cansada",
            "test",
        ],
        [
            "s06",
            "She is a doctor",
            "ella es doctora",
            "ella es doctor",
            "He",
            "2F",
            "doctora>doctor",
            "test",
        ],
        [
            "s07",
            "I am a teacher",
            "soy profesora",
            "soy profesor",
            "She",
            "1F",
            "profesora>profesor",
            "test",
        ],
        [
            "s08",
            "He is alone",
            "él está solo",
            "él está sola",
            "She",
            "2M",
            "solo>sola",
            "test",
        ],
        [
            "s09",
            "I am new",
            "soy nueva",
            "soy nuevo",
            "She",
            "1F",
            "nueva>nuevo",
            "test",
        ],
        [
            "s10",
            "She is tired",
            "ella está cansada",
            "ella está cansado",
            "He",
            "2F",
            "cansada>cansado",
            "test",
        ],
    ]);
    let refs = load_mustshe(f.path(), &MustSheFormat::default()).unwrap();
    let hyps: HashMap<String, String> = [
        ("s01", "estoy cansada"),         // correct
        ("s02", "estoy sola"),            // correct
        ("s03", "soy profesora"),         // correct
        ("s04", "soy nuevo"),             // correct
        ("s05", "estoy cansado"),         // correct
        ("s06", "ella es doctora"),       // correct
        ("s07", "soy profesor"),          // wrong
        ("s08", "él está sola"),          // wrong
        ("s09", "soy la recién llegada"), // not covered
        ("s10", "ella está agotada"),     // not covered
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect();
    let report = score(&hyps, &refs, SplitFilter::All, &BleuConfig::default()).unwrap();
    let overall = report.overall.as_ref().unwrap();
    assert_eq!(
        (overall.total_terms, overall.covered, overall.correct),
        (10, 8, 6)
    );
    assert_eq!(overall.gta, Some(0.75));
    assert_eq!(overall.coverage, 0.8);

    let c1f = report.cell(Category::C1F).unwrap();
    assert_eq!((c1f.total_terms, c1f.covered, c1f.correct), (5, 4, 3));
    let c1m = report.cell(Category::C1M).unwrap();
    assert_eq!((c1m.total_terms, c1m.covered, c1m.correct), (2, 2, 2));
    let cat2 = report.cat2.as_ref().unwrap();
    assert_eq!((cat2.total_terms, cat2.covered, cat2.correct), (3, 2, 1));
}

#[test]
fn wrong_reference_hypotheses_score_zero_everywhere() {
    let f = tsv(&[
        [
            "d1",
            "I am tired",
            "estoy cansada",
            "estoy cansado",
            "She",
            "1F",
            "cansada>cansado",
            "dev",
        ],
        [
            "d2",
            "I am new",
            "soy nuevo",
            "soy nueva",
            "He",
            "1M",
            "nuevo>nueva",
            "dev",
        ],
        [
            "t1",
            "I am a teacher and I am alone",
            "soy profesora y estoy sola",
            "soy profesor y estoy solo",
            "She",
            "1F",
            "profesora>profesor;sola>solo",
            "test",
        ],
        [
            "t2",
            "I am tired",
            "estoy cansado",
            "estoy cansada",
            "He",
            "1M",
            "cansado>cansada",
            "test",
        ],
        [
            "t3",
            "She is new",
            "ella es nueva",
            "ella es nuevo",
            "She",
            "2F",
            "nueva>nuevo",
            "test",
        ],
        [
            "t4",
            "He is alone",
            "él está solo",
            "él está sola",
            "He",
            "2M",
            "solo>sola",
            "TST",
        ],
    ]);
    let refs = load_mustshe(f.path(), &MustSheFormat::default()).unwrap();
    assert_eq!(refs.iter().filter(|r| r.split == Split::Dev).count(), 2);
    assert_eq!(refs.iter().filter(|r| r.split == Split::Test).count(), 4);

    let hyps: HashMap<String, String> = refs
        .iter()
        .map(|r| (r.id.clone(), r.wrong_ref.clone()))
        .collect();
    for split in [SplitFilter::Dev, SplitFilter::Test, SplitFilter::All] {
        let report = score(&hyps, &refs, split, &BleuConfig::default()).unwrap();
        assert!(!report.cells.is_empty());
        for cell in report
            .cells
            .values()
            .chain(&report.cat2)
            .chain(&report.overall)
        {
            assert_eq!(cell.gta, Some(0.0));
            assert_eq!(cell.coverage, 1.0);
        }
    }
    let dev = score(&hyps, &refs, SplitFilter::Dev, &BleuConfig::default()).unwrap();
    assert_eq!(dev.cells.len(), 2);
    assert!(dev.cat2.is_none());

    let correct: HashMap<String, String> = refs
        .iter()
        .map(|r| (r.id.clone(), r.reference.clone()))
        .collect();
    let report = score(&correct, &refs, SplitFilter::All, &BleuConfig::default()).unwrap();
    assert_eq!(report.overall.as_ref().unwrap().gta, Some(1.0));
}
