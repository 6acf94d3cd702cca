use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use gstd_cli::manifest::{sha256_hex, Manifest};
use gstd_core::corpus::read_targets;
use gstd_core::selection::DataClass;
use serde_json::Value;

fn gstd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gstd"))
        .current_dir(dir)
        .env_remove("GSTD_LLM_ENDPOINT")
        .env_remove("GSTD_LLM_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TRANSLATIONS: [&str; 4] = [
    "hoy estoy muy cansado",
    "soy el nuevo director",
    "ella es doctora y yo estoy contento",
    "hace frío esta noche",
];

/// 60 rows: two thirds first-person, alternating speaker gender, one
/// malformed row and two unknown-gender rows at the end.
fn write_corpus(dir: &Path) {
    let mut f = fs::File::create(dir.join("corpus.jsonl")).unwrap();
    for i in 0..60 {
        let gender = if i % 2 == 0 { "male" } else { "female" };
        let transcript = if i % 3 == 0 {
            "It is late"
        } else {
            "I am tired"
        };
        let row = serde_json::json!({
            "id": format!("u{i:03}"),
            "audio_ref": format!("wav/u{i:03}.wav"),
            "transcript": transcript,
            "translation": TRANSLATIONS[i % 4],
            "lang": "es",
            "speaker_gender": gender,
            "duration_s": 1.0 + i as f64 / 10.0,
        });
        writeln!(f, "{row}").unwrap();
    }
    writeln!(f, r#"{{"id": "broken", "transcript": "I am"}}"#).unwrap();
    for i in 0..2 {
        writeln!(
            f,
            r#"{{"id":"x{i}","transcript":"I am here","translation":"estoy aquí","lang":"es","speaker_gender":"unknown"}}"#
        )
        .unwrap();
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn check_manifest(out_dir: &Path) -> Manifest {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    for (name, artifact) in &manifest.artifacts {
        let bytes = fs::read(out_dir.join(name)).unwrap();
        assert_eq!(artifact.sha256, sha256_hex(&bytes), "{name}");
        assert_eq!(artifact.bytes, bytes.len() as u64);
    }
    manifest
}

#[test]
fn full_pipeline_with_mock_backend() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());

    let table = ok(&gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "3",
            "--out-dir",
            "out",
        ],
    ));
    assert!(table.contains("balanced sample"));
    let out = dir.path().join("out");
    let stats = read_json(&out.join("selection_stats.json"));
    assert_eq!(stats["rows"], 63);
    assert_eq!(stats["rejected_rows"], 1);
    assert_eq!(stats["partition"]["selected_male"], 20);
    assert_eq!(stats["partition"]["selected_female"], 20);
    assert_eq!(stats["partition"]["excluded_unknown_gender"], 2);
    assert_eq!(stats["sample_size"], 40);
    let fraction = stats["partition"]["selected_fraction"].as_f64().unwrap();
    assert!((fraction - 40.0 / 62.0).abs() < 1e-12);

    ok(&gstd(
        dir.path(),
        &["reformulate", "--out-dir", "out", "--batch-size", "7"],
    ));
    let accepted: Vec<Value> = fs::read_to_string(out.join("reformulations.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(accepted.len(), 40);
    for r in &accepted {
        assert!(!r["masculine"].as_str().unwrap().is_empty());
        assert!(!r["feminine"].as_str().unwrap().is_empty());
    }
    assert!(accepted
        .iter()
        .any(|r| r["feminine"] == "hoy estoy muy cansada"));
    let audit = fs::read_to_string(out.join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 40);
    assert!(audit
        .lines()
        .all(|l| l.contains("\"verdict\":\"accepted\"") && l.contains("sha256:")));

    ok(&gstd(
        dir.path(),
        &[
            "build-targets",
            "--out-dir",
            "out",
            "--seed",
            "3",
            "--theta-neut",
            "0.2",
            "--emit-training-text",
        ],
    ));
    let three = read_targets(&out.join("targets_three_mode.jsonl")).unwrap();
    let mut variants: std::collections::BTreeMap<&str, Vec<String>> = Default::default();
    for r in three.iter().filter(|r| r.data_class == DataClass::Debiased) {
        variants
            .entry(&r.utterance_id)
            .or_default()
            .push(r.sos.to_string());
    }
    assert!(!variants.is_empty());
    for tokens in variants.values() {
        assert_eq!(tokens, &["<ES_AUTO>", "<ES_MASC>", "<ES_FEMI>"]);
    }
    let one = read_targets(&out.join("targets_one_mode.jsonl")).unwrap();
    assert!(one.iter().all(|r| r.sos.mode.is_none()));
    for records in [&one, &three] {
        let neutral = records
            .iter()
            .filter(|r| r.data_class == DataClass::Neutral)
            .count();
        assert!((neutral as f64 - 0.2 * records.len() as f64).abs() <= 1.0);
    }
    let text = fs::read_to_string(out.join("targets_one_mode.txt")).unwrap();
    assert_eq!(text.lines().count(), one.len());
    assert!(text.lines().all(|l| l.starts_with("<ES>\t")));

    let manifest = check_manifest(&out);
    for name in [
        "selected.jsonl",
        "neutral.jsonl",
        "rejects.jsonl",
        "selection_stats.json",
        "reformulations.jsonl",
        "quarantine.jsonl",
        "audit.jsonl",
        "targets_one_mode.jsonl",
        "targets_three_mode.jsonl",
        "targets_one_mode.txt",
        "build_summary.json",
    ] {
        assert!(
            manifest.artifacts.contains_key(name),
            "{name} missing from manifest"
        );
    }
}

#[test]
fn select_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "4" } else { "9" };
        ok(&gstd(
            dir.path(),
            &[
                "select",
                "--corpus",
                "corpus.jsonl",
                "--seed",
                seed,
                "--sample-size",
                "10",
                "--out-dir",
                out,
            ],
        ));
    }
    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    for f in [
        "selected.jsonl",
        "neutral.jsonl",
        "selection_stats.json",
        "manifest.json",
    ] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "selected.jsonl"), read("c", "selected.jsonl"));
}

#[test]
fn config_errors_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let out = gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "1",
            "--sample-size",
            "11",
            "--out-dir",
            "odd",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("odd"));
    assert!(!dir.path().join("odd").exists());

    let out = gstd(
        dir.path(),
        &["select", "--corpus", "corpus.jsonl", "--out-dir", "noseed"],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"));
    assert!(!dir.path().join("noseed").exists());

    let out = gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "missing.jsonl",
            "--seed",
            "1",
            "--out-dir",
            "missing",
        ],
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("missing").exists());

    fs::write(
        dir.path().join("bad.json"),
        r#"{"seed": 1, "sampel_size": 4}"#,
    )
    .unwrap();
    let out = gstd(
        dir.path(),
        &[
            "--config",
            "bad.json",
            "select",
            "--corpus",
            "corpus.jsonl",
            "--out-dir",
            "bad",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("sampel_size"));
    assert!(!dir.path().join("bad").exists());

    fs::write(
        dir.path().join("theta.json"),
        r#"{"seed": 1, "mix": {"theta_neut": 1.5}}"#,
    )
    .unwrap();
    let out = gstd(
        dir.path(),
        &[
            "--config",
            "theta.json",
            "build-targets",
            "--out-dir",
            "theta",
        ],
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("theta").exists());
}

#[test]
fn config_file_supplies_fields_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    fs::write(
        dir.path().join("run.json"),
        r#"{"corpus": "corpus.jsonl", "seed": 5, "sample_size": 8, "out_dir": "from_config", "format": "json"}"#,
    )
    .unwrap();
    let stdout = ok(&gstd(dir.path(), &["--config", "run.json", "select"]));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["sample_size"], 8);
    assert_eq!(summary["seed"], 5);
    assert!(dir.path().join("from_config/selected.jsonl").exists());

    let stdout = ok(&gstd(
        dir.path(),
        &[
            "--config",
            "run.json",
            "--seed",
            "6",
            "--out-dir",
            "from_flags",
            "--format",
            "table",
            "select",
            "--sample-size",
            "4",
        ],
    ));
    assert!(stdout.contains("balanced sample  4"));
    let stats = read_json(&dir.path().join("from_flags/selection_stats.json"));
    assert_eq!(stats["seed"], 6);
}

#[test]
fn referent_changes_are_quarantined_without_failing_the_run() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    // The mock also swaps doctor/doctora, a third-party referent the default
    // validator lexicon does not allow.
    fs::write(
        dir.path().join("mock.tsv"),
        "# injected\ncansado\tcansada\ncontento\tcontenta\ndoctor\tdoctora\n",
    )
    .unwrap();
    ok(&gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "1",
            "--out-dir",
            "out",
        ],
    ));
    let stdout = ok(&gstd(
        dir.path(),
        &[
            "--format",
            "json",
            "reformulate",
            "--out-dir",
            "out",
            "--mock-lexicon",
            "mock.tsv",
        ],
    ));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    let out = dir.path().join("out");
    let quarantine: Vec<Value> = fs::read_to_string(out.join("quarantine.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!quarantine.is_empty());
    assert_eq!(summary["quarantined"], quarantine.len());
    for q in &quarantine {
        assert_eq!(q["original"], "ella es doctora y yo estoy contento");
        assert_eq!(q["masculine_verdict"]["verdict"], "flag");
    }
    let accepted = fs::read_to_string(out.join("reformulations.jsonl")).unwrap();
    assert!(!accepted.contains("doctor"));
    assert_eq!(
        summary["accepted"].as_u64().unwrap() + quarantine.len() as u64,
        40
    );

    // Quarantined items are skipped when building targets.
    let stdout = ok(&gstd(
        dir.path(),
        &[
            "--format",
            "json",
            "build-targets",
            "--out-dir",
            "out",
            "--seed",
            "1",
        ],
    ));
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(
        summary["skipped_without_reformulation"]
            .as_array()
            .unwrap()
            .len(),
        quarantine.len()
    );
}

#[test]
fn http_backend_requires_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    ok(&gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "1",
            "--out-dir",
            "out",
        ],
    ));
    let before = fs::read(dir.path().join("out/manifest.json")).unwrap();
    let out = gstd(
        dir.path(),
        &["reformulate", "--out-dir", "out", "--backend", "http"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("GSTD_LLM_ENDPOINT"));
    assert!(!dir.path().join("out/reformulations.jsonl").exists());
    assert_eq!(
        fs::read(dir.path().join("out/manifest.json")).unwrap(),
        before
    );
}

#[test]
fn unreachable_backend_is_a_hard_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    ok(&gstd(
        dir.path(),
        &[
            "select",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "1",
            "--sample-size",
            "4",
            "--out-dir",
            "out",
        ],
    ));
    // Bind then drop a listener so the port is very likely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = Command::new(env!("CARGO_BIN_EXE_gstd"))
        .current_dir(dir.path())
        .env(
            "GSTD_LLM_ENDPOINT",
            format!("http://127.0.0.1:{port}/v1/chat/completions"),
        )
        .args([
            "reformulate",
            "--out-dir",
            "out",
            "--backend",
            "http",
            "--retries",
            "0",
            "--batch-size",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let failures = fs::read_to_string(dir.path().join("out/failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 2);
    let audit = fs::read_to_string(dir.path().join("out/audit.jsonl")).unwrap();
    assert!(audit.lines().all(|l| l.contains("\"verdict\":\"failed\"")));
    check_manifest(&dir.path().join("out"));
}

const MUSTSHE: &str = "ID\tSRC\tREF\tWRONG-REF\tGENDER\tCATEGORY\tGENDERTERMS\tSET
d1\tI am tired\testoy cansada\testoy cansado\tShe\t1F\tcansada>cansado\tdev
d2\tI am new\tsoy nuevo\tsoy nueva\tHe\t1M\tnuevo>nueva\tdev
t1\tI am alone\testoy sola hoy\testoy solo hoy\tShe\t1F\tsola>solo\ttest
t2\tI am tired\testoy cansado hoy\testoy cansada hoy\tHe\t1M\tcansado>cansada\ttest
t3\tShe is new here\tella es nueva aquí\tella es nuevo aquí\tHe\t2F\tnueva>nuevo\ttest
";

#[test]
fn score_reports_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mustshe.tsv"), MUSTSHE).unwrap();
    let refs: Vec<(&str, &str)> = MUSTSHE
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            (cols[0], cols[2])
        })
        .collect();
    let hyp: String = refs.iter().map(|(id, r)| format!("{id}\t{r}\n")).collect();
    fs::write(dir.path().join("hyp.tsv"), hyp).unwrap();

    let table = ok(&gstd(
        dir.path(),
        &[
            "score",
            "--hyp",
            "hyp.tsv",
            "--mustshe",
            "mustshe.tsv",
            "--split",
            "all",
            "--out-dir",
            "s",
            "--system",
            "ref",
        ],
    ));
    assert!(table.starts_with("split: all"));
    let header = table.lines().nth(1).unwrap();
    for col in ["Cat1-Masc", "Cat1-Femi", "Cat2"] {
        assert!(header.contains(col), "{header}");
    }
    assert!(table.contains("Acc.") && table.contains("BLEU"));
    let report = read_json(&dir.path().join("s/score_report.json"));
    assert_eq!(report["overall"]["gta"], 1.0);
    assert_eq!(report["overall"]["total_terms"], 5);

    let stdout = ok(&gstd(
        dir.path(),
        &[
            "--format",
            "json",
            "score",
            "--hyp",
            "hyp.tsv",
            "--mustshe",
            "mustshe.tsv",
            "--split",
            "dev",
            "--out-dir",
            "s",
        ],
    ));
    let dev: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(dev["overall"]["total_terms"], 2);
    assert!(dev["cat2"].is_null());

    // A missing hypothesis is an error.
    fs::write(dir.path().join("short.tsv"), "d1\testoy cansada\n").unwrap();
    let out = gstd(
        dir.path(),
        &[
            "score",
            "--hyp",
            "short.tsv",
            "--mustshe",
            "mustshe.tsv",
            "--out-dir",
            "s",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("t1"));
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "sweep",
            "--seed",
            "1",
            "--out-dir",
            out,
            "--thetas",
            "0.2,0.8",
            "--alphas",
            "0,0.1",
            "--steps",
            "60",
        ]
    };
    ok(&gstd(dir.path(), &args("a")));
    ok(&gstd(dir.path(), &args("b")));
    for f in [
        "sweep.csv",
        "sweep_summary.json",
        "sweep_summary.txt",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(dir.path().join("a/sweep.csv")).unwrap();
    assert!(csv.starts_with("theta_neut,alpha,seed,"));
    // 2 thetas x 2 alphas x 5 seeds derived from --seed.
    assert_eq!(csv.lines().count(), 1 + 20);
    assert!(csv.lines().skip(1).any(|l| l.contains(",5,")));

    let out = gstd(dir.path(), &["sweep", "--out-dir", "c"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn version_prints_formats() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&gstd(dir.path(), &["--format", "json", "version"]));
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["checkpoint_format"], "gstd-head-v1");
}
