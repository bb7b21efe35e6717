//! End-to-end checks of the installed binary: workflow plumbing, report
//! shapes, error reporting, leakage warnings, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lexclass"))
}

/// Four classes, each marked by a recurring keyword; six train, two
/// validation, and two test clauses per class, plus a whole-word vocabulary
/// covering every word after lowercasing.
fn write_fixture(dir: &Path) {
    let taxonomy = "id,name,count\n\
        0,Payments,10\n\
        1,Terminations,10\n\
        2,Insurances,10\n\
        3,Governing Laws,10\n";
    fs::write(dir.join("taxonomy.csv"), taxonomy).unwrap();

    let templates = [
        "The tenant shall {f} pay the monthly payment amount.",
        "Either party may {f} terminate this termination notice period.",
        "The contractor shall {f} maintain insurance coverage levels.",
        "This agreement is {f} governed by the governing law rules.",
    ];
    let fillers = ["hereby", "promptly", "reasonably", "duly"];
    let mut words = std::collections::BTreeSet::new();
    let mut write_split = |name: &str, per_class: usize, offset: usize| {
        let mut out = String::new();
        for (class, template) in templates.iter().enumerate() {
            for v in 0..per_class {
                let text = template.replace("{f}", fillers[(v + offset) % 4]);
                for word in text.to_lowercase().replace('.', " ").split_whitespace() {
                    words.insert(word.to_string());
                }
                out.push_str(&format!(
                    "{}\n",
                    serde_json::json!({ "text": text, "label": class })
                ));
            }
        }
        fs::write(dir.join(name), out).unwrap();
    };
    write_split("train.jsonl", 6, 0);
    write_split("validation.jsonl", 2, 1);
    write_split("test.jsonl", 2, 2);

    let mut vocab = String::from("[PAD]\n[UNK]\n[CLS]\n[SEP]\n");
    for word in &words {
        vocab.push_str(word);
        vocab.push('\n');
    }
    fs::write(dir.join("vocab.txt"), vocab).unwrap();
}

fn arg(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Shared flags: corpus, taxonomy, vocabulary, tiny encoder, deterministic.
fn base_args(dir: &Path, out: &str) -> Vec<String> {
    vec![
        "--train-file".into(),
        arg(dir, "train.jsonl"),
        "--validation-file".into(),
        arg(dir, "validation.jsonl"),
        "--test-file".into(),
        arg(dir, "test.jsonl"),
        "--taxonomy".into(),
        arg(dir, "taxonomy.csv"),
        "--vocab".into(),
        arg(dir, "vocab.txt"),
        "--out".into(),
        arg(dir, out),
        "--seed".into(),
        "7".into(),
        "--max-len".into(),
        "12".into(),
        "--num-layers".into(),
        "1".into(),
        "--hidden".into(),
        "32".into(),
        "--num-heads".into(),
        "2".into(),
        "--ff-dim".into(),
        "64".into(),
        "--dropout".into(),
        "0.0".into(),
        "--deterministic".into(),
    ]
}

fn run(args: &[String]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[String]) -> Output {
    let output = run(args);
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(args: &[String]) -> String {
    let output = run(args);
    assert!(!output.status.success(), "command unexpectedly succeeded");
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(dir: &Path, rest: &str) -> String {
    fs::read_to_string(dir.join(rest)).unwrap()
}

/// Runs `vocab` into `vocab_out` and returns the lexicon path.
fn build_lexicon(dir: &Path) -> PathBuf {
    let mut args = vec!["vocab".to_string()];
    args.extend(base_args(dir, "vocab_out"));
    args.extend(["--k".into(), "4".into()]);
    run_ok(&args);
    dir.join("vocab_out").join("lexicon.txt")
}

/// Trains into `train_out` (fast settings that fit the fixture) and returns
/// the checkpoint path.
fn train_model(dir: &Path, lexicon: &Path) -> PathBuf {
    let mut args = vec!["train".to_string()];
    args.extend(base_args(dir, "train_out"));
    args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--epochs".into(),
        "100".into(),
        "--batch-size".into(),
        "24".into(),
        "--learning-rate".into(),
        "0.05".into(),
    ]);
    run_ok(&args);
    dir.join("train_out").join("checkpoint.lpb")
}

#[test]
fn stats_writes_counts_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut args = vec!["stats".to_string()];
    args.extend(base_args(dir.path(), "stats_out"));
    run_ok(&args);
    let counts = read(dir.path(), "stats_out/class_counts.csv");
    assert!(counts.starts_with("class_id,name,count\n"));
    assert!(counts.contains("0,Payments,10"));
    assert!(counts.contains("3,Governing Laws,10"));
    let histogram = read(dir.path(), "stats_out/length_histogram.csv");
    assert!(histogram.starts_with("bucket_start,count\n"));
    let total: u64 = histogram
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 40, "histogram mass covers all provided splits");
    let per_class = read(dir.path(), "stats_out/length_histogram_per_class.csv");
    assert!(per_class.starts_with("class_id,bucket_start,count\n"));
    assert!(dir.path().join("stats_out/config.resolved").exists());
}

#[test]
fn missing_corpus_file_fails_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut args = vec!["stats".to_string()];
    args.extend(base_args(dir.path(), "stats_out"));
    let position = args.iter().position(|a| a == "--train-file").unwrap();
    args[position + 1] = arg(dir.path(), "absent.jsonl");
    let stderr = run_err(&args);
    assert!(stderr.contains("absent.jsonl"), "stderr: {stderr}");
    assert!(
        !dir.path().join("stats_out").exists(),
        "failed command must not leave outputs"
    );
}

#[test]
fn vocab_is_deterministic_and_headed_by_k() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let first = fs::read(&lexicon).unwrap();
    assert!(first.starts_with(b"K=4\n"));
    build_lexicon(dir.path());
    assert_eq!(
        first,
        fs::read(&lexicon).unwrap(),
        "rerun is byte-identical"
    );
}

#[test]
fn train_without_lexicon_at_stage_three_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut args = vec!["train".to_string()];
    args.extend(base_args(dir.path(), "train_out"));
    let stderr = run_err(&args);
    assert!(stderr.contains("--lexicon"), "stderr: {stderr}");
    assert!(!dir.path().join("train_out").exists());
}

#[test]
fn full_workflow_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let checkpoint = train_model(dir.path(), &lexicon);

    let log = read(dir.path(), "train_out/epoch_log.csv");
    assert!(log.starts_with("epoch,train_loss,val_micro_f1,val_macro_f1,seconds\n"));
    assert_eq!(log.lines().count(), 101, "header plus one row per epoch");
    assert!(
        log.lines().skip(1).all(|l| l.ends_with(",0.000")),
        "deterministic mode zeroes the seconds column"
    );
    let magic = fs::read(&checkpoint).unwrap();
    assert_eq!(&magic[..4], b"LPB1");

    let mut eval_args = vec!["eval".to_string()];
    eval_args.extend(base_args(dir.path(), "eval_out"));
    eval_args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
    ]);
    run_ok(&eval_args);
    let summary = read(dir.path(), "eval_out/summary.csv");
    assert!(summary.starts_with("micro_f1,macro_f1,accuracy,n_examples\n"));
    assert!(summary.contains("1.000000,1.000000,1.000000,8"));
    let per_class = read(dir.path(), "eval_out/per_class.csv");
    assert_eq!(
        per_class.lines().count(),
        5,
        "header plus one row per class"
    );
    let confusion = read(dir.path(), "eval_out/confusion.csv");
    assert_eq!(confusion.lines().count(), 4);
    let audit = read(dir.path(), "eval_out/audit.csv");
    assert_eq!(
        audit, "class_id,reported_f1,harmonic_f1,deviation\n",
        "self-produced reports are internally consistent"
    );

    let input = dir.path().join("input.jsonl");
    fs::write(
        &input,
        format!(
            "{}\n{}\n",
            serde_json::json!({ "text": "The tenant shall hereby pay the monthly payment amount." }),
            serde_json::json!({ "text": "This agreement is duly governed by the governing law rules." }),
        ),
    )
    .unwrap();
    let mut predict_args = vec!["predict".to_string()];
    predict_args.extend(base_args(dir.path(), "predict_out"));
    predict_args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
        "--input".into(),
        input.display().to_string(),
    ]);
    run_ok(&predict_args);
    let predictions = read(dir.path(), "predict_out/predictions.csv");
    let rows: Vec<&str> = predictions.lines().collect();
    assert_eq!(rows.len(), 2, "one row per input, no header");
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 3);
        let probability: f64 = fields[2].parse().unwrap();
        assert!(probability > 0.0 && probability <= 1.0);
    }
    assert!(
        rows[0].starts_with("0,Payments,"),
        "train clause: {}",
        rows[0]
    );
    assert!(rows[1].starts_with("3,Governing Laws,"), "{}", rows[1]);
}

#[test]
fn eval_with_wrong_dimensions_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let checkpoint = train_model(dir.path(), &lexicon);
    let mut args = vec!["eval".to_string()];
    args.extend(base_args(dir.path(), "eval_bad"));
    args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
    ]);
    let position = args.iter().position(|a| a == "--hidden").unwrap();
    args[position + 1] = "16".into();
    let stderr = run_err(&args);
    assert!(
        stderr.contains("embeddings.token"),
        "shape error names the first mismatched tensor: {stderr}"
    );
}

#[test]
fn predict_empty_input_yields_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let checkpoint = train_model(dir.path(), &lexicon);
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let mut args = vec!["predict".to_string()];
    args.extend(base_args(dir.path(), "predict_empty"));
    args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
        "--input".into(),
        input.display().to_string(),
    ]);
    run_ok(&args);
    assert_eq!(read(dir.path(), "predict_empty/predictions.csv"), "");
}

#[test]
fn oracle_predict_without_labels_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let checkpoint = train_model(dir.path(), &lexicon);
    let input = dir.path().join("mixed.jsonl");
    fs::write(
        &input,
        format!(
            "{}\n{}\n",
            serde_json::json!({ "text": "pay the payment", "label": 0 }),
            serde_json::json!({ "text": "maintain insurance" }),
        ),
    )
    .unwrap();
    let mut args = vec!["predict".to_string()];
    args.extend(base_args(dir.path(), "predict_oracle"));
    args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
        "--input".into(),
        input.display().to_string(),
        "--filter-mode".into(),
        "oracle".into(),
    ]);
    let stderr = run_err(&args);
    assert!(stderr.contains("label"), "stderr: {stderr}");
    assert!(
        stderr.contains(":2"),
        "points at the offending line: {stderr}"
    );
}

#[test]
fn oracle_reports_carry_a_leak_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    let checkpoint = train_model(dir.path(), &lexicon);
    let mut args = vec!["eval".to_string()];
    args.extend(base_args(dir.path(), "eval_oracle"));
    args.extend([
        "--lexicon".into(),
        lexicon.display().to_string(),
        "--checkpoint".into(),
        checkpoint.display().to_string(),
        "--filter-mode".into(),
        "oracle".into(),
    ]);
    let output = run_ok(&args);
    assert!(String::from_utf8_lossy(&output.stderr).contains("oracle"));
    for report in ["summary.csv", "per_class.csv", "confusion.csv", "audit.csv"] {
        let text = read(dir.path(), &format!("eval_oracle/{report}"));
        assert!(
            text.starts_with("# WARNING"),
            "{report} lacks the leak warning"
        );
    }
}

#[test]
fn train_rerun_from_resolved_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lexicon = build_lexicon(dir.path());
    train_model(dir.path(), &lexicon);
    let out = dir.path().join("train_out");
    let reference: Vec<(String, Vec<u8>)> = ["checkpoint.lpb", "config.resolved", "epoch_log.csv"]
        .iter()
        .map(|name| (name.to_string(), fs::read(out.join(name)).unwrap()))
        .collect();
    let config = out.join("config.resolved");
    run_ok(&[
        "train".to_string(),
        "--config".into(),
        config.display().to_string(),
    ]);
    for (name, bytes) in &reference {
        assert_eq!(
            &fs::read(out.join(name)).unwrap(),
            bytes,
            "{name} changed across the rerun"
        );
    }
}

#[test]
fn ablate_emits_three_stage_rows_and_reference_footer() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut args = vec!["ablate".to_string()];
    args.extend(base_args(dir.path(), "ablate_out"));
    args.extend([
        "--k".into(),
        "4".into(),
        "--epochs".into(),
        "2".into(),
        "--batch-size".into(),
        "24".into(),
        "--learning-rate".into(),
        "0.05".into(),
    ]);
    run_ok(&args);
    let table = read(dir.path(), "ablate_out/ablation.csv");
    let first = fs::read(dir.path().join("ablate_out/ablation.csv")).unwrap();
    assert!(table.starts_with("stage,micro_f1,macro_f1,filter_mode\n"));
    let data_rows: Vec<&str> = table
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .collect();
    assert_eq!(data_rows.len(), 3);
    assert!(data_rows[0].starts_with("lowercase,"));
    assert!(data_rows[1].starts_with("lowercase+strip,"));
    assert!(data_rows[2].starts_with("lowercase+strip+filter,"));
    assert!(data_rows[2].ends_with(",union"));
    let footer: String = table.lines().filter(|l| l.starts_with('#')).collect();
    for target in ["0.74", "0.80", "0.93"] {
        assert!(footer.contains(target), "footer cites {target}: {footer}");
    }
    assert!(footer.contains("not assertions"));

    run_ok(&args);
    assert_eq!(
        first,
        fs::read(dir.path().join("ablate_out/ablation.csv")).unwrap(),
        "same-seed rerun reproduces the table"
    );
}
