use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::routing::post;
use axum::{Json, Router};
use mpt_cli::config::{Overrides, RunConfig};
use mpt_cli::report::{analyze, cmd_report, ReportError, ReportOptions};
use mpt_cli::run::{execute, transcript_path, TranscriptRecord};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn mpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpt")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SCRIPTED: &str = r#"
[dataset]
kind = "synthetic"
count = 10

[backend]
kind = "rules"
default = "The answer is a2."

[[backend.rules]]
last_user_contains = "Case 002:"
respond = "a0"

[run]
output_dir = "run"

[[methods]]
method = "mpt"
rounds = 2
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn validate_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCRIPTED);
    let out = mpt(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("mpt-r2"));
    assert!(stdout(&out).contains("10 calls per instance"));

    let missing = SCRIPTED.replace("kind = \"synthetic\"\ncount = 10", "kind = \"bbq\"\npath = \"no/such/dir\"");
    let cfg = write_config(dir.path(), &missing);
    let out = mpt(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("does not exist"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "not = [valid");
    assert_eq!(mpt(&["validate-config", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_report_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SCRIPTED);
    let cfg = cfg.to_str().unwrap();
    let out = mpt(&["run", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("10 records"));

    let run = dir.path().join("run");
    for f in ["manifest.json", "instances.jsonl", "config.toml", "failures.jsonl", "cache/responses.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let text = fs::read_to_string(run.join(transcript_path("mpt-r2", 0))).unwrap();
    let records: Vec<TranscriptRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r.transcript.turns.len() == 10));

    let again = mpt(&["run", "--config", cfg]);
    assert_eq!(again.status.code(), Some(0));
    assert!(stdout(&again).contains("0 sent to backend"), "{}", stdout(&again));
    assert_eq!(fs::read_to_string(run.join(transcript_path("mpt-r2", 0))).unwrap(), text);

    let run_s = run.to_str().unwrap();
    let report = mpt(&["report", run_s]);
    assert_eq!(report.status.code(), Some(0), "{}", stderr(&report));
    assert!(stdout(&report).contains("Acc_amb"));
    let files = ["metrics.json", "metrics.csv", "cost.csv", "table.txt"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(run.join("report").join(f)).unwrap()).collect();
    assert_eq!(mpt(&["report", run_s]).status.code(), Some(0));
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(run.join("report").join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let ttest = mpt(&["report", run_s, "--ttest", "mpt-r2,mpt-r2"]);
    assert_eq!(ttest.status.code(), Some(1));
    assert!(stderr(&ttest).contains("incompatible runs"), "{}", stderr(&ttest));

    let stats = mpt(&["cache", "stats", run_s]);
    assert_eq!(stats.status.code(), Some(0));
    assert!(stdout(&stats).contains("entries"));
    assert_eq!(mpt(&["cache", "gc", run_s]).status.code(), Some(0));
}

#[test]
fn report_matches_hand_computation() {
    // Items cycle ambiguous, ambiguous, biased-gold, counter-gold. The script
    // answers a2 (Unknown) everywhere except the first answer to Case 002,
    // which every MPT round then overrides; Direct keeps it.
    let dir = tempfile::tempdir().unwrap();
    let text = SCRIPTED.replace("rounds = 2", "rounds = 2\n\n[[methods]]\nmethod = \"direct\"");
    let config = RunConfig::parse(&text, Path::new("c.toml")).unwrap();
    let resolved = config.resolve(dir.path(), &Overrides::default()).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(execute(&resolved)).unwrap();
    let report = analyze(&resolved.output_dir, &ReportOptions::default()).unwrap();

    // 10 items: 6 ambiguous (all Unknown, correct); 4 disambiguated answered
    // Unknown except Case 002 under Direct (gold biased, answered a0).
    let direct = &report.method("direct-standard").unwrap().replicates[0].metrics;
    assert_eq!(direct.acc_amb(), Some(1.0));
    assert_eq!(direct.diffbias_amb(), Some(0.0));
    assert_eq!(direct.acc_dis(), Some(0.25));
    assert_eq!(direct.diffbias_dis(), Some(0.5));
    assert_eq!(direct.acc_avg(), 0.625);
    assert_eq!(direct.diffbias_avg(), 0.25);

    let mpt = &report.method("mpt-r2").unwrap().replicates[0].metrics;
    assert_eq!(mpt.acc_dis(), Some(0.0));
    assert_eq!(mpt.diffbias_dis(), Some(0.0));
    assert_eq!(mpt.cost_multiplier, 10.0);

    let csv = mpt_cli::report::metrics_csv(&report);
    assert!(csv.contains("direct-standard,standard,0,all,disambiguated,4,0,0.25,0.5\n"), "{csv}");
    assert!(csv.contains("mpt-r2,na,0,all,ambiguous,6,0,1,0\n"), "{csv}");
}

/// Answers vary with the decoding seed so replicates differ.
async fn seeded_server() -> String {
    async fn complete(Json(body): Json<Value>) -> Json<Value> {
        let digest = Sha256::digest(body.to_string().as_bytes());
        let answer = match digest[0] % 4 {
            0 => "I choose a0.",
            1 => "a1",
            _ => "The answer is a2.",
        };
        Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": answer}}]}))
    }
    let app = Router::new().route("/v1/chat/completions", post(complete));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

#[tokio::test(flavor = "multi_thread")]
async fn five_replicate_t_test() {
    let url = seeded_server().await;
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
[dataset]
kind = "synthetic"
count = 24

[backend]
kind = "openai"
endpoint = "{url}"
model = "fake"

[run]
replicates = 5
output_dir = "run"

[[methods]]
method = "mpt"
rounds = 2

[[methods]]
method = "mad"
"#
    );
    let resolved = RunConfig::parse(&text, Path::new("c.toml"))
        .unwrap()
        .resolve(dir.path(), &Overrides::default())
        .unwrap();
    let summary = execute(&resolved).await.unwrap();
    assert!(summary.failures.is_empty(), "{}", summary.describe());

    let options = ReportOptions {
        ttest: Some(("mpt-r2".into(), "mad-a3-r3".into())),
        out_dir: None,
    };
    let (report, _) = cmd_report(&resolved.output_dir, &options).unwrap();
    let comparison = report.comparison.as_ref().unwrap();
    assert_eq!(comparison.replicates, 5);
    let tested: Vec<_> = comparison.tests.iter().filter_map(|t| t.test).collect();
    assert!(!tested.is_empty());
    assert!(tested.iter().all(|t| t.df == 4 && (0.0..=1.0).contains(&t.p)));
    let mpt = report.method("mpt-r2").unwrap();
    assert_eq!(mpt.acc_avg_ci.unwrap().n, 5);
    assert_eq!(mpt.cost_multiplier, 10.0);
    let table = fs::read_to_string(resolved.output_dir.join("report/table.txt")).unwrap();
    assert!(table.contains("paired t-test mpt-r2 vs mad-a3-r3 over 5 replicates"));
    assert!(table.contains("df = 4"), "{table}");

    let unknown = ReportOptions {
        ttest: Some(("mpt-r2".into(), "nope".into())),
        out_dir: None,
    };
    assert!(matches!(analyze(&resolved.output_dir, &unknown), Err(ReportError::UnknownMethod(_))));
}

#[test]
fn plots_for_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = SCRIPTED.replace("rounds = 2", "rounds = 0");
    for extra in [
        "method = \"mpt\"\nrounds = 1",
        "method = \"mpt\"\nrounds = 2",
        "method = \"self_consistency\"\nk = 3",
        "method = \"self_consistency\"\nk = 5",
    ] {
        text.push_str(&format!("\n[[methods]]\n{extra}\n"));
    }
    let resolved = RunConfig::parse(&text, Path::new("c.toml"))
        .unwrap()
        .resolve(dir.path(), &Overrides::default())
        .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(execute(&resolved)).unwrap();
    let (_, files) = cmd_report(&resolved.output_dir, &ReportOptions::default()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"rounds_sweep.svg".to_owned()));
    assert!(names.contains(&"sc_composition.svg".to_owned()));
    let svg = fs::read_to_string(resolved.output_dir.join("report/rounds_sweep.svg")).unwrap();
    assert!(svg.contains("Rounds sweep"));
}

#[test]
fn missing_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        analyze(dir.path(), &ReportOptions::default()),
        Err(ReportError::MissingTranscripts(_))
    ));

    let cfg = write_config(dir.path(), SCRIPTED);
    assert_eq!(mpt(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let run = dir.path().join("run");
    fs::remove_file(run.join(transcript_path("mpt-r2", 0))).unwrap();
    let out = mpt(&["report", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing transcripts"));
}

#[test]
fn unreachable_backend_exit_code() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
[dataset]
kind = "synthetic"
count = 6

[backend]
kind = "openai"
endpoint = "http://{addr}/v1"
model = "fake"

[backend.retry]
max_attempts = 1
base_delay_ms = 1
max_delay_ms = 1

[run]
output_dir = "run"
concurrency = 1

[[methods]]
method = "direct"
"#
    );
    let cfg = write_config(dir.path(), &text);
    let out = mpt(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    assert!(stdout(&out).contains("6 failed"));
}
