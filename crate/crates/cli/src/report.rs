//! Metric reports over a finished run directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mpt_core::datasets::{load_instances, DatasetError};
use mpt_core::domain::{MethodKind, MethodSpec, Prediction, Variant};
use mpt_core::metrics::{
    build_report, confidence_interval, paired_t_test, CountTable, Interval, MetricReport,
    MetricsError, StatsError, TTest,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::plots;
use crate::run::{Manifest, TranscriptRecord, INSTANCES_FILE, MANIFEST_FILE};

pub const REPORT_DIR: &str = "report";
const CI_LEVEL: f64 = 0.95;

type MetricFn = fn(&MetricReport) -> f64;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing transcripts: {0}")]
    MissingTranscripts(String),
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error("no method labelled {0} in this run")]
    UnknownMethod(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot draw {0}")]
    Plot(String),
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Pair of method labels to compare with a paired t-test.
    pub ttest: Option<(String, String)>,
    /// Defaults to `<run_dir>/report`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: u32,
    /// Instances without a transcript, scored as Invalid.
    pub missing: usize,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub spec: MethodSpec,
    pub call_budget: u64,
    pub replicates: Vec<ReplicateReport>,
    pub acc_avg_ci: Option<Interval>,
    pub diffbias_avg_ci: Option<Interval>,
    pub calls_total: u64,
    pub queries: u64,
    pub cost_multiplier: f64,
}

impl MethodReport {
    pub fn mean_acc_avg(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.metrics.acc_avg()))
    }

    pub fn mean_diffbias_avg(&self) -> f64 {
        mean(self.replicates.iter().map(|r| r.metrics.diffbias_avg()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: String,
    pub mean_difference: f64,
    pub test: Option<TTest>,
    /// Set when the test is undefined, e.g. identical replicate scores.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub replicates: usize,
    pub tests: Vec<MetricTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instance_count: usize,
    pub replicates: u32,
    pub methods: Vec<MethodReport>,
    pub comparison: Option<Comparison>,
}

impl RunReport {
    pub fn method(&self, label: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.label == label)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_owned(),
        source,
    }
}

fn read_records(path: &Path) -> Result<Vec<TranscriptRecord>, ReportError> {
    let text = fs::read_to_string(path)
        .map_err(|_| ReportError::MissingTranscripts(path.display().to_string()))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                ReportError::MissingTranscripts(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Scores every method and replicate recorded in `run_dir`. Pure with
/// respect to the directory contents.
pub fn analyze(run_dir: &Path, options: &ReportOptions) -> Result<RunReport, ReportError> {
    let manifest = Manifest::load(run_dir).map_err(|e| {
        ReportError::MissingTranscripts(format!("{}: {e}", run_dir.join(MANIFEST_FILE).display()))
    })?;
    let instances_path = run_dir.join(INSTANCES_FILE);
    let bytes = fs::read(&instances_path).map_err(io(&instances_path))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.instances_sha256 {
        return Err(ReportError::IncompatibleRuns(
            "instances.jsonl does not match the manifest".into(),
        ));
    }
    let instances = load_instances(&instances_path)?;
    let known: HashMap<&str, usize> = instances.iter().enumerate().map(|(i, x)| (x.id(), i)).collect();

    let mut methods = Vec::new();
    for m in &manifest.methods {
        if m.transcripts.is_empty() {
            return Err(ReportError::MissingTranscripts(m.label.clone()));
        }
        let mut replicates = Vec::new();
        for (replicate, rel) in m.transcripts.iter().enumerate() {
            let records = read_records(&run_dir.join(rel))?;
            let mut predictions = vec![None; instances.len()];
            let mut calls = 0;
            for r in records {
                let index = *known.get(r.instance_id.as_str()).ok_or_else(|| {
                    ReportError::IncompatibleRuns(format!("{rel} names unknown instance {}", r.instance_id))
                })?;
                predictions[index] = Some(r.final_answer);
                calls += r.calls;
            }
            let missing = predictions.iter().filter(|p| p.is_none()).count();
            let scored = instances
                .iter()
                .zip(predictions)
                .map(|(i, p)| (i, p.unwrap_or(Prediction::Invalid)));
            replicates.push(ReplicateReport {
                replicate: replicate as u32,
                missing,
                metrics: build_report(scored, calls)?,
            });
        }
        let interval = |f: MetricFn| {
            let values: Vec<f64> = replicates.iter().map(|r| f(&r.metrics)).collect();
            confidence_interval(&values, CI_LEVEL).ok()
        };
        let calls_total = replicates.iter().map(|r| r.metrics.calls_total).sum::<u64>();
        let queries = (instances.len() * replicates.len()) as u64;
        methods.push(MethodReport {
            label: m.label.clone(),
            spec: m.spec.clone(),
            call_budget: m.call_budget,
            acc_avg_ci: interval(MetricReport::acc_avg),
            diffbias_avg_ci: interval(MetricReport::diffbias_avg),
            calls_total,
            queries,
            cost_multiplier: calls_total as f64 / queries as f64,
            replicates,
        });
    }

    let mut report = RunReport {
        instance_count: instances.len(),
        replicates: manifest.replicates,
        methods,
        comparison: None,
    };
    if let Some((a, b)) = &options.ttest {
        report.comparison = Some(compare(&report, a, b)?);
    }
    Ok(report)
}

fn compare(report: &RunReport, a: &str, b: &str) -> Result<Comparison, ReportError> {
    let find = |label: &str| report.method(label).ok_or_else(|| ReportError::UnknownMethod(label.to_owned()));
    let (ma, mb) = (find(a)?, find(b)?);
    let n = ma.replicates.len();
    if n < 2 || mb.replicates.len() != n {
        return Err(ReportError::IncompatibleRuns(format!(
            "a paired t-test needs at least 2 replicates of each method ({a}: {}, {b}: {})",
            n,
            mb.replicates.len()
        )));
    }
    let metrics: [(&str, MetricFn); 2] = [
        ("acc_avg", MetricReport::acc_avg),
        ("diffbias_avg", MetricReport::diffbias_avg),
    ];
    let tests = metrics
        .iter()
        .map(|(name, f)| {
            let xs: Vec<f64> = ma.replicates.iter().map(|r| f(&r.metrics)).collect();
            let ys: Vec<f64> = mb.replicates.iter().map(|r| f(&r.metrics)).collect();
            let mean_difference = mean(xs.iter().zip(&ys).map(|(x, y)| x - y));
            let (test, note) = match paired_t_test(&xs, &ys) {
                Ok(t) => (Some(t), None),
                Err(e @ StatsError::DegenerateVariance) => (None, Some(e.to_string())),
                Err(e) => return Err(ReportError::IncompatibleRuns(e.to_string())),
            };
            Ok(MetricTest {
                metric: (*name).to_owned(),
                mean_difference,
                test,
                note,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Comparison {
        a: a.to_owned(),
        b: b.to_owned(),
        replicates: n,
        tests,
    })
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Standard => "standard",
        Variant::Debias => "debias",
        Variant::Persona => "persona",
        Variant::NotApplicable => "na",
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per method, variant, replicate, category and split.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from("method,variant,replicate,category,split,n,invalid,accuracy,diff_bias\n");
    for m in &report.methods {
        let variant = variant_name(m.spec.variant);
        for r in &m.replicates {
            let mut tables: Vec<(&str, CountTable, Option<mpt_core::metrics::Scores>)> =
                vec![("all", r.metrics.counts, Some(r.metrics.overall))];
            for (name, c) in &r.metrics.per_category {
                tables.push((name, c.counts, c.scores));
            }
            for (category, counts, scores) in tables {
                let rows = [
                    (
                        "ambiguous",
                        counts.n_a(),
                        counts.n_invalid_amb,
                        scores.and_then(|s| s.acc_amb),
                        scores.and_then(|s| s.diffbias_amb),
                    ),
                    (
                        "disambiguated",
                        counts.n_b() + counts.n_c(),
                        counts.n_invalid_b + counts.n_invalid_c,
                        scores.and_then(|s| s.acc_dis),
                        scores.and_then(|s| s.diffbias_dis),
                    ),
                    (
                        "average",
                        counts.total(),
                        counts.invalid(),
                        scores.map(|s| s.acc_avg),
                        scores.map(|s| s.diffbias_avg),
                    ),
                ];
                for (split, n, invalid, acc, diff) in rows {
                    if n == 0 {
                        continue;
                    }
                    let _ = writeln!(
                        out,
                        "{},{variant},{},{category},{split},{n},{invalid},{},{}",
                        m.label,
                        r.replicate,
                        cell(acc),
                        cell(diff)
                    );
                }
            }
        }
    }
    out
}

/// Completions per query for each method, next to the closed-form budget.
pub fn cost_csv(report: &RunReport) -> String {
    let mut out = String::from("method,budget_per_query,queries,calls_total,cost_multiplier\n");
    for m in &report.methods {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.label, m.call_budget, m.queries, m.calls_total, m.cost_multiplier
        );
    }
    out
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

/// Fixed-width summary: accuracy (higher is better) and diff-bias (lower
/// magnitude is better), averaged over replicates.
pub fn text_table(report: &RunReport) -> String {
    let header = [
        "method", "Acc_amb", "Acc_dis", "Acc_avg", "Diff_amb", "Diff_dis", "Diff_avg", "calls/q",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for m in &report.methods {
        let reps = &m.replicates;
        let with_ci = |mean: f64, ci: Option<Interval>| match ci {
            Some(ci) => format!("{mean:.4}±{:.4}", ci.halfwidth),
            None => format!("{mean:.4}"),
        };
        rows.push(vec![
            m.label.clone(),
            fmt4(mean_opt(reps.iter().map(|r| r.metrics.acc_amb()))),
            fmt4(mean_opt(reps.iter().map(|r| r.metrics.acc_dis()))),
            with_ci(m.mean_acc_avg(), m.acc_avg_ci),
            fmt4(mean_opt(reps.iter().map(|r| r.metrics.diffbias_amb()))),
            fmt4(mean_opt(reps.iter().map(|r| r.metrics.diffbias_dis()))),
            with_ci(m.mean_diffbias_avg(), m.diffbias_avg_ci),
            format!("{:.2}", m.cost_multiplier),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = format!(
        "{} instances, {} replicate(s); intervals are {:.0}% t intervals over replicates\n\n",
        report.instance_count,
        report.replicates,
        CI_LEVEL * 100.0
    );
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| {
                let pad = w - v.chars().count();
                if c == 0 {
                    format!("{v}{}", " ".repeat(pad))
                } else {
                    format!("{}{v}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    let missing: usize = report.methods.iter().flat_map(|m| &m.replicates).map(|r| r.missing).sum();
    if missing > 0 {
        let _ = writeln!(out, "\n{missing} missing transcript(s) scored as Invalid");
    }
    if let Some(c) = &report.comparison {
        let _ = writeln!(out, "\npaired t-test {} vs {} over {} replicates", c.a, c.b, c.replicates);
        for t in &c.tests {
            match (&t.test, &t.note) {
                (Some(test), _) => {
                    let _ = writeln!(
                        out,
                        "  {}: mean diff {:+.4}, t = {:.4}, df = {}, p = {:.4e}",
                        t.metric, t.mean_difference, test.t, test.df, test.p
                    );
                }
                (None, note) => {
                    let _ = writeln!(
                        out,
                        "  {}: mean diff {:+.4}, {}",
                        t.metric,
                        t.mean_difference,
                        note.as_deref().unwrap_or("not tested")
                    );
                }
            }
        }
    }
    out
}

/// Points for the rounds sweep: MPT methods keyed by (neutral, rounds).
pub fn rounds_sweep(report: &RunReport) -> BTreeMap<bool, Vec<(u32, f64, f64)>> {
    let mut series: BTreeMap<bool, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for m in report.methods.iter().filter(|m| m.spec.method == MethodKind::Mpt) {
        series
            .entry(m.spec.include_neutral)
            .or_default()
            .push((m.spec.rounds, m.mean_acc_avg(), m.mean_diffbias_avg()));
    }
    for points in series.values_mut() {
        points.sort_by_key(|p| p.0);
    }
    series.retain(|_, p| p.len() >= 2);
    series
}

/// Points for the self-consistency composition: accuracy against k for
/// plain SC and MPT+SC.
pub fn sc_composition(report: &RunReport) -> BTreeMap<String, Vec<(u32, f64, f64)>> {
    let mut series: BTreeMap<String, Vec<(u32, f64, f64)>> = BTreeMap::new();
    for m in &report.methods {
        let name = match m.spec.method {
            MethodKind::SelfConsistency => format!("SC ({})", variant_name(m.spec.variant)),
            MethodKind::MptSelfConsistency => format!("MPT+SC (R={})", m.spec.rounds),
            _ => continue,
        };
        series
            .entry(name)
            .or_default()
            .push((m.spec.k, m.mean_acc_avg(), m.mean_diffbias_avg()));
    }
    for points in series.values_mut() {
        points.sort_by_key(|p| p.0);
    }
    series.retain(|_, p| p.len() >= 2);
    series
}

/// Writes every report artifact and returns the files written.
pub fn write_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut files = vec![
        ("metrics.json", serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        ("metrics.csv", metrics_csv(report)),
        ("cost.csv", cost_csv(report)),
        ("table.txt", text_table(report)),
    ];
    let sweep = rounds_sweep(report);
    if !sweep.is_empty() {
        let series = sweep
            .into_iter()
            .map(|(neutral, p)| (if neutral { "with neutral" } else { "without neutral" }.to_owned(), p))
            .collect();
        files.push(("rounds_sweep.svg", plots::svg_chart("Rounds sweep", "review rounds R", &series)?));
    }
    let sc = sc_composition(report);
    if !sc.is_empty() {
        files.push(("sc_composition.svg", plots::svg_chart("Self-consistency composition", "samples k", &sc)?));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Analyzes `run_dir` and writes the report files.
pub fn cmd_report(run_dir: &Path, options: &ReportOptions) -> Result<(RunReport, Vec<PathBuf>), ReportError> {
    let report = analyze(run_dir, options)?;
    let out_dir = options.out_dir.clone().unwrap_or_else(|| run_dir.join(REPORT_DIR));
    let files = write_report(&report, &out_dir)?;
    Ok((report, files))
}
