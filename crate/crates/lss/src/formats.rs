//! Readers and writers for every file the CLI consumes or produces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lss_core::bench::{BenchCandidate, BenchQuery, BenchSummary, QueryReport, ScoreTable, Variant};
use lss_core::evolution::{Check, EvolveConfig, MutationOp, ReplayTask, TaskSuite};
use lss_core::runtime::{Pattern, ReasonerResponse, RoleBundle, Transcript};
use lss_core::taskpool::ResultMemory;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsstore::split_front_matter;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::malformed(path, e.line(), e.to_string())
}

#[derive(Deserialize)]
struct RawQuery {
    query_id: String,
    local_context: String,
    candidates: Vec<BenchCandidate>,
    gold_id: Option<String>,
}

/// One JSON query record per line; blank lines are skipped.
pub fn parse_corpus(path: &Path, text: &str) -> Result<Vec<BenchQuery>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let raw: RawQuery = serde_json::from_str(line).map_err(|e| Error::malformed(path, n, e.to_string()))?;
        let gold = raw.gold_id.ok_or_else(|| Error::malformed(path, n, "missing gold_id"))?;
        let q = BenchQuery::new(raw.query_id, raw.local_context, raw.candidates, gold)
            .map_err(|e| Error::malformed(path, n, e.to_string()))?;
        out.push(q);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<BenchQuery>> {
    parse_corpus(path, &read_text(path)?)
}

#[derive(Serialize)]
struct QueryLine<'a> {
    query_id: &'a str,
    local_context: &'a str,
    candidates: &'a [BenchCandidate],
    gold_id: &'a str,
}

pub fn render_corpus(queries: &[BenchQuery]) -> String {
    let mut out = String::new();
    for q in queries {
        let line = QueryLine {
            query_id: &q.query_id,
            local_context: &q.local_context,
            candidates: &q.candidates,
            gold_id: &q.gold_id,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain strings serialize"));
        out.push('\n');
    }
    out
}

/// `{"<query_id>": {"<candidate_id>": score}}`
pub fn load_score_table(path: &Path) -> Result<ScoreTable> {
    let text = read_text(path)?;
    let scores: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
    Ok(ScoreTable { scores })
}

pub const REPORT_HEADER: &str = "query_id,variant,hit_at_k,top1,worker_tokens,lens_tokens,index_tokens,total_tokens";
pub const SUMMARY_HEADER: &str =
    "summary,variant,queries,hit_at_k_rate,top1_rate,avg_worker_tokens,avg_lens_tokens,avg_index_tokens,avg_total_tokens";

/// One CSV data row: a [`QueryReport`] without its selected ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub query_id: String,
    pub variant: Variant,
    pub hit_at_k: bool,
    pub top1: bool,
    pub worker_tokens: u64,
    pub lens_tokens: u64,
    pub index_tokens: u64,
    pub total_tokens: u64,
}

impl From<&QueryReport> for ReportRow {
    fn from(r: &QueryReport) -> Self {
        ReportRow {
            query_id: r.query_id.clone(),
            variant: r.variant,
            hit_at_k: r.hit_at_k,
            top1: r.top1,
            worker_tokens: r.worker_input_tokens,
            lens_tokens: r.lens_tokens,
            index_tokens: r.index_tokens,
            total_tokens: r.total_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub queries: usize,
    pub hit_at_k_rate: f64,
    pub top1_rate: f64,
    pub avg_worker_tokens: f64,
    pub avg_lens_tokens: f64,
    pub avg_index_tokens: f64,
    pub avg_total_tokens: f64,
}

impl From<&BenchSummary> for SummaryRow {
    fn from(s: &BenchSummary) -> Self {
        SummaryRow {
            variant: s.variant.map_or("mixed", Variant::as_str).to_string(),
            queries: s.queries,
            hit_at_k_rate: s.hit_at_k_rate,
            top1_rate: s.top1_rate,
            avg_worker_tokens: s.avg_worker_tokens,
            avg_lens_tokens: s.avg_lens_tokens,
            avg_index_tokens: s.avg_index_tokens,
            avg_total_tokens: s.avg_total_tokens,
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Data rows for every trace, a blank line, then one summary row per
/// summary.
pub fn render_report(summaries: &[BenchSummary]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Usage(e.to_string());
    w.write_record(REPORT_HEADER.split(',')).map_err(csv_err)?;
    for s in summaries {
        for r in &s.traces {
            let row = ReportRow::from(r);
            w.write_record([
                row.query_id.clone(),
                row.variant.as_str().to_string(),
                flag(row.hit_at_k).to_string(),
                flag(row.top1).to_string(),
                row.worker_tokens.to_string(),
                row.lens_tokens.to_string(),
                row.index_tokens.to_string(),
                row.total_tokens.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let mut out = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    out.push(b'\n');
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(SUMMARY_HEADER.split(',')).map_err(csv_err)?;
    for s in summaries {
        let row = SummaryRow::from(s);
        w.write_record([
            "summary".to_string(),
            row.variant,
            row.queries.to_string(),
            row.hit_at_k_rate.to_string(),
            row.top1_rate.to_string(),
            row.avg_worker_tokens.to_string(),
            row.avg_lens_tokens.to_string(),
            row.avg_index_tokens.to_string(),
            row.avg_total_tokens.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

pub fn parse_report(path: &Path, text: &str) -> Result<(Vec<ReportRow>, Vec<SummaryRow>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let (mut rows, mut summaries) = (Vec::new(), Vec::new());
    let mut in_summary = false;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(path, i + 1, e.to_string()))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let bad = |m: &str| Error::malformed(path, line, m.to_string());
        let joined: Vec<&str> = rec.iter().collect();
        if i == 0 {
            if joined.join(",") != REPORT_HEADER {
                return Err(bad("unexpected header"));
            }
            continue;
        }
        if joined.join(",") == SUMMARY_HEADER {
            in_summary = true;
            continue;
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad integer"));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        if in_summary {
            if joined.len() != 9 {
                return Err(bad("summary row needs 9 fields"));
            }
            summaries.push(SummaryRow {
                variant: joined[1].to_string(),
                queries: num(joined[2])? as usize,
                hit_at_k_rate: real(joined[3])?,
                top1_rate: real(joined[4])?,
                avg_worker_tokens: real(joined[5])?,
                avg_lens_tokens: real(joined[6])?,
                avg_index_tokens: real(joined[7])?,
                avg_total_tokens: real(joined[8])?,
            });
        } else {
            if joined.len() != 8 {
                return Err(bad("data row needs 8 fields"));
            }
            let b = |s: &str| match s {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(bad("flag must be 0 or 1")),
            };
            rows.push(ReportRow {
                query_id: joined[0].to_string(),
                variant: joined[1].parse().map_err(|_| bad("unknown variant"))?,
                hit_at_k: b(joined[2])?,
                top1: b(joined[3])?,
                worker_tokens: num(joined[4])?,
                lens_tokens: num(joined[5])?,
                index_tokens: num(joined[6])?,
                total_tokens: num(joined[7])?,
            });
        }
    }
    Ok((rows, summaries))
}

#[derive(Serialize, Deserialize)]
pub struct JsonReport {
    pub seed: u64,
    pub k: usize,
    pub brief_limit: usize,
    pub read_limit: usize,
    pub summaries: Vec<BenchSummary>,
}

pub fn emit_report(summaries: &[BenchSummary], path: &Path, json: Option<(&Path, &JsonReport)>) -> Result<()> {
    write_text(path, &render_report(summaries)?)?;
    if let Some((jpath, doc)) = json {
        let text = serde_json::to_string_pretty(doc).map_err(|e| Error::Usage(e.to_string()))?;
        write_text(jpath, &text)?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ResponseSpec {
    Text(String),
    Full(ReasonerResponse),
}

impl From<ResponseSpec> for ReasonerResponse {
    fn from(r: ResponseSpec) -> Self {
        match r {
            ResponseSpec::Text(t) => ReasonerResponse::text(t),
            ResponseSpec::Full(r) => r,
        }
    }
}

/// A list of responses in call order, or an object keyed by call index.
/// Each response is a string or `{"text": ..., "actions": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptSpec {
    List(Vec<ResponseSpec>),
    Keyed(BTreeMap<String, ResponseSpec>),
}

impl TranscriptSpec {
    fn into_transcript(self, path: &Path) -> Result<Transcript> {
        let responses = match self {
            TranscriptSpec::List(v) => v.into_iter().enumerate().map(|(i, r)| (i as u64, r.into())).collect(),
            TranscriptSpec::Keyed(m) => m
                .into_iter()
                .map(|(k, r)| {
                    let step = k.parse::<u64>().map_err(|_| Error::malformed(path, 0, format!("step key `{k}` is not a number")))?;
                    Ok((step, r.into()))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Transcript { responses })
    }
}

pub fn parse_transcript(path: &Path, text: &str) -> Result<Transcript> {
    let spec: TranscriptSpec = serde_json::from_str(text).map_err(|e| json_error(path, &e))?;
    spec.into_transcript(path)
}

pub fn load_transcript(path: &Path) -> Result<Transcript> {
    parse_transcript(path, &read_text(path)?)
}

/// A role bundle plus the cycle settings it is run with.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleFile {
    pub bundle: RoleBundle,
    pub budget: u64,
    pub max_steps: usize,
    pub hooks: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    name: String,
    #[serde(default)]
    roles: BTreeMap<String, String>,
    #[serde(default = "default_budget")]
    budget: u64,
    #[serde(default = "default_max_steps")]
    max_steps: usize,
    #[serde(default)]
    hooks: Vec<String>,
}

fn default_budget() -> u64 {
    2048
}

fn default_max_steps() -> usize {
    8
}

pub fn parse_bundle(path: &Path, text: &str) -> Result<BundleFile> {
    let raw: RawBundle = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::malformed(path, line, e.message().to_string())
    })?;
    let mut bundle = RoleBundle::new(raw.name);
    for (pattern, process) in raw.roles {
        let p: Pattern = pattern.parse().map_err(|e: lss_core::Error| Error::malformed(path, 0, e.to_string()))?;
        bundle = bundle.assign(p, process);
    }
    Ok(BundleFile { bundle, budget: raw.budget, max_steps: raw.max_steps, hooks: raw.hooks })
}

pub fn load_bundle(path: &Path) -> Result<BundleFile> {
    parse_bundle(path, &read_text(path)?)
}

/// Settings read from an `evolve.md` front matter.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveSpec {
    pub config: EvolveConfig,
    pub task_suite: Option<String>,
}

/// Recognised keys: `cap`, `pass_threshold`, `mutation_ops` (comma
/// separated) and `task_suite`. Others, such as `kind` and `name`, pass.
pub fn parse_evolve_md(path: &Path, text: &str) -> Result<EvolveSpec> {
    let (pairs, _) = split_front_matter(text).map_err(|(line, m)| Error::malformed(path, line, m))?;
    let mut spec = EvolveSpec { config: EvolveConfig::default(), task_suite: None };
    for (line, key, value) in pairs {
        let bad = |m: String| Error::malformed(path, line, m);
        let value = value.trim();
        match key.as_str() {
            "cap" => {
                spec.config.cap = value
                    .parse()
                    .ok()
                    .filter(|c| *c >= 1)
                    .ok_or_else(|| bad(format!("cap must be a positive integer, got `{value}`")))?
            }
            "pass_threshold" => {
                spec.config.pass_threshold = value
                    .parse()
                    .ok()
                    .filter(|t: &f64| (0.0..=1.0).contains(t))
                    .ok_or_else(|| bad(format!("pass_threshold must lie in [0, 1], got `{value}`")))?
            }
            "mutation_ops" => {
                spec.config.mutation_ops = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<MutationOp>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<_>>()?;
                if spec.config.mutation_ops.is_empty() {
                    return Err(bad("mutation_ops is empty".into()));
                }
            }
            "task_suite" => spec.task_suite = Some(value.to_string()),
            _ => {}
        }
    }
    Ok(spec)
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum CheckSpec {
    OutputContains(String),
    OutputLacks(String),
    ViewContains(String),
    ArtifactContains { id: String, text: String },
    ArtifactLacks { id: String, text: String },
}

impl From<CheckSpec> for Check {
    fn from(c: CheckSpec) -> Self {
        match c {
            CheckSpec::OutputContains(t) => Check::OutputContains(t),
            CheckSpec::OutputLacks(t) => Check::OutputLacks(t),
            CheckSpec::ViewContains(t) => Check::ViewContains(t),
            CheckSpec::ArtifactContains { id, text } => Check::ArtifactContains { id, text },
            CheckSpec::ArtifactLacks { id, text } => Check::ArtifactLacks { id, text },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSpec {
    id: String,
    intent: String,
    transcript: TranscriptSpec,
    #[serde(default = "default_budget")]
    budget: u64,
    #[serde(default = "default_max_steps")]
    max_steps: usize,
    #[serde(default)]
    checks: Vec<CheckSpec>,
}

/// A candidate edit to evaluate against the suite.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub target: String,
    pub body: String,
    pub hypothesis: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteSpec {
    id: String,
    tasks: Vec<TaskSpec>,
    #[serde(default)]
    patches: Vec<PatchSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteFile {
    pub suite: TaskSuite,
    pub patches: Vec<PatchSpec>,
}

pub fn parse_suite(path: &Path, text: &str) -> Result<SuiteFile> {
    let spec: SuiteSpec = serde_json::from_str(text).map_err(|e| json_error(path, &e))?;
    let tasks = spec
        .tasks
        .into_iter()
        .map(|t| {
            Ok(ReplayTask {
                id: t.id,
                intent: t.intent,
                transcript: t.transcript.into_transcript(path)?,
                budget: t.budget,
                max_steps: t.max_steps,
                checks: t.checks.into_iter().map(Check::from).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SuiteFile { suite: TaskSuite { id: spec.id, tasks }, patches: spec.patches })
}

pub fn load_suite(path: &Path) -> Result<SuiteFile> {
    parse_suite(path, &read_text(path)?)
}

pub fn load_memory(path: &Path) -> Result<ResultMemory> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(ResultMemory::from_tsv(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ResultMemory::default()),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn save_memory(path: &Path, memory: &ResultMemory) -> Result<()> {
    write_text(path, &memory.to_tsv())
}
