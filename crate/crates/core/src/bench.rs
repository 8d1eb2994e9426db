//! Three-variant retrieval harness: worker-only, lens + worker, and
//! lens + index + worker, with per-role token accounting.
//!
//! Every text a role is shown passes through an [`Observer`], which is how
//! the truncation limits are checked from outside.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binding::{lens_select, Candidate, EventSink, NullSink};
use crate::error::{Error, Result};
use crate::text::{char_len, estimate_tokens, tail_tokens, truncate_chars, words, Scorer};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchCandidate {
    pub candidate_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchQuery {
    pub query_id: String,
    pub local_context: String,
    pub candidates: Vec<BenchCandidate>,
    pub gold_id: String,
}

impl BenchQuery {
    pub fn new(query_id: String, local_context: String, candidates: Vec<BenchCandidate>, gold_id: String) -> Result<Self> {
        let q = BenchQuery { query_id, local_context, candidates, gold_id };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.candidates {
            if !ids.insert(c.candidate_id.as_str()) {
                return Err(Error::MalformedQuery(format!("duplicate candidate id `{}`", c.candidate_id)));
            }
        }
        if !ids.contains(self.gold_id.as_str()) {
            return Err(Error::MalformedQuery(format!("gold id `{}` is not a candidate", self.gold_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    WorkerOnly,
    LensWorker,
    LensIndexWorker,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WorkerOnly, Variant::LensWorker, Variant::LensIndexWorker];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::WorkerOnly => "worker_only",
            Variant::LensWorker => "lens_worker",
            Variant::LensIndexWorker => "lens_index_worker",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worker_only" | "worker" => Ok(Variant::WorkerOnly),
            "lens_worker" | "lens" => Ok(Variant::LensWorker),
            "lens_index_worker" | "lens_index" => Ok(Variant::LensIndexWorker),
            _ => Err(Error::InvalidConfig(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantConfig {
    pub variant: Variant,
    pub k: usize,
    pub brief_limit: usize,
    pub read_limit: usize,
    /// Tail of the local context, in tokens, that the worker sees.
    pub context_tokens: usize,
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        VariantConfig { variant, k: 5, brief_limit: 280, read_limit: 700, context_tokens: 512 }
    }

    pub fn validate(self) -> Result<Self> {
        if self.k == 0 {
            return Err(Error::InvalidK);
        }
        if self.brief_limit == 0 || self.read_limit == 0 {
            return Err(Error::InvalidBriefLimit);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryReport {
    pub query_id: String,
    pub variant: Variant,
    pub selected_ids: Vec<String>,
    pub hit_at_k: bool,
    pub top1: bool,
    pub worker_input_tokens: u64,
    pub lens_tokens: u64,
    pub index_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker,
    Lens,
    IndexGenerator,
}

/// Sees every text handed to a role.
pub trait Observer {
    fn presented(&mut self, role: Role, text: &str);
}

impl Observer for () {
    fn presented(&mut self, _role: Role, _text: &str) {}
}

/// Longest text, in characters, each role was shown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeakObserver {
    pub lens: usize,
    pub worker_snippet: usize,
}

impl Observer for PeakObserver {
    fn presented(&mut self, role: Role, text: &str) {
        let n = text.chars().count();
        match role {
            Role::Lens => self.lens = self.lens.max(n),
            Role::Worker => self.worker_snippet = self.worker_snippet.max(n),
            Role::IndexGenerator => {}
        }
    }
}

/// Persisted per-candidate-set index package.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPackage {
    pub fingerprint: [u8; 32],
    /// One description per candidate, in candidate order.
    pub lines: Vec<String>,
    /// Tokens spent building the package.
    pub build_tokens: u64,
}

pub fn candidate_fingerprint(candidates: &[BenchCandidate]) -> [u8; 32] {
    let mut h = Sha256::new();
    for c in candidates {
        for f in [&c.candidate_id, &c.text] {
            h.update((f.len() as u64).to_le_bytes());
            h.update(f.as_bytes());
        }
    }
    h.finalize().into()
}

/// `{id}: {distinct words}` per candidate, cut to `line_limit` characters.
/// The generator reads each full text, so build cost is every text plus
/// every line.
pub fn build_index(candidates: &[BenchCandidate], line_limit: usize, observer: &mut dyn Observer) -> IndexPackage {
    let mut build_tokens = 0;
    let lines = candidates
        .iter()
        .map(|c| {
            observer.presented(Role::IndexGenerator, &c.text);
            let line = index_line(c, line_limit);
            build_tokens += estimate_tokens(&c.text) + estimate_tokens(&line);
            line
        })
        .collect();
    IndexPackage { fingerprint: candidate_fingerprint(candidates), lines, build_tokens }
}

/// `{id}: {distinct words}` cut to `limit` characters; words past the cut
/// are never collected.
fn index_line(c: &BenchCandidate, limit: usize) -> String {
    let mut line = format!("{}: ", c.candidate_id);
    let mut chars = char_len(&line);
    let mut seen = BTreeSet::new();
    for w in words(&c.text) {
        if chars >= limit {
            break;
        }
        if seen.contains(&w) {
            continue;
        }
        if !seen.is_empty() {
            line.push(' ');
            chars += 1;
        }
        chars += char_len(&w);
        line.push_str(&w);
        seen.insert(w);
    }
    truncate_chars(&line, limit).to_string()
}

/// Index packages keyed by candidate-set fingerprint and line limit.
#[derive(Debug, Clone, Default)]
pub struct IndexCache {
    packages: BTreeMap<([u8; 32], usize), Arc<IndexPackage>>,
}

impl IndexCache {
    /// The package for `candidates`, and whether it was built by this call.
    pub fn get_or_build(
        &mut self,
        candidates: &[BenchCandidate],
        line_limit: usize,
        observer: &mut dyn Observer,
    ) -> (Arc<IndexPackage>, bool) {
        let key = (candidate_fingerprint(candidates), line_limit);
        if let Some(p) = self.packages.get(&key) {
            return (p.clone(), false);
        }
        let p = Arc::new(build_index(candidates, line_limit, observer));
        self.packages.insert(key, p.clone());
        (p, true)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }
}

/// Recorded scores per `(query_id, candidate_id)`; missing pairs score 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

struct TableScorer<'a>(Option<&'a BTreeMap<String, f64>>);

impl Scorer for TableScorer<'_> {
    fn score(&self, _query: &str, candidate_id: &str, _evidence: &str) -> f64 {
        self.0.and_then(|t| t.get(candidate_id)).copied().unwrap_or(0.0)
    }

    fn explain(&self, _query: &str, _evidence: &str) -> String {
        "table".into()
    }
}

/// Where the per-query scorer comes from.
#[derive(Clone, Copy)]
pub enum ScorerSource<'a> {
    Shared(&'a (dyn Scorer + Sync)),
    Table(&'a ScoreTable),
}

impl<'a> ScorerSource<'a> {
    pub fn scorer_for(&self, query: &BenchQuery) -> Box<dyn Scorer + 'a> {
        match *self {
            ScorerSource::Shared(s) => Box::new(s),
            ScorerSource::Table(t) => Box::new(TableScorer(t.scores.get(&query.query_id))),
        }
    }
}

fn top_k(scores: &[(f64, usize)], k: usize) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    v.into_iter().take(k).map(|s| s.1).collect()
}

/// Runs one query under one variant. For the index variant, `index` must
/// hold the query's package; `charge_index` says whether this query pays
/// for building it.
pub fn run_variant(
    query: &BenchQuery,
    config: &VariantConfig,
    scorer: &dyn Scorer,
    index: Option<&IndexPackage>,
    charge_index: bool,
    observer: &mut dyn Observer,
    sink: &mut dyn EventSink,
) -> Result<QueryReport> {
    config.validate()?;
    let context = tail_tokens(&query.local_context, config.context_tokens);
    let context_cost = estimate_tokens(context);
    let (mut lens_tokens, mut index_tokens) = (0, 0);
    let mut worker_tokens = context_cost;
    let selected: Vec<usize> = match config.variant {
        Variant::WorkerOnly => {
            let scores: Vec<(f64, usize)> = query
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let brief = truncate_chars(&c.text, config.brief_limit);
                    observer.presented(Role::Worker, brief);
                    worker_tokens += estimate_tokens(brief);
                    (scorer.score(context, &c.candidate_id, brief), i)
                })
                .collect();
            top_k(&scores, config.k)
        }
        Variant::LensWorker | Variant::LensIndexWorker => {
            let views: Vec<Candidate> = match config.variant {
                Variant::LensWorker => query
                    .candidates
                    .iter()
                    .map(|c| Candidate::new(c.candidate_id.as_str(), truncate_chars(&c.text, config.brief_limit)))
                    .collect(),
                _ => {
                    let pkg = index.ok_or_else(|| Error::InvalidConfig("index variant needs an index package".into()))?;
                    if pkg.fingerprint != candidate_fingerprint(&query.candidates) {
                        return Err(Error::InvalidConfig(format!("index package does not match query {}", query.query_id)));
                    }
                    if charge_index {
                        index_tokens = pkg.build_tokens;
                    }
                    query
                        .candidates
                        .iter()
                        .zip(&pkg.lines)
                        .map(|(c, line)| Candidate::new(c.candidate_id.as_str(), truncate_chars(line, config.brief_limit)))
                        .collect()
                }
            };
            for v in &views {
                observer.presented(Role::Lens, &v.text);
                lens_tokens += estimate_tokens(&v.text);
            }
            let picks = lens_select(&views, context, config.k, config.brief_limit, scorer, sink, "lens", None)?;
            let mut reads: Vec<(f64, usize, usize)> = picks
                .iter()
                .enumerate()
                .map(|(rank, p)| {
                    let c = &query.candidates[p.index];
                    let read = truncate_chars(&c.text, config.read_limit);
                    observer.presented(Role::Worker, read);
                    worker_tokens += estimate_tokens(read);
                    (scorer.score(context, &c.candidate_id, read), rank, p.index)
                })
                .collect();
            reads.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
            reads.into_iter().map(|r| r.2).collect()
        }
    };
    let selected_ids: Vec<String> = selected.iter().map(|&i| query.candidates[i].candidate_id.clone()).collect();
    let hit_at_k = selected_ids.contains(&query.gold_id);
    let top1 = selected_ids.first() == Some(&query.gold_id);
    Ok(QueryReport {
        query_id: query.query_id.clone(),
        variant: config.variant,
        selected_ids,
        hit_at_k,
        top1,
        worker_input_tokens: worker_tokens,
        lens_tokens,
        index_tokens,
        total_tokens: worker_tokens + lens_tokens + index_tokens,
    })
}

/// Sequential run over a corpus; index packages are built once per
/// candidate set and reused.
pub fn run_all(
    queries: &[BenchQuery],
    config: &VariantConfig,
    scorers: ScorerSource<'_>,
    observer: &mut dyn Observer,
) -> Result<Vec<QueryReport>> {
    let mut cache = IndexCache::default();
    let mut sink = NullSink::default();
    queries
        .iter()
        .map(|q| {
            let (pkg, fresh) = if config.variant == Variant::LensIndexWorker {
                let (p, fresh) = cache.get_or_build(&q.candidates, config.brief_limit, observer);
                (Some(p), fresh)
            } else {
                (None, false)
            };
            let scorer = scorers.scorer_for(q);
            run_variant(q, config, scorer.as_ref(), pkg.as_deref(), fresh, observer, &mut sink)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchSummary {
    pub variant: Option<Variant>,
    pub queries: usize,
    pub hit_at_k_rate: f64,
    pub top1_rate: f64,
    pub avg_worker_tokens: f64,
    pub avg_lens_tokens: f64,
    pub avg_index_tokens: f64,
    pub avg_total_tokens: f64,
    /// Per-query rows in input order.
    pub traces: Vec<QueryReport>,
}

pub fn compute_metrics(reports: &[QueryReport]) -> Result<BenchSummary> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&QueryReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let first = reports[0].variant;
    Ok(BenchSummary {
        variant: reports.iter().all(|r| r.variant == first).then_some(first),
        queries: reports.len(),
        hit_at_k_rate: reports.iter().filter(|r| r.hit_at_k).count() as f64 / n,
        top1_rate: reports.iter().filter(|r| r.top1).count() as f64 / n,
        avg_worker_tokens: mean(&|r| r.worker_input_tokens as f64),
        avg_lens_tokens: mean(&|r| r.lens_tokens as f64),
        avg_index_tokens: mean(&|r| r.index_tokens as f64),
        avg_total_tokens: mean(&|r| r.total_tokens as f64),
        traces: reports.to_vec(),
    })
}

/// One summary per variant, in order of first appearance.
pub fn summarize_by_variant(reports: &[QueryReport]) -> Result<Vec<BenchSummary>> {
    let mut order: Vec<Variant> = Vec::new();
    for r in reports {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    order
        .into_iter()
        .map(|v| compute_metrics(&reports.iter().filter(|r| r.variant == v).cloned().collect::<Vec<_>>()))
        .collect()
}

/// Seeded synthetic corpus. Every candidate is a long nonempty text; the gold
/// candidate opens with tokens that also close the query's local context.
pub fn synthetic_corpus(seed: u64, queries: usize, candidates: usize) -> Vec<BenchQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| format!("w{}", rng.next_u64() % 3000);
    (0..queries)
        .map(|q| {
            let planted: Vec<String> = (0..4).map(|j| format!("gold{q}x{j}")).collect();
            let gold = (rng.next_u64() % candidates.max(1) as u64) as usize;
            let cands = (0..candidates)
                .map(|c| {
                    let len = 60 + (rng.next_u64() % 140) as usize;
                    let mut words: Vec<String> = (0..len).map(|_| word(&mut rng)).collect();
                    if c == gold {
                        for (j, p) in planted.iter().enumerate() {
                            words.insert(j, p.clone());
                        }
                    }
                    BenchCandidate { candidate_id: format!("q{q}c{c}"), text: words.join(" ") }
                })
                .collect();
            let ctx_len = 40 + (rng.next_u64() % 200) as usize;
            let mut ctx: Vec<String> = (0..ctx_len).map(|_| word(&mut rng)).collect();
            ctx.extend(planted);
            BenchQuery {
                query_id: format!("q{q}"),
                local_context: ctx.join(" "),
                candidates: cands,
                gold_id: format!("q{q}c{gold}"),
            }
        })
        .collect()
}
