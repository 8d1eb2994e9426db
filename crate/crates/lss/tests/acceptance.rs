//! Acceptance run: one PASS/FAIL line per criterion, each checked against a
//! test-side oracle and a wall-clock limit. Exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lss::bench::run_parallel;
use lss::FsStore;
use lss_core::bench::{
    compute_metrics, run_all, synthetic_corpus, BenchCandidate, BenchQuery, Observer, QueryReport, Role, ScorerSource,
    Variant, VariantConfig,
};
use lss_core::binding::{lens_select, replay_lens, replay_route, route, Candidate, Message, TeamRole, TeamSpec};
use lss_core::evolution::{Check, EvolveConfig, Evolver, GeneticConfig, ReplayTask, TaskSuite};
use lss_core::provenance::EventDraft;
use lss_core::runtime::{
    class_signature, serialize_trajectory, AgentInstance, CycleOptions, EndCriteria, Intent, LensStage,
    ReasonerResponse, Runtime, ScriptedReasoner, Transcript, DISTILL_SUMMARY,
};
use lss_core::store::NewArtifact;
use lss_core::taskpool::{RoundVerdict, ScriptedReviewer, TaskOp, TaskPool, TaskPoolConfig, TaskState};
use lss_core::view::{Disclosure, ViewSegment};
use lss_core::{
    BindingEvent, BindingKind, Error as CoreError, EventId, Kind, LexicalScorer, Outcome, ProvenanceLog, StepRecord,
    Store, StoreConfig, Tier, Trajectory, View,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e:?}"))
}

// ---------------------------------------------------------------------------
// Oracles. Written from the definitions, without calling the library.

/// Byte offsets where tokens start: each alphanumeric run, and each other
/// non-whitespace character.
fn o_token_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut prev_alnum = false;
    for (i, c) in text.char_indices() {
        let alnum = c.is_alphanumeric();
        if (alnum && !prev_alnum) || (!alnum && !c.is_whitespace()) {
            starts.push(i);
        }
        prev_alnum = alnum;
    }
    starts
}

fn o_tokens(text: &str) -> u64 {
    o_token_starts(text).len() as u64
}

fn o_tail(text: &str, n: usize) -> &str {
    let s = o_token_starts(text);
    if s.len() > n {
        &text[s[s.len() - n]..]
    } else {
        text
    }
}

fn o_trunc(text: &str, n: usize) -> &str {
    match text.char_indices().nth(n) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn o_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(cur.to_lowercase());
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.to_lowercase());
    }
    out
}

fn o_score(query: &str, evidence: &str) -> f64 {
    o_score_set(&o_words(query).into_iter().collect(), evidence)
}

fn o_score_set(query: &HashSet<String>, evidence: &str) -> f64 {
    let e: HashSet<String> = o_words(evidence).into_iter().collect();
    e.iter().filter(|w| query.contains(*w)).count() as f64
}

/// Indices of the best `k` scores; ties keep the smaller index.
fn o_rank(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn o_index_line(c: &BenchCandidate) -> String {
    let mut seen = HashSet::new();
    let distinct: Vec<String> = o_words(&c.text).into_iter().filter(|w| seen.insert(w.clone())).collect();
    format!("{}: {}", c.candidate_id, distinct.join(" "))
}

struct Expected {
    selected: Vec<String>,
    worker: u64,
    lens: u64,
    index: u64,
}

/// The full benchmark pipeline recomputed from first principles; `charge`
/// says whether this query pays for its index package.
fn o_pipeline(q: &BenchQuery, cfg: &VariantConfig, charge: bool) -> Expected {
    let ctx = o_tail(&q.local_context, cfg.context_tokens);
    let ctx_words: HashSet<String> = o_words(ctx).into_iter().collect();
    let mut worker = o_tokens(ctx);
    let (mut lens, mut index) = (0, 0);
    let picked: Vec<usize> = match cfg.variant {
        Variant::WorkerOnly => {
            let briefs: Vec<&str> = q.candidates.iter().map(|c| o_trunc(&c.text, cfg.brief_limit)).collect();
            worker += briefs.iter().map(|b| o_tokens(b)).sum::<u64>();
            o_rank(&briefs.iter().map(|b| o_score_set(&ctx_words, b)).collect::<Vec<_>>(), cfg.k)
        }
        _ => {
            let views: Vec<String> = q
                .candidates
                .iter()
                .map(|c| match cfg.variant {
                    Variant::LensWorker => o_trunc(&c.text, cfg.brief_limit).to_string(),
                    _ => o_trunc(&o_index_line(c), cfg.brief_limit).to_string(),
                })
                .collect();
            if cfg.variant == Variant::LensIndexWorker && charge {
                index = q.candidates.iter().zip(&views).map(|(c, l)| o_tokens(&c.text) + o_tokens(l)).sum();
            }
            lens = views.iter().map(|v| o_tokens(v)).sum();
            let shortlist = o_rank(&views.iter().map(|v| o_score_set(&ctx_words, v)).collect::<Vec<_>>(), cfg.k);
            let mut reads: Vec<(f64, usize, usize)> = shortlist
                .iter()
                .enumerate()
                .map(|(rank, &i)| {
                    let read = o_trunc(&q.candidates[i].text, cfg.read_limit);
                    worker += o_tokens(read);
                    (o_score_set(&ctx_words, read), rank, i)
                })
                .collect();
            reads.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            reads.into_iter().map(|r| r.2).collect()
        }
    };
    Expected {
        selected: picked.iter().map(|&i| q.candidates[i].candidate_id.clone()).collect(),
        worker,
        lens,
        index,
    }
}

fn compare_report(q: &BenchQuery, r: &QueryReport, e: &Expected) -> Result<(), String> {
    ensure!(r.selected_ids == e.selected, "{} selected {:?}, oracle {:?}", q.query_id, r.selected_ids, e.selected);
    ensure!(
        (r.worker_input_tokens, r.lens_tokens, r.index_tokens) == (e.worker, e.lens, e.index),
        "{} tokens (w{}, l{}, i{}), oracle (w{}, l{}, i{})",
        q.query_id,
        r.worker_input_tokens,
        r.lens_tokens,
        r.index_tokens,
        e.worker,
        e.lens,
        e.index
    );
    ensure!(r.total_tokens == e.worker + e.lens + e.index, "{} total {}", q.query_id, r.total_tokens);
    let hit = e.selected.contains(&q.gold_id);
    let top1 = e.selected.first() == Some(&q.gold_id);
    ensure!((r.hit_at_k, r.top1) == (hit, top1), "{} hit/top1 {:?}", q.query_id, (r.hit_at_k, r.top1));
    Ok(())
}

/// Every stored byte of a store, in a form unrelated to its hash.
fn dump(s: &Store) -> String {
    let mut out = format!("{:?}\n{:?}\n", s.config(), s.counters());
    for a in s.iter() {
        out += &format!(
            "A {} {} {} {} {} {}\n",
            a.id(),
            a.kind(),
            a.tier(),
            a.use_count(),
            a.created_step(),
            a.last_used_step()
        );
        for (k, v) in a.front_matter().iter() {
            out += &format!("  F {k:?}={v:?}\n");
        }
        for h in a.history() {
            out += &format!("  H {h:?}\n");
        }
    }
    for e in s.log().events() {
        out += &format!("E {e:?}\n");
    }
    for m in s.migrations() {
        out += &format!("M {m:?}\n");
    }
    out
}

// ---------------------------------------------------------------------------
// Generators.

const FUZZ_CHARS: &[char] = &[
    'a', 'b', 'e', 'k', 'q', 'z', 'A', 'Q', '0', '7', '9', ' ', ' ', ' ', '\n', '\t', '.', ',', '-', '(', ')', '#', '_',
    'é', 'ß', 'Ω', 'ж', '漢', '字', '🙂', '🚀', '\u{0301}', '\u{200b}', '\u{00a0}', '٣', 'ǅ',
];

fn fuzz_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *FUZZ_CHARS.choose(rng).unwrap()).collect()
}

fn vocab_text(rng: &mut ChaCha8Rng, words: usize, vocab: u32) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(if rng.random_bool(0.1) { '\n' } else { ' ' });
        }
        let w = rng.random_range(0..vocab);
        match rng.random_range(0..10) {
            0 => out += &format!("V{w}"),
            1 => out += &format!("v{w}."),
            _ => out += &format!("v{w}"),
        }
    }
    out
}

fn body_text(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..8) {
        0 => String::new(),
        1 => "---\nid: fake\n---\n".into(),
        2 => format!("line\r\n{}\n\n", fuzz_text(rng, 40)),
        3 => {
            let n = rng.random_range(0..2000);
            fuzz_text(rng, n)
        }
        _ => {
            let n = rng.random_range(1..60);
            vocab_text(rng, n, 50)
        }
    }
}

// ---------------------------------------------------------------------------
// Criteria.

fn c1_lens_saves_worker_tokens() -> Verdict {
    let qs = synthetic_corpus(7, 100, 50);
    let wo = VariantConfig::new(Variant::WorkerOnly);
    let lw = VariantConfig::new(Variant::LensWorker);
    let (a, _) = ok(run_parallel(&qs, &wo, ScorerSource::Shared(&LexicalScorer)), "worker_only")?;
    let (b, _) = ok(run_parallel(&qs, &lw, ScorerSource::Shared(&LexicalScorer)), "lens_worker")?;
    ensure!(a.len() == 100 && b.len() == 100, "expected 100 reports per variant");
    let mut min_gap = u64::MAX;
    for ((q, ra), rb) in qs.iter().zip(&a).zip(&b) {
        compare_report(q, ra, &o_pipeline(q, &wo, false))?;
        compare_report(q, rb, &o_pipeline(q, &lw, false))?;
        ensure!(
            ra.worker_input_tokens > rb.worker_input_tokens,
            "{}: worker_only {} <= lens_worker {}",
            q.query_id,
            ra.worker_input_tokens,
            rb.worker_input_tokens
        );
        min_gap = min_gap.min(ra.worker_input_tokens - rb.worker_input_tokens);
    }
    Ok(format!("100/100 queries cheaper for the worker, smallest gap {min_gap} tokens"))
}

#[derive(Default)]
struct CharAudit {
    lens_max: usize,
    worker_max: usize,
    lens_seen: usize,
    worker_seen: usize,
}

impl Observer for CharAudit {
    fn presented(&mut self, role: Role, text: &str) {
        let n = text.chars().count();
        match role {
            Role::Lens => {
                self.lens_max = self.lens_max.max(n);
                self.lens_seen += 1;
            }
            Role::Worker => {
                self.worker_max = self.worker_max.max(n);
                self.worker_seen += 1;
            }
            Role::IndexGenerator => {}
        }
    }
}

fn c2_truncation_caps() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lengths: Vec<usize> = (0..10_000)
        .map(|i| match i {
            0 => 0,
            1 => 10_000,
            _ => rng.random_range(0..=10_000),
        })
        .collect();
    let texts: Vec<String> = lengths.iter().map(|&n| fuzz_text(&mut rng, n)).collect();
    let mut qs = Vec::new();
    for (qi, chunk) in texts.chunks(50).enumerate() {
        let candidates: Vec<BenchCandidate> = chunk
            .iter()
            .enumerate()
            .map(|(ci, t)| BenchCandidate { candidate_id: format!("f{qi}c{ci}"), text: t.clone() })
            .collect();
        let context = texts[(qi * 37) % texts.len()].clone();
        qs.push(BenchQuery {
            query_id: format!("f{qi}"),
            local_context: context,
            gold_id: format!("f{qi}c0"),
            candidates,
        });
    }
    let mut audit = CharAudit::default();
    for v in Variant::ALL {
        let cfg = VariantConfig::new(v);
        ok(run_all(&qs, &cfg, ScorerSource::Shared(&LexicalScorer), &mut audit), v.as_str())?;
        let (_, peaks) = ok(run_parallel(&qs, &cfg, ScorerSource::Shared(&LexicalScorer)), v.as_str())?;
        ensure!(peaks.lens <= 280 && peaks.worker_snippet <= 700, "{}: parallel peaks {peaks:?}", v.as_str());
    }
    ensure!(audit.lens_max <= 280, "lens saw {} chars", audit.lens_max);
    ensure!(audit.worker_max <= 700, "worker saw {} chars", audit.worker_max);
    ensure!(audit.lens_max == 280 && audit.worker_max == 700, "caps never reached: {}/{}", audit.lens_max, audit.worker_max);
    Ok(format!(
        "10000 texts, {} lens and {} worker presentations, max {} and {} chars",
        audit.lens_seen, audit.worker_seen, audit.lens_max, audit.worker_max
    ))
}

fn random_queries(seed: u64, n: usize) -> Vec<BenchQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|qi| {
            let m = rng.random_range(1..=40);
            let candidates: Vec<BenchCandidate> = (0..m)
                .map(|ci| {
                    let words = rng.random_range(0..300);
                    BenchCandidate { candidate_id: format!("r{qi}c{ci}"), text: vocab_text(&mut rng, words, 40) }
                })
                .collect();
            let ctx_words = rng.random_range(0..700);
            let gold = rng.random_range(0..m);
            BenchQuery {
                query_id: format!("r{qi}"),
                local_context: vocab_text(&mut rng, ctx_words, 40),
                gold_id: format!("r{qi}c{gold}"),
                candidates,
            }
        })
        .collect()
}

fn c3_metrics_recompute() -> Verdict {
    let qs = random_queries(3, 1000);
    let mut lines = Vec::new();
    for v in Variant::ALL {
        let cfg = VariantConfig::new(v);
        let reports = ok(run_all(&qs, &cfg, ScorerSource::Shared(&LexicalScorer), &mut ()), v.as_str())?;
        let (mut hits, mut top1) = (0usize, 0usize);
        for (q, r) in qs.iter().zip(&reports) {
            let e = o_pipeline(q, &cfg, true);
            compare_report(q, r, &e)?;
            hits += e.selected.contains(&q.gold_id) as usize;
            top1 += (e.selected.first() == Some(&q.gold_id)) as usize;
        }
        let s = ok(compute_metrics(&reports), "metrics")?;
        let n = qs.len() as f64;
        ensure!(
            s.hit_at_k_rate == hits as f64 / n && s.top1_rate == top1 as f64 / n,
            "{}: rates {}/{} vs oracle {}/{}",
            v.as_str(),
            s.hit_at_k_rate,
            s.top1_rate,
            hits as f64 / n,
            top1 as f64 / n
        );
        lines.push(format!("{} hit@5 {:.3} top1 {:.3}", v.as_str(), s.hit_at_k_rate, s.top1_rate));
    }
    Ok(lines.join(", "))
}

fn c4_index_amortized() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shared: Vec<BenchCandidate> = (0..40)
        .map(|ci| BenchCandidate { candidate_id: format!("s{ci}"), text: vocab_text(&mut rng, 150, 200) })
        .collect();
    let qs: Vec<BenchQuery> = (0..100)
        .map(|qi| BenchQuery {
            query_id: format!("a{qi}"),
            local_context: vocab_text(&mut rng, 80, 200),
            gold_id: format!("s{}", rng.random_range(0..40)),
            candidates: shared.clone(),
        })
        .collect();
    let cfg = VariantConfig::new(Variant::LensIndexWorker);
    let oracle_cost: u64 = shared.iter().map(|c| o_tokens(&c.text) + o_tokens(o_trunc(&o_index_line(c), 280))).sum();
    let single = ok(run_all(&qs[..1], &cfg, ScorerSource::Shared(&LexicalScorer), &mut ()), "single")?;
    let seq = ok(run_all(&qs, &cfg, ScorerSource::Shared(&LexicalScorer), &mut ()), "sequential")?;
    let (par, _) = ok(run_parallel(&qs, &cfg, ScorerSource::Shared(&LexicalScorer)), "parallel")?;
    ensure!(single[0].index_tokens == oracle_cost, "one-query cost {} vs oracle {oracle_cost}", single[0].index_tokens);
    for (name, run) in [("sequential", &seq), ("parallel", &par)] {
        let total: u64 = run.iter().map(|r| r.index_tokens).sum();
        let charged = run.iter().filter(|r| r.index_tokens > 0).count();
        ensure!(total == oracle_cost, "{name}: 100 queries charged {total}, one build costs {oracle_cost}");
        ensure!(charged == 1 && run[0].index_tokens > 0, "{name}: {charged} queries charged");
    }
    for v in [Variant::WorkerOnly, Variant::LensWorker] {
        let r = ok(run_all(&qs, &VariantConfig::new(v), ScorerSource::Shared(&LexicalScorer), &mut ()), v.as_str())?;
        ensure!(r.iter().all(|r| r.index_tokens == 0), "{} charged index tokens", v.as_str());
    }
    Ok(format!("100 queries charged {oracle_cost} index tokens in total, same as one"))
}

fn c5_rollback_exact() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = Store::new(StoreConfig::default());
    let mut shadows: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut checked = 0;
    for s in 0..100 {
        let id = format!("doc-{s:03}");
        let first = body_text(&mut rng);
        ok(store.put(NewArtifact::new(Kind::Document, first.as_str()).id(id.as_str())), "put")?;
        let mut shadow = vec![first];
        for _ in 0..rng.random_range(0..=20) {
            if rng.random_bool(0.7) {
                let body = body_text(&mut rng);
                ok(store.revise(&id, &body, "edit", "fuzz"), "revise")?;
                shadow.push(body);
            } else {
                let v = rng.random_range(1..=shadow.len());
                ok(store.rollback(&id, v as u32, "fuzz"), "rollback")?;
                shadow.push(shadow[v - 1].clone());
            }
        }
        let n = shadow.len();
        for v in 1..=n {
            let a = ok(store.rollback(&id, v as u32, "check"), "rollback")?;
            ensure!(a.content().as_bytes() == shadow[v - 1].as_bytes(), "{id}: rollback to v{v} differs");
            ensure!(a.version() as usize == shadow.len() + 1, "{id}: version {} after rollback", a.version());
            shadow.push(shadow[v - 1].clone());
            checked += 1;
        }
        let a = ok(store.get(&id), "get")?;
        for (v, expect) in shadow.iter().enumerate() {
            ensure!(a.content_at(v as u32 + 1) == Some(expect.as_str()), "{id}: history v{} differs", v + 1);
        }
        ensure!(store.rollback(&id, n as u32 * 3, "x").is_err(), "{id}: rollback past history accepted");
        shadows.insert(id, shadow);
    }
    let dir = ok(tempfile::tempdir(), "tempdir")?;
    let fs = FsStore::new(dir.path());
    ok(fs.save(&store), "save")?;
    let back = ok(fs.load(), "load")?;
    for (id, shadow) in &shadows {
        let a = ok(back.get(id), "reloaded get")?;
        ensure!(a.version() as usize == shadow.len(), "{id}: reloaded version {}", a.version());
        for (v, expect) in shadow.iter().enumerate() {
            ensure!(a.content_at(v as u32 + 1) == Some(expect.as_str()), "{id}: reloaded v{} differs", v + 1);
        }
    }
    ensure!(dump(&back) == dump(&store), "store differs after a save/load round trip");
    Ok(format!("100 sequences, {checked} rollbacks byte-identical, identical after reload"))
}

fn persistent_fixture() -> Store {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut s = Store::new(StoreConfig::default());
    s.put(NewArtifact::new(Kind::Skill, "step one: wrong\nstep two").id("skill")).unwrap();
    for i in 0..30 {
        let kind = [Kind::Document, Kind::Prompt, Kind::Plan, Kind::Memory][i % 4];
        s.put(NewArtifact::new(kind, body_text(&mut rng)).id(format!("p{i:02}")).meta("topic", format!("t{}", i % 3)))
            .unwrap();
        if i % 5 == 0 {
            s.revise(&format!("p{i:02}"), &body_text(&mut rng), "seed", "fixture").unwrap();
            s.record_use(&format!("p{i:02}"), true).unwrap();
        }
    }
    s.advance_clock(10);
    s
}

fn sandbox_suite() -> TaskSuite {
    TaskSuite {
        id: "sb".into(),
        tasks: vec![ReplayTask {
            id: "t".into(),
            intent: "apply the skill".into(),
            transcript: Transcript::from_texts(&["RATIONALE: retry\nWRITE: p01\nrewritten\nEND\nok"]),
            budget: 400,
            max_steps: 1,
            checks: vec![Check::ArtifactContains { id: "skill".into(), text: "right".into() }],
        }],
    }
}

fn fuzz_writes(store: &mut Store, rng: &mut ChaCha8Rng, ops: usize) {
    let ids: Vec<String> = store.iter().map(|a| a.id().to_string()).collect();
    for _ in 0..ops {
        let id = ids.choose(rng).unwrap().as_str();
        let _ = match rng.random_range(0..9) {
            0 | 1 => store.revise(id, &body_text(rng), "sandbox edit", "fuzz").map(drop),
            2 => store.rollback(id, 1, "fuzz").map(drop),
            3 => store.put(NewArtifact::new(Kind::Document, body_text(rng))).map(drop),
            4 => store.set_meta(id, "note", &format!("n{}", rng.random::<u16>())),
            5 => store.record_use(id, rng.random_bool(0.5)).map(drop),
            6 => store.migrate_tier(id, [Tier::Hot, Tier::Warm, Tier::Cold][rng.random_range(0..3)], "fuzz").map(drop),
            7 => store.emit(EventDraft::new(BindingKind::ToolCall, "fuzz", id).outcome(Outcome::Validated)).map(drop),
            _ => {
                store.advance_clock(rng.random_range(1..2000));
                store.run_maintenance();
                Ok(())
            }
        };
    }
}

fn c6_sandbox_isolation() -> Verdict {
    let persistent = persistent_fixture();
    let hash0 = persistent.content_hash();
    let dump0 = dump(&persistent);
    let threads = 8;
    let per_thread = 125;
    let results: Vec<Result<usize, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let persistent = &persistent;
                scope.spawn(move || -> Result<usize, String> {
                    let mut rng = ChaCha8Rng::seed_from_u64(600 + t as u64);
                    let mut ev = Evolver::new(EvolveConfig::default());
                    let mut writes = 0;
                    for seq in 0..per_thread {
                        let depth = rng.random_range(1..=3);
                        let mut chain = vec![ev.open_sandbox(persistent, None)];
                        for d in 1..depth {
                            let ops = rng.random_range(1..8);
                            fuzz_writes(chain[d - 1].store_mut(), &mut rng, ops);
                            writes += ops;
                            let parent_hash = chain[d - 1].store().content_hash();
                            let child = ev.open_sandbox(persistent, Some(&chain[d - 1]));
                            ensure!(child.base().content_hash() == parent_hash, "nested base differs from parent");
                            ensure!(child.depth == d as u32 + 1, "depth {}", child.depth);
                            chain.push(child);
                        }
                        let last = chain.last_mut().unwrap();
                        let ops = rng.random_range(1..8);
                        fuzz_writes(last.store_mut(), &mut rng, ops);
                        writes += ops;
                        if seq % 25 == 0 {
                            let mut p = ok(ev.propose_patch(last.store(), "skill", "step one: right", "fix"), "propose")?;
                            ok(ev.evaluate_in_sandbox(last, &mut p, &sandbox_suite(), true), "evaluate")?;
                        }
                        for sb in &chain {
                            ensure!(sb.base().content_hash() != sb.store().content_hash() || sb.overlay().is_empty(),
                                "overlay reported without divergence");
                        }
                        ensure!(persistent.content_hash() == hash0, "persistent store changed mid-run");
                    }
                    Ok(writes)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("thread panicked".into()))).collect()
    });
    let mut writes = 0;
    for r in results {
        writes += r?;
    }
    ensure!(persistent.content_hash() == hash0, "persistent content hash changed");
    ensure!(dump(&persistent) == dump0, "persistent dump changed");
    Ok(format!("{} sequences across {threads} threads, {writes} sandbox writes, persistent store untouched", threads * per_thread))
}

/// Legal `(state, op) -> state` edges, stated independently of the library.
const LEGAL: [(TaskState, TaskOp, TaskState); 7] = [
    (TaskState::Pending, TaskOp::Claim, TaskState::Claimed),
    (TaskState::Claimed, TaskOp::AppendLog, TaskState::Executing),
    (TaskState::Executing, TaskOp::AppendLog, TaskState::Executing),
    (TaskState::Executing, TaskOp::CompleteOk, TaskState::Done),
    (TaskState::Executing, TaskOp::CompleteFail, TaskState::Failed),
    (TaskState::Done, TaskOp::Review, TaskState::Reviewed),
    (TaskState::Failed, TaskOp::Review, TaskState::Reviewed),
];

fn legal(state: TaskState, op: TaskOp) -> Option<TaskState> {
    LEGAL.iter().find(|(s, o, _)| *s == state && *o == op).map(|e| e.2)
}

fn apply_op(pool: &mut TaskPool, store: &mut Store, id: &str, op: TaskOp) -> Result<(), CoreError> {
    match op {
        TaskOp::Claim => pool.claim_task(store, id, "w1").map(drop),
        TaskOp::AppendLog => pool.append_log(store, id, "progress").map(drop),
        TaskOp::CompleteOk => pool.complete_task(store, id, true, "ok").map(drop),
        TaskOp::CompleteFail => pool.complete_task(store, id, false, "bad").map(drop),
        TaskOp::Review => pool.review_round(store, 1, &mut ScriptedReviewer::default()).map(drop),
    }
}

fn path_to(state: TaskState) -> &'static [TaskOp] {
    use TaskOp::*;
    match state {
        TaskState::Pending => &[],
        TaskState::Claimed => &[Claim],
        TaskState::Executing => &[Claim, AppendLog],
        TaskState::Done => &[Claim, AppendLog, CompleteOk],
        TaskState::Failed => &[Claim, AppendLog, CompleteFail],
        TaskState::Reviewed => &[Claim, AppendLog, CompleteOk, Review],
    }
}

fn c7_transition_table() -> Verdict {
    let (mut legal_n, mut illegal_n) = (0, 0);
    for state in TaskState::ALL {
        for op in TaskOp::ALL {
            let expect = legal(state, op);
            ensure!(
                lss_core::taskpool::transition(state, op) == expect,
                "table says {:?} for ({}, {})",
                lss_core::taskpool::transition(state, op),
                state.as_str(),
                op.as_str()
            );
            let mut store = Store::new(StoreConfig::default());
            let mut pool = ok(TaskPool::new(TaskPoolConfig::default()), "pool")?;
            let id = ok(pool.generate_round(&mut store, "goal", &["only task"]), "round")?.task_ids[0].clone();
            for &step in path_to(state) {
                ok(apply_op(&mut pool, &mut store, &id, step), "drive")?;
            }
            ensure!(ok(pool.task(&id), "task")?.state == state, "could not reach {}", state.as_str());
            let version = store.get(&id).unwrap().version();
            let r = apply_op(&mut pool, &mut store, &id, op);
            let task = ok(pool.task(&id), "task")?;
            let meta = store.get(&id).unwrap().front_matter().get("state").map(String::from);
            match expect {
                Some(next) => {
                    ensure!(r.is_ok(), "({}, {}) rejected: {r:?}", state.as_str(), op.as_str());
                    ensure!(task.state == next, "({}, {}) landed in {}", state.as_str(), op.as_str(), task.state.as_str());
                    ensure!(meta.as_deref() == Some(next.as_str()), "stored state {meta:?}");
                    ensure!(store.get(&id).unwrap().version() == version + 1, "no history entry");
                    legal_n += 1;
                }
                None => {
                    let kind_ok = match (&r, op) {
                        (Err(CoreError::AlreadyClaimed(_)), TaskOp::Claim) => true,
                        (Err(CoreError::RoundIncomplete(_)), TaskOp::Review) => true,
                        (Err(CoreError::IllegalTransition { .. }), o) => o != TaskOp::Claim,
                        _ => false,
                    };
                    ensure!(kind_ok, "({}, {}) gave {r:?}", state.as_str(), op.as_str());
                    ensure!(task.state == state && meta.as_deref() == Some(state.as_str()), "rejected op changed state");
                    ensure!(store.get(&id).unwrap().version() == version, "rejected op wrote history");
                    illegal_n += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut walks = 0;
    for _ in 0..20 {
        let mut store = Store::new(StoreConfig::default());
        let mut pool = ok(TaskPool::new(TaskPoolConfig::default()), "pool")?;
        let texts: Vec<String> = (0..6).map(|i| format!("task {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let ids = ok(pool.generate_round(&mut store, "goal", &refs), "round")?.task_ids.clone();
        let mut shadow: Vec<TaskState> = vec![TaskState::Pending; ids.len()];
        for _ in 0..60 {
            let i = rng.random_range(0..ids.len());
            let op = *TaskOp::ALL.choose(&mut rng).unwrap();
            let r = apply_op(&mut pool, &mut store, &ids[i], op);
            if op == TaskOp::Review {
                let all_finished = shadow.iter().all(|s| matches!(s, TaskState::Done | TaskState::Failed));
                ensure!(r.is_ok() == all_finished, "review outcome {r:?} with states {shadow:?}");
                if all_finished {
                    shadow.iter_mut().for_each(|s| *s = TaskState::Reviewed);
                }
            } else {
                let next = legal(shadow[i], op);
                ensure!(r.is_ok() == next.is_some(), "{:?} on {:?} gave {r:?}", op, shadow[i]);
                if let Some(n) = next {
                    shadow[i] = n;
                }
            }
            for (id, s) in ids.iter().zip(&shadow) {
                ensure!(pool.task(id).unwrap().state == *s, "walk diverged on {id}");
            }
            walks += 1;
        }
    }
    Ok(format!("{legal_n} legal and {illegal_n} illegal pairs match the table, {walks} random-walk ops agree"))
}

#[derive(Clone)]
struct SegmentSpec {
    source: String,
    text: String,
    level: Disclosure,
}

fn build_instance(id: &str, views: &[Vec<SegmentSpec>], rng: &mut ChaCha8Rng) -> AgentInstance {
    let mut t = Trajectory::new(id);
    for segs in views {
        let segments =
            segs.iter().map(|s| ViewSegment::new(s.source.as_str().into(), s.text.clone(), s.level)).collect();
        let noise = format!("noise {}", rng.random::<u64>());
        t.push(StepRecord {
            view: View::from_segments(&noise, segments),
            intent: Intent::user(format!("intent {}", rng.random::<u32>())),
            output: lss_core::runtime::Output::text(format!("output {}", rng.random::<u32>())),
        });
    }
    AgentInstance::new(id, EndCriteria::max_steps(10)).with_trajectory(t)
}

fn ascii_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| rng.random_range(0x20u8..0x7f) as char).collect()
}

fn c8_class_signature() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let levels = [Disclosure::Name, Disclosure::Brief, Disclosure::Full];
    let mut collisions = HashMap::new();
    for pair in 0..500 {
        let views: Vec<Vec<SegmentSpec>> = (0..rng.random_range(1..=6))
            .map(|_| {
                (0..rng.random_range(1..=4))
                    .map(|_| SegmentSpec {
                        source: format!("art-{}", rng.random_range(0..20)),
                        text: {
                            let n = rng.random_range(1..200);
                            ascii_text(&mut rng, n)
                        },
                        level: *levels.choose(&mut rng).unwrap(),
                    })
                    .collect()
            })
            .collect();
        let a = build_instance("alpha", &views, &mut rng);
        let b = build_instance("beta", &views, &mut rng);
        ensure!(
            a.trajectory.steps().iter().zip(b.trajectory.steps()).all(|(x, y)| x.output != y.output),
            "pair {pair}: outputs coincide"
        );
        let sa = class_signature(&a);
        ensure!(sa == class_signature(&b), "pair {pair}: equal views, different signatures");
        let mut perturbed = views.clone();
        let step = rng.random_range(0..perturbed.len());
        let seg = rng.random_range(0..perturbed[step].len());
        let mut bytes = perturbed[step][seg].text.clone().into_bytes();
        let at = rng.random_range(0..bytes.len());
        let old = bytes[at];
        bytes[at] = loop {
            let c = rng.random_range(0x20u8..0x7f);
            if c != old {
                break c;
            }
        };
        perturbed[step][seg].text = String::from_utf8(bytes).unwrap();
        let c = build_instance("alpha", &perturbed, &mut rng);
        ensure!(sa != class_signature(&c), "pair {pair}: one-byte change kept the signature");
        if let Some(prev) = collisions.insert(sa.0.clone(), pair) {
            ensure!(false, "pairs {prev} and {pair} share a signature");
        }
    }
    Ok("500 pairs: equal views agree, every one-byte change disagrees".into())
}

fn cycle_store() -> Store {
    let mut s = Store::new(StoreConfig::default());
    s.put(NewArtifact::new(Kind::Skill, "step one: wrong\nstep two").id("skill")).unwrap();
    s.put(NewArtifact::new(Kind::Document, "notes about the skill and its steps").id("notes")).unwrap();
    s.put(NewArtifact::new(Kind::Plan, "plan: fix step one then check").id("plan")).unwrap();
    s
}

fn one_cycle(lens: bool) -> Result<(String, String, [u8; 32], String), String> {
    let mut store = cycle_store();
    let mut rt = Runtime::new();
    rt.register_tool("upper", Box::new(|a: &str| Ok(a.to_uppercase())));
    rt.register_tool("fail", Box::new(|_: &str| Err("refused".into())));
    let transcript = Transcript::from_texts(&[
        "RATIONALE: step one was wrong\nWRITE: skill\nstep one: right\nstep two\nEND\nACTION: upper hello\nINTENT: check the skill",
        "ACTION: fail now\nACTION: missing tool\nINTENT: summarize the plan",
        "all steps checked",
    ]);
    let mut agent = AgentInstance::new("worker-1", EndCriteria::max_steps(3).with_hook(DISTILL_SUMMARY));
    let mut options = CycleOptions::new(400, 5);
    if lens {
        options.lens = Some(LensStage { process: "lens".into(), k: 2, brief_limit: 280 });
    }
    let report = ok(
        rt.run_cycle(&mut store, &mut agent, Intent::user("fix the skill"), &options, &mut ScriptedReasoner::new(transcript)),
        "run_cycle",
    )?;
    ensure!(report.steps_run == 3, "ran {} steps", report.steps_run);
    ensure!(store.get("skill").unwrap().content() == "step one: right\nstep two", "WRITE not applied");
    Ok((serialize_trajectory(&agent.trajectory), format!("{report:?}"), store.content_hash(), dump(&store)))
}

fn genetic_once(seed: u64) -> Result<(String, [u8; 32], String), String> {
    let mut store = cycle_store();
    let mut t = Trajectory::new("base");
    for text in ["read the task", "draft an answer", "check units"] {
        t.push(StepRecord { view: View::empty(text, 10), intent: Intent::user(text), output: lss_core::runtime::Output::text(text) });
    }
    let baseline = AgentInstance::new("base", EndCriteria::max_steps(10)).with_trajectory(t);
    let suite = TaskSuite {
        id: "g".into(),
        tasks: vec![ReplayTask {
            id: "q".into(),
            intent: "apply the skill".into(),
            transcript: Transcript::from_texts(&["plain"]),
            budget: 200,
            max_steps: 1,
            checks: vec![Check::OutputContains("GOLD".into()), Check::OutputLacks("bad".into())],
        }],
    };
    let mut alternates: Vec<(u64, ReasonerResponse)> =
        (0..5).map(|i| (0, ReasonerResponse::text(format!("bad {i}")))).collect();
    alternates.insert(2, (0, ReasonerResponse::text("GOLD answer")));
    let cfg = GeneticConfig {
        population: 8,
        survivors: 3,
        seed,
        intent: "answer".into(),
        fork_budget: 1000,
        alternates,
        fragments: vec!["remember units".into()],
    };
    let ev = Evolver::new(EvolveConfig::default());
    let out = ok(ev.genetic_round(&mut store, &baseline, &suite, &cfg), "genetic_round")?;
    let mut text = format!("{:?}\n{:?}\n", out.candidates, out.traces);
    for s in &out.survivors {
        text += &serialize_trajectory(&s.trajectory);
    }
    Ok((text, store.content_hash(), dump(&store)))
}

fn lss_bin(home: &Path, args: &[&str]) -> Result<String, String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_lss")).arg("--home").arg(home).args(args).output(), "spawn lss")?;
    ensure!(out.status.success(), "lss {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_run_once(inputs: &Path) -> Result<(String, BTreeMap<String, Vec<u8>>), String> {
    let home = ok(tempfile::tempdir(), "tempdir")?;
    let skill = inputs.join("skill.md");
    lss_bin(home.path(), &["store", "put", "--kind", "skill", "--id", "skill", "--file", skill.to_str().unwrap()])?;
    let bundle = inputs.join("bundle.toml");
    let transcript = inputs.join("transcript.json");
    let stdout = lss_bin(
        home.path(),
        &[
            "run",
            "--bundle",
            bundle.to_str().unwrap(),
            "--transcript",
            transcript.to_str().unwrap(),
            "--intent",
            "fix the skill",
        ],
    )?;
    Ok((stdout, tree(home.path())))
}

fn c9_replay_determinism() -> Verdict {
    for lens in [false, true] {
        let a = one_cycle(lens)?;
        let b = one_cycle(lens)?;
        ensure!(a.0 == b.0, "trajectory serializations differ (lens {lens})");
        ensure!(a.1 == b.1, "cycle reports differ (lens {lens})");
        ensure!(a.2 == b.2 && a.3 == b.3, "store states differ (lens {lens})");
    }
    for seed in [3, 17] {
        let a = genetic_once(seed)?;
        let b = genetic_once(seed)?;
        ensure!(a == b, "genetic round with seed {seed} is not reproducible");
    }
    let inputs = ok(tempfile::tempdir(), "tempdir")?;
    std::fs::write(inputs.path().join("skill.md"), "step one: wrong\nstep two").unwrap();
    std::fs::write(
        inputs.path().join("bundle.toml"),
        "name = \"fixer\"\nbudget = 400\nmax_steps = 3\nhooks = [\"distill-summary\"]\n\n[roles]\nworker = \"worker\"\nlens = \"lens\"\n",
    )
    .unwrap();
    std::fs::write(
        inputs.path().join("transcript.json"),
        r#"["RATIONALE: fix\nWRITE: skill\nstep one: right\nstep two\nEND\nINTENT: check it", "checked"]"#,
    )
    .unwrap();
    let a = cli_run_once(inputs.path())?;
    let b = cli_run_once(inputs.path())?;
    ensure!(a.0 == b.0, "CLI run output differs");
    ensure!(a.1 == b.1, "CLI store trees differ");
    ensure!(a.1.keys().any(|k| k.starts_with("trace")), "CLI run stored no trace");
    Ok(format!("run_cycle x2, genetic_round x2 for 2 seeds, CLI run x2 ({} files) byte-identical", a.1.len()))
}

fn c10_taskpool_limits() -> Verdict {
    let mut store = Store::new(StoreConfig::default());
    let mut pool = ok(TaskPool::new(TaskPoolConfig::default()), "pool")?;
    let mut refused = 0;
    for r in 1..=12u32 {
        let texts: Vec<String> = (1..=12).map(|i| format!("round {r} task {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        match pool.generate_round(&mut store, "ship it", &refs) {
            Ok(round) => {
                ensure!(r <= 10, "round {r} accepted");
                ensure!(round.task_ids.len() == 10, "round {r} holds {} tasks", round.task_ids.len());
                let ids = round.task_ids.clone();
                for id in &ids {
                    ok(pool.claim_task(&mut store, id, "w"), "claim")?;
                    ok(pool.append_log(&mut store, id, "work"), "log")?;
                    ok(pool.complete_task(&mut store, id, true, "done"), "complete")?;
                }
                let outcome = ok(pool.review_round(&mut store, r, &mut ScriptedReviewer::default()), "review")?;
                ensure!(outcome.verdict == RoundVerdict::Iterate, "round {r} verdict {:?}", outcome.verdict);
                ensure!(outcome.halted == (r == 10), "round {r} halted={}", outcome.halted);
            }
            Err(CoreError::RoundLimit(10)) => {
                ensure!(r > 10, "round {r} refused early");
                refused += 1;
            }
            Err(e) => return Err(format!("round {r}: {e:?}")),
        }
    }
    let tasks = store.of_kind(Kind::Task).count();
    ensure!(pool.rounds().len() == 10 && refused == 2, "{} rounds, {refused} refused", pool.rounds().len());
    ensure!(tasks == 100 && pool.memory().len() == 100, "{tasks} task artifacts, {} memory entries", pool.memory().len());
    let contents: Vec<String> = store.of_kind(Kind::Task).map(|a| a.content().to_string()).collect();
    for r in 1..=12 {
        for i in 1..=12 {
            let text = format!("round {r} task {i}\n");
            let stored = contents.iter().any(|c| c.contains(&text));
            ensure!(stored == (r <= 10 && i <= 10), "round {r} task {i} stored={stored}");
        }
    }
    let w = pool.warnings();
    let over_cap = w.iter().filter(|s| s.contains("over cap 10")).count();
    let refusals: Vec<&String> = w.iter().filter(|s| s.contains("refused")).collect();
    let halts = w.iter().filter(|s| s.contains("round limit")).count();
    ensure!(over_cap == 20, "{over_cap} cap warnings");
    ensure!(
        refusals.len() == 2 && refusals[0].starts_with("round 11") && refusals[1].starts_with("round 12"),
        "refusal warnings {refusals:?}"
    );
    ensure!(halts == 1 && w.len() == 23, "{} warnings in total", w.len());
    ensure!(pool.tasks().all(|t| t.state == TaskState::Reviewed), "unreviewed tasks remain");
    Ok(format!("10 rounds x 10 tasks kept, {} warnings ({over_cap} over cap, 2 refusals, 1 halt)", w.len()))
}

struct LensRecord {
    events: Vec<EventId>,
    intent: String,
    candidates: Vec<Candidate>,
    k: usize,
    brief_limit: usize,
    picks: Vec<String>,
}

struct RouteRecord {
    event: EventId,
    message: String,
    team: Vec<(String, BTreeSet<String>)>,
    chosen: String,
}

fn c11_provenance() -> Verdict {
    const TARGET: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut log = ProvenanceLog::new();
    let mut lenses = Vec::new();
    let mut routes = Vec::new();
    while log.len() < TARGET {
        let parent = match (log.len(), rng.random_range(0..10)) {
            (0, _) | (_, 0..=1) => None,
            (n, 2..=5) => Some(EventId(n as u64)),
            (n, _) => Some(EventId(rng.random_range(1..=n as u64))),
        };
        match rng.random_range(0..3) {
            0 => {
                let candidates: Vec<Candidate> = (0..rng.random_range(1..15))
                    .map(|i| {
                        let words = rng.random_range(0..80);
                        Candidate::new(format!("c{i}"), vocab_text(&mut rng, words, 25))
                    })
                    .collect();
                let k = rng.random_range(1..=5).min(TARGET - log.len());
                let brief_limit = rng.random_range(1..300);
                let intent = vocab_text(&mut rng, 12, 25);
                let before = log.len();
                let picks =
                    ok(lens_select(&candidates, &intent, k, brief_limit, &LexicalScorer, &mut log, "lens", parent), "lens")?;
                ensure!(log.len() == before + picks.len(), "lens emitted {} events for {} picks", log.len() - before, picks.len());
                lenses.push(LensRecord {
                    events: picks.iter().map(|p| p.event).collect(),
                    picks: picks.iter().map(|p| p.id.clone()).collect(),
                    intent,
                    candidates,
                    k,
                    brief_limit,
                });
            }
            1 => {
                let team: Vec<(String, BTreeSet<String>)> = (0..rng.random_range(1..6))
                    .map(|i| (format!("agent-{i}"), o_words(&vocab_text(&mut rng, 4, 25)).into_iter().collect()))
                    .collect();
                let roles = team
                    .iter()
                    .map(|(id, kw)| TeamRole {
                        agent_id: id.clone(),
                        role_name: "role".into(),
                        responsibilities: "work".into(),
                        capability_keywords: kw.clone(),
                    })
                    .collect();
                let spec = ok(TeamSpec::new(roles, vec![]), "team")?;
                let message = vocab_text(&mut rng, 6, 25);
                let m = if rng.random_bool(0.5) { Message::intent(message.as_str()) } else { Message::output(message.as_str()) };
                let d = ok(route(&m, &spec, &LexicalScorer, &mut log, "router", parent), "route")?;
                routes.push(RouteRecord { event: d.event, message, team, chosen: d.agent_id });
            }
            _ => {
                let kind = *BindingKind::ALL.choose(&mut rng).unwrap();
                ok(log.append(EventDraft::new(kind, "agent", format!("obj-{}", rng.random::<u8>())).parent(parent)), "append")?;
            }
        }
    }
    ensure!(log.len() == TARGET, "log holds {} events", log.len());

    let by_id: HashMap<EventId, &BindingEvent> = log.events().iter().map(|e| (e.id, e)).collect();
    let mut longest = 0;
    for e in log.events() {
        let mut walk = Vec::new();
        let mut seen = HashSet::new();
        let mut cur = Some(e.id);
        while let Some(id) = cur {
            ensure!(seen.insert(id), "cycle through {id:?}");
            let ev = by_id.get(&id).ok_or(format!("dangling parent {id:?}"))?;
            walk.push(ev.id);
            cur = ev.parent;
        }
        walk.reverse();
        let chain = ok(log.trace_chain(e.id), "trace_chain")?;
        ensure!(chain.events.iter().map(|x| x.id).collect::<Vec<_>>() == walk, "chain of {:?} differs", e.id);
        ensure!(chain.root().parent.is_none() && chain.is_contiguous(), "chain of {:?} has no root", e.id);
        longest = longest.max(walk.len());
    }
    ensure!(log.is_acyclic(), "log reports a cycle");

    for l in &lenses {
        let events: Vec<&BindingEvent> = l.events.iter().map(|id| by_id[id]).collect();
        let mut parsed: Vec<(f64, usize, String)> = events
            .iter()
            .map(|e| {
                let field = |k: &str| e.evidence.split(' ').find_map(|kv| kv.strip_prefix(k)).unwrap_or("").to_string();
                (field("score=").parse().unwrap_or(f64::NAN), field("index=").parse().unwrap_or(usize::MAX), e.object.clone())
            })
            .collect();
        parsed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let from_evidence: Vec<String> = parsed.into_iter().map(|p| p.2).collect();
        let scores: Vec<f64> = l.candidates.iter().map(|c| o_score(&l.intent, o_trunc(&c.text, l.brief_limit))).collect();
        let rederived: Vec<String> = o_rank(&scores, l.k).into_iter().map(|i| l.candidates[i].id.clone()).collect();
        let replayed = ok(replay_lens(&events, &l.intent, Some(&l.candidates), &LexicalScorer), "replay_lens")?;
        ensure!(from_evidence == l.picks, "lens evidence replays to {from_evidence:?}, picked {:?}", l.picks);
        ensure!(rederived == l.picks, "lens oracle picks {rederived:?}, library picked {:?}", l.picks);
        ensure!(replayed == l.picks, "replay_lens gives {replayed:?}");
    }
    for r in &routes {
        let e = by_id[&r.event];
        let mut best: Option<(f64, &str)> = None;
        for (id, kw) in &r.team {
            let s = o_score(&r.message, &kw.iter().cloned().collect::<Vec<_>>().join(" "));
            best = match best {
                Some((bs, bid)) if bs > s || (bs == s && bid < id.as_str()) => Some((bs, bid)),
                _ => Some((s, id.as_str())),
            };
        }
        let expect = best.unwrap().1;
        ensure!(r.chosen == expect && e.object == expect, "route chose {}, oracle {expect}", r.chosen);
        ensure!(ok(replay_route(e), "replay_route")? == expect, "replay_route disagrees for {:?}", r.event);
    }

    let mut bad = log.events()[..3].to_vec();
    bad[0].parent = Some(bad[2].id);
    bad[1].parent = Some(bad[0].id);
    bad[2].parent = Some(bad[1].id);
    let corrupt = ProvenanceLog::from_events_unchecked(bad.clone());
    ensure!(!corrupt.is_acyclic() && corrupt.trace_chain(bad[0].id).is_err(), "planted cycle not detected");
    ensure!(ProvenanceLog::from_events(bad).is_err(), "cyclic log accepted");
    Ok(format!(
        "{TARGET} events, {} lens and {} route decisions replayed, longest chain {longest}",
        lenses.len(),
        routes.len()
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Verdict,
}

const CRITERIA: [Criterion; 11] = [
    Criterion { name: "lens_worker spends fewer worker tokens than worker_only", limit: Duration::from_secs(10), run: c1_lens_saves_worker_tokens },
    Criterion { name: "lens and worker inputs stay within 280 / 700 chars", limit: Duration::from_secs(30), run: c2_truncation_caps },
    Criterion { name: "hit@5 and top1 match brute-force recomputation", limit: Duration::from_secs(10), run: c3_metrics_recompute },
    Criterion { name: "index package charged once per candidate set", limit: Duration::from_secs(10), run: c4_index_amortized },
    Criterion { name: "rollback restores every version byte-for-byte", limit: Duration::from_secs(10), run: c5_rollback_exact },
    Criterion { name: "sandbox writes never reach the persistent store", limit: Duration::from_secs(30), run: c6_sandbox_isolation },
    Criterion { name: "task state machine matches the legal table", limit: Duration::from_secs(1), run: c7_transition_table },
    Criterion { name: "class signature follows the view sequence only", limit: Duration::from_secs(5), run: c8_class_signature },
    Criterion { name: "scripted replays are byte-identical", limit: Duration::from_secs(10), run: c9_replay_determinism },
    Criterion { name: "task pool caps tasks and rounds with warnings", limit: Duration::from_secs(5), run: c10_taskpool_limits },
    Criterion { name: "provenance chains terminate and decisions replay", limit: Duration::from_secs(30), run: c11_provenance },
];

fn main() {
    let mut failed = 0;
    for (i, c) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let verdict = match verdict {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; took longer than {:?}", c.limit)),
            v => v,
        };
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{:>2}] {} ({:.3}s, limit {}s): {detail}", i + 1, c.name, elapsed.as_secs_f64(), c.limit.as_secs());
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
