use std::collections::BTreeMap;
use std::io::{Read as _, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lss_core::bench::{compute_metrics, synthetic_corpus, BenchQuery, QueryReport, ScoreTable, ScorerSource, Variant, VariantConfig};
use lss_core::evolution::Evolver;
use lss_core::runtime::{
    serialize_trajectory, AgentInstance, CycleOptions, EndCriteria, EndPredicate, Intent, Reasoner, Runtime,
    ScriptedReasoner,
};
use lss_core::store::{FrontMatter, NewArtifact};
use lss_core::{EventId, Kind, LexicalScorer};

use crate::bench::run_parallel;
use crate::error::{Error, Result};
use crate::formats::{self, JsonReport};
use crate::fsstore::{render_events, render_artifact, FsStore};
use crate::remote::{RemoteReasoner, RemoteScorer};

#[derive(Parser, Debug)]
#[command(name = "lss", version, about = "Artifact store, agent runtime and retrieval bench")]
pub struct Cli {
    /// Store root; defaults to $LSS_HOME, then ./.lss
    #[arg(long, global = true)]
    pub home: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the three-variant retrieval benchmark.
    Bench(BenchArgs),
    /// Inspect and edit artifacts.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Run one agent cycle under a role bundle.
    Run(RunArgs),
    /// Evaluate suite patches in sandboxes and merge the ones that pass.
    Evolve(EvolveArgs),
    /// Print the supply chain of a binding event, root first.
    Trace { event: u64 },
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// JSON-lines corpus.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Generate `<queries>x<candidates>` synthetic queries from --seed.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// worker_only, lens, lens_index, or all.
    #[arg(long, default_value = "all")]
    pub variant: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 280)]
    pub brief_limit: usize,
    #[arg(long, default_value_t = 700)]
    pub read_limit: usize,
    /// Local-context tail the worker sees, in tokens.
    #[arg(long, default_value_t = 512)]
    pub context_tokens: usize,
    /// lexical, scripted:<score-table.json> or remote:<url>.
    #[arg(long, default_value = "lexical")]
    pub reasoner: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Also write summaries and traces as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StoreCommand {
    /// Create an artifact; the body comes from --file or stdin.
    Put {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        name: Option<String>,
        /// Extra front matter, `key=value`.
        #[arg(long = "meta", value_name = "KEY=VALUE")]
        meta: Vec<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = "human")]
        author: String,
    },
    /// Print an artifact's body, or the body at --version.
    Get {
        id: String,
        #[arg(long)]
        version: Option<u32>,
        /// Print the file form with front matter.
        #[arg(long)]
        full: bool,
    },
    /// Replace an artifact's body with a new version.
    Revise {
        id: String,
        #[arg(long)]
        rationale: String,
        #[arg(long)]
        file: Option<PathBuf>,
        /// Fail unless the artifact is still at this version.
        #[arg(long)]
        expect_version: Option<u32>,
        #[arg(long, default_value = "human")]
        author: String,
    },
    /// Print the version history.
    Log { id: String },
    Rollback {
        id: String,
        version: u32,
        #[arg(long, default_value = "human")]
        author: String,
    },
    /// Report duplicates, stale items and name conflicts, and mark them.
    Maintain {
        /// Report without marking.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub intent: String,
    /// remote:<url> instead of the transcript.
    #[arg(long)]
    pub reasoner: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    /// Suite JSON; defaults to the evolve config's task_suite.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// An evolve.md file; defaults to the store's first evolve artifact.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip the unpatched control arm.
    #[arg(long)]
    pub no_control: bool,
}

const REMOTE_TIMEOUT: Duration = Duration::from_secs(60);

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let fs = cli.home.clone().map_or_else(FsStore::from_env, FsStore::new);
    match cli.command {
        Command::Bench(args) => bench(args, out),
        Command::Store(cmd) => store(&fs, cmd, out),
        Command::Run(args) => run_agent(&fs, args, out),
        Command::Evolve(args) => evolve(&fs, args, out),
        Command::Trace { event } => {
            let store = fs.load()?;
            let chain = store.log().trace_chain(EventId(event))?;
            write_out(out, &render_events(&chain.events))
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn body_from(file: Option<&Path>) -> Result<String> {
    match file {
        Some(p) => formats::read_text(p),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
            Ok(s)
        }
    }
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    if s == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    s.split(',').map(|v| v.trim().parse::<Variant>().map_err(|e| Error::Usage(e.to_string()))).collect()
}

fn parse_synthetic(s: &str) -> Result<(usize, usize)> {
    let (q, c) = s.split_once('x').ok_or_else(|| Error::Usage(format!("--synthetic wants QxC, got `{s}`")))?;
    let n = |v: &str| v.parse::<usize>().map_err(|_| Error::Usage(format!("--synthetic wants QxC, got `{s}`")));
    Ok((n(q)?, n(c)?))
}

/// Rechecks the report contract against the query it came from.
pub fn check_report(q: &BenchQuery, r: &QueryReport, k: usize) -> Result<()> {
    let violated = |m: String| Err(Error::Invariant(format!("query {}: {m}", q.query_id)));
    if r.selected_ids.len() > k {
        return violated(format!("{} selected, k is {k}", r.selected_ids.len()));
    }
    if r.hit_at_k != r.selected_ids.contains(&q.gold_id) || r.top1 != (r.selected_ids.first() == Some(&q.gold_id)) {
        return violated("hit or top1 disagrees with the selection".into());
    }
    if r.total_tokens != r.worker_input_tokens + r.lens_tokens + r.index_tokens {
        return violated("token totals do not add up".into());
    }
    Ok(())
}

fn bench(args: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let queries = match (&args.corpus, &args.synthetic) {
        (Some(path), _) => formats::load_corpus(path)?,
        (None, Some(spec)) => {
            let (q, c) = parse_synthetic(spec)?;
            synthetic_corpus(args.seed, q, c)
        }
        (None, None) => return Err(Error::Usage("either --corpus or --synthetic is required".into())),
    };
    if queries.is_empty() {
        return Err(Error::Usage("corpus has no queries".into()));
    }
    let table: ScoreTable;
    let remote: Option<RemoteScorer> = args.reasoner.strip_prefix("remote:").map(|url| RemoteScorer::new(url, REMOTE_TIMEOUT));
    let source = match args.reasoner.split_once(':') {
        None if args.reasoner == "lexical" => ScorerSource::Shared(&LexicalScorer),
        Some(("scripted", path)) => {
            table = formats::load_score_table(Path::new(path))?;
            ScorerSource::Table(&table)
        }
        Some(("remote", _)) => ScorerSource::Shared(remote.as_ref().expect("built above")),
        _ => return Err(Error::Usage(format!("unknown reasoner `{}`", args.reasoner))),
    };
    let mut summaries = Vec::new();
    for variant in parse_variants(&args.variant)? {
        let config = VariantConfig {
            variant,
            k: args.k,
            brief_limit: args.brief_limit,
            read_limit: args.read_limit,
            context_tokens: args.context_tokens,
        }
        .validate()
        .map_err(|e| Error::Usage(e.to_string()))?;
        let (reports, peaks) = run_parallel(&queries, &config, source)?;
        if let Some(e) = remote.as_ref().and_then(RemoteScorer::take_error) {
            return Err(Error::Remote(e));
        }
        if peaks.lens > config.brief_limit || peaks.worker_snippet > config.read_limit {
            return Err(Error::Invariant(format!("truncation limits exceeded: {peaks:?}")));
        }
        for (q, r) in queries.iter().zip(&reports) {
            check_report(q, r, config.k)?;
        }
        let s = compute_metrics(&reports)?;
        writeln!(
            out,
            "{}\tqueries={}\thit@{}={:.4}\ttop1={:.4}\tworker={:.1}\tlens={:.1}\tindex={:.1}\ttotal={:.1}",
            variant.as_str(),
            s.queries,
            config.k,
            s.hit_at_k_rate,
            s.top1_rate,
            s.avg_worker_tokens,
            s.avg_lens_tokens,
            s.avg_index_tokens,
            s.avg_total_tokens
        )
        .map_err(|e| Error::io("<stdout>", e))?;
        summaries.push(s);
    }
    let doc = JsonReport { seed: args.seed, k: args.k, brief_limit: args.brief_limit, read_limit: args.read_limit, summaries };
    formats::emit_report(&doc.summaries, &args.out, args.json.as_deref().map(|p| (p, &doc)))
}

fn store(fs: &FsStore, cmd: StoreCommand, out: &mut dyn Write) -> Result<()> {
    let mut store = fs.load()?;
    match cmd {
        StoreCommand::Put { kind, id, name, meta, file, author } => {
            let kind: Kind = kind.parse().map_err(|e: lss_core::Error| Error::Usage(e.to_string()))?;
            let mut fm = FrontMatter::new();
            fm.set("kind", kind.as_str());
            if let Some(n) = name {
                fm.set("name", n);
            }
            for kv in meta {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Usage(format!("--meta wants key=value, got `{kv}`")))?;
                fm.set(k.trim(), v.trim());
            }
            let mut new = NewArtifact::new(kind, body_from(file.as_deref())?).front_matter(fm).author(author);
            if let Some(id) = id {
                new = new.id(id.as_str());
            }
            let a = store.put(new)?;
            fs.save(&store)?;
            writeln!(out, "{}", a.id()).map_err(|e| Error::io("<stdout>", e))
        }
        StoreCommand::Get { id, version, full } => {
            let a = store.get(&id)?;
            let text = match version {
                Some(v) => a
                    .content_at(v)
                    .ok_or_else(|| lss_core::Error::VersionNotFound { id: a.id().clone(), version: v })?
                    .to_string(),
                None if full => render_artifact(a),
                None => a.content().to_string(),
            };
            write_out(out, &text)
        }
        StoreCommand::Revise { id, rationale, file, expect_version, author } => {
            let body = body_from(file.as_deref())?;
            let entry = match expect_version {
                Some(v) => store.revise_expected(&id, v, &body, &rationale, &author)?,
                None => store.revise(&id, &body, &rationale, &author)?,
            };
            fs.save(&store)?;
            writeln!(out, "{id} v{}", entry.version).map_err(|e| Error::io("<stdout>", e))
        }
        StoreCommand::Log { id } => {
            let mut text = String::new();
            for e in store.get(&id)?.history() {
                text.push_str(&format!("v{}\tstep {}\t{}\t{}\n", e.version, e.step, e.author, e.rationale.replace('\n', " ")));
            }
            write_out(out, &text)
        }
        StoreCommand::Rollback { id, version, author } => {
            let v = store.rollback(&id, version, &author)?.version();
            fs.save(&store)?;
            writeln!(out, "{id} v{v}").map_err(|e| Error::io("<stdout>", e))
        }
        StoreCommand::Maintain { dry_run } => {
            let report = if dry_run { store.scan_maintenance() } else { store.run_maintenance() };
            if !dry_run {
                fs.save(&store)?;
            }
            let mut text = String::new();
            for g in &report.duplicate_groups {
                let ids: Vec<&str> = g.iter().map(|i| i.as_str()).collect();
                text.push_str(&format!("duplicate\t{}\n", ids.join(",")));
            }
            for s in &report.stale {
                text.push_str(&format!("stale\t{s}\n"));
            }
            for c in &report.conflicts {
                let ids: Vec<&str> = c.ids.iter().map(|i| i.as_str()).collect();
                text.push_str(&format!("conflict\t{}\t{}\t{}\n", c.kind, c.name, ids.join(",")));
            }
            write_out(out, &text)
        }
    }
}

fn run_agent(fs: &FsStore, args: RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut store = fs.load()?;
    let bundle = formats::load_bundle(&args.bundle)?;
    let mut reasoner: Box<dyn Reasoner> = match (&args.reasoner, &args.transcript) {
        (Some(r), _) => match r.split_once(':') {
            Some(("remote", url)) => Box::new(RemoteReasoner::new(url, REMOTE_TIMEOUT)),
            _ => return Err(Error::Usage(format!("unknown reasoner `{r}`"))),
        },
        (None, Some(path)) => Box::new(ScriptedReasoner::new(formats::load_transcript(path)?)),
        (None, None) => return Err(Error::Usage("--transcript or --reasoner is required".into())),
    };
    let process = bundle.bundle.process_for(lss_core::runtime::Pattern::Worker).unwrap_or("worker").to_string();
    let id = store.allocate_agent_id(&process);
    let mut end = EndCriteria::new(vec![EndPredicate::MaxSteps(bundle.max_steps)])?;
    for h in &bundle.hooks {
        end = end.with_hook(h.as_str());
    }
    let mut agent = AgentInstance::new(id.as_str(), end);
    let options = CycleOptions::from_bundle(&bundle.bundle, bundle.budget, bundle.max_steps);
    let mut runtime = Runtime::new();
    let report = runtime.run_cycle(&mut store, &mut agent, Intent::user(args.intent), &options, &mut reasoner)?;
    let serialized = serialize_trajectory(&agent.trajectory);
    let trace = store.put(NewArtifact::new(Kind::Trace, serialized.as_str()).name(format!("trajectory-{id}")).author(id.as_str()))?;
    fs.save(&store)?;
    write_out(out, &serialized)?;
    writeln!(out, "# agent {id}: {} steps, stop {:?}, trace {}", report.steps_run, report.stop, trace.id())
        .map_err(|e| Error::io("<stdout>", e))
}

fn evolve(fs: &FsStore, args: EvolveArgs, out: &mut dyn Write) -> Result<()> {
    let mut store = fs.load()?;
    let (spec, base_dir) = match &args.config {
        Some(path) => {
            (formats::parse_evolve_md(path, &formats::read_text(path)?)?, path.parent().map(Path::to_path_buf))
        }
        None => match store.of_kind(Kind::Evolve).next() {
            Some(a) => (formats::parse_evolve_md(Path::new(a.id().as_str()), &render_artifact(a))?, None),
            None => (formats::EvolveSpec { config: Default::default(), task_suite: None }, None),
        },
    };
    let suite_path = match (&args.suite, &spec.task_suite) {
        (Some(p), _) => p.clone(),
        (None, Some(s)) => base_dir.map_or_else(|| PathBuf::from(s), |d| d.join(s)),
        (None, None) => return Err(Error::Usage("no suite: pass --suite or set task_suite".into())),
    };
    let suite = formats::load_suite(&suite_path)?;
    let threshold = spec.config.pass_threshold;
    let mut evolver = Evolver::new(spec.config);
    let mut candidates = Vec::new();
    let mut lines = String::from(lss_core::evolution::FitnessReport::TSV_HEADER);
    lines.push('\n');
    for p in &suite.patches {
        let mut patch = evolver.propose_patch(&store, &p.target, &p.body, &p.hypothesis)?;
        let mut sandbox = evolver.open_sandbox(&store, None);
        let report = evolver.evaluate_in_sandbox(&mut sandbox, &mut patch, &suite.suite, !args.no_control)?;
        lines.push_str(&report.to_tsv());
        lines.push('\n');
        candidates.push((patch, vec![report]));
    }
    let merged = if candidates.is_empty() { Vec::new() } else { evolver.select_merge(&mut store, &mut candidates, threshold)? };
    fs.save(&store)?;
    write_out(out, &lines)?;
    let statuses: BTreeMap<u64, &str> = candidates.iter().map(|(p, _)| (p.patch_id, p.status.as_str())).collect();
    for (id, status) in statuses {
        writeln!(out, "# patch-{id} {status}").map_err(|e| Error::io("<stdout>", e))?;
    }
    writeln!(out, "# merged {}", merged.len()).map_err(|e| Error::io("<stdout>", e))
}
