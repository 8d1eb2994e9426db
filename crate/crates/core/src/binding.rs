//! Layer-2 structure over artifacts and agents.
//!
//! Every choice made here is written to a provenance sink with evidence
//! detailed enough to replay it: lens picks carry their score, rank and the
//! best rejected score; routes carry the score of every role.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write as _;

use crate::error::{Error, Result};
use crate::provenance::{BindingEvent, BindingKind, EventDraft, EventId, Outcome, ProvenanceLog};
use crate::runtime::{fork, seed_step, AgentInstance};
use crate::store::{Artifact, Kind, NewArtifact, Store};
use crate::text::{format_score, truncate_chars, word_set, LexicalScorer, Scorer};

/// Destination for binding events.
pub trait EventSink {
    fn emit_event(&mut self, draft: EventDraft) -> Result<EventId>;

    /// Logical step stamped on new events.
    fn step(&self) -> u64 {
        0
    }
}

impl EventSink for Store {
    fn emit_event(&mut self, draft: EventDraft) -> Result<EventId> {
        self.emit(draft)
    }

    fn step(&self) -> u64 {
        self.clock()
    }
}

impl EventSink for ProvenanceLog {
    fn emit_event(&mut self, draft: EventDraft) -> Result<EventId> {
        self.append(draft)
    }
}

/// Discards events; for callers that only want the selection.
#[derive(Debug, Default)]
pub struct NullSink {
    next: u64,
}

impl EventSink for NullSink {
    fn emit_event(&mut self, _draft: EventDraft) -> Result<EventId> {
        self.next += 1;
        Ok(EventId(self.next))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: String,
    pub text: String,
    pub scope: Option<String>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Candidate { id: id.into(), text: text.into(), scope: None }
    }

    pub fn from_artifact(artifact: &Artifact) -> Self {
        Candidate {
            id: artifact.id().to_string(),
            text: artifact.content().into(),
            scope: artifact.task_scope().map(String::from),
        }
    }
}

/// Store artifacts as candidates, minus those outside `scope` unless the
/// caller opts into crossing scopes. Unscoped artifacts are always visible.
pub fn scoped_candidates(store: &Store, scope: Option<&str>, allow_cross_scope: bool) -> Vec<Candidate> {
    store
        .iter()
        .filter(|a| allow_cross_scope || scope_compatible(scope, a.task_scope()))
        .map(Candidate::from_artifact)
        .collect()
}

fn scope_compatible(from: Option<&str>, to: Option<&str>) -> bool {
    match (from, to) {
        (Some(a), Some(b)) => a == b,
        _ => true,
    }
}

/// The semantic gate: binding `draft.object` from an agent working in
/// `subject_scope` must stay within matching scopes unless explicitly allowed.
pub fn bind_scoped(
    store: &mut Store,
    draft: EventDraft,
    subject_scope: Option<&str>,
    allow_cross_scope: bool,
) -> Result<EventId> {
    let target = store.get(&draft.object)?.task_scope().map(String::from);
    if !allow_cross_scope && !scope_compatible(subject_scope, target.as_deref()) {
        return Err(Error::CrossScope {
            object: draft.object,
            from: subject_scope.unwrap_or_default().into(),
            to: target.unwrap_or_default(),
        });
    }
    store.emit(draft)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LensPick {
    pub index: usize,
    pub id: String,
    pub score: f64,
    pub event: EventId,
}

fn rank_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Scores each candidate on its brief alone, one at a time, and returns
/// the `k` best in rank order.
#[allow(clippy::too_many_arguments)]
pub fn lens_select(
    candidates: &[Candidate],
    intent: &str,
    k: usize,
    brief_limit: usize,
    scorer: &dyn Scorer,
    sink: &mut dyn EventSink,
    subject: &str,
    parent: Option<EventId>,
) -> Result<Vec<LensPick>> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    if brief_limit == 0 {
        return Err(Error::InvalidBriefLimit);
    }
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (scorer.score(intent, &c.id, truncate_chars(&c.text, brief_limit)), i))
        .collect();
    scored.sort_by(|a, b| rank_order(*a, *b));
    let cutoff = scored.get(k).map(|s| format_score(s.0)).unwrap_or_else(|| "none".into());
    let step = sink.step();
    let mut picks = Vec::new();
    for (rank, &(score, index)) in scored.iter().take(k).enumerate() {
        let c = &candidates[index];
        let brief = truncate_chars(&c.text, brief_limit);
        let evidence = format!(
            "score={} index={index} rank={rank} cutoff={cutoff} brief_limit={brief_limit} matched={}",
            format_score(score),
            scorer.explain(intent, brief)
        );
        let event = sink.emit_event(
            EventDraft::new(BindingKind::LensSelect, subject, c.id.as_str())
                .evidence(evidence)
                .parent(parent)
                .step(step),
        )?;
        picks.push(LensPick { index, id: c.id.clone(), score, event });
    }
    Ok(picks)
}

fn evidence_field<'a>(evidence: &'a str, key: &str) -> Result<&'a str> {
    evidence
        .split(' ')
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::MalformedEvidence(format!("missing `{key}` in `{evidence}`")))
}

fn parse_field<T: core::str::FromStr>(evidence: &str, key: &str) -> Result<T> {
    evidence_field(evidence, key)?
        .parse()
        .map_err(|_| Error::MalformedEvidence(format!("bad `{key}` in `{evidence}`")))
}

/// Rebuilds a lens selection from its events alone: picks re-sorted by
/// their recorded score and index must every one beat the recorded cutoff.
/// When candidates are given, each score is also re-derived from the brief.
pub fn replay_lens(
    events: &[&BindingEvent],
    intent: &str,
    candidates: Option<&[Candidate]>,
    scorer: &dyn Scorer,
) -> Result<Vec<String>> {
    let mut picks = Vec::new();
    for e in events {
        let score: f64 = parse_field(&e.evidence, "score")?;
        let index: usize = parse_field(&e.evidence, "index")?;
        let cutoff = evidence_field(&e.evidence, "cutoff")?;
        if cutoff != "none" {
            let cutoff: f64 =
                cutoff.parse().map_err(|_| Error::MalformedEvidence(format!("bad cutoff in `{}`", e.evidence)))?;
            if score < cutoff {
                return Err(Error::MalformedEvidence(format!("pick {} scored below cutoff", e.object)));
            }
        }
        if let Some(cands) = candidates {
            let limit: usize = parse_field(&e.evidence, "brief_limit")?;
            let c = cands
                .get(index)
                .filter(|c| c.id == e.object)
                .ok_or_else(|| Error::MalformedEvidence(format!("index {index} is not `{}`", e.object)))?;
            let again = scorer.score(intent, &c.id, truncate_chars(&c.text, limit));
            if again != score {
                return Err(Error::MalformedEvidence(format!("score of `{}` does not replay", c.id)));
            }
        }
        picks.push((score, index, e.object.clone()));
    }
    picks.sort_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
    Ok(picks.into_iter().map(|p| p.2).collect())
}

/// Serialized lens configuration plus its last decision.
pub fn render_lens_doc(k: usize, brief_limit: usize, picks: &[LensPick]) -> String {
    let mut out = format!("scorer: lexical-overlap\nk: {k}\nbrief_limit: {brief_limit}\n");
    for p in picks {
        let _ = writeln!(out, "pick: {} | {} | event {}", p.id, format_score(p.score), p.event);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub focal_id: String,
    pub neighbor_id: String,
    pub relation: String,
    pub weight: u64,
}

/// Up to `max_degree` highest-overlap neighbors per focal item. Ties go to
/// the earlier item.
pub fn index_entries(items: &[Candidate], focal: Option<&str>, max_degree: usize) -> Result<Vec<IndexEntry>> {
    if max_degree == 0 {
        return Err(Error::InvalidDegree);
    }
    if let Some(f) = focal {
        if !items.iter().any(|c| c.id == f) {
            return Err(Error::NotFound(f.into()));
        }
    }
    let sets: Vec<BTreeSet<String>> = items.iter().map(|c| word_set(&c.text)).collect();
    let mut entries = Vec::new();
    for (i, c) in items.iter().enumerate() {
        if focal.is_some_and(|f| f != c.id) {
            continue;
        }
        let mut neighbors: Vec<(usize, Vec<&String>)> = items
            .iter()
            .enumerate()
            .filter(|(j, n)| *j != i && n.id != c.id)
            .map(|(j, _)| (j, sets[i].intersection(&sets[j]).collect::<Vec<_>>()))
            .filter(|(_, shared)| !shared.is_empty())
            .collect();
        neighbors.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
        for (j, shared) in neighbors.into_iter().take(max_degree) {
            entries.push(IndexEntry {
                focal_id: c.id.clone(),
                neighbor_id: items[j].id.clone(),
                weight: shared.len() as u64,
                relation: shared.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "),
            });
        }
    }
    Ok(entries)
}

pub fn render_index(entries: &[IndexEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{} -> {} | {} | {}", e.focal_id, e.neighbor_id, e.weight, e.relation);
    }
    out
}

pub fn parse_index(body: &str) -> Result<Vec<IndexEntry>> {
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::MalformedEvidence(format!("bad index line `{line}`"));
            let mut parts = line.splitn(3, " | ");
            let (pair, weight, relation) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?, parts.next().unwrap_or(""));
            let (focal, neighbor) = pair.split_once(" -> ").ok_or_else(bad)?;
            Ok(IndexEntry {
                focal_id: focal.into(),
                neighbor_id: neighbor.into(),
                weight: weight.parse().map_err(|_| bad())?,
                relation: relation.into(),
            })
        })
        .collect()
}

/// Indexes every non-index artifact in the store and persists the result as
/// an index artifact.
pub fn generate_index(store: &mut Store, focal: Option<&str>, max_degree: usize) -> Result<(Vec<IndexEntry>, Arc<Artifact>)> {
    let items: Vec<Candidate> = store.iter().filter(|a| a.kind() != Kind::Index).map(Candidate::from_artifact).collect();
    let entries = index_entries(&items, focal, max_degree)?;
    let mut new = NewArtifact::new(Kind::Index, render_index(&entries)).meta("max_degree", max_degree.to_string());
    if let Some(f) = focal {
        new = new.meta("focal", f);
    }
    let artifact = store.put(new)?;
    Ok((entries, artifact))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeamRole {
    pub agent_id: String,
    pub role_name: String,
    pub responsibilities: String,
    pub capability_keywords: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeamEdge {
    pub from: String,
    pub to: String,
    pub purpose: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeamSpec {
    roles: Vec<TeamRole>,
    edges: Vec<TeamEdge>,
}

impl TeamSpec {
    pub fn new(roles: Vec<TeamRole>, edges: Vec<TeamEdge>) -> Result<Self> {
        if roles.is_empty() {
            return Err(Error::EmptyRoster);
        }
        let ids: BTreeSet<&str> = roles.iter().map(|r| r.agent_id.as_str()).collect();
        if ids.len() != roles.len() {
            return Err(Error::InvalidConfig("duplicate agent in team".into()));
        }
        if let Some(e) = edges.iter().find(|e| !ids.contains(e.from.as_str()) || !ids.contains(e.to.as_str())) {
            return Err(Error::InvalidConfig(format!("edge {} -> {} leaves the team", e.from, e.to)));
        }
        Ok(TeamSpec { roles, edges })
    }

    pub fn roles(&self) -> &[TeamRole] {
        &self.roles
    }

    pub fn edges(&self) -> &[TeamEdge] {
        &self.edges
    }

    /// Reported only; density is not enforced.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.roles {
            let kw: Vec<&str> = r.capability_keywords.iter().map(String::as_str).collect();
            let _ = write!(
                out,
                "role: {}\n  name: {}\n  responsibilities: {}\n  keywords: {}\n",
                r.agent_id,
                r.role_name,
                r.responsibilities,
                kw.join(" ")
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge: {} -> {} | {}", e.from, e.to, e.purpose);
        }
        out
    }

    pub fn parse(body: &str) -> Result<Self> {
        let bad = |l: &str| Error::InvalidConfig(format!("bad team line `{l}`"));
        let mut roles: Vec<TeamRole> = Vec::new();
        let mut edges = Vec::new();
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(id) = line.strip_prefix("role: ") {
                roles.push(TeamRole {
                    agent_id: id.trim().into(),
                    role_name: String::new(),
                    responsibilities: String::new(),
                    capability_keywords: BTreeSet::new(),
                });
            } else if let Some(rest) = line.strip_prefix("edge: ") {
                let (pair, purpose) = rest.split_once(" | ").unwrap_or((rest, ""));
                let (from, to) = pair.split_once(" -> ").ok_or_else(|| bad(line))?;
                edges.push(TeamEdge { from: from.into(), to: to.into(), purpose: purpose.into() });
            } else {
                let role = roles.last_mut().ok_or_else(|| bad(line))?;
                let (key, value) = line.trim().split_once(':').ok_or_else(|| bad(line))?;
                let value = value.trim();
                match key {
                    "name" => role.role_name = value.into(),
                    "responsibilities" => role.responsibilities = value.into(),
                    "keywords" => role.capability_keywords = value.split_whitespace().map(String::from).collect(),
                    _ => return Err(bad(line)),
                }
            }
        }
        TeamSpec::new(roles, edges)
    }

    pub fn persist(&self, store: &mut Store, name: &str) -> Result<Arc<Artifact>> {
        store.put(NewArtifact::new(Kind::Team, self.render()).name(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageKind {
    Intent,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub text: String,
}

impl Message {
    pub fn intent(text: impl Into<String>) -> Self {
        Message { kind: MessageKind::Intent, text: text.into() }
    }

    pub fn output(text: impl Into<String>) -> Self {
        Message { kind: MessageKind::Output, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteDecision {
    pub agent_id: String,
    pub evidence: String,
    pub event: EventId,
}

fn keywords_text(k: &BTreeSet<String>) -> String {
    k.iter().map(String::as_str).collect::<Vec<_>>().join(" ")
}

/// Forwards a message to the role whose capability keywords best match it.
pub fn route(
    message: &Message,
    team: &TeamSpec,
    scorer: &dyn Scorer,
    sink: &mut dyn EventSink,
    subject: &str,
    parent: Option<EventId>,
) -> Result<RouteDecision> {
    if team.roles.is_empty() {
        return Err(Error::NoRoute);
    }
    let mut scores: Vec<(&str, f64)> = team
        .roles
        .iter()
        .map(|r| (r.agent_id.as_str(), scorer.score(&message.text, &r.agent_id, &keywords_text(&r.capability_keywords))))
        .collect();
    scores.sort_by(|a, b| a.0.cmp(b.0));
    let best = pick_route(&scores);
    let evidence = scores.iter().map(|(a, s)| format!("{a}={}", format_score(*s))).collect::<Vec<_>>().join(" ");
    let kind = match message.kind {
        MessageKind::Intent => "intent",
        MessageKind::Output => "output",
    };
    let event = sink.emit_event(
        EventDraft::new(BindingKind::Route, subject, best)
            .evidence(format!("message={kind} {evidence}"))
            .parent(parent)
            .step(sink.step()),
    )?;
    Ok(RouteDecision { agent_id: best.into(), evidence, event })
}

fn pick_route<'a>(scores: &[(&'a str, f64)]) -> &'a str {
    let mut best = scores[0];
    for &(a, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && a < best.0) {
            best = (a, s);
        }
    }
    best.0
}

/// Re-derives a routing choice from its recorded `agent=score` pairs.
pub fn replay_route(event: &BindingEvent) -> Result<String> {
    let mut scores = Vec::new();
    for kv in event.evidence.split(' ').filter(|kv| !kv.starts_with("message=")) {
        let (agent, score) =
            kv.rsplit_once('=').ok_or_else(|| Error::MalformedEvidence(format!("bad route pair `{kv}`")))?;
        let score: f64 = score.parse().map_err(|_| Error::MalformedEvidence(format!("bad route score `{kv}`")))?;
        scores.push((agent, score));
    }
    if scores.is_empty() {
        return Err(Error::MalformedEvidence("route event without scores".into()));
    }
    Ok(pick_route(&scores).into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentProfile {
    pub agent_id: String,
    pub capability_keywords: BTreeSet<String>,
}

impl AgentProfile {
    pub fn new(agent_id: impl Into<String>, keywords: &[&str]) -> Self {
        AgentProfile { agent_id: agent_id.into(), capability_keywords: keywords.iter().map(|k| k.to_string()).collect() }
    }
}

/// Up to `max_size` best-matching agents in a star around the top scorer.
pub fn generate_team(task_intent: &str, agents: &[AgentProfile], max_size: usize, scorer: &dyn Scorer) -> Result<TeamSpec> {
    if max_size == 0 {
        return Err(Error::InvalidTeamSize);
    }
    if agents.is_empty() {
        return Err(Error::EmptyRoster);
    }
    let mut ranked: Vec<(f64, &AgentProfile)> = agents
        .iter()
        .map(|a| (scorer.score(task_intent, &a.agent_id, &keywords_text(&a.capability_keywords)), a))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.agent_id.cmp(&b.1.agent_id)));
    ranked.truncate(max_size);
    let coordinator = ranked[0].1.agent_id.clone();
    let roles = ranked
        .iter()
        .enumerate()
        .map(|(i, (_, a))| TeamRole {
            agent_id: a.agent_id.clone(),
            role_name: if i == 0 { "coordinator".into() } else { "member".into() },
            responsibilities: if i == 0 {
                format!("coordinate: {task_intent}")
            } else {
                format!("contribute {} to: {task_intent}", keywords_text(&a.capability_keywords))
            },
            capability_keywords: a.capability_keywords.clone(),
        })
        .collect();
    let edges = ranked[1..]
        .iter()
        .map(|(_, a)| TeamEdge { from: coordinator.clone(), to: a.agent_id.clone(), purpose: "delegate".into() })
        .collect();
    TeamSpec::new(roles, edges)
}

/// Builds the team after the fact from the route events it produced.
pub fn generate_team_after<'a>(
    route_events: impl IntoIterator<Item = &'a BindingEvent>,
    agents: &[AgentProfile],
) -> Result<TeamSpec> {
    let mut order: Vec<String> = Vec::new();
    let mut edges: Vec<TeamEdge> = Vec::new();
    for e in route_events.into_iter().filter(|e| e.kind == BindingKind::Route) {
        for id in [&e.subject, &e.object] {
            if !order.contains(id) {
                order.push(id.clone());
            }
        }
        if !edges.iter().any(|x| x.from == e.subject && x.to == e.object) {
            edges.push(TeamEdge { from: e.subject.clone(), to: e.object.clone(), purpose: "observed route".into() });
        }
    }
    let profiles: BTreeMap<&str, &AgentProfile> = agents.iter().map(|a| (a.agent_id.as_str(), a)).collect();
    let roles = order
        .into_iter()
        .map(|id| TeamRole {
            capability_keywords: profiles.get(id.as_str()).map(|p| p.capability_keywords.clone()).unwrap_or_default(),
            role_name: "member".into(),
            responsibilities: "as observed".into(),
            agent_id: id,
        })
        .collect();
    TeamSpec::new(roles, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractStatus {
    Draft,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contract {
    pub parties: Vec<String>,
    pub roles: String,
    pub io_schema: String,
    pub state_commitments: String,
    pub allowed_side_effects: String,
    pub negotiation_rounds: u32,
    pub status: ContractStatus,
}

impl Contract {
    pub fn draft(parties: Vec<String>) -> Self {
        Contract {
            parties,
            roles: String::new(),
            io_schema: String::new(),
            state_commitments: String::new(),
            allowed_side_effects: String::new(),
            negotiation_rounds: 0,
            status: ContractStatus::Draft,
        }
    }

    pub fn missing_clauses(&self) -> Vec<&'static str> {
        [
            ("roles", &self.roles),
            ("io_schema", &self.io_schema),
            ("state_commitments", &self.state_commitments),
            ("allowed_side_effects", &self.allowed_side_effects),
        ]
        .into_iter()
        .filter(|(_, v)| v.trim().is_empty())
        .map(|(k, _)| k)
        .collect()
    }

    pub fn render(&self) -> String {
        format!(
            "parties: {}\nrounds: {}\n\n## Roles\n{}\n\n## IO Schema\n{}\n\n## State Commitments\n{}\n\n## Allowed Side Effects\n{}\n",
            self.parties.join(", "),
            self.negotiation_rounds,
            self.roles.trim(),
            self.io_schema.trim(),
            self.state_commitments.trim(),
            self.allowed_side_effects.trim()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClauseUpdate {
    pub roles: Option<String>,
    pub io_schema: Option<String>,
    pub state_commitments: Option<String>,
    pub allowed_side_effects: Option<String>,
}

impl ClauseUpdate {
    fn apply(&self, c: &mut Contract) {
        for (src, dst) in [
            (&self.roles, &mut c.roles),
            (&self.io_schema, &mut c.io_schema),
            (&self.state_commitments, &mut c.state_commitments),
            (&self.allowed_side_effects, &mut c.allowed_side_effects),
        ] {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
    }
}

pub trait Negotiator {
    /// Proposes clause changes for one round (1-based).
    fn propose(&mut self, round: u32, draft: &Contract) -> Result<ClauseUpdate>;
}

/// One scripted update per round; rounds past the script propose nothing.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNegotiator {
    pub rounds: Vec<ClauseUpdate>,
}

impl Negotiator for ScriptedNegotiator {
    fn propose(&mut self, round: u32, _draft: &Contract) -> Result<ClauseUpdate> {
        Ok(self.rounds.get(round as usize - 1).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MediationConfig {
    pub max_rounds: u32,
    /// Curation budget for each child's inherited trajectory.
    pub budget: u64,
}

impl Default for MediationConfig {
    fn default() -> Self {
        MediationConfig { max_rounds: 4, budget: 512 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mediation {
    pub contract: Contract,
    pub contract_artifact: Arc<Artifact>,
    pub children: [AgentInstance; 2],
    pub event: EventId,
}

/// Negotiates a contract between two agents, then forks a clean child of
/// each seeded with the finalized contract and a curated trajectory.
pub fn mediate(
    store: &mut Store,
    party_a: &AgentInstance,
    party_b: &AgentInstance,
    task_intent: &str,
    negotiator: &mut dyn Negotiator,
    config: MediationConfig,
) -> Result<Mediation> {
    if party_a.id == party_b.id {
        return Err(Error::SameParty);
    }
    let mut contract = Contract::draft(alloc::vec![party_a.id.clone(), party_b.id.clone()]);
    for round in 1..=config.max_rounds {
        negotiator.propose(round, &contract)?.apply(&mut contract);
        contract.negotiation_rounds = round;
        if contract.missing_clauses().is_empty() {
            contract.status = ContractStatus::Final;
            break;
        }
    }
    if contract.status != ContractStatus::Final {
        return Err(Error::NegotiationFailed {
            rounds: config.max_rounds,
            missing: contract.missing_clauses().join(","),
        });
    }
    let text = contract.render();
    let artifact = store.put(
        NewArtifact::new(Kind::Contract, text.clone())
            .meta("parties", contract.parties.join(","))
            .author("mediator"),
    )?;
    let step = store.clock();
    let event = store.emit(
        EventDraft::new(BindingKind::Contract, "mediator", artifact.id().as_str())
            .evidence(format!("parties={} rounds={}", contract.parties.join(","), contract.negotiation_rounds))
            .step(step)
            .outcome(Outcome::Validated),
    )?;
    let mut children = Vec::with_capacity(2);
    for party in [party_a, party_b] {
        let seed = seed_step(artifact.id(), &text, task_intent);
        children.push(fork(store, &[party], task_intent, config.budget, Some(seed), &LexicalScorer)?);
    }
    let [a, b]: [AgentInstance; 2] = children.try_into().map_err(|_| Error::EmptyRoster)?;
    Ok(Mediation { contract, contract_artifact: artifact, children: [a, b], event })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FacadePolicy {
    pub deny_patterns: Vec<String>,
    pub output_schema_keys: Vec<String>,
}

/// Drops lines containing any deny pattern; outbound text with schema keys
/// is reduced to the first `key: value` line per key, in key order.
pub fn facade_filter(text: &str, policy: &FacadePolicy, direction: Direction) -> String {
    let use_schema = direction == Direction::Outbound && !policy.output_schema_keys.is_empty();
    if policy.deny_patterns.is_empty() && !use_schema {
        return text.into();
    }
    let kept: Vec<&str> =
        text.lines().filter(|l| !policy.deny_patterns.iter().any(|p| l.contains(p.as_str()))).collect();
    let lines: Vec<&str> = if use_schema {
        policy
            .output_schema_keys
            .iter()
            .filter_map(|key| kept.iter().copied().find(|l| l.split_once(':').is_some_and(|(k, _)| k.trim() == key)))
            .collect()
    } else {
        kept
    };
    let mut out = lines.join("\n");
    if text.ends_with('\n') && !out.is_empty() {
        out.push('\n');
    }
    out
}

/// [`facade_filter`] that records what it removed.
pub fn facade_filter_logged(
    text: &str,
    policy: &FacadePolicy,
    direction: Direction,
    sink: &mut dyn EventSink,
    subject: &str,
    object: &str,
) -> Result<(String, EventId)> {
    let out = facade_filter(text, policy, direction);
    let before = text.lines().count();
    let after = out.lines().count();
    let event = sink.emit_event(
        EventDraft::new(BindingKind::Facade, subject, object)
            .evidence(format!("removed={} kept={after}", before - after))
            .step(sink.step()),
    )?;
    Ok((out, event))
}

/// Root-first supply chain ending at `id`.
pub fn trace_chain(log: &ProvenanceLog, id: EventId) -> Result<crate::provenance::SupplyChain> {
    log.trace_chain(id)
}
