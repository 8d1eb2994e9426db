//! Persistent artifacts with semantic version history and tiering.
//!
//! The store is a cheap-to-clone handle: artifacts sit behind `Arc`s and every
//! write goes through `Arc::make_mut`, so a clone taken for a snapshot or a
//! sandbox shares storage until one side writes. A writer never changes what
//! an older clone observes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;
use core::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::provenance::{BindingKind, EventDraft, EventId, Outcome, ProvenanceLog};
use crate::text::normalize_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArtifactId(String);

impl ArtifactId {
    pub fn new(id: impl Into<String>) -> Self {
        ArtifactId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ArtifactId {
    fn from(s: &str) -> Self {
        ArtifactId(s.into())
    }
}

impl From<String> for ArtifactId {
    fn from(s: String) -> Self {
        ArtifactId(s)
    }
}

impl Borrow<str> for ArtifactId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Kind {
    Prompt,
    Skill,
    Plan,
    Index,
    Team,
    Fork,
    Contract,
    Evolve,
    Task,
    Trace,
    Memory,
    Document,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Prompt,
        Kind::Skill,
        Kind::Plan,
        Kind::Index,
        Kind::Team,
        Kind::Fork,
        Kind::Contract,
        Kind::Evolve,
        Kind::Task,
        Kind::Trace,
        Kind::Memory,
        Kind::Document,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Prompt => "prompt",
            Kind::Skill => "skill",
            Kind::Plan => "plan",
            Kind::Index => "index",
            Kind::Team => "team",
            Kind::Fork => "fork",
            Kind::Contract => "contract",
            Kind::Evolve => "evolve",
            Kind::Task => "task",
            Kind::Trace => "trace",
            Kind::Memory => "memory",
            Kind::Document => "document",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidFrontMatter(format!("unknown kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Tier {
    Hot,
    Warm,
    Cold,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Hot => "hot",
            Tier::Warm => "warm",
            Tier::Cold => "cold",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hot" => Ok(Tier::Hot),
            "warm" => Ok(Tier::Warm),
            "cold" => Ok(Tier::Cold),
            other => Err(Error::InvalidFrontMatter(format!("unknown tier `{other}`"))),
        }
    }
}

/// One step of an artifact's semantic history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PalimpsestEntry {
    pub version: u32,
    pub rationale: String,
    pub content_before: String,
    pub content_after: String,
    pub author: String,
    pub step: u64,
}

/// Keys the on-disk format uses for store-owned metadata.
pub const RESERVED_KEYS: [&str; 5] = ["id", "tier", "use_count", "created_step", "last_used_step"];

/// Insertion-ordered `key: value` map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrontMatter(Vec<(String, String)>);

impl FrontMatter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Replaces an existing value in place, or appends.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.0.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let idx = self.0.iter().position(|(k, _)| k == key)?;
        Some(self.0.remove(idx).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn insert_at(&mut self, idx: usize, key: &str, value: String) {
        let idx = idx.min(self.0.len());
        self.0.insert(idx, (key.into(), value));
    }

    fn validate(&self) -> Result<()> {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if k.trim().is_empty() {
                return Err(Error::InvalidFrontMatter("empty key".into()));
            }
            if k.trim() != k || k.contains(':') || k.contains('\n') || k.contains('\r') {
                return Err(Error::InvalidFrontMatter(format!("key `{k}` is not a plain word")));
            }
            if v.contains('\n') || v.contains('\r') {
                return Err(Error::InvalidFrontMatter(format!("value of `{k}` spans lines")));
            }
            if self.0[..i].iter().any(|(prev, _)| prev == k) {
                return Err(Error::InvalidFrontMatter(format!("duplicate key `{k}`")));
            }
        }
        Ok(())
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for FrontMatter {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        FrontMatter(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    id: ArtifactId,
    kind: Kind,
    content: String,
    front_matter: FrontMatter,
    tier: Tier,
    use_count: u64,
    created_step: u64,
    last_used_step: u64,
    history: Vec<PalimpsestEntry>,
}

/// Every field of an [`Artifact`], for loaders that rebuild one from disk.
#[derive(Debug, Clone)]
pub struct ArtifactParts {
    pub id: ArtifactId,
    pub kind: Kind,
    pub front_matter: FrontMatter,
    pub tier: Tier,
    pub use_count: u64,
    pub created_step: u64,
    pub last_used_step: u64,
    pub history: Vec<PalimpsestEntry>,
}

impl Artifact {
    /// Validates the history chain and derives the current content from it.
    pub fn from_parts(parts: ArtifactParts) -> Result<Self> {
        let corrupt = || Error::CorruptHistory(parts.id.clone());
        if parts.history.is_empty() {
            return Err(corrupt());
        }
        for (i, entry) in parts.history.iter().enumerate() {
            if entry.version as usize != i + 1 {
                return Err(corrupt());
            }
            if i > 0 && entry.content_before != parts.history[i - 1].content_after {
                return Err(corrupt());
            }
        }
        parts.front_matter.validate()?;
        if parts.front_matter.get("kind") != Some(parts.kind.as_str()) {
            return Err(Error::InvalidFrontMatter(format!("`{}` kind key mismatch", parts.id)));
        }
        let content = parts.history.last().map(|e| e.content_after.clone()).unwrap_or_default();
        Ok(Artifact {
            id: parts.id,
            kind: parts.kind,
            content,
            front_matter: parts.front_matter,
            tier: parts.tier,
            use_count: parts.use_count,
            created_step: parts.created_step,
            last_used_step: parts.last_used_step,
            history: parts.history,
        })
    }

    pub fn id(&self) -> &ArtifactId {
        &self.id
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn front_matter(&self) -> &FrontMatter {
        &self.front_matter
    }

    /// The front-matter `name`; falls back to the id.
    pub fn name(&self) -> &str {
        self.front_matter.get("name").unwrap_or(self.id.as_str())
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn use_count(&self) -> u64 {
        self.use_count
    }

    pub fn created_step(&self) -> u64 {
        self.created_step
    }

    pub fn last_used_step(&self) -> u64 {
        self.last_used_step
    }

    pub fn history(&self) -> &[PalimpsestEntry] {
        &self.history
    }

    pub fn version(&self) -> u32 {
        self.history.len() as u32
    }

    /// Content as recorded right after `version` was written.
    pub fn content_at(&self, version: u32) -> Option<&str> {
        let idx = (version as usize).checked_sub(1)?;
        self.history.get(idx).map(|e| e.content_after.as_str())
    }

    pub fn task_scope(&self) -> Option<&str> {
        self.front_matter.get("task_scope")
    }

    fn append_entry(&mut self, content: String, rationale: String, author: &str, step: u64) -> PalimpsestEntry {
        let entry = PalimpsestEntry {
            version: self.version() + 1,
            rationale,
            content_before: core::mem::replace(&mut self.content, content.clone()),
            content_after: content,
            author: author.into(),
            step,
        };
        self.history.push(entry.clone());
        entry
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierMigrationRecord {
    pub artifact: ArtifactId,
    pub from: Tier,
    pub to: Tier,
    pub reason: String,
    pub step: u64,
    pub event: EventId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    /// Validated uses after which a hot artifact is promoted to warm.
    pub promotion_threshold: u64,
    /// Logical steps without use after which maintenance marks an item stale.
    pub staleness_window: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { promotion_threshold: 3, staleness_window: 1000 }
    }
}

/// Input to [`Store::put`].
#[derive(Debug, Clone)]
pub struct NewArtifact {
    pub id: Option<ArtifactId>,
    pub kind: Kind,
    pub content: String,
    pub front_matter: FrontMatter,
    pub author: String,
}

impl NewArtifact {
    pub fn new(kind: Kind, content: impl Into<String>) -> Self {
        NewArtifact {
            id: None,
            kind,
            content: content.into(),
            front_matter: FrontMatter::new(),
            author: "system".into(),
        }
    }

    pub fn id(mut self, id: impl Into<ArtifactId>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.front_matter.set("name", name);
        self
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.front_matter.set(key, value);
        self
    }

    pub fn front_matter(mut self, fm: FrontMatter) -> Self {
        self.front_matter = fm;
        self
    }

    pub fn author(mut self, author: impl Into<String>) -> Self {
        self.author = author.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaintenanceReport {
    /// Same kind, same whitespace-normalized nonempty body; sorted by id.
    pub duplicate_groups: Vec<Vec<ArtifactId>>,
    pub stale: Vec<ArtifactId>,
    pub conflicts: Vec<NameConflict>,
}

impl MaintenanceReport {
    pub fn is_empty(&self) -> bool {
        self.duplicate_groups.is_empty() && self.stale.is_empty() && self.conflicts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameConflict {
    pub kind: Kind,
    pub name: String,
    pub ids: Vec<ArtifactId>,
}

/// Counters that belong to a store but not to any single artifact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub clock: u64,
    pub next_seq: u64,
    pub next_agent: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    config: StoreConfig,
    artifacts: Arc<BTreeMap<ArtifactId, Arc<Artifact>>>,
    log: Arc<ProvenanceLog>,
    migrations: Arc<Vec<TierMigrationRecord>>,
    counters: StoreCounters,
}

const STORE_SUBJECT: &str = "artifact-store";

impl Store {
    pub fn new(config: StoreConfig) -> Self {
        Store { config, ..Default::default() }
    }

    /// Rebuilds a store from persisted parts, checking the use-count /
    /// provenance agreement for every artifact.
    pub fn from_parts(
        config: StoreConfig,
        artifacts: Vec<Artifact>,
        log: ProvenanceLog,
        migrations: Vec<TierMigrationRecord>,
        counters: StoreCounters,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for a in artifacts {
            if log.validated_uses(a.id.as_str()) as u64 != a.use_count {
                return Err(Error::CorruptHistory(a.id.clone()));
            }
            let id = a.id.clone();
            if map.insert(id.clone(), Arc::new(a)).is_some() {
                return Err(Error::IdCollision(id));
            }
        }
        Ok(Store {
            config,
            artifacts: Arc::new(map),
            log: Arc::new(log),
            migrations: Arc::new(migrations),
            counters,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn counters(&self) -> StoreCounters {
        self.counters
    }

    pub fn clock(&self) -> u64 {
        self.counters.clock
    }

    pub fn advance_clock(&mut self, steps: u64) -> u64 {
        self.counters.clock += steps;
        self.counters.clock
    }

    pub fn log(&self) -> &ProvenanceLog {
        &self.log
    }

    pub fn migrations(&self) -> &[TierMigrationRecord] {
        &self.migrations
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.artifacts.contains_key(id)
    }

    /// Artifacts in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Artifact> {
        self.artifacts.values().map(|a| a.as_ref())
    }

    pub fn of_kind(&self, kind: Kind) -> impl Iterator<Item = &Artifact> {
        self.iter().filter(move |a| a.kind == kind)
    }

    pub fn get(&self, id: &str) -> Result<&Artifact> {
        self.artifacts
            .get(id)
            .map(|a| a.as_ref())
            .ok_or_else(|| Error::NotFound(id.into()))
    }

    /// An immutable handle on the current state.
    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot(self.clone())
    }

    /// Fresh agent instance id, unique within this store's lineage.
    pub fn allocate_agent_id(&mut self, prefix: &str) -> String {
        self.counters.next_agent += 1;
        format!("{prefix}-{}", self.counters.next_agent)
    }

    /// Advances id counters past everything `other` allocated, so ids minted
    /// in a sandbox never reappear here.
    pub fn absorb_counters(&mut self, other: &Store) {
        self.counters.next_seq = self.counters.next_seq.max(other.counters.next_seq);
        self.counters.next_agent = self.counters.next_agent.max(other.counters.next_agent);
    }

    fn artifact_mut(&mut self, id: &str) -> Result<&mut Artifact> {
        let map = Arc::make_mut(&mut self.artifacts);
        map.get_mut(id)
            .map(Arc::make_mut)
            .ok_or_else(|| Error::NotFound(id.into()))
    }

    fn fresh_id(&mut self, kind: Kind) -> ArtifactId {
        loop {
            self.counters.next_seq += 1;
            let id = ArtifactId(format!("{kind}-{:04}", self.counters.next_seq));
            if !self.artifacts.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn put(&mut self, new: NewArtifact) -> Result<Arc<Artifact>> {
        let mut fm = new.front_matter;
        fm.validate()?;
        if let Some(reserved) = fm.iter().map(|(k, _)| k).find(|k| RESERVED_KEYS.contains(k)) {
            return Err(Error::InvalidFrontMatter(format!("`{reserved}` is store-managed")));
        }
        match fm.get("kind") {
            Some(k) if k != new.kind.as_str() => {
                return Err(Error::InvalidFrontMatter(format!(
                    "front-matter kind `{k}` does not match {}",
                    new.kind
                )))
            }
            Some(_) => {}
            None => fm.insert_at(0, "kind", new.kind.as_str().into()),
        }
        let id = match new.id {
            Some(id) if self.artifacts.contains_key(&id) => return Err(Error::IdCollision(id)),
            Some(id) if id.as_str().is_empty() || id.as_str().contains(['/', '\\', '\n', '\t']) => {
                return Err(Error::InvalidFrontMatter(format!("`{id}` is not a usable id")))
            }
            Some(id) => id,
            None => self.fresh_id(new.kind),
        };
        if fm.get("name").is_none() {
            let at = fm.0.iter().position(|(k, _)| k == "kind").map_or(0, |i| i + 1);
            fm.insert_at(at, "name", id.to_string());
        }
        let step = self.counters.clock;
        let artifact = Arc::new(Artifact {
            id: id.clone(),
            kind: new.kind,
            content: new.content.clone(),
            front_matter: fm,
            tier: Tier::Hot,
            use_count: 0,
            created_step: step,
            last_used_step: step,
            history: alloc::vec![PalimpsestEntry {
                version: 1,
                rationale: "created".into(),
                content_before: String::new(),
                content_after: new.content,
                author: new.author,
                step,
            }],
        });
        Arc::make_mut(&mut self.artifacts).insert(id, artifact.clone());
        Ok(artifact)
    }

    /// Shorthand for [`Store::put`] without an explicit id.
    pub fn put_artifact(&mut self, kind: Kind, content: &str, front_matter: FrontMatter) -> Result<Arc<Artifact>> {
        self.put(NewArtifact::new(kind, content).front_matter(front_matter))
    }

    pub fn revise(&mut self, id: &str, new_content: &str, rationale: &str, author: &str) -> Result<PalimpsestEntry> {
        if rationale.trim().is_empty() {
            return Err(Error::RationaleRequired);
        }
        let step = self.counters.clock;
        let artifact = self.artifact_mut(id)?;
        Ok(artifact.append_entry(new_content.into(), rationale.into(), author, step))
    }

    /// Compare-and-set revision: fails with `ConcurrentEdit` unless the
    /// artifact is still at `expected_version`.
    pub fn revise_expected(
        &mut self,
        id: &str,
        expected_version: u32,
        new_content: &str,
        rationale: &str,
        author: &str,
    ) -> Result<PalimpsestEntry> {
        let found = self.get(id)?.version();
        if found != expected_version {
            return Err(Error::ConcurrentEdit { id: id.into(), expected: expected_version, found });
        }
        self.revise(id, new_content, rationale, author)
    }

    /// Restores the content of `target_version` as a new history entry.
    pub fn rollback(&mut self, id: &str, target_version: u32, author: &str) -> Result<&Artifact> {
        let current = self.get(id)?;
        let content = current
            .content_at(target_version)
            .ok_or_else(|| Error::VersionNotFound { id: id.into(), version: target_version })?
            .to_string();
        let step = self.counters.clock;
        let artifact = self.artifact_mut(id)?;
        artifact.append_entry(content, format!("rollback to v{target_version}"), author, step);
        Ok(artifact)
    }

    pub fn set_meta(&mut self, id: &str, key: &str, value: &str) -> Result<()> {
        if RESERVED_KEYS.contains(&key) || key == "kind" {
            return Err(Error::InvalidFrontMatter(format!("`{key}` is store-managed")));
        }
        let artifact = self.artifact_mut(id)?;
        let mut fm = artifact.front_matter.clone();
        fm.set(key, value);
        fm.validate()?;
        artifact.front_matter = fm;
        Ok(())
    }

    /// Appends a binding event. A validated event naming an artifact counts
    /// as a validated use of that artifact.
    pub fn emit(&mut self, draft: EventDraft) -> Result<EventId> {
        let validated_object = (draft.outcome == Outcome::Validated && self.contains(&draft.object))
            .then(|| draft.object.clone());
        let id = Arc::make_mut(&mut self.log).append(draft)?;
        if let Some(object) = validated_object {
            self.bump_use(&object, id)?;
        }
        Ok(id)
    }

    /// Resolves a pending binding; validating one that targets an artifact
    /// counts as a use.
    pub fn resolve_binding(&mut self, event: EventId, outcome: Outcome) -> Result<()> {
        let object = Arc::make_mut(&mut self.log).resolve(event, outcome)?.object.clone();
        if outcome == Outcome::Validated && self.contains(&object) {
            self.bump_use(&object, event)?;
        }
        Ok(())
    }

    /// Hebbian use tracking. Validated uses count toward promotion; any use
    /// pulls a cold artifact back to hot.
    pub fn record_use(&mut self, id: &str, validated: bool) -> Result<&Artifact> {
        self.record_use_by(id, validated, STORE_SUBJECT, None)
    }

    pub fn record_use_by(
        &mut self,
        id: &str,
        validated: bool,
        subject: &str,
        parent: Option<EventId>,
    ) -> Result<&Artifact> {
        self.get(id)?;
        let outcome = if validated { Outcome::Validated } else { Outcome::Failed };
        let step = self.counters.clock;
        let event = Arc::make_mut(&mut self.log).append(
            EventDraft::new(BindingKind::ToolCall, subject, id)
                .evidence(if validated { "use validated" } else { "use not validated" })
                .parent(parent)
                .step(step)
                .outcome(outcome),
        )?;
        if validated {
            self.bump_use(id, event)?;
        } else {
            self.artifact_mut(id)?.last_used_step = step;
            self.warm_up(id, event)?;
        }
        self.get(id)
    }

    fn bump_use(&mut self, id: &str, cause: EventId) -> Result<()> {
        let step = self.counters.clock;
        let threshold = self.config.promotion_threshold;
        let artifact = self.artifact_mut(id)?;
        artifact.use_count += 1;
        artifact.last_used_step = step;
        let promote = artifact.use_count >= threshold;
        self.warm_up(id, cause)?;
        if promote && self.get(id)?.tier == Tier::Hot {
            self.migrate_inner(id, Tier::Warm, "hebbian promotion", Some(cause))?;
        }
        Ok(())
    }

    fn warm_up(&mut self, id: &str, cause: EventId) -> Result<()> {
        if self.get(id)?.tier == Tier::Cold {
            self.migrate_inner(id, Tier::Hot, "reused while cold", Some(cause))?;
        }
        Ok(())
    }

    pub fn migrate_tier(&mut self, id: &str, new_tier: Tier, reason: &str) -> Result<TierMigrationRecord> {
        self.migrate_inner(id, new_tier, reason, None)
    }

    fn migrate_inner(
        &mut self,
        id: &str,
        to: Tier,
        reason: &str,
        parent: Option<EventId>,
    ) -> Result<TierMigrationRecord> {
        let from = self.get(id)?.tier;
        if from == to {
            return Err(Error::NoOpMigration(id.into()));
        }
        let step = self.counters.clock;
        // Migrations are facts, not bindings awaiting validation; they stay
        // pending so they never count as uses.
        let event = Arc::make_mut(&mut self.log).append(
            EventDraft::new(BindingKind::TierMigration, STORE_SUBJECT, id)
                .evidence(format!("{from}->{to}: {reason}"))
                .parent(parent)
                .step(step),
        )?;
        self.artifact_mut(id)?.tier = to;
        let record = TierMigrationRecord { artifact: id.into(), from, to, reason: reason.into(), step, event };
        Arc::make_mut(&mut self.migrations).push(record.clone());
        Ok(record)
    }

    /// Tier obtained by replaying migration records from the initial hot tier.
    pub fn replay_tier(&self, id: &str) -> Tier {
        self.migrations
            .iter()
            .filter(|m| m.artifact.as_str() == id)
            .fold(Tier::Hot, |_, m| m.to)
    }

    /// Finds duplicates, stale items and name conflicts and marks the first
    /// two in front-matter. Nothing is deleted.
    pub fn run_maintenance(&mut self) -> MaintenanceReport {
        let report = self.scan_maintenance();
        for group in &report.duplicate_groups {
            let keep = group[0].to_string();
            for dup in &group[1..] {
                // infallible: ids come from the scan and keys are valid
                let _ = self.set_meta(dup.as_str(), "duplicate_of", &keep);
            }
        }
        for id in &report.stale {
            let _ = self.set_meta(id.as_str(), "stale", "true");
        }
        report
    }

    /// The maintenance scan without marking.
    pub fn scan_maintenance(&self) -> MaintenanceReport {
        let mut by_body: BTreeMap<(Kind, String), Vec<ArtifactId>> = BTreeMap::new();
        let mut by_name: BTreeMap<(Kind, &str), Vec<ArtifactId>> = BTreeMap::new();
        let mut stale = Vec::new();
        let now = self.counters.clock;
        for a in self.iter() {
            let body = normalize_whitespace(&a.content);
            if !body.is_empty() {
                by_body.entry((a.kind, body)).or_default().push(a.id.clone());
            }
            by_name.entry((a.kind, a.name())).or_default().push(a.id.clone());
            if now.saturating_sub(a.last_used_step) > self.config.staleness_window {
                stale.push(a.id.clone());
            }
        }
        let mut duplicate_groups: Vec<_> = by_body.into_values().filter(|g| g.len() > 1).collect();
        duplicate_groups.sort();
        let conflicts = by_name
            .into_iter()
            .filter(|(_, ids)| ids.len() > 1)
            .map(|((kind, name), ids)| NameConflict { kind, name: name.into(), ids })
            .collect();
        MaintenanceReport { duplicate_groups, stale, conflicts }
    }

    /// Ids whose artifact differs from (or is absent in) `base`.
    pub fn diverged_from(&self, base: &Store) -> Vec<ArtifactId> {
        self.artifacts
            .iter()
            .filter(|(id, a)| base.artifacts.get(*id).is_none_or(|b| !Arc::ptr_eq(a, b) && !<Artifact as PartialEq>::eq(a, b)))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// SHA-256 over a canonical encoding of every byte of store state.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(&self.config.promotion_threshold.to_le_bytes());
        field(&self.config.staleness_window.to_le_bytes());
        field(&self.counters.clock.to_le_bytes());
        field(&self.counters.next_seq.to_le_bytes());
        field(&self.counters.next_agent.to_le_bytes());
        for a in self.iter() {
            field(a.id.as_str().as_bytes());
            field(a.kind.as_str().as_bytes());
            field(a.content.as_bytes());
            for (k, v) in a.front_matter.iter() {
                field(k.as_bytes());
                field(v.as_bytes());
            }
            field(a.tier.as_str().as_bytes());
            field(&a.use_count.to_le_bytes());
            field(&a.created_step.to_le_bytes());
            field(&a.last_used_step.to_le_bytes());
            for e in &a.history {
                field(&e.version.to_le_bytes());
                field(e.rationale.as_bytes());
                field(e.content_before.as_bytes());
                field(e.content_after.as_bytes());
                field(e.author.as_bytes());
                field(&e.step.to_le_bytes());
            }
        }
        for e in self.log.events() {
            field(&e.id.0.to_le_bytes());
            field(e.kind.as_str().as_bytes());
            field(e.subject.as_bytes());
            field(e.object.as_bytes());
            field(e.evidence.as_bytes());
            field(&e.parent.map_or(0, |p| p.0).to_le_bytes());
            field(&e.step.to_le_bytes());
            field(e.outcome.as_str().as_bytes());
        }
        for m in self.migrations.iter() {
            field(m.artifact.as_str().as_bytes());
            field(m.from.as_str().as_bytes());
            field(m.to.as_str().as_bytes());
            field(m.reason.as_bytes());
            field(&m.step.to_le_bytes());
            field(&m.event.0.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex(&self.content_hash())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Read-only view of a store at one point in time.
#[derive(Debug, Clone)]
pub struct StoreSnapshot(Store);

impl StoreSnapshot {
    pub fn get(&self, id: &str) -> Result<&Artifact> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Artifact> {
        self.0.iter()
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.0.content_hash()
    }

    pub fn as_store(&self) -> &Store {
        &self.0
    }

    /// A writable store starting from this snapshot.
    pub fn fork(&self) -> Store {
        self.0.clone()
    }
}
