//! On-disk layout of a store root:
//!
//! ```text
//! <root>/store.toml                 config and counters
//! <root>/provenance.log             one binding event per line, tab separated
//! <root>/migrations.log             one tier migration per line
//! <root>/<kind>/<id>.md             front matter, then the current body
//! <root>/<kind>/<id>.palimpsest     append-only history, length-prefixed fields
//! ```
//!
//! The `.md` body is the human-facing copy. If it differs from the last
//! history entry on load, the difference is taken as an external edit and
//! appended to the history.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use lss_core::provenance::EventDraft;
use lss_core::store::{ArtifactParts, FrontMatter, StoreCounters, TierMigrationRecord};
use lss_core::{Artifact, ArtifactId, BindingEvent, EventId, Kind, PalimpsestEntry, ProvenanceLog, Store, StoreConfig, Tier};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use lss_core::Error as CoreError;

pub const HOME_VAR: &str = "LSS_HOME";

/// Author recorded for bodies edited outside the store.
pub const EXTERNAL_AUTHOR: &str = "external";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsStore {
    root: PathBuf,
}

#[derive(Serialize, Deserialize, Default)]
struct Meta {
    #[serde(default)]
    config: MetaConfig,
    #[serde(default)]
    counters: MetaCounters,
}

#[derive(Serialize, Deserialize)]
struct MetaConfig {
    promotion_threshold: u64,
    staleness_window: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        let c = StoreConfig::default();
        MetaConfig { promotion_threshold: c.promotion_threshold, staleness_window: c.staleness_window }
    }
}

#[derive(Serialize, Deserialize, Default)]
struct MetaCounters {
    clock: u64,
    next_seq: u64,
    next_agent: u64,
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FsStore { root: root.into() }
    }

    /// Root taken from `LSS_HOME`, else `./.lss`.
    pub fn from_env() -> Self {
        FsStore::new(std::env::var_os(HOME_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".lss")))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifact_path(&self, kind: Kind, id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{id}.md"))
    }

    pub fn history_path(&self, kind: Kind, id: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(format!("{id}.palimpsest"))
    }

    /// Loads the store; a missing root is an empty store with default config.
    pub fn load(&self) -> Result<Store> {
        let meta: Meta = match read_optional(&self.root.join("store.toml"))? {
            Some(text) => toml::from_str(&text)
                .map_err(|e| Error::malformed(self.root.join("store.toml"), 0, e.to_string()))?,
            None => Meta::default(),
        };
        let config = StoreConfig {
            promotion_threshold: meta.config.promotion_threshold,
            staleness_window: meta.config.staleness_window,
        };
        let mut artifacts = Vec::new();
        for kind in Kind::ALL {
            let dir = self.root.join(kind.as_str());
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "md"))
                .collect();
            paths.sort();
            for path in paths {
                artifacts.push(self.load_artifact(kind, &path, meta.counters.clock)?);
            }
        }
        let log_path = self.root.join("provenance.log");
        let events = match read_optional(&log_path)? {
            Some(text) => parse_events(&log_path, &text)?,
            None => Vec::new(),
        };
        let log = ProvenanceLog::from_events(events)?;
        let mig_path = self.root.join("migrations.log");
        let migrations = match read_optional(&mig_path)? {
            Some(text) => parse_migrations(&mig_path, &text)?,
            None => Vec::new(),
        };
        let counters = StoreCounters {
            clock: meta.counters.clock,
            next_seq: meta.counters.next_seq,
            next_agent: meta.counters.next_agent,
        };
        Ok(Store::from_parts(config, artifacts, log, migrations, counters)?)
    }

    fn load_artifact(&self, kind: Kind, path: &Path, clock: u64) -> Result<Artifact> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (pairs, body) = split_front_matter(&text).map_err(|(line, m)| Error::malformed(path, line, m))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut fm = FrontMatter::new();
        let (mut id, mut tier, mut use_count, mut created, mut last_used) = (stem.clone(), Tier::Hot, 0, 0, 0);
        for (line, key, value) in pairs {
            let num = |v: &str| v.parse::<u64>().map_err(|_| Error::malformed(path, line, format!("`{key}` is not a number")));
            match key.as_str() {
                "id" => id = value,
                "tier" => tier = value.parse().map_err(|e: CoreError| Error::malformed(path, line, e.to_string()))?,
                "use_count" => use_count = num(&value)?,
                "created_step" => created = num(&value)?,
                "last_used_step" => last_used = num(&value)?,
                _ => fm.set(key, value),
            }
        }
        if id != stem {
            return Err(Error::malformed(path, 1, format!("id `{id}` does not match file name")));
        }
        let hist_path = self.history_path(kind, &id);
        let mut history = match read_optional(&hist_path)? {
            Some(text) => parse_history(&hist_path, &text)?,
            None => Vec::new(),
        };
        let last = history.last().map(|e| e.content_after.as_str());
        if last != Some(body) {
            history.push(PalimpsestEntry {
                version: history.len() as u32 + 1,
                rationale: "external edit".into(),
                content_before: last.unwrap_or_default().to_string(),
                content_after: body.to_string(),
                author: EXTERNAL_AUTHOR.into(),
                step: clock,
            });
        }
        Ok(Artifact::from_parts(ArtifactParts {
            id: ArtifactId::new(id),
            kind,
            front_matter: fm,
            tier,
            use_count,
            created_step: created,
            last_used_step: last_used,
            history,
        })?)
    }

    /// Writes every artifact and log. History sidecars are only appended to;
    /// a sidecar holding entries this store does not know about means
    /// another writer got there first, reported as `ConcurrentEdit`.
    pub fn save(&self, store: &Store) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for artifact in store.iter() {
            self.save_artifact(artifact)?;
        }
        let c = store.counters();
        let meta = Meta {
            config: MetaConfig {
                promotion_threshold: store.config().promotion_threshold,
                staleness_window: store.config().staleness_window,
            },
            counters: MetaCounters { clock: c.clock, next_seq: c.next_seq, next_agent: c.next_agent },
        };
        let meta_text = toml::to_string(&meta).map_err(|e| Error::Usage(e.to_string()))?;
        write_atomic(&self.root.join("store.toml"), &meta_text)?;
        write_atomic(&self.root.join("provenance.log"), &render_events(store.log().events()))?;
        write_atomic(&self.root.join("migrations.log"), &render_migrations(store.migrations()))?;
        Ok(())
    }

    fn save_artifact(&self, a: &Artifact) -> Result<()> {
        let dir = self.root.join(a.kind().as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let hist_path = self.history_path(a.kind(), a.id().as_str());
        let on_disk = match read_optional(&hist_path)? {
            Some(text) => parse_history(&hist_path, &text)?,
            None => Vec::new(),
        };
        let history = a.history();
        if on_disk.len() > history.len() || on_disk[..] != history[..on_disk.len()] {
            return Err(CoreError::ConcurrentEdit {
                id: a.id().clone(),
                expected: on_disk.len().min(history.len()) as u32,
                found: on_disk.len() as u32,
            }
            .into());
        }
        let mut tail = String::new();
        for entry in &history[on_disk.len()..] {
            render_entry(&mut tail, entry);
        }
        if !tail.is_empty() {
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&hist_path)
                .map_err(|e| Error::io(&hist_path, e))?;
            f.write_all(tail.as_bytes()).map_err(|e| Error::io(&hist_path, e))?;
        }
        write_atomic(&self.artifact_path(a.kind(), a.id().as_str()), &render_artifact(a))
    }
}

pub fn render_artifact(a: &Artifact) -> String {
    let mut out = format!("---\nid: {}\n", a.id());
    for (k, v) in a.front_matter().iter() {
        out.push_str(&format!("{k}: {v}\n"));
    }
    out.push_str(&format!(
        "tier: {}\nuse_count: {}\ncreated_step: {}\nlast_used_step: {}\n---\n",
        a.tier(),
        a.use_count(),
        a.created_step(),
        a.last_used_step()
    ));
    out.push_str(a.content());
    out
}

type FrontMatterLines = Vec<(usize, String, String)>;

/// Splits `---` delimited front matter from the body. Errors carry a
/// 1-based line number.
pub fn split_front_matter(text: &str) -> std::result::Result<(FrontMatterLines, &str), (usize, String)> {
    let rest = text.strip_prefix("---\n").ok_or((1, "missing opening `---`".to_string()))?;
    let mut pairs = Vec::new();
    let mut offset = 4;
    for (i, line) in rest.split_inclusive('\n').enumerate() {
        offset += line.len();
        let line_no = i + 2;
        let trimmed = line.strip_suffix('\n').unwrap_or(line);
        if trimmed == "---" {
            if !line.ends_with('\n') {
                return Ok((pairs, ""));
            }
            return Ok((pairs, &text[offset..]));
        }
        let (k, v) = trimmed.split_once(':').ok_or((line_no, format!("expected `key: value`, got `{trimmed}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err((line_no, "empty key".into()));
        }
        if pairs.iter().any(|(_, p, _)| p == k) {
            return Err((line_no, format!("duplicate key `{k}`")));
        }
        pairs.push((line_no, k.to_string(), v.strip_prefix(' ').unwrap_or(v).to_string()));
    }
    Err((text.lines().count() + 1, "missing closing `---`".into()))
}

fn render_entry(out: &mut String, e: &PalimpsestEntry) {
    let version = e.version.to_string();
    let step = e.step.to_string();
    let fields: [(&str, &str); 6] = [
        ("version", &version),
        ("step", &step),
        ("author", &e.author),
        ("rationale", &e.rationale),
        ("before", &e.content_before),
        ("after", &e.content_after),
    ];
    for (name, value) in fields {
        out.push_str(&format!("{name} {}\n{value}\n", value.len()));
    }
}

pub fn parse_history(path: &Path, text: &str) -> Result<Vec<PalimpsestEntry>> {
    const FIELDS: [&str; 6] = ["version", "step", "author", "rationale", "before", "after"];
    let bytes = text.as_bytes();
    let (mut pos, mut line) = (0usize, 1usize);
    let mut entries = Vec::new();
    while pos < bytes.len() {
        let mut values: Vec<String> = Vec::with_capacity(6);
        for name in FIELDS {
            let bad = |line: usize, m: String| Error::malformed(path, line, m);
            let nl = text[pos..].find('\n').ok_or_else(|| bad(line, "truncated record header".into()))?;
            let header = &text[pos..pos + nl];
            let len = header
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .and_then(|n| n.parse::<usize>().ok())
                .ok_or_else(|| bad(line, format!("expected `{name} <len>`, got `{header}`")))?;
            pos += nl + 1;
            line += 1;
            let end = pos + len;
            if end >= bytes.len() || bytes[end] != b'\n' || !text.is_char_boundary(end) {
                return Err(bad(line, format!("field `{name}` overruns its length")));
            }
            let value = &text[pos..end];
            line += value.matches('\n').count() + 1;
            values.push(value.to_string());
            pos = end + 1;
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| Error::malformed(path, line, format!("bad number `{s}`")));
        let mut it = values.into_iter();
        let (v, s, author, rationale, before, after) = (
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
        );
        entries.push(PalimpsestEntry {
            version: num(&v)? as u32,
            step: num(&s)?,
            author,
            rationale,
            content_before: before,
            content_after: after,
        });
    }
    Ok(entries)
}

/// Backslash-escapes tab, newline, carriage return and backslash.
pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(field: &str) -> Option<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

pub fn render_events(events: &[BindingEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let parent = e.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id,
            e.kind,
            escape(&e.subject),
            escape(&e.object),
            parent,
            e.step,
            e.outcome,
            escape(&e.evidence)
        ));
    }
    out
}

fn fields<'a>(path: &Path, line: usize, text: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() != n {
        return Err(Error::malformed(path, line, format!("expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

pub fn parse_events(path: &Path, text: &str) -> Result<Vec<BindingEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 1;
        let f = fields(path, n, line, 8)?;
        let bad = |m: &str| Error::malformed(path, n, m.to_string());
        let un = |s: &str| unescape(s).ok_or_else(|| bad("bad escape"));
        let draft = EventDraft::new(f[1].parse().map_err(|_| bad("unknown event kind"))?, un(f[2])?, un(f[3])?);
        out.push(BindingEvent {
            id: EventId(f[0].parse().map_err(|_| bad("bad event id"))?),
            kind: draft.kind,
            subject: draft.subject,
            object: draft.object,
            parent: match f[4] {
                "-" => None,
                p => Some(EventId(p.parse().map_err(|_| bad("bad parent id"))?)),
            },
            step: f[5].parse().map_err(|_| bad("bad step"))?,
            outcome: f[6].parse().map_err(|_| bad("unknown outcome"))?,
            evidence: un(f[7])?,
        });
    }
    Ok(out)
}

pub fn render_migrations(records: &[TierMigrationRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\t{}\t{}\t{}\t{}\t{}\n", escape(r.artifact.as_str()), r.from, r.to, r.step, r.event, escape(&r.reason)))
        .collect()
}

pub fn parse_migrations(path: &Path, text: &str) -> Result<Vec<TierMigrationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 1;
        let f = fields(path, n, line, 6)?;
        let bad = |m: &str| Error::malformed(path, n, m.to_string());
        out.push(TierMigrationRecord {
            artifact: ArtifactId::new(unescape(f[0]).ok_or_else(|| bad("bad escape"))?),
            from: f[1].parse().map_err(|_| bad("unknown tier"))?,
            to: f[2].parse().map_err(|_| bad("unknown tier"))?,
            step: f[3].parse().map_err(|_| bad("bad step"))?,
            event: EventId(f[4].parse().map_err(|_| bad("bad event id"))?),
            reason: unescape(f[5]).ok_or_else(|| bad("bad escape"))?,
        });
    }
    Ok(out)
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or_default()
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A store shared between threads. Readers run concurrently; writers are
/// serialized, and version-checked revisions make the slower of two
/// concurrent edits fail with `ConcurrentEdit`.
#[derive(Debug, Clone, Default)]
pub struct SharedStore(Arc<RwLock<Store>>);

impl SharedStore {
    pub fn new(store: Store) -> Self {
        SharedStore(Arc::new(RwLock::new(store)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.0.read().unwrap_or_else(|p| p.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Store> {
        self.0.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn revise_expected(
        &self,
        id: &str,
        expected_version: u32,
        content: &str,
        rationale: &str,
        author: &str,
    ) -> Result<PalimpsestEntry> {
        Ok(self.write().revise_expected(id, expected_version, content, rationale, author)?)
    }

    /// Copy-on-write snapshot; later writes do not affect it.
    pub fn snapshot(&self) -> Store {
        self.read().clone()
    }

    pub fn into_inner(self) -> Store {
        match Arc::try_unwrap(self.0) {
            Ok(lock) => lock.into_inner().unwrap_or_else(|p| p.into_inner()),
            Err(shared) => shared.read().unwrap_or_else(|p| p.into_inner()).clone(),
        }
    }
}
