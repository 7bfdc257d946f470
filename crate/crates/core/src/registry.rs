//! Checkpoint registry: a directory of snapshot files plus `index.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::lm::{CheckpointId, CheckpointedModel};
use crate::ngram::{NgramModel, NoisyNgram, SnapshotFormat};

const INDEX_FILE: &str = "index.json";
const NOISY_HEADER: &str = "synthforge-noisy 1";

/// Anything that can hand out stored snapshots by id.
pub trait SnapshotSource {
    fn load_snapshot(&self, id: &CheckpointId) -> Result<CheckpointedModel>;
}

impl SnapshotSource for [CheckpointedModel] {
    fn load_snapshot(&self, id: &CheckpointId) -> Result<CheckpointedModel> {
        self.iter()
            .find(|m| &m.id == id)
            .cloned()
            .ok_or_else(|| Error::Registry(format!("no snapshot {id}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Ngram,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub family: String,
    pub step: u64,
    pub file: String,
    pub kind: SnapshotKind,
    pub meta: String,
    pub sha256: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    version: u32,
    snapshots: Vec<IndexEntry>,
}

#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    entries: BTreeMap<CheckpointId, IndexEntry>,
}

fn file_name(id: &CheckpointId) -> String {
    let family: String = id
        .family
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{family}@{}.snap", id.step)
}

impl Registry {
    /// Open (creating if needed) the registry rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let index_path = dir.join(INDEX_FILE);
        let mut entries = BTreeMap::new();
        if index_path.exists() {
            let index: Index = serde_json::from_slice(&fs::read(&index_path)?)?;
            for e in index.snapshots {
                entries.insert(CheckpointId::new(e.family.clone(), e.step), e);
            }
        }
        Ok(Registry { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn ids(&self) -> impl Iterator<Item = &CheckpointId> {
        self.entries.keys()
    }

    pub fn entry(&self, id: &CheckpointId) -> Option<&IndexEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &CheckpointId) -> bool {
        self.entries.contains_key(id)
    }

    /// Steps stored for `family`, ascending.
    pub fn steps(&self, family: &str) -> Vec<u64> {
        self.entries.keys().filter(|id| id.family == family).map(|id| id.step).collect()
    }

    /// Store a snapshot. Re-saving identical content is a no-op; saving
    /// different content under an existing id is an error.
    pub fn save(&mut self, model: &CheckpointedModel, format: SnapshotFormat) -> Result<&IndexEntry> {
        let (kind, bytes) = if let Some(m) = model.downcast::<NgramModel>() {
            (SnapshotKind::Ngram, m.to_bytes(format))
        } else if let Some(n) = model.downcast::<NoisyNgram>() {
            if !self.contains(&n.base().id) {
                self.save(n.base(), format)?;
            }
            let text = format!("{NOISY_HEADER}\nbase {}\nrate {}\nseed {}\n", n.base().id, n.rate(), n.seed());
            (SnapshotKind::Noisy, text.into_bytes())
        } else {
            return Err(Error::Registry(format!("{}: backend cannot be serialized", model.id)));
        };
        let sha256 = sha256_hex(&bytes);
        if let Some(existing) = self.entries.get(&model.id) {
            if existing.sha256 == sha256 {
                return Ok(&self.entries[&model.id]);
            }
            return Err(Error::Registry(format!("{} already stored with different content", model.id)));
        }
        let file = file_name(&model.id);
        write_atomic(&self.dir.join(&file), &bytes)?;
        let entry = IndexEntry {
            family: model.id.family.clone(),
            step: model.id.step,
            file,
            kind,
            meta: model.meta.clone(),
            sha256,
        };
        self.entries.insert(model.id.clone(), entry);
        self.write_index()?;
        Ok(&self.entries[&model.id])
    }

    pub fn load(&self, id: &CheckpointId) -> Result<CheckpointedModel> {
        let entry = self.entries.get(id).ok_or_else(|| Error::Registry(format!("no snapshot {id} in {}", self.dir.display())))?;
        let bytes = fs::read(self.dir.join(&entry.file))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Registry(format!("{id}: file digest does not match the index")));
        }
        let backend: Arc<dyn crate::lm::LanguageModel> = match entry.kind {
            SnapshotKind::Ngram => Arc::new(NgramModel::from_bytes(&bytes)?),
            SnapshotKind::Noisy => {
                let text = std::str::from_utf8(&bytes).map_err(|_| Error::format("noisy snapshot is not UTF-8"))?;
                let mut lines = text.lines();
                if lines.next() != Some(NOISY_HEADER) {
                    return Err(Error::format("unrecognized noisy snapshot header"));
                }
                let mut field = |key: &str| {
                    lines
                        .next()
                        .and_then(|l| l.strip_prefix(key))
                        .map(str::trim)
                        .ok_or_else(|| Error::format(format!("noisy snapshot missing `{key}`")))
                };
                let base: CheckpointId = field("base")?.parse()?;
                let rate: f64 = field("rate")?.parse().map_err(|_| Error::format("bad noise rate"))?;
                let seed: u64 = field("seed")?.parse().map_err(|_| Error::format("bad noise seed"))?;
                Arc::new(NoisyNgram::new(self.load(&base)?, rate, seed)?)
            }
        };
        Ok(CheckpointedModel::new(id.clone(), entry.meta.clone(), backend))
    }

    fn write_index(&self) -> Result<()> {
        let index = Index { version: 1, snapshots: self.entries.values().cloned().collect() };
        write_atomic(&self.dir.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)
    }
}

impl SnapshotSource for Registry {
    fn load_snapshot(&self, id: &CheckpointId) -> Result<CheckpointedModel> {
        self.load(id)
    }
}

/// Write via a sibling temp file and rename, so readers never see partial files.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
