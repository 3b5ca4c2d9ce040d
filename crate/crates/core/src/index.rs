//! Modality-partitioned evidence index with on-disk persistence.
//!
//! Layout of an index directory:
//!
//! ```text
//! manifest.json
//! checksums.sha256            sha256sum-style lines for every partition file
//! partitions/<modality>.vec   binary vectors, little endian
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::community::CommunitySummary;
use crate::corpus::CaseRepository;
use crate::embed::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::graph::KnowledgeGraph;

pub const FORMAT_VERSION: u32 = 1;
const PARTITION_MAGIC: &[u8; 4] = b"CRVP";
const EMBED_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt partition {name}: {reason}")]
    CorruptPartition { name: String, reason: String },
    #[error("index built with embedder {built:?}, queried with {query:?}")]
    EmbedderMismatch { built: String, query: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextUnit,
    CommunitySummary,
    EntityDescription,
    PatientCase,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::TextUnit,
        Modality::CommunitySummary,
        Modality::EntityDescription,
        Modality::PatientCase,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::TextUnit => "text_unit",
            Modality::CommunitySummary => "community_summary",
            Modality::EntityDescription => "entity_description",
            Modality::PatientCase => "patient_case",
        }
    }

    fn file_name(&self) -> String {
        format!("partitions/{}.vec", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub embedder_id: String,
    pub corpus_hashes: BTreeMap<String, String>,
    pub build_seed: u64,
    pub partition_sizes: BTreeMap<Modality, usize>,
}

/// Artifact ids and vectors of one modality, in build order.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    entries: Vec<(String, EmbeddingVector)>,
    lookup: HashMap<String, usize>,
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Partition {
    fn from_entries(entries: Vec<(String, EmbeddingVector)>) -> Self {
        let lookup = entries
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        Self { entries, lookup }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, artifact_id: &str) -> Option<&EmbeddingVector> {
        self.lookup.get(artifact_id).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(id, v)| (id.as_str(), v))
    }

    /// Exact top-k by dot product, ties by ascending id.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<(String, f64)>, EmbedError> {
        let mut scored = self
            .entries
            .iter()
            .map(|(id, v)| Ok((id.clone(), query.dot(v)?)))
            .collect::<Result<Vec<_>, EmbedError>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceIndex {
    pub manifest: Manifest,
    partitions: BTreeMap<Modality, Partition>,
}

/// Everything the index embeds.
pub struct IndexInputs<'a> {
    pub graph: &'a KnowledgeGraph,
    pub summaries: &'a [CommunitySummary],
    pub repo: &'a CaseRepository,
    /// Hashes of the stores the artifacts came from, recorded in the manifest.
    pub corpus_hashes: BTreeMap<String, String>,
}

/// Id under which a community summary is indexed.
pub fn community_artifact_id(community_id: usize) -> String {
    format!("community:{community_id}")
}

fn embed_all(
    provider: &dyn EmbeddingProvider,
    items: Vec<(String, String)>,
) -> Result<Partition, IndexError> {
    let dim = provider.dim();
    let mut entries = Vec::with_capacity(items.len());
    for chunk in items.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = chunk.iter().map(|(_, t)| t.as_str()).collect();
        let vectors = provider.embed_batch(&texts)?;
        if vectors.len() != chunk.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "provider returned {} vectors for {} texts",
                vectors.len(),
                chunk.len()
            ))
            .into());
        }
        for ((id, _), v) in chunk.iter().zip(vectors) {
            if v.dim() != dim {
                return Err(EmbedError::DimMismatch {
                    expected: dim,
                    got: v.dim(),
                }
                .into());
            }
            entries.push((id.clone(), v));
        }
    }
    Ok(Partition::from_entries(entries))
}

/// Embed every text unit, community summary, entity description and patient
/// case into its partition. Cases are embedded from S, O and A only.
pub fn build_index(
    inputs: &IndexInputs<'_>,
    provider: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<EvidenceIndex, IndexError> {
    let units = inputs
        .graph
        .unit_index
        .values()
        .map(|u| (u.unit_id.clone(), u.text.clone()))
        .collect();
    let summaries = inputs
        .summaries
        .iter()
        .map(|s| {
            (
                community_artifact_id(s.community_id),
                s.summary_text.clone(),
            )
        })
        .collect();
    let entities = inputs
        .graph
        .nodes
        .values()
        .map(|n| (n.entity_id.clone(), n.description.clone()))
        .collect();
    let cases = inputs
        .repo
        .iter()
        .map(|c| (c.case_id.clone(), c.retrieval_text()))
        .collect();

    let mut partitions = BTreeMap::new();
    partitions.insert(Modality::TextUnit, embed_all(provider, units)?);
    partitions.insert(Modality::CommunitySummary, embed_all(provider, summaries)?);
    partitions.insert(Modality::EntityDescription, embed_all(provider, entities)?);
    partitions.insert(Modality::PatientCase, embed_all(provider, cases)?);

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dim: provider.dim(),
        embedder_id: provider.id(),
        corpus_hashes: inputs.corpus_hashes.clone(),
        build_seed: seed,
        partition_sizes: partitions.iter().map(|(m, p)| (*m, p.len())).collect(),
    };
    Ok(EvidenceIndex {
        manifest,
        partitions,
    })
}

impl EvidenceIndex {
    pub fn partition(&self, modality: Modality) -> &Partition {
        static EMPTY: std::sync::OnceLock<Partition> = std::sync::OnceLock::new();
        self.partitions
            .get(&modality)
            .unwrap_or_else(|| EMPTY.get_or_init(Partition::default))
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    /// Reject queries from a different embedder than the index was built with.
    pub fn check_embedder(&self, embedder_id: &str) -> Result<(), IndexError> {
        if self.manifest.embedder_id != embedder_id {
            return Err(IndexError::EmbedderMismatch {
                built: self.manifest.embedder_id.clone(),
                query: embedder_id.to_string(),
            });
        }
        Ok(())
    }
}

fn encode_partition(p: &Partition, dim: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + p.len() * (dim * 8 + 16));
    buf.extend_from_slice(PARTITION_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for (id, v) in &p.entries {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for x in v.values() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

fn decode_partition(bytes: &[u8], dim: usize) -> Result<Partition, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4) != Some(PARTITION_MAGIC.as_slice()) {
        return Err("bad magic".into());
    }
    let version = c.u32().ok_or("truncated header")?;
    if version != FORMAT_VERSION {
        return Err(format!("partition format version {version}"));
    }
    let file_dim = c.u32().ok_or("truncated header")? as usize;
    if file_dim != dim {
        return Err(format!("partition dim {file_dim}, manifest dim {dim}"));
    }
    let count = c.u64().ok_or("truncated header")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let truncated = || format!("truncated at entry {i}");
        let len = c.u32().ok_or_else(truncated)? as usize;
        let id = std::str::from_utf8(c.take(len).ok_or_else(truncated)?)
            .map_err(|e| e.to_string())?
            .to_string();
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let raw = c.take(8).ok_or_else(truncated)?;
            values.push(f64::from_le_bytes(raw.try_into().expect("8 bytes")));
        }
        entries.push((id, EmbeddingVector::from_normalized_unchecked(values)));
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(Partition::from_entries(entries))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write the index files into `dir`, creating it if needed.
pub fn persist_index(index: &EvidenceIndex, dir: &Path) -> Result<(), IndexError> {
    fs::create_dir_all(dir.join("partitions")).map_err(io_err(dir))?;
    let mut checksums = String::new();
    for m in Modality::ALL {
        let name = m.file_name();
        let bytes = encode_partition(index.partition(m), index.manifest.dim);
        checksums.push_str(&format!("{}  {}\n", sha256_hex(&bytes), name));
        let path = dir.join(&name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let manifest = serde_json::to_string_pretty(&index.manifest).expect("manifest serializes");
    let path = dir.join("manifest.json");
    fs::write(&path, manifest + "\n").map_err(io_err(&path))?;
    let path = dir.join("checksums.sha256");
    fs::write(&path, checksums).map_err(io_err(&path))?;
    Ok(())
}

/// Load and verify an index directory.
pub fn load_index(dir: &Path) -> Result<EvidenceIndex, IndexError> {
    let path = dir.join("manifest.json");
    let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| IndexError::Manifest(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| IndexError::Manifest("missing format_version".into()))?
        as u32;
    if found != FORMAT_VERSION {
        return Err(IndexError::FormatVersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| IndexError::Manifest(e.to_string()))?;
    if manifest.dim == 0 {
        return Err(IndexError::Manifest("dim must be positive".into()));
    }

    let path = dir.join("checksums.sha256");
    let sums = fs::read_to_string(&path).map_err(io_err(&path))?;
    let expected: HashMap<&str, &str> = sums
        .lines()
        .filter_map(|l| l.split_once("  "))
        .map(|(h, n)| (n.trim(), h.trim()))
        .collect();

    let mut partitions = BTreeMap::new();
    for m in Modality::ALL {
        let name = m.file_name();
        let corrupt = |reason: String| IndexError::CorruptPartition {
            name: name.clone(),
            reason,
        };
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        match expected.get(name.as_str()) {
            Some(h) if *h == sha256_hex(&bytes) => {}
            Some(_) => return Err(corrupt("checksum mismatch".into())),
            None => return Err(corrupt("no checksum recorded".into())),
        }
        let p = decode_partition(&bytes, manifest.dim).map_err(corrupt)?;
        if manifest.partition_sizes.get(&m).copied().unwrap_or(0) != p.len() {
            return Err(corrupt("size differs from manifest".into()));
        }
        partitions.insert(m, p);
    }
    Ok(EvidenceIndex {
        manifest,
        partitions,
    })
}

/// Load an index and require it to match the querying embedder.
pub fn load_index_for(dir: &Path, embedder_id: &str) -> Result<EvidenceIndex, IndexError> {
    let index = load_index(dir)?;
    index.check_embedder(embedder_id)?;
    Ok(index)
}
