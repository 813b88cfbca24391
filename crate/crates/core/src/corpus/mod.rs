//! Corpus data model and on-disk ingestion.
//!
//! A corpus directory holds a JSON manifest, one embedding blob and an
//! optional directory of PGM hair masks. [`Corpus::load`] validates all of it
//! up front except mask pixels, which are read on first use and cached.

mod blob;
mod manifest;
mod mask;
mod vendor;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use blob::{read_blob, write_blob, EmbeddingMatrix, BLOB_MAGIC, BLOB_VERSION};
pub use manifest::{write_corpus, CorpusFiles, MANIFEST_NAME};
pub use mask::{read_pgm, read_pgm_header, write_pgm, HairMask, MaskEncoding};
pub use vendor::{parse_vendor_payload, PayloadError, VendorKind};

/// Admissible Microsoft Face facial-hair confidence levels.
pub const MS_LEVELS: [f64; 5] = [0.0, 0.1, 0.4, 0.6, 0.9];

pub const DEFAULT_MASK_SIDE: usize = 112;
pub const DEFAULT_DIM: usize = 512;

const MASK_CACHE_CAPACITY: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema violation in {}: field `{field}`: {reason}", location(*.index))]
    SchemaViolation {
        index: Option<usize>,
        field: String,
        reason: String,
    },
    #[error("embedding shape mismatch: {0}")]
    EmbeddingShapeMismatch(String),
    #[error("embedding row {row} has a non-finite entry")]
    NonFiniteEmbedding { row: usize },
    #[error("embedding row {row} has zero norm")]
    ZeroNormEmbedding { row: usize },
    #[error("malformed embedding blob: {0}")]
    MalformedBlob(String),
    #[error("malformed mask {}: {reason}", path.display())]
    MalformedMask { path: PathBuf, reason: String },
    #[error("vendor payload {}: {source}", path.display())]
    Payload {
        path: PathBuf,
        #[source]
        source: PayloadError,
    },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(index: Option<usize>) -> String {
    match index {
        Some(i) => format!("record {i}"),
        None => "manifest".to_string(),
    }
}

impl CorpusError {
    pub(crate) fn schema(index: Option<usize>, field: &str, reason: impl Into<String>) -> Self {
        CorpusError::SchemaViolation {
            index,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Race {
    Caucasian,
    AfricanAmerican,
    Other(String),
}

impl Race {
    /// Short code used in table row labels (`C_M vs C_F`).
    pub fn code(&self) -> &str {
        match self {
            Race::Caucasian => "C",
            Race::AfricanAmerican => "AA",
            Race::Other(s) => s,
        }
    }
}

impl From<String> for Race {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "caucasian" | "c" => Race::Caucasian,
            "africanamerican" | "aa" => Race::AfricanAmerican,
            _ => Race::Other(s),
        }
    }
}

impl From<Race> for String {
    fn from(r: Race) -> Self {
        r.to_string()
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Race::Caucasian => f.write_str("Caucasian"),
            Race::AfricanAmerican => f.write_str("AfricanAmerican"),
            Race::Other(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            _ => Err(format!("unknown gender `{s}`")),
        }
    }
}

impl TryFrom<String> for Gender {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Gender> for String {
    fn from(g: Gender) -> Self {
        g.to_string()
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
        })
    }
}

/// A (race, gender) partition; all pairs are formed inside one cohort.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cohort {
    pub race: Race,
    pub gender: Gender,
}

impl Cohort {
    pub fn new(race: Race, gender: Gender) -> Self {
        Self { race, gender }
    }

    pub fn contains(&self, record: &ImageRecord) -> bool {
        record.race == self.race && record.gender == self.gender
    }
}

impl FromStr for Cohort {
    type Err = String;

    /// Parses `race:gender`, e.g. `Caucasian:Female` or `AA:M`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (race, gender) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("expected race:gender, got `{s}`"))?;
        if race.is_empty() {
            return Err(format!("empty race in `{s}`"));
        }
        Ok(Cohort::new(Race::from(race.to_string()), gender.parse()?))
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.race, self.gender)
    }
}

/// Raw vendor attribute scores for one image. Every field may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_beard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_mustache: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_sideburns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms_bald: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rek_facial_hair: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rek_confidence: Option<f64>,
}

impl AttributeScores {
    /// Checks level sets and ranges. `index` is the record index for errors.
    pub fn validate(&self, index: Option<usize>) -> Result<(), CorpusError> {
        for (name, value) in [
            ("ms_beard", self.ms_beard),
            ("ms_mustache", self.ms_mustache),
            ("ms_sideburns", self.ms_sideburns),
        ] {
            if let Some(v) = value {
                if !is_ms_level(v) {
                    return Err(CorpusError::schema(
                        index,
                        name,
                        format!("{v} is not one of 0, 0.1, 0.4, 0.6, 0.9"),
                    ));
                }
            }
        }
        if let Some(b) = self.ms_bald {
            if !(0.0..=1.0).contains(&b) {
                return Err(CorpusError::schema(index, "ms_bald", format!("{b} outside [0, 1]")));
            }
        }
        match (self.rek_facial_hair, self.rek_confidence) {
            (Some(_), Some(c)) if !(50.0..=100.0).contains(&c) => Err(CorpusError::schema(
                index,
                "rek_confidence",
                format!("{c} outside [50, 100]"),
            )),
            (Some(_), None) => Err(CorpusError::schema(
                index,
                "rek_confidence",
                "required when rek_facial_hair is present",
            )),
            (None, Some(_)) => Err(CorpusError::schema(
                index,
                "rek_facial_hair",
                "required when rek_confidence is present",
            )),
            _ => Ok(()),
        }
    }

    /// True when any score consumed by the fusion rules is absent.
    pub fn is_incomplete(&self) -> bool {
        self.ms_beard.is_none()
            || self.ms_mustache.is_none()
            || self.ms_sideburns.is_none()
            || self.ms_bald.is_none()
            || self.rek_facial_hair.is_none()
    }

    /// Fills absent fields from `other`.
    pub fn fill_from(&mut self, other: &AttributeScores) {
        self.ms_beard = self.ms_beard.or(other.ms_beard);
        self.ms_mustache = self.ms_mustache.or(other.ms_mustache);
        self.ms_sideburns = self.ms_sideburns.or(other.ms_sideburns);
        self.ms_bald = self.ms_bald.or(other.ms_bald);
        if self.rek_facial_hair.is_none() {
            self.rek_facial_hair = other.rek_facial_hair;
            self.rek_confidence = other.rek_confidence;
        }
    }
}

pub fn is_ms_level(v: f64) -> bool {
    MS_LEVELS.iter().any(|l| (l - v).abs() < 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    pub race: Race,
    pub gender: Gender,
    pub embedding_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
    #[serde(default)]
    pub attrs: AttributeScores,
}

impl ImageRecord {
    pub fn cohort(&self) -> Cohort {
        Cohort::new(self.race.clone(), self.gender)
    }
}

/// Where mask pixels come from.
#[derive(Debug)]
enum MaskStore {
    Disk {
        dir: PathBuf,
        width: usize,
        height: usize,
        encoding: MaskEncoding,
        cache: Mutex<MaskCache>,
    },
    Memory(Vec<Option<Arc<HairMask>>>),
}

#[derive(Debug, Default)]
struct MaskCache {
    entries: HashMap<usize, Arc<HairMask>>,
    order: VecDeque<usize>,
}

impl MaskCache {
    fn get(&self, idx: usize) -> Option<Arc<HairMask>> {
        self.entries.get(&idx).cloned()
    }

    fn insert(&mut self, idx: usize, mask: Arc<HairMask>) {
        if self.entries.insert(idx, mask).is_none() {
            self.order.push_back(idx);
            while self.order.len() > MASK_CACHE_CAPACITY {
                if let Some(old) = self.order.pop_front() {
                    self.entries.remove(&old);
                }
            }
        }
    }
}

/// A validated, immutable corpus. Safe to share across threads.
#[derive(Debug)]
pub struct Corpus {
    records: Vec<ImageRecord>,
    embeddings: EmbeddingMatrix,
    by_id: HashMap<String, usize>,
    masks: MaskStore,
    mask_width: usize,
    mask_height: usize,
    incomplete: Vec<usize>,
}

impl Corpus {
    /// Loads and validates the corpus described by `manifest_path`.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::load_with(manifest_path, None)
    }

    /// Like [`Corpus::load`], with masks holding raw segmentation labels in
    /// which `hair_label` marks hair pixels.
    pub fn load_with(manifest_path: impl AsRef<Path>, hair_label: Option<u8>) -> Result<Self, CorpusError> {
        manifest::load(manifest_path.as_ref(), hair_label)
    }

    /// Builds an in-memory corpus, applying the same validation as `load`.
    pub fn from_parts(
        records: Vec<ImageRecord>,
        embeddings: EmbeddingMatrix,
        masks: Vec<Option<HairMask>>,
    ) -> Result<Self, CorpusError> {
        if masks.len() != records.len() {
            return Err(CorpusError::schema(
                None,
                "masks",
                format!("{} masks for {} records", masks.len(), records.len()),
            ));
        }
        let (width, height) = masks
            .iter()
            .flatten()
            .map(|m| (m.width(), m.height()))
            .next()
            .unwrap_or((DEFAULT_MASK_SIDE, DEFAULT_MASK_SIDE));
        for (i, m) in masks.iter().enumerate() {
            if let Some(m) = m {
                if (m.width(), m.height()) != (width, height) {
                    return Err(CorpusError::schema(
                        Some(i),
                        "mask_ref",
                        format!(
                            "mask is {}x{}, corpus raster is {width}x{height}",
                            m.width(),
                            m.height()
                        ),
                    ));
                }
            }
        }
        let store = MaskStore::Memory(masks.into_iter().map(|m| m.map(Arc::new)).collect());
        Self::assemble(records, embeddings, store, width, height)
    }

    fn assemble(
        records: Vec<ImageRecord>,
        embeddings: EmbeddingMatrix,
        masks: MaskStore,
        mask_width: usize,
        mask_height: usize,
    ) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut incomplete = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if r.image_id.is_empty() {
                return Err(CorpusError::schema(Some(i), "image_id", "empty"));
            }
            if r.subject_id.is_empty() {
                return Err(CorpusError::schema(Some(i), "subject_id", "empty"));
            }
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(CorpusError::schema(
                    Some(i),
                    "image_id",
                    format!("duplicate image_id `{}`", r.image_id),
                ));
            }
            if r.embedding_index >= embeddings.count() {
                return Err(CorpusError::schema(
                    Some(i),
                    "embedding_index",
                    format!(
                        "{} out of range for {} embeddings",
                        r.embedding_index,
                        embeddings.count()
                    ),
                ));
            }
            r.attrs.validate(Some(i))?;
            if r.attrs.is_incomplete() {
                incomplete.push(i);
            }
        }
        Ok(Self {
            records,
            embeddings,
            by_id,
            masks,
            mask_width,
            mask_height,
            incomplete,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &ImageRecord {
        &self.records[idx]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    /// Embedding row of record `idx`.
    pub fn embedding(&self, idx: usize) -> &[f32] {
        self.embeddings.row(self.records[idx].embedding_index)
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    pub fn mask_dims(&self) -> (usize, usize) {
        (self.mask_width, self.mask_height)
    }

    /// Records admitted with at least one absent attribute score.
    pub fn incomplete_records(&self) -> &[usize] {
        &self.incomplete
    }

    /// Cohorts present in the corpus, sorted.
    pub fn cohorts(&self) -> Vec<Cohort> {
        let mut out: Vec<Cohort> = self.records.iter().map(ImageRecord::cohort).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Races that have both female and male images, sorted.
    pub fn races_with_both_genders(&self) -> Vec<Race> {
        let cohorts = self.cohorts();
        let mut races: Vec<Race> = cohorts
            .iter()
            .filter(|c| c.gender == Gender::Female)
            .filter(|c| cohorts.contains(&Cohort::new(c.race.clone(), Gender::Male)))
            .map(|c| c.race.clone())
            .collect();
        races.dedup();
        races
    }

    /// Record indices of `cohort`, in corpus order.
    pub fn cohort_members(&self, cohort: &Cohort) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| cohort.contains(&self.records[i]))
            .collect()
    }

    /// Hair mask of record `idx`; `None` when the record has no mask.
    pub fn mask(&self, idx: usize) -> Result<Option<Arc<HairMask>>, CorpusError> {
        match &self.masks {
            MaskStore::Memory(masks) => Ok(masks[idx].clone()),
            MaskStore::Disk {
                dir,
                width,
                height,
                encoding,
                cache,
            } => {
                let Some(mask_ref) = &self.records[idx].mask_ref else {
                    return Ok(None);
                };
                if let Some(m) = cache.lock().expect("mask cache poisoned").get(idx) {
                    return Ok(Some(m));
                }
                let path = dir.join(mask_ref);
                let mask = Arc::new(read_pgm(&path, *encoding)?);
                if (mask.width(), mask.height()) != (*width, *height) {
                    return Err(CorpusError::MalformedMask {
                        path,
                        reason: format!("{}x{} raster, expected {width}x{height}", mask.width(), mask.height()),
                    });
                }
                cache
                    .lock()
                    .expect("mask cache poisoned")
                    .insert(idx, Arc::clone(&mask));
                Ok(Some(mask))
            }
        }
    }

    /// Writes this corpus to `dir` in the on-disk format.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, CorpusError> {
        let masks = (0..self.len())
            .map(|i| self.mask(i).map(|m| m.map(|m| (*m).clone())))
            .collect::<Result<Vec<_>, _>>()?;
        write_corpus(
            dir.as_ref(),
            &CorpusFiles {
                records: &self.records,
                embeddings: &self.embeddings,
                masks: &masks,
            },
        )
    }
}
