//! Manifest parsing and corpus emission.
//!
//! Records are extracted field by field from the JSON tree so that every
//! rejection names the offending record index and field.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{
    blob, mask, parse_vendor_payload, AttributeScores, Corpus, CorpusError, EmbeddingMatrix, Gender, HairMask,
    ImageRecord, MaskCache, MaskEncoding, MaskStore, Race, VendorKind, DEFAULT_MASK_SIDE,
};

const BLOB_NAME: &str = "emb.bin";
const MASK_DIR: &str = "masks/";
pub const MANIFEST_NAME: &str = "manifest.json";

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

fn req_str(obj: &Map<String, Value>, key: &str, index: Option<usize>) -> Result<String, CorpusError> {
    match field(obj, key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(CorpusError::schema(index, key, "expected a string")),
        None => Err(CorpusError::schema(index, key, "missing")),
    }
}

fn opt_str(obj: &Map<String, Value>, key: &str, index: Option<usize>) -> Result<Option<String>, CorpusError> {
    match field(obj, key) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(CorpusError::schema(index, key, "expected a string")),
        None => Ok(None),
    }
}

fn opt_uint(obj: &Map<String, Value>, key: &str, index: Option<usize>) -> Result<Option<u64>, CorpusError> {
    match field(obj, key) {
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| CorpusError::schema(index, key, "expected a non-negative integer")),
        None => Ok(None),
    }
}

fn opt_f64(obj: &Map<String, Value>, key: &str, index: Option<usize>) -> Result<Option<f64>, CorpusError> {
    match field(obj, key) {
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| CorpusError::schema(index, key, "expected a number")),
        None => Ok(None),
    }
}

fn parse_attrs(value: Option<&Value>, index: usize) -> Result<AttributeScores, CorpusError> {
    let Some(value) = value else {
        return Ok(AttributeScores::default());
    };
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::schema(Some(index), "attrs", "expected an object"))?;
    let i = Some(index);
    let rek_facial_hair = match field(obj, "rek_facial_hair") {
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => return Err(CorpusError::schema(i, "rek_facial_hair", "expected a boolean")),
        None => None,
    };
    Ok(AttributeScores {
        ms_beard: opt_f64(obj, "ms_beard", i)?,
        ms_mustache: opt_f64(obj, "ms_mustache", i)?,
        ms_sideburns: opt_f64(obj, "ms_sideburns", i)?,
        ms_bald: opt_f64(obj, "ms_bald", i)?,
        rek_facial_hair,
        rek_confidence: opt_f64(obj, "rek_confidence", i)?,
    })
}

fn read_payload(base: &Path, rel: &str, kind: VendorKind) -> Result<AttributeScores, CorpusError> {
    let path = base.join(rel);
    let text = std::fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
    parse_vendor_payload(kind, &text).map_err(|source| CorpusError::Payload { path, source })
}

fn parse_record(value: &Value, index: usize, base: &Path) -> Result<ImageRecord, CorpusError> {
    let i = Some(index);
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::schema(i, "images", "record is not an object"))?;
    let gender_raw = req_str(obj, "gender", i)?;
    let gender: Gender = gender_raw
        .parse()
        .map_err(|e: String| CorpusError::schema(i, "gender", e))?;
    let race = req_str(obj, "race", i)?;
    if race.is_empty() {
        return Err(CorpusError::schema(i, "race", "empty"));
    }
    let embedding_index =
        opt_uint(obj, "embedding_index", i)?.ok_or_else(|| CorpusError::schema(i, "embedding_index", "missing"))?;
    let mut attrs = parse_attrs(field(obj, "attrs"), index)?;
    if let Some(rel) = opt_str(obj, "ms_face_payload", i)? {
        attrs.fill_from(&read_payload(base, &rel, VendorKind::MsFace)?);
    }
    if let Some(rel) = opt_str(obj, "rekognition_payload", i)? {
        attrs.fill_from(&read_payload(base, &rel, VendorKind::Rekognition)?);
    }
    Ok(ImageRecord {
        image_id: req_str(obj, "image_id", i)?,
        subject_id: req_str(obj, "subject_id", i)?,
        race: Race::from(race),
        gender,
        embedding_index: usize::try_from(embedding_index)
            .map_err(|_| CorpusError::schema(i, "embedding_index", "too large"))?,
        mask_ref: opt_str(obj, "mask_ref", i)?,
        attrs,
    })
}

pub(super) fn load(manifest_path: &Path, hair_label: Option<u8>) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| CorpusError::io(manifest_path, e))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| CorpusError::schema(None, "manifest", format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| CorpusError::schema(None, "manifest", "expected a JSON object"))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let dim = opt_uint(obj, "dim", None)?.ok_or_else(|| CorpusError::schema(None, "dim", "missing"))?;
    if dim == 0 {
        return Err(CorpusError::schema(None, "dim", "must be positive"));
    }
    let blob_path = base.join(req_str(obj, "embedding_blob", None)?);
    let mask_dir = base.join(opt_str(obj, "mask_dir", None)?.unwrap_or_default());
    let side = |key| -> Result<usize, CorpusError> {
        match opt_uint(obj, key, None)? {
            Some(0) => Err(CorpusError::schema(None, key, "must be positive")),
            Some(v) => Ok(v as usize),
            None => Ok(DEFAULT_MASK_SIDE),
        }
    };
    let (width, height) = (side("mask_width")?, side("mask_height")?);
    let hair_label = match hair_label {
        Some(l) => Some(l),
        None => match opt_uint(obj, "hair_label", None)? {
            Some(l) => Some(u8::try_from(l).map_err(|_| CorpusError::schema(None, "hair_label", "must be 0..=255"))?),
            None => None,
        },
    };
    let images = match field(obj, "images") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(CorpusError::schema(None, "images", "expected an array")),
        None => return Err(CorpusError::schema(None, "images", "missing")),
    };
    let records = images
        .iter()
        .enumerate()
        .map(|(i, v)| parse_record(v, i, base))
        .collect::<Result<Vec<_>, _>>()?;

    let embeddings = blob::read_blob(&blob_path)?;
    if embeddings.dim() as u64 != dim {
        return Err(CorpusError::EmbeddingShapeMismatch(format!(
            "manifest dim {dim}, blob dim {}",
            embeddings.dim()
        )));
    }

    for (i, r) in records.iter().enumerate() {
        if let Some(rel) = &r.mask_ref {
            let path = mask_dir.join(rel);
            let dims = mask::read_pgm_header(&path).map_err(|e| match e {
                CorpusError::MissingFile(p) => {
                    CorpusError::schema(Some(i), "mask_ref", format!("{} does not exist", p.display()))
                }
                other => other,
            })?;
            if dims != (width, height) {
                return Err(CorpusError::schema(
                    Some(i),
                    "mask_ref",
                    format!("mask is {}x{}, expected {width}x{height}", dims.0, dims.1),
                ));
            }
        }
    }

    let store = MaskStore::Disk {
        dir: mask_dir,
        width,
        height,
        encoding: hair_label.map_or(MaskEncoding::Binary, MaskEncoding::Labels),
        cache: Mutex::new(MaskCache::default()),
    };
    Corpus::assemble(records, embeddings, store, width, height)
}

/// Everything needed to write a corpus directory.
pub struct CorpusFiles<'a> {
    pub records: &'a [ImageRecord],
    pub embeddings: &'a EmbeddingMatrix,
    /// One entry per record; present exactly when the record has a `mask_ref`.
    pub masks: &'a [Option<HairMask>],
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    dim: usize,
    embedding_blob: &'a str,
    mask_dir: &'a str,
    mask_width: usize,
    mask_height: usize,
    images: &'a [ImageRecord],
}

/// Writes `manifest.json`, `emb.bin` and `masks/*.pgm` under `dir` and
/// returns the manifest path.
pub fn write_corpus(dir: &Path, files: &CorpusFiles<'_>) -> Result<PathBuf, CorpusError> {
    if files.masks.len() != files.records.len() {
        return Err(CorpusError::schema(None, "masks", "one mask slot per record required"));
    }
    let mask_dir = dir.join(MASK_DIR);
    std::fs::create_dir_all(&mask_dir).map_err(|e| CorpusError::io(&mask_dir, e))?;
    let (mut width, mut height) = (DEFAULT_MASK_SIDE, DEFAULT_MASK_SIDE);
    for (i, (r, m)) in files.records.iter().zip(files.masks).enumerate() {
        match (&r.mask_ref, m) {
            (Some(rel), Some(m)) => {
                width = m.width();
                height = m.height();
                let path = mask_dir.join(rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
                }
                mask::write_pgm(&path, m)?;
            }
            (None, None) => {}
            _ => {
                return Err(CorpusError::schema(
                    Some(i),
                    "mask_ref",
                    "mask_ref and mask must be given together",
                ))
            }
        }
    }
    blob::write_blob(&dir.join(BLOB_NAME), files.embeddings)?;
    let manifest = ManifestOut {
        dim: files.embeddings.dim(),
        embedding_blob: BLOB_NAME,
        mask_dir: MASK_DIR,
        mask_width: width,
        mask_height: height,
        images: files.records,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| CorpusError::io(&path, e))?;
    Ok(path)
}
