//! Malformed-input cases. Each case mutates a copy of a valid corpus
//! directory; loading it and reading every mask must fail with a
//! structured error and never panic.

use std::path::Path;

use gapaudit::corpus::{CorpusError, MANIFEST_NAME};
use gapaudit::Corpus;
use serde_json::{json, Value};

pub type Mutation = Box<dyn Fn(&Path)>;

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

fn put_manifest(dir: &Path, v: &Value) {
    std::fs::write(dir.join(MANIFEST_NAME), serde_json::to_string(v).unwrap()).unwrap();
}

fn edit(f: impl Fn(&mut Value) + 'static) -> Mutation {
    Box::new(move |dir| {
        let mut v = manifest(dir);
        f(&mut v);
        put_manifest(dir, &v);
    })
}

fn raw_manifest(text: &'static str) -> Mutation {
    Box::new(move |dir| std::fs::write(dir.join(MANIFEST_NAME), text).unwrap())
}

fn set_top(key: &'static str, value: Value) -> Mutation {
    edit(move |v| v[key] = value.clone())
}

fn drop_top(key: &'static str) -> Mutation {
    edit(move |v| {
        v.as_object_mut().unwrap().remove(key);
    })
}

fn set_rec(index: usize, key: &'static str, value: Value) -> Mutation {
    edit(move |v| v["images"][index][key] = value.clone())
}

fn drop_rec(index: usize, key: &'static str) -> Mutation {
    edit(move |v| {
        v["images"][index].as_object_mut().unwrap().remove(key);
    })
}

fn set_attr(index: usize, key: &'static str, value: Value) -> Mutation {
    edit(move |v| {
        if !v["images"][index]["attrs"].is_object() {
            v["images"][index]["attrs"] = json!({});
        }
        v["images"][index]["attrs"][key] = value.clone();
    })
}

fn blob(f: impl Fn(&mut Vec<u8>) + 'static) -> Mutation {
    Box::new(move |dir| {
        let p = dir.join("emb.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        f(&mut bytes);
        std::fs::write(p, bytes).unwrap();
    })
}

fn first_mask(dir: &Path) -> std::path::PathBuf {
    let v = manifest(dir);
    let rel = v["images"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|r| r["mask_ref"].as_str())
        .unwrap()
        .to_string();
    dir.join(v["mask_dir"].as_str().unwrap_or("")).join(rel)
}

fn pgm(bytes: &'static [u8]) -> Mutation {
    Box::new(move |dir| std::fs::write(first_mask(dir), bytes).unwrap())
}

fn pgm_edit(f: impl Fn(&mut Vec<u8>) + 'static) -> Mutation {
    Box::new(move |dir| {
        let p = first_mask(dir);
        let mut bytes = std::fs::read(&p).unwrap();
        f(&mut bytes);
        std::fs::write(p, bytes).unwrap();
    })
}

fn payload(key: &'static str, body: &'static str) -> Mutation {
    Box::new(move |dir| {
        std::fs::write(dir.join("payload.json"), body).unwrap();
        let mut v = manifest(dir);
        v["images"][0][key] = json!("payload.json");
        put_manifest(dir, &v);
    })
}

fn f32_at(bytes: &mut [u8], index: usize, value: f32) {
    let at = 16 + 4 * index;
    bytes[at..at + 4].copy_from_slice(&value.to_le_bytes());
}

/// Named mutations of a valid corpus directory. The corpus must have at
/// least two records, every record with a mask, and `dim >= 2`.
pub fn cases() -> Vec<(&'static str, Mutation)> {
    vec![
        ("manifest: empty file", raw_manifest("")),
        ("manifest: invalid json", raw_manifest("{\"dim\": 4,")),
        ("manifest: top-level array", raw_manifest("[]")),
        ("manifest: top-level string", raw_manifest("\"corpus\"")),
        (
            "manifest: removed",
            Box::new(|d| std::fs::remove_file(d.join(MANIFEST_NAME)).unwrap()),
        ),
        ("dim: missing", drop_top("dim")),
        ("dim: zero", set_top("dim", json!(0))),
        ("dim: negative", set_top("dim", json!(-3))),
        ("dim: string", set_top("dim", json!("512"))),
        ("dim: fractional", set_top("dim", json!(2.5))),
        (
            "dim: disagrees with blob",
            edit(|v| v["dim"] = json!(v["dim"].as_u64().unwrap() + 1)),
        ),
        ("embedding_blob: missing", drop_top("embedding_blob")),
        (
            "embedding_blob: absent file",
            set_top("embedding_blob", json!("nope.bin")),
        ),
        ("embedding_blob: number", set_top("embedding_blob", json!(7))),
        ("images: missing", drop_top("images")),
        ("images: object", set_top("images", json!({}))),
        ("images: record is a number", edit(|v| v["images"][0] = json!(3))),
        ("mask_width: zero", set_top("mask_width", json!(0))),
        ("mask_height: disagrees with masks", set_top("mask_height", json!(17))),
        ("mask_dir: absent directory", set_top("mask_dir", json!("elsewhere"))),
        ("hair_label: out of range", set_top("hair_label", json!(300))),
        ("image_id: missing", drop_rec(0, "image_id")),
        ("image_id: empty", set_rec(0, "image_id", json!(""))),
        ("image_id: number", set_rec(0, "image_id", json!(12))),
        (
            "image_id: duplicate",
            edit(|v| v["images"][1]["image_id"] = v["images"][0]["image_id"].clone()),
        ),
        ("subject_id: missing", drop_rec(1, "subject_id")),
        ("subject_id: empty", set_rec(1, "subject_id", json!(""))),
        ("gender: missing", drop_rec(0, "gender")),
        ("gender: unknown", set_rec(0, "gender", json!("other"))),
        ("race: missing", drop_rec(0, "race")),
        ("race: empty", set_rec(0, "race", json!(""))),
        ("embedding_index: missing", drop_rec(0, "embedding_index")),
        (
            "embedding_index: out of range",
            set_rec(0, "embedding_index", json!(1_000_000)),
        ),
        ("embedding_index: negative", set_rec(0, "embedding_index", json!(-1))),
        ("embedding_index: fractional", set_rec(0, "embedding_index", json!(0.5))),
        ("mask_ref: absent file", set_rec(0, "mask_ref", json!("ghost.pgm"))),
        ("mask_ref: number", set_rec(0, "mask_ref", json!(5))),
        ("attrs: not an object", set_rec(0, "attrs", json!([1, 2]))),
        ("ms_beard: not a level", set_attr(0, "ms_beard", json!(0.5))),
        ("ms_mustache: string", set_attr(0, "ms_mustache", json!("0.4"))),
        ("ms_sideburns: above one", set_attr(0, "ms_sideburns", json!(1.2))),
        ("ms_bald: above one", set_attr(0, "ms_bald", json!(1.01))),
        ("ms_bald: negative", set_attr(0, "ms_bald", json!(-0.1))),
        (
            "rek: flag without confidence",
            edit(|v| {
                v["images"][0]["attrs"] = json!({"rek_facial_hair": true});
            }),
        ),
        (
            "rek: confidence without flag",
            edit(|v| {
                v["images"][0]["attrs"] = json!({"rek_confidence": 80.0});
            }),
        ),
        (
            "rek: confidence below 50",
            edit(|v| v["images"][0]["attrs"] = json!({"rek_facial_hair": false, "rek_confidence": 49.5})),
        ),
        (
            "rek: confidence above 100",
            edit(|v| v["images"][0]["attrs"] = json!({"rek_facial_hair": true, "rek_confidence": 100.5})),
        ),
        ("rek: flag is a string", set_attr(0, "rek_facial_hair", json!("yes"))),
        (
            "payload: absent file",
            set_rec(0, "ms_face_payload", json!("missing.json")),
        ),
        ("payload: ms face not json", payload("ms_face_payload", "not json")),
        (
            "payload: ms face lacks facialHair",
            payload("ms_face_payload", r#"{"faceAttributes": {"hair": {"bald": 0.2}}}"#),
        ),
        ("payload: ms face empty array", payload("ms_face_payload", "[]")),
        (
            "payload: rekognition lacks Beard",
            payload("rekognition_payload", r#"{"FaceDetails": [{"Smile": {}}]}"#),
        ),
        (
            "payload: rekognition Beard value not bool",
            payload(
                "rekognition_payload",
                r#"{"FaceDetails": [{"Beard": {"Value": 1, "Confidence": 90}}]}"#,
            ),
        ),
        ("blob: empty", blob(|b| b.clear())),
        ("blob: shorter than header", blob(|b| b.truncate(10))),
        ("blob: bad magic", blob(|b| b[0] = b'X')),
        ("blob: unsupported version", blob(|b| b[4] = 9)),
        ("blob: truncated payload", blob(|b| b.truncate(b.len() - 2))),
        ("blob: trailing bytes", blob(|b| b.extend_from_slice(&[0, 0, 0, 0]))),
        (
            "blob: count too large",
            blob(|b| b[8..12].copy_from_slice(&u32::MAX.to_le_bytes())),
        ),
        (
            "blob: dim zero",
            blob(|b| b[12..16].copy_from_slice(&0u32.to_le_bytes())),
        ),
        ("blob: NaN value", blob(|b| f32_at(b, 0, f32::NAN))),
        ("blob: infinite value", blob(|b| f32_at(b, 1, f32::INFINITY))),
        (
            "blob: zero-norm row",
            blob(|b| {
                let dim = u32::from_le_bytes(b[12..16].try_into().unwrap()) as usize;
                for k in 0..dim {
                    f32_at(b, k, 0.0);
                }
            }),
        ),
        ("pgm: empty", pgm(b"")),
        ("pgm: ascii variant", pgm(b"P2\n16 16\n255\n0 0 0")),
        ("pgm: garbage", pgm(b"\x00\x01\x02\x03")),
        ("pgm: missing maxval", pgm(b"P5\n16 16\n")),
        ("pgm: maxval zero", pgm(b"P5\n16 16\n0\n")),
        ("pgm: sixteen-bit maxval", pgm(b"P5\n16 16\n65535\n")),
        ("pgm: non-numeric width", pgm(b"P5\nab 16\n255\n")),
        ("pgm: truncated pixels", pgm_edit(|b| b.truncate(b.len() - 5))),
    ]
}

/// Loads the corpus and reads every mask.
pub fn load_fully(manifest: &Path) -> Result<Corpus, CorpusError> {
    let c = Corpus::load(manifest)?;
    for i in 0..c.len() {
        c.mask(i)?;
    }
    Ok(c)
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

/// Runs every case against copies of `base`. Returns a failure description
/// per case that loaded successfully or panicked.
pub fn run(base: &Path, scratch: &Path) -> (usize, Vec<String>) {
    let cases = cases();
    let mut failures = Vec::new();
    for (k, (name, mutate)) in cases.iter().enumerate() {
        let dir = scratch.join(format!("case{k:03}"));
        copy_dir(base, &dir);
        mutate(&dir);
        let manifest = dir.join(MANIFEST_NAME);
        match std::panic::catch_unwind(|| load_fully(&manifest)) {
            Ok(Err(e)) => {
                if e.to_string().is_empty() {
                    failures.push(format!("{name}: empty error message"));
                }
            }
            Ok(Ok(_)) => failures.push(format!("{name}: accepted")),
            Err(_) => failures.push(format!("{name}: panicked")),
        }
    }
    (cases.len(), failures)
}
