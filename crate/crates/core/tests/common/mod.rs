#![allow(dead_code)]

pub mod fuzz;

use gapaudit::{AttributeScores, Corpus, EmbeddingMatrix, Gender, HairMask, ImageRecord, Race};
use rand::Rng;

pub const SIDE: usize = 16;

/// Shape of a random test corpus.
pub struct Shape {
    pub images: usize,
    pub subjects: usize,
    pub dim: usize,
    pub masks: bool,
    /// Probability that an image gets clean-shaven, non-bald scores.
    pub clean: f64,
}

fn random_attrs<R: Rng>(rng: &mut R) -> AttributeScores {
    let levels = [0.0, 0.1, 0.4, 0.6, 0.9];
    let mut level = || Some(levels[rng.random_range(0..levels.len())]);
    let (b, m, s) = (level(), level(), level());
    let rek = rng.random_bool(0.8);
    AttributeScores {
        ms_beard: b,
        ms_mustache: m,
        ms_sideburns: s,
        ms_bald: Some(if rng.random_bool(0.1) {
            0.99
        } else {
            rng.random_range(0.0..0.9)
        }),
        rek_facial_hair: rek.then(|| rng.random_bool(0.5)),
        rek_confidence: rek.then(|| f64::from(rng.random_range(100..=200u32)) / 2.0),
    }
}

fn clean_attrs() -> AttributeScores {
    AttributeScores {
        ms_beard: Some(0.0),
        ms_mustache: Some(0.1),
        ms_sideburns: Some(0.0),
        ms_bald: Some(0.2),
        rek_facial_hair: Some(false),
        rek_confidence: Some(90.0),
    }
}

/// Mask with a random number of hair pixels in one of a few top-anchored
/// layouts so that IoUs vary and ties happen.
pub fn random_mask<R: Rng>(rng: &mut R, side: usize) -> HairMask {
    let px = side * side;
    match rng.random_range(0..4) {
        0 => HairMask::top_filled(side, side, rng.random_range(0..=px)),
        1 => HairMask::top_filled(side, side, [0, px / 4, px / 2][rng.random_range(0..3)]),
        2 => {
            let cols = rng.random_range(0..=side);
            HairMask::from_fn(side, side, |x, _| x < cols)
        }
        _ => HairMask::from_fn(side, side, |_, _| rng.random_bool(0.3)),
    }
}

/// Random two-race, two-gender corpus. Subject ids are shared only within
/// a cohort.
pub fn random_corpus<R: Rng>(rng: &mut R, shape: &Shape) -> Corpus {
    let subjects: Vec<(String, Race, Gender)> = (0..shape.subjects.max(1))
        .map(|s| {
            let race = if rng.random_bool(0.7) {
                Race::Caucasian
            } else {
                Race::AfricanAmerican
            };
            let gender = if rng.random_bool(0.5) {
                Gender::Female
            } else {
                Gender::Male
            };
            (format!("s{s:03}"), race, gender)
        })
        .collect();
    let mut records = Vec::with_capacity(shape.images);
    let mut rows = Vec::with_capacity(shape.images);
    let mut masks = Vec::with_capacity(shape.images);
    for i in 0..shape.images {
        let (sid, race, gender) = subjects[rng.random_range(0..subjects.len())].clone();
        let mask = (shape.masks && rng.random_bool(0.95)).then(|| random_mask(rng, SIDE));
        let image_id = format!("img{i:04}");
        records.push(ImageRecord {
            mask_ref: mask.as_ref().map(|_| format!("{image_id}.pgm")),
            image_id,
            subject_id: sid,
            race,
            gender,
            embedding_index: i,
            attrs: if rng.random_bool(shape.clean) {
                clean_attrs()
            } else {
                random_attrs(rng)
            },
        });
        let mut row: Vec<f32> = (0..shape.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        row[0] += 0.01;
        rows.push(row);
        masks.push(mask);
    }
    // Embedding order differs from record order to exercise indirection.
    let perm: Vec<usize> = (0..shape.images).rev().collect();
    let mut data = Vec::with_capacity(shape.images * shape.dim);
    for (k, &i) in perm.iter().enumerate() {
        records[i].embedding_index = k;
        data.extend_from_slice(&rows[i]);
    }
    let embeddings = EmbeddingMatrix::new(shape.images, shape.dim, data).unwrap();
    Corpus::from_parts(records, embeddings, masks).unwrap()
}

/// Independent cosine in f64.
pub fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean and sample variance computed in two passes.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Textbook d-prime from raw scores.
pub fn dprime_raw(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    (ma - mb).abs() / ((va + vb) / 2.0).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Record indices of `(race, gender)` in corpus order.
pub fn members(corpus: &Corpus, race: &Race, gender: Gender) -> Vec<usize> {
    (0..corpus.len())
        .filter(|&i| corpus.record(i).race == *race && corpus.record(i).gender == gender)
        .collect()
}
