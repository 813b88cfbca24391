//! Synthetic corpora with planted hairstyle effects.
//!
//! Subjects are unit-norm cluster centers around a shared base direction.
//! Each image is `center + noise + occlusion_strength * hair_ratio * u`,
//! where `u` is one unit "occlusion" direction shared by every image, so
//! cohorts with more hair drift together along `u`. Hair ratios are drawn
//! per image from the cohort's mixture; masks are top-anchored fills with
//! exactly `round(ratio * pixels)` hair pixels. Vendor scores are emitted so
//! that the fusion rules recover the planted bald and facial-hair flags.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_corpus, AttributeScores, Cohort, Corpus, CorpusError, CorpusFiles, EmbeddingMatrix, Gender, HairMask,
    ImageRecord, Race,
};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub race: Race,
    pub gender: Gender,
    pub subjects: usize,
    /// Fraction of subjects with facial hair.
    pub facial_hair_prevalence: f64,
    /// Fraction of subjects with a bald hairstyle.
    pub bald_prevalence: f64,
    /// Per-image hair ratio mixture, truncated to [0, 1].
    pub hair_ratio: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub mask_side: usize,
    /// Inclusive range of images per subject.
    pub images_per_subject: [usize; 2],
    /// Norm of the per-subject offset from the shared base direction.
    pub sigma_id: f64,
    /// Norm of the per-image noise vector.
    pub sigma_noise: f64,
    /// Scale of the hair-ratio-driven shift along the occlusion direction.
    pub occlusion_strength: f64,
    pub cohorts: Vec<CohortConfig>,
    pub seed: u64,
}

fn component(weight: f64, mean: f64, sd: f64) -> MixtureComponent {
    MixtureComponent { weight, mean, sd }
}

impl Default for GeneratorConfig {
    /// Female hair ratios peak in the 40-50% range; male ratios peak below
    /// 20% with a spike near zero; most male subjects have facial hair.
    fn default() -> Self {
        let race = Race::Caucasian;
        Self {
            dim: 128,
            mask_side: 112,
            images_per_subject: [2, 6],
            sigma_id: 2.0,
            sigma_noise: 0.6,
            occlusion_strength: 2.0,
            cohorts: vec![
                CohortConfig {
                    race: race.clone(),
                    gender: Gender::Female,
                    subjects: 200,
                    facial_hair_prevalence: 0.01,
                    bald_prevalence: 0.0,
                    hair_ratio: vec![component(0.7, 0.45, 0.05), component(0.3, 0.17, 0.05)],
                },
                CohortConfig {
                    race,
                    gender: Gender::Male,
                    subjects: 200,
                    facial_hair_prevalence: 0.7,
                    bald_prevalence: 0.05,
                    hair_ratio: vec![component(0.15, 0.03, 0.015), component(0.85, 0.15, 0.05)],
                },
            ],
            seed: 2021,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.dim == 0 || self.mask_side == 0 {
            return bad("dim and mask_side must be positive".into());
        }
        let [lo, hi] = self.images_per_subject;
        if lo == 0 || lo > hi {
            return bad(format!("images_per_subject [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        if !(self.sigma_id > 0.0 && self.sigma_noise > 0.0) {
            return bad("sigma_id and sigma_noise must be positive".into());
        }
        if !(self.occlusion_strength >= 0.0 && self.occlusion_strength.is_finite()) {
            return bad("occlusion_strength must be finite and non-negative".into());
        }
        if self.cohorts.is_empty() {
            return bad("at least one cohort is required".into());
        }
        for c in &self.cohorts {
            let name = Cohort::new(c.race.clone(), c.gender).to_string();
            if c.subjects == 0 {
                return bad(format!("{name}: subjects must be positive"));
            }
            for (what, p) in [
                ("facial_hair_prevalence", c.facial_hair_prevalence),
                ("bald_prevalence", c.bald_prevalence),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("{name}: {what} {p} outside [0, 1]"));
                }
            }
            if c.hair_ratio.is_empty() {
                return bad(format!("{name}: empty hair_ratio mixture"));
            }
            for m in &c.hair_ratio {
                if !(m.weight > 0.0 && m.sd > 0.0 && m.mean.is_finite()) {
                    return bad(format!("{name}: mixture components need weight > 0 and sd > 0"));
                }
                // Truncation to [0, 1] must keep reasonable mass.
                if m.mean < -3.0 * m.sd || m.mean > 1.0 + 3.0 * m.sd {
                    return bad(format!("{name}: mixture mean {} is far outside [0, 1]", m.mean));
                }
            }
        }
        Ok(())
    }
}

/// Flags the generator planted for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Planted {
    pub bald: bool,
    pub facial_hair: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<ImageRecord>,
    pub embeddings: EmbeddingMatrix,
    pub masks: Vec<Option<HairMask>>,
    pub planted: Vec<Planted>,
    pub hair_ratios: Vec<f64>,
}

impl GeneratedCorpus {
    pub fn to_corpus(&self) -> Result<Corpus, CorpusError> {
        Corpus::from_parts(self.records.clone(), self.embeddings.clone(), self.masks.clone())
    }

    /// Writes the corpus directory; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        write_corpus(
            dir,
            &CorpusFiles {
                records: &self.records,
                embeddings: &self.embeddings,
                masks: &self.masks,
            },
        )
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let scale = norm / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn sample_mixture(rng: &mut ChaCha8Rng, mix: &[MixtureComponent]) -> f64 {
    let total: f64 = mix.iter().map(|m| m.weight).sum();
    loop {
        let mut u = rng.random::<f64>() * total;
        let mut pick = mix[mix.len() - 1];
        for m in mix {
            if u < m.weight {
                pick = *m;
                break;
            }
            u -= m.weight;
        }
        let x = Normal::new(pick.mean, pick.sd).expect("validated sd").sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
}

/// Confidence in tenths within `[lo, hi]`.
fn confidence(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let (lo, hi) = ((lo * 10.0).round() as u32, (hi * 10.0).round() as u32);
    f64::from(rng.random_range(lo..=hi)) / 10.0
}

fn levels(rng: &mut ChaCha8Rng, choices: &[f64], required: Option<f64>) -> [f64; 3] {
    let mut out = [0.0; 3];
    for v in &mut out {
        *v = choices[rng.random_range(0..choices.len())];
    }
    if let Some(r) = required {
        out[rng.random_range(0..3)] = r;
    }
    out
}

/// Vendor scores that the default fusion rule maps to `facial_hair`.
fn facial_hair_scores(rng: &mut ChaCha8Rng, facial_hair: bool) -> AttributeScores {
    let low = [0.0, 0.1];
    let (ms, rek_flag, rek_conf) = if facial_hair {
        match rng.random_range(0..3) {
            0 => {
                let strong = if rng.random_bool(0.5) { 0.6 } else { 0.9 };
                let flag = rng.random_bool(0.5);
                (
                    levels(rng, &[0.0, 0.1, 0.4, 0.6, 0.9], Some(strong)),
                    flag,
                    confidence(rng, 50.0, 100.0),
                )
            }
            1 => (levels(rng, &low, None), true, confidence(rng, 85.1, 100.0)),
            _ => {
                let ms = levels(rng, &[0.0, 0.1, 0.4], Some(0.4));
                if rng.random_bool(0.5) {
                    (ms, true, confidence(rng, 55.1, 100.0))
                } else {
                    (ms, false, confidence(rng, 50.0, 64.9))
                }
            }
        }
    } else if rng.random_bool(0.75) {
        let ms = levels(rng, &low, None);
        if rng.random_bool(0.5) {
            (ms, false, confidence(rng, 50.0, 100.0))
        } else {
            (ms, true, confidence(rng, 50.0, 85.0))
        }
    } else {
        let ms = levels(rng, &[0.0, 0.1, 0.4], Some(0.4));
        if rng.random_bool(0.5) {
            (ms, false, confidence(rng, 65.0, 100.0))
        } else {
            (ms, true, confidence(rng, 50.0, 55.0))
        }
    };
    AttributeScores {
        ms_beard: Some(ms[0]),
        ms_mustache: Some(ms[1]),
        ms_sideburns: Some(ms[2]),
        ms_bald: None,
        rek_facial_hair: Some(rek_flag),
        rek_confidence: Some(rek_conf),
    }
}

pub fn generate(config: &GeneratorConfig) -> Result<GeneratedCorpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let pixels = config.mask_side * config.mask_side;
    let mut base = random_vector(&mut rng, dim, 1.0);
    normalize(&mut base);
    let mut occlusion = random_vector(&mut rng, dim, 1.0);
    normalize(&mut occlusion);

    let mut records = Vec::new();
    let mut rows: Vec<f32> = Vec::new();
    let mut masks = Vec::new();
    let mut planted = Vec::new();
    let mut hair_ratios = Vec::new();
    for c in &config.cohorts {
        let prefix = format!("{}{}", c.race.code(), c.gender.code());
        for s in 0..c.subjects {
            let subject_id = format!("{prefix}_s{s:05}");
            let offset = random_vector(&mut rng, dim, config.sigma_id);
            let mut center: Vec<f64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            normalize(&mut center);
            let flags = Planted {
                bald: rng.random_bool(c.bald_prevalence),
                facial_hair: rng.random_bool(c.facial_hair_prevalence),
            };
            let [lo, hi] = config.images_per_subject;
            let n_images = rng.random_range(lo..=hi);
            for k in 0..n_images {
                let ratio = if flags.bald {
                    rng.random_range(0.0..0.015)
                } else {
                    sample_mixture(&mut rng, &c.hair_ratio)
                };
                let hair_pixels = (ratio * pixels as f64).round() as usize;
                let mask = HairMask::top_filled(config.mask_side, config.mask_side, hair_pixels);
                let exact_ratio = hair_pixels as f64 / pixels as f64;

                let noise = random_vector(&mut rng, dim, config.sigma_noise);
                let shift = config.occlusion_strength * exact_ratio;
                rows.extend(
                    center
                        .iter()
                        .zip(&noise)
                        .zip(&occlusion)
                        .map(|((c, n), u)| (c + n + shift * u) as f32),
                );

                let mut attrs = facial_hair_scores(&mut rng, flags.facial_hair);
                attrs.ms_bald = Some(if flags.bald {
                    f64::from(rng.random_range(970..=1000u32)) / 1000.0
                } else {
                    f64::from(rng.random_range(0..=960u32)) / 1000.0
                });
                let image_id = format!("{subject_id}_i{k:02}");
                records.push(ImageRecord {
                    mask_ref: Some(format!("{image_id}.pgm")),
                    image_id,
                    subject_id: subject_id.clone(),
                    race: c.race.clone(),
                    gender: c.gender,
                    embedding_index: records.len(),
                    attrs,
                });
                masks.push(Some(mask));
                planted.push(flags);
                hair_ratios.push(exact_ratio);
            }
        }
    }
    let embeddings = EmbeddingMatrix::new(records.len(), dim, rows)?;
    Ok(GeneratedCorpus {
        records,
        embeddings,
        masks,
        planted,
        hair_ratios,
    })
}
