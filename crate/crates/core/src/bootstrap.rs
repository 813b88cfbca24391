//! Random subsets with the balanced subset's subject and image counts.
//!
//! Each sample draws, per gender, the target number of subjects uniformly
//! without replacement, one image from every drawn subject, and then the
//! remaining target images uniformly without replacement from the drawn
//! subjects' other images. If the drawn subjects cannot supply enough
//! images the subject draw is repeated, up to [`MAX_RETRIES`] times.
//!
//! Randomness: sample `s` uses `ChaCha8Rng::seed_from_u64(seed)` from
//! `rand_chacha` with its stream set to `s` (see [`RNG_ALGORITHM`]), so
//! samples are independent of scheduling and thread count.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::render_aligned;
use crate::balancer::BalancedSubset;
use crate::corpus::{Cohort, Corpus, Gender, Race};
use crate::gapstats::{dprime, GapError};
use crate::scoring::{PairKind, PairPlan, ScoreOptions, ScoringError};

pub const MAX_RETRIES: usize = 100;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed), stream = sample index";

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("infeasible counts for {cohort}: {reason}")]
    InfeasibleCounts { cohort: String, reason: String },
    #[error("no feasible subject draw for {cohort} after {MAX_RETRIES} retries")]
    RetriesExhausted { cohort: String },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("sample {sample}: {source}")]
    Sample {
        sample: usize,
        #[source]
        source: GapError,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCounts {
    pub female_subjects: usize,
    pub female_images: usize,
    pub male_subjects: usize,
    pub male_images: usize,
}

impl FromStr for TargetCounts {
    type Err = String;

    /// Parses `f_subj,f_img,m_subj,m_img`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        let [female_subjects, female_images, male_subjects, male_images] = v[..] else {
            return Err(format!("expected four comma-separated counts, got `{s}`"));
        };
        Ok(Self {
            female_subjects,
            female_images,
            male_subjects,
            male_images,
        })
    }
}

impl TargetCounts {
    /// Distinct subjects and images per gender among the pairs of `race`.
    pub fn from_subset(corpus: &Corpus, subset: &BalancedSubset, race: &Race) -> Self {
        let mut subjects: [HashSet<&str>; 2] = Default::default();
        let mut images = [0usize; 2];
        for p in &subset.pairs {
            for (g, id) in [(0, &p.female_id), (1, &p.male_id)] {
                if let Some(i) = corpus.index_of(id) {
                    let r = corpus.record(i);
                    if r.race == *race {
                        subjects[g].insert(r.subject_id.as_str());
                        images[g] += 1;
                    }
                }
            }
        }
        Self {
            female_subjects: subjects[0].len(),
            female_images: images[0],
            male_subjects: subjects[1].len(),
            male_images: images[1],
        }
    }
}

/// Images of one cohort grouped by subject, both in corpus order.
#[derive(Debug, Clone)]
pub struct SubjectPool {
    cohort: Cohort,
    subjects: Vec<Vec<usize>>,
}

impl SubjectPool {
    pub fn new(corpus: &Corpus, cohort: &Cohort) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut subjects: Vec<Vec<usize>> = Vec::new();
        for i in corpus.cohort_members(cohort) {
            let next = subjects.len();
            let s = *index.entry(corpus.record(i).subject_id.as_str()).or_insert(next);
            if s == subjects.len() {
                subjects.push(Vec::new());
            }
            subjects[s].push(i);
        }
        Self {
            cohort: cohort.clone(),
            subjects,
        }
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn image_count(&self) -> usize {
        self.subjects.iter().map(Vec::len).sum()
    }

    fn infeasible(&self, reason: String) -> BootstrapError {
        BootstrapError::InfeasibleCounts {
            cohort: self.cohort.to_string(),
            reason,
        }
    }

    fn check(&self, subjects: usize, images: usize) -> Result<(), BootstrapError> {
        if subjects == 0 || images < subjects {
            return Err(self.infeasible(format!(
                "need 1 <= subjects <= images, got {subjects} subjects and {images} images"
            )));
        }
        if subjects > self.subject_count() {
            return Err(self.infeasible(format!(
                "{subjects} subjects requested, {} available",
                self.subject_count()
            )));
        }
        let mut sizes: Vec<usize> = self.subjects.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let most: usize = sizes[..subjects].iter().sum();
        if images > most {
            return Err(self.infeasible(format!(
                "{images} images requested, at most {most} reachable from {subjects} subjects"
            )));
        }
        Ok(())
    }

    /// One without-replacement draw; returns record indices sorted in
    /// corpus order.
    pub fn draw<R: Rng>(&self, subjects: usize, images: usize, rng: &mut R) -> Result<Vec<usize>, BootstrapError> {
        self.check(subjects, images)?;
        for _ in 0..MAX_RETRIES {
            let chosen = rand::seq::index::sample(rng, self.subjects.len(), subjects);
            let pooled: usize = chosen.iter().map(|s| self.subjects[s].len()).sum();
            if pooled < images {
                continue;
            }
            let mut picked = Vec::with_capacity(images);
            let mut rest = Vec::with_capacity(pooled - subjects);
            for s in chosen.iter() {
                let imgs = &self.subjects[s];
                let first = rng.random_range(0..imgs.len());
                picked.push(imgs[first]);
                rest.extend(imgs.iter().enumerate().filter(|&(k, _)| k != first).map(|(_, &i)| i));
            }
            for k in rand::seq::index::sample(rng, rest.len(), images - subjects) {
                picked.push(rest[k]);
            }
            picked.sort_unstable();
            return Ok(picked);
        }
        Err(BootstrapError::RetriesExhausted {
            cohort: self.cohort.to_string(),
        })
    }
}

/// The per-sample generator.
pub fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancedDPrimes {
    pub impostor: f64,
    pub genuine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub balanced_dprime: Option<f64>,
    pub mean_random: f64,
    pub std_random: f64,
    pub within_one_sigma: Option<bool>,
    pub random_dprimes: Vec<f64>,
}

impl MetricSummary {
    fn new(values: Vec<f64>, balanced: Option<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            balanced_dprime: balanced,
            mean_random: mean,
            std_random: std,
            within_one_sigma: balanced.map(|b| (b - mean).abs() <= std),
            random_dprimes: values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub race: Race,
    pub samples: usize,
    pub seed: u64,
    pub rng: &'static str,
    pub counts: TargetCounts,
    pub impostor: MetricSummary,
    pub genuine: MetricSummary,
    pub warnings: Vec<String>,
}

/// d-primes between the female and male draws of one sample.
fn sample_dprimes(
    corpus: &Corpus,
    female: Vec<usize>,
    male: Vec<usize>,
    opts: &ScoreOptions,
) -> Result<Result<(f64, f64), GapError>, ScoringError> {
    let dist = |members: &Vec<usize>, kind| PairPlan::from_members(corpus, members.clone(), kind).distribution(opts);
    let fi = dist(&female, PairKind::Impostor)?;
    let mi = dist(&male, PairKind::Impostor)?;
    let fg = dist(&female, PairKind::Genuine)?;
    let mg = dist(&male, PairKind::Genuine)?;
    Ok(dprime(&fi, &mi).and_then(|imp| Ok((imp, dprime(&fg, &mg)?))))
}

pub fn bootstrap_gap(
    corpus: &Corpus,
    race: &Race,
    counts: TargetCounts,
    samples: usize,
    seed: u64,
    balanced: Option<BalancedDPrimes>,
    opts: &ScoreOptions,
) -> Result<BootstrapReport, BootstrapError> {
    if samples == 0 {
        return Err(BootstrapError::NoSamples);
    }
    let female = SubjectPool::new(corpus, &Cohort::new(race.clone(), Gender::Female));
    let male = SubjectPool::new(corpus, &Cohort::new(race.clone(), Gender::Male));
    female.check(counts.female_subjects, counts.female_images)?;
    male.check(counts.male_subjects, counts.male_images)?;
    let opts = ScoreOptions {
        max_pairs: None,
        ..*opts
    };

    let results: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s);
            let f = female.draw(counts.female_subjects, counts.female_images, &mut rng)?;
            let m = male.draw(counts.male_subjects, counts.male_images, &mut rng)?;
            sample_dprimes(corpus, f, m, &opts)?.map_err(|source| BootstrapError::Sample { sample: s, source })
        })
        .collect::<Result<_, _>>()?;

    let mut warnings = Vec::new();
    if samples == 1 {
        warnings.push("single sample: standard deviation undefined, reported as 0".to_string());
    }
    let (imp, gen): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    Ok(BootstrapReport {
        race: race.clone(),
        samples,
        seed,
        rng: RNG_ALGORITHM,
        counts,
        impostor: MetricSummary::new(imp, balanced.map(|b| b.impostor)),
        genuine: MetricSummary::new(gen, balanced.map(|b| b.genuine)),
        warnings,
    })
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

/// Aligned text: balanced d-prime, random mean and std per metric.
pub fn render_bootstrap_table(reports: &[BootstrapReport]) -> String {
    let header = [
        "pair",
        "imp d' balanced",
        "imp mean random",
        "imp std random",
        "gen d' balanced",
        "gen mean random",
        "gen std random",
    ];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            let code = r.race.code();
            [
                format!("{code}_M vs {code}_F"),
                opt3(r.impostor.balanced_dprime),
                format!("{:.3}", r.impostor.mean_random),
                format!("{:.3}", r.impostor.std_random),
                opt3(r.genuine.balanced_dprime),
                format!("{:.3}", r.genuine.mean_random),
                format!("{:.3}", r.genuine.std_random),
            ]
        })
        .collect();
    render_aligned(&header, &rows)
}
