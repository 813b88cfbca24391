//! Genuine/impostor pair enumeration and cosine score distributions.
//!
//! A [`PairPlan`] fixes the cohort members (in corpus order) and copies their
//! embeddings into one contiguous buffer. Pairs are unordered and visited as
//! `(i, j)` member positions with `i < j`, row by row. Rows are cut into
//! blocks whose boundaries depend only on the plan, each block is scored
//! independently, and the partial distributions are merged in block order,
//! so results do not depend on the thread count.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeLabels, TailBounds, TailRegion};
use crate::corpus::{Cohort, Corpus};

pub const DEFAULT_BINS: usize = 400;
const DEFAULT_BLOCK_PAIRS: u64 = 1 << 18;

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("attribute split requested but no labels supplied")]
    MissingLabels,
    #[error("labels cover {labels} images, corpus has {records}")]
    LabelCount { labels: usize, records: usize },
    #[error("empty distribution for {0}")]
    EmptyDistribution(String),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("cannot merge histograms with {0} and {1} bins")]
    BinMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dot product with 16 independent f32 lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 16];
    let ca = a.chunks_exact(16);
    let cb = b.chunks_exact(16);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..16 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = 0f64;
    for v in acc {
        s += f64::from(v);
    }
    (s + f64::from(tail)) as f32
}

/// Cosine similarity from precomputed norms, clamped to [-1, 1].
#[inline]
pub fn cosine_with_norms(a: &[f32], b: &[f32], norm_a: f64, norm_b: f64) -> f64 {
    (f64::from(dot(a, b)) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity of two nonzero rows.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    cosine_with_norms(a, b, norm(a), norm(b))
}

/// Streaming moments plus a fixed-bin histogram over [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
    counts: Vec<u64>,
}

impl ScoreDistribution {
    pub fn new(bins: usize) -> Result<Self, ScoringError> {
        if bins == 0 {
            return Err(ScoringError::NoBins);
        }
        Ok(Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            counts: vec![0; bins],
        })
    }

    pub fn from_scores(bins: usize, scores: impl IntoIterator<Item = f64>) -> Result<Self, ScoringError> {
        let mut d = Self::new(bins)?;
        for s in scores {
            d.push(s);
        }
        Ok(d)
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
        let bins = self.counts.len();
        let b = ((x + 1.0) * 0.5 * bins as f64).floor();
        let b = if b.is_nan() {
            0
        } else {
            (b.max(0.0) as usize).min(bins - 1)
        };
        self.counts[b] += 1;
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &ScoreDistribution) -> Result<(), ScoringError> {
        if self.counts.len() != other.counts.len() {
            return Err(ScoringError::BinMismatch(self.counts.len(), other.counts.len()));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Sample variance (n - 1 denominator); `None` below two samples.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2 / (self.n - 1) as f64).max(0.0))
    }

    pub fn min(&self) -> Option<f64> {
        (self.n > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.n > 0).then_some(self.max)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = 2.0 / self.counts.len() as f64;
        (-1.0 + w * b as f64, -1.0 + w * (b + 1) as f64)
    }

    /// Summary for JSON reports.
    pub fn summary(&self) -> DistributionSummary {
        DistributionSummary {
            n: self.n,
            mean: (self.n > 0).then_some(self.mean),
            variance: self.variance(),
            min: self.min(),
            max: self.max(),
        }
    }

    /// Histogram CSV with columns `bin_low,bin_high,count`, preceded by
    /// `header_comment` (expected to be `#`-prefixed lines).
    pub fn write_histogram_csv(&self, path: &Path, header_comment: &str) -> Result<(), ScoringError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(header_comment.as_bytes())?;
        writeln!(w, "bin_low,bin_high,count")?;
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(b);
            writeln!(w, "{lo},{hi},{c}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub n: u64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKind {
    Genuine,
    Impostor,
}

impl FromStr for PairKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "genuine" => Ok(PairKind::Genuine),
            "impostor" => Ok(PairKind::Impostor),
            _ => Err(format!("unknown pair kind `{s}`")),
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Genuine => "genuine",
            PairKind::Impostor => "impostor",
        })
    }
}

/// Per-image predicate used by attribute splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImagePredicate {
    Any,
    Bald,
    NotBald,
    FacialHair,
    NoFacialHair,
    LowerTail,
    Middle,
    UpperTail,
}

impl ImagePredicate {
    pub fn matches(self, labels: &AttributeLabels, tails: &TailBounds) -> bool {
        let tail = || labels.hair_ratio.map(|h| tails.classify(h));
        match self {
            ImagePredicate::Any => true,
            ImagePredicate::Bald => labels.is_bald,
            ImagePredicate::NotBald => !labels.is_bald,
            ImagePredicate::FacialHair => labels.has_facial_hair,
            ImagePredicate::NoFacialHair => !labels.has_facial_hair,
            ImagePredicate::LowerTail => tail() == Some(TailRegion::LowerTail),
            ImagePredicate::Middle => tail() == Some(TailRegion::Middle),
            ImagePredicate::UpperTail => tail() == Some(TailRegion::UpperTail),
        }
    }
}

impl FromStr for ImagePredicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "any" => ImagePredicate::Any,
            "bald" => ImagePredicate::Bald,
            "not-bald" => ImagePredicate::NotBald,
            "facial-hair" => ImagePredicate::FacialHair,
            "no-facial-hair" => ImagePredicate::NoFacialHair,
            "lower" | "lower-tail" => ImagePredicate::LowerTail,
            "middle" => ImagePredicate::Middle,
            "upper" | "upper-tail" => ImagePredicate::UpperTail,
            _ => return Err(format!("unknown attribute predicate `{s}`")),
        })
    }
}

/// Pairs whose one image satisfies `first` and the other `second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSplit {
    pub first: ImagePredicate,
    pub second: ImagePredicate,
}

impl FromStr for AttributeSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected attrA:attrB, got `{s}`"))?;
        Ok(Self {
            first: a.parse()?,
            second: b.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub cohort: Cohort,
    pub kind: PairKind,
    pub subset: Option<HashSet<String>>,
    pub split: Option<AttributeSplit>,
}

impl PairSpec {
    pub fn new(cohort: Cohort, kind: PairKind) -> Self {
        Self {
            cohort,
            kind,
            subset: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    pub bins: usize,
    /// Uniform seeded subsample of at most this many pairs.
    pub max_pairs: Option<u64>,
    pub seed: u64,
    /// Target pair count per parallel block.
    pub block_pairs: u64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            max_pairs: None,
            seed: 0,
            block_pairs: DEFAULT_BLOCK_PAIRS,
        }
    }
}

/// Admissible pairs of one cohort, ready to be scored.
#[derive(Debug, Clone)]
pub struct PairPlan {
    kind: PairKind,
    members: Vec<usize>,
    subjects: Vec<u32>,
    /// Bit 0: satisfies `split.first`; bit 1: satisfies `split.second`.
    sides: Option<Vec<u8>>,
    groups: Vec<Vec<u32>>,
    group_of: Vec<u32>,
    rank_in_group: Vec<u32>,
    dim: usize,
    rows: Vec<f32>,
    norms: Vec<f64>,
}

impl PairPlan {
    /// Plans the pairs admitted by `spec`. `labels` is required when the
    /// spec has an attribute split.
    pub fn new(
        corpus: &Corpus,
        spec: &PairSpec,
        labels: Option<&[AttributeLabels]>,
        tails: &TailBounds,
    ) -> Result<Self, ScoringError> {
        if let Some(l) = labels {
            if l.len() != corpus.len() {
                return Err(ScoringError::LabelCount {
                    labels: l.len(),
                    records: corpus.len(),
                });
            }
        }
        let members: Vec<usize> = corpus
            .cohort_members(&spec.cohort)
            .into_iter()
            .filter(|&i| {
                spec.subset
                    .as_ref()
                    .is_none_or(|s| s.contains(&corpus.record(i).image_id))
            })
            .collect();
        let sides = match spec.split {
            None => None,
            Some(split) => {
                let labels = labels.ok_or(ScoringError::MissingLabels)?;
                Some(
                    members
                        .iter()
                        .map(|&i| {
                            u8::from(split.first.matches(&labels[i], tails))
                                | u8::from(split.second.matches(&labels[i], tails)) << 1
                        })
                        .collect(),
                )
            }
        };
        Ok(Self::build(corpus, members, spec.kind, sides))
    }

    /// Plans pairs over an explicit member list (record indices in any
    /// order; they are visited in the given order).
    pub fn from_members(corpus: &Corpus, members: Vec<usize>, kind: PairKind) -> Self {
        Self::build(corpus, members, kind, None)
    }

    fn build(corpus: &Corpus, members: Vec<usize>, kind: PairKind, sides: Option<Vec<u8>>) -> Self {
        let mut subject_codes = std::collections::HashMap::new();
        let mut groups: Vec<Vec<u32>> = Vec::new();
        let mut subjects = Vec::with_capacity(members.len());
        let mut group_of = Vec::with_capacity(members.len());
        let mut rank_in_group = Vec::with_capacity(members.len());
        for (pos, &i) in members.iter().enumerate() {
            let next = subject_codes.len() as u32;
            let code = *subject_codes
                .entry(corpus.record(i).subject_id.as_str())
                .or_insert(next);
            if code as usize == groups.len() {
                groups.push(Vec::new());
            }
            subjects.push(code);
            group_of.push(code);
            rank_in_group.push(groups[code as usize].len() as u32);
            groups[code as usize].push(pos as u32);
        }
        let dim = corpus.embeddings().dim();
        let mut rows = Vec::with_capacity(members.len() * dim);
        let mut norms = Vec::with_capacity(members.len());
        for &i in &members {
            rows.extend_from_slice(corpus.embedding(i));
            norms.push(corpus.embeddings().norm(corpus.record(i).embedding_index));
        }
        Self {
            kind,
            members,
            subjects,
            sides,
            groups,
            group_of,
            rank_in_group,
            dim,
            rows,
            norms,
        }
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    /// Record indices of the planned images.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    #[inline]
    fn row(&self, pos: usize) -> &[f32] {
        &self.rows[pos * self.dim..(pos + 1) * self.dim]
    }

    #[inline]
    fn split_ok(&self, i: usize, j: usize) -> bool {
        match &self.sides {
            None => true,
            Some(s) => (s[i] & 1 != 0 && s[j] & 2 != 0) || (s[i] & 2 != 0 && s[j] & 1 != 0),
        }
    }

    /// Calls `f(j)` for every partner `j > i` of member position `i`, in
    /// increasing `j`.
    #[inline]
    fn for_each_partner(&self, i: usize, mut f: impl FnMut(usize)) {
        match self.kind {
            PairKind::Genuine => {
                let g = &self.groups[self.group_of[i] as usize];
                for &j in &g[self.rank_in_group[i] as usize + 1..] {
                    let j = j as usize;
                    if self.split_ok(i, j) {
                        f(j);
                    }
                }
            }
            PairKind::Impostor => {
                let si = self.subjects[i];
                for j in i + 1..self.members.len() {
                    if self.subjects[j] != si && self.split_ok(i, j) {
                        f(j);
                    }
                }
            }
        }
    }

    fn row_count(&self, i: usize) -> u64 {
        if self.sides.is_none() {
            let after_same = (self.groups[self.group_of[i] as usize].len() - self.rank_in_group[i] as usize - 1) as u64;
            return match self.kind {
                PairKind::Genuine => after_same,
                PairKind::Impostor => (self.members.len() - i - 1) as u64 - after_same,
            };
        }
        let mut n = 0;
        self.for_each_partner(i, |_| n += 1);
        n
    }

    /// Number of admissible pairs.
    pub fn pair_count(&self) -> u64 {
        (0..self.members.len()).into_par_iter().map(|i| self.row_count(i)).sum()
    }

    /// Every admissible unordered pair as record indices, in deterministic
    /// row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.members.len()).flat_map(move |i| {
            let mut partners = Vec::new();
            self.for_each_partner(i, |j| partners.push(j));
            partners.into_iter().map(move |j| (self.members[i], self.members[j]))
        })
    }

    #[inline]
    fn score(&self, i: usize, j: usize) -> f64 {
        cosine_with_norms(self.row(i), self.row(j), self.norms[i], self.norms[j])
    }

    /// Scores every planned pair (or a seeded subsample when
    /// `opts.max_pairs` is below the pair count).
    pub fn distribution(&self, opts: &ScoreOptions) -> Result<ScoreDistribution, ScoringError> {
        let empty = ScoreDistribution::new(opts.bins)?;
        let n = self.members.len();
        let counts: Vec<u64> = (0..n).into_par_iter().map(|i| self.row_count(i)).collect();
        let total: u64 = counts.iter().sum();

        let selected = match opts.max_pairs {
            Some(k) if k < total => Some(self.sample_offsets(&counts, total, k, opts.seed)),
            _ => None,
        };
        let weights: Vec<u64> = match &selected {
            Some(sel) => sel.iter().map(|s| s.len() as u64).collect(),
            None => counts,
        };
        let blocks = cut_blocks(&weights, opts.block_pairs.max(1));

        let partials: Vec<ScoreDistribution> = blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut d = empty.clone();
                for i in start..end {
                    match &selected {
                        None => self.for_each_partner(i, |j| d.push(self.score(i, j))),
                        Some(sel) => {
                            let wanted = &sel[i];
                            if wanted.is_empty() {
                                continue;
                            }
                            let mut next = 0;
                            let mut k = 0u64;
                            self.for_each_partner(i, |j| {
                                if next < wanted.len() && wanted[next] == k {
                                    d.push(self.score(i, j));
                                    next += 1;
                                }
                                k += 1;
                            });
                        }
                    }
                }
                d
            })
            .collect();
        let mut out = empty;
        for p in &partials {
            out.merge(p)?;
        }
        Ok(out)
    }

    /// Uniform choice of `k` pair indices, returned as sorted row-local
    /// offsets per row.
    fn sample_offsets(&self, counts: &[u64], total: u64, k: u64, seed: u64) -> Vec<Vec<u64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<u64> = rand::seq::index::sample(&mut rng, total as usize, k as usize)
            .into_iter()
            .map(|x| x as u64)
            .collect();
        picks.sort_unstable();
        let mut out = vec![Vec::new(); counts.len()];
        let mut row = 0;
        let mut row_start = 0u64;
        for p in picks {
            while p >= row_start + counts[row] {
                row_start += counts[row];
                row += 1;
            }
            out[row].push(p - row_start);
        }
        out
    }
}

/// Splits rows into contiguous ranges of roughly `target` weight each.
fn cut_blocks(weights: &[u64], target: u64) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut start = 0;
    let mut acc = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if acc >= target {
            blocks.push((start, i + 1));
            start = i + 1;
            acc = 0;
        }
    }
    if start < weights.len() {
        blocks.push((start, weights.len()));
    }
    blocks
}

/// Enumerates the pairs of `spec` as record indices.
pub fn enumerate_pairs(
    corpus: &Corpus,
    spec: &PairSpec,
    labels: Option<&[AttributeLabels]>,
    tails: &TailBounds,
) -> Result<Vec<(usize, usize)>, ScoringError> {
    Ok(PairPlan::new(corpus, spec, labels, tails)?.pairs().collect())
}

/// Score distribution of `spec`. An empty result is returned as-is; callers
/// decide whether that is fatal.
pub fn score_distribution(
    corpus: &Corpus,
    spec: &PairSpec,
    labels: Option<&[AttributeLabels]>,
    tails: &TailBounds,
    opts: &ScoreOptions,
) -> Result<ScoreDistribution, ScoringError> {
    PairPlan::new(corpus, spec, labels, tails)?.distribution(opts)
}
