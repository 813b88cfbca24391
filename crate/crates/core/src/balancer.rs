//! Hairstyle-balanced female/male subsets.
//!
//! Bald and facial-hair images are dropped, then females are visited in
//! corpus order and each takes the still-unmatched same-race male whose hair
//! mask has the highest IoU with hers (ties to the smallest image id). The
//! pair is kept when that IoU reaches the threshold. Males are never reused.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeLabels;
use crate::corpus::{Corpus, CorpusError, Gender, HairMask, Race};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum BalanceError {
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("labels cover {labels} images, corpus has {records}")]
    LabelCount { labels: usize, records: usize },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("subset file: {0}")]
    SubsetFile(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for BalanceError {
    fn from(e: csv::Error) -> Self {
        BalanceError::SubsetFile(e.to_string())
    }
}

/// Intersection over union of hair pixels. Two empty masks have IoU 1.
pub fn mask_iou(a: &HairMask, b: &HairMask) -> Result<f64, BalanceError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(BalanceError::DimensionMismatch(
            (a.width(), a.height()),
            (b.width(), b.height()),
        ));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += u64::from((x & y).count_ones());
        union += u64::from((x | y).count_ones());
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExclusionReason {
    Bald,
    FacialHair,
    NoMatchAboveThreshold,
    MissingMask,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ExclusionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Bald" => ExclusionReason::Bald,
            "FacialHair" => ExclusionReason::FacialHair,
            "NoMatchAboveThreshold" => ExclusionReason::NoMatchAboveThreshold,
            "MissingMask" => ExclusionReason::MissingMask,
            _ => return Err(format!("unknown exclusion reason `{s}`")),
        })
    }
}

const UNMATCHED_MALE: &str = "UnmatchedMale";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub female_id: String,
    pub male_id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSubset {
    pub pairs: Vec<MatchedPair>,
    /// Excluded image ids with their reason, in corpus order.
    pub excluded: Vec<(String, ExclusionReason)>,
    /// Eligible males left without a partner, in corpus order.
    pub unmatched_males: Vec<String>,
    pub threshold: f64,
}

impl BalancedSubset {
    pub fn reason(&self, image_id: &str) -> Option<ExclusionReason> {
        self.excluded.iter().find(|(id, _)| id == image_id).map(|&(_, r)| r)
    }

    /// Ids of every paired image.
    pub fn image_ids(&self) -> HashSet<String> {
        self.pairs
            .iter()
            .flat_map(|p| [p.female_id.clone(), p.male_id.clone()])
            .collect()
    }

    pub fn exclusion_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (_, r) in &self.excluded {
            *out.entry(r.to_string()).or_insert(0) += 1;
        }
        out
    }
}

/// Matched `(female, male, iou)` index triples and unmatched female indices.
pub type Matching = (Vec<(usize, usize, f64)>, Vec<usize>);

/// Greedy one-to-one matching. Returns the committed pairs as
/// `(female index, male index, iou)` and the indices of unmatched females.
pub fn greedy_match(
    females: &[(&str, &HairMask)],
    males: &[(&str, &HairMask)],
    threshold: f64,
) -> Result<Matching, BalanceError> {
    let mut taken = vec![false; males.len()];
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (fi, (_, fmask)) in females.iter().enumerate() {
        let scores: Vec<Option<f64>> = males
            .par_iter()
            .enumerate()
            .map(|(mi, (_, mmask))| {
                if taken[mi] {
                    Ok(None)
                } else {
                    mask_iou(fmask, mmask).map(Some)
                }
            })
            .collect::<Result<_, _>>()?;
        let best = scores.iter().enumerate().filter_map(|(mi, s)| s.map(|s| (mi, s))).fold(
            None::<(usize, f64)>,
            |best, (mi, s)| match best {
                Some((bi, bs)) if bs > s || (bs == s && males[bi].0 <= males[mi].0) => Some((bi, bs)),
                _ => Some((mi, s)),
            },
        );
        match best {
            Some((mi, iou)) if iou >= threshold => {
                taken[mi] = true;
                pairs.push((fi, mi, iou));
            }
            _ => unmatched.push(fi),
        }
    }
    Ok((pairs, unmatched))
}

/// Builds the balanced subset over all races, matching only within a race.
pub fn balance(corpus: &Corpus, labels: &[AttributeLabels], threshold: f64) -> Result<BalancedSubset, BalanceError> {
    if labels.len() != corpus.len() {
        return Err(BalanceError::LabelCount {
            labels: labels.len(),
            records: corpus.len(),
        });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(BalanceError::InvalidThreshold(threshold));
    }
    let mut reasons: Vec<Option<ExclusionReason>> = vec![None; corpus.len()];
    let mut masks: Vec<Option<Arc<HairMask>>> = vec![None; corpus.len()];
    for i in 0..corpus.len() {
        reasons[i] = if labels[i].is_bald {
            Some(ExclusionReason::Bald)
        } else if labels[i].has_facial_hair {
            Some(ExclusionReason::FacialHair)
        } else {
            match corpus.mask(i)? {
                Some(m) => {
                    masks[i] = Some(m);
                    None
                }
                None => Some(ExclusionReason::MissingMask),
            }
        };
    }

    let mut races: Vec<Race> = corpus.records().iter().map(|r| r.race.clone()).collect();
    races.sort();
    races.dedup();

    let mut pairs = Vec::new();
    let mut male_taken = vec![false; corpus.len()];
    for race in &races {
        let eligible = |g: Gender| -> Vec<usize> {
            (0..corpus.len())
                .filter(|&i| {
                    let r = corpus.record(i);
                    r.race == *race && r.gender == g && reasons[i].is_none()
                })
                .collect()
        };
        let f_idx = eligible(Gender::Female);
        let m_idx = eligible(Gender::Male);
        let view = |idx: &[usize]| -> Vec<(&str, &HairMask)> {
            idx.iter()
                .map(|&i| {
                    (
                        corpus.record(i).image_id.as_str(),
                        masks[i].as_deref().expect("eligible images have masks"),
                    )
                })
                .collect()
        };
        let (matched, unmatched) = greedy_match(&view(&f_idx), &view(&m_idx), threshold)?;
        for (fi, mi, iou) in matched {
            male_taken[m_idx[mi]] = true;
            pairs.push(MatchedPair {
                female_id: corpus.record(f_idx[fi]).image_id.clone(),
                male_id: corpus.record(m_idx[mi]).image_id.clone(),
                iou,
            });
        }
        for fi in unmatched {
            reasons[f_idx[fi]] = Some(ExclusionReason::NoMatchAboveThreshold);
        }
    }

    let excluded = (0..corpus.len())
        .filter_map(|i| reasons[i].map(|r| (corpus.record(i).image_id.clone(), r)))
        .collect();
    let unmatched_males = (0..corpus.len())
        .filter(|&i| corpus.record(i).gender == Gender::Male && reasons[i].is_none() && !male_taken[i])
        .map(|i| corpus.record(i).image_id.clone())
        .collect();
    Ok(BalancedSubset {
        pairs,
        excluded,
        unmatched_males,
        threshold,
    })
}

/// Writes the pair CSV (`female_id,male_id,iou`) and, optionally, the
/// exclusion audit CSV (`image_id,reason`).
pub fn emit_subset(
    subset: &BalancedSubset,
    pairs_path: &Path,
    audit_path: Option<&Path>,
    header_comment: &str,
) -> Result<(), BalanceError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(pairs_path)?);
    file.write_all(header_comment.as_bytes())?;
    writeln!(file, "# threshold={}", subset.threshold)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["female_id", "male_id", "iou"])?;
    for p in &subset.pairs {
        w.write_record([p.female_id.as_str(), p.male_id.as_str(), &p.iou.to_string()])?;
    }
    w.flush()?;

    if let Some(path) = audit_path {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(header_comment.as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["image_id", "reason"])?;
        for (id, r) in &subset.excluded {
            w.write_record([id.as_str(), &r.to_string()])?;
        }
        for id in &subset.unmatched_males {
            w.write_record([id.as_str(), UNMATCHED_MALE])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Reads back what [`emit_subset`] wrote.
pub fn load_subset(pairs_path: &Path, audit_path: Option<&Path>) -> Result<BalancedSubset, BalanceError> {
    let text = std::fs::read_to_string(pairs_path)?;
    let threshold = text
        .lines()
        .filter_map(|l| l.strip_prefix("# threshold="))
        .next_back()
        .ok_or_else(|| BalanceError::SubsetFile("missing `# threshold=` line".into()))?
        .trim()
        .parse::<f64>()
        .map_err(|e| BalanceError::SubsetFile(format!("bad threshold: {e}")))?;
    let mut pairs = Vec::new();
    for row in csv_reader(&text).records() {
        let row = row?;
        let iou = row
            .get(2)
            .ok_or_else(|| BalanceError::SubsetFile("pair row needs three columns".into()))?
            .parse()
            .map_err(|e| BalanceError::SubsetFile(format!("bad iou: {e}")))?;
        pairs.push(MatchedPair {
            female_id: row[0].to_string(),
            male_id: row[1].to_string(),
            iou,
        });
    }
    let mut excluded = Vec::new();
    let mut unmatched_males = Vec::new();
    if let Some(path) = audit_path {
        let text = std::fs::read_to_string(path)?;
        for row in csv_reader(&text).records() {
            let row = row?;
            let (Some(id), Some(reason)) = (row.get(0), row.get(1)) else {
                return Err(BalanceError::SubsetFile("audit row needs two columns".into()));
            };
            if reason == UNMATCHED_MALE {
                unmatched_males.push(id.to_string());
            } else {
                excluded.push((id.to_string(), reason.parse().map_err(BalanceError::SubsetFile)?));
            }
        }
    }
    Ok(BalancedSubset {
        pairs,
        excluded,
        unmatched_males,
        threshold,
    })
}

/// Image ids listed in a subset file: both columns of a pair CSV, or the
/// first column of any other CSV.
pub fn read_subset_ids(path: &Path) -> Result<HashSet<String>, BalanceError> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers()?.clone();
    let is_pairs = headers.get(0) == Some("female_id") && headers.get(1) == Some("male_id");
    let mut ids = HashSet::new();
    for row in reader.records() {
        let row = row?;
        let take = if is_pairs { 2 } else { 1 };
        for v in row.iter().take(take) {
            ids.insert(v.to_string());
        }
    }
    Ok(ids)
}
