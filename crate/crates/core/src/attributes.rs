//! Hairstyle attribute labels.
//!
//! Bald hairstyle is the conjunction of a low hair ratio and a high Microsoft
//! Face baldness confidence. Facial hair fuses Microsoft Face levels (the
//! max over beard, mustache and sideburns) with the Amazon Rekognition beard
//! flag through three clauses; see [`FusionThresholds::has_facial_hair`].
//! Absent inputs fall on the negative side and are recorded as
//! [`Provenance::MissingInput`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeScores, Cohort, Corpus, CorpusError, HairMask, ImageRecord};

#[derive(Debug, thiserror::Error)]
pub enum AttributeError {
    #[error("invalid tail thresholds lower={lower} upper={upper}")]
    InvalidThresholds { lower: f64, upper: f64 },
    #[error("unknown image id `{0}` in ground truth")]
    UnknownImageId(String),
    #[error("ground truth: {0}")]
    Truth(String),
    #[error("labels cover {labels} images, corpus has {records}")]
    LabelCount { labels: usize, records: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for AttributeError {
    fn from(e: csv::Error) -> Self {
        AttributeError::Truth(e.to_string())
    }
}

/// Fusion constants. `Default` is the published operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionThresholds {
    /// Bald requires hair ratio strictly below this.
    pub bald_hair_ratio: f64,
    /// Bald requires baldness confidence at or above this.
    pub bald_confidence: f64,
    /// Microsoft Face level at or above which facial hair is accepted outright.
    pub ms_strong: f64,
    /// Microsoft Face level for the weak-evidence clause.
    pub ms_mid: f64,
    /// Rekognition `true` confidence above which facial hair is accepted when
    /// Microsoft Face is below `ms_strong`.
    pub rek_true_strong: f64,
    /// Rekognition `true` confidence above which the `ms_mid` clause fires.
    pub rek_true_weak: f64,
    /// Rekognition `false` confidence below which the `ms_mid` clause fires.
    pub rek_false_weak: f64,
}

impl Default for FusionThresholds {
    fn default() -> Self {
        Self {
            bald_hair_ratio: 0.02,
            bald_confidence: 0.97,
            ms_strong: 0.6,
            ms_mid: 0.4,
            rek_true_strong: 85.0,
            rek_true_weak: 55.0,
            rek_false_weak: 65.0,
        }
    }
}

const LEVEL_EPS: f64 = 1e-9;

impl FusionThresholds {
    pub fn is_bald(&self, hair_ratio: f64, ms_bald: Option<f64>) -> bool {
        hair_ratio < self.bald_hair_ratio && ms_bald.is_some_and(|b| b >= self.bald_confidence)
    }

    pub fn has_facial_hair(&self, attrs: &AttributeScores) -> bool {
        let m = ms_max(attrs);
        if m >= self.ms_strong - LEVEL_EPS {
            return true;
        }
        let (Some(flag), Some(conf)) = (attrs.rek_facial_hair, attrs.rek_confidence) else {
            return false;
        };
        if flag && conf > self.rek_true_strong {
            return true;
        }
        (m - self.ms_mid).abs() < LEVEL_EPS
            && ((flag && conf > self.rek_true_weak) || (!flag && conf < self.rek_false_weak))
    }
}

/// Largest Microsoft Face facial-hair level; absent levels count as 0.
pub fn ms_max(attrs: &AttributeScores) -> f64 {
    [attrs.ms_beard, attrs.ms_mustache, attrs.ms_sideburns]
        .into_iter()
        .map(|v| v.unwrap_or(0.0))
        .fold(0.0, f64::max)
}

/// Fraction of mask pixels labelled hair.
pub fn hair_ratio(mask: &HairMask) -> f64 {
    mask.hair_pixels() as f64 / mask.pixel_count() as f64
}

pub fn classify_bald(hair_ratio: f64, ms_bald: Option<f64>) -> bool {
    FusionThresholds::default().is_bald(hair_ratio, ms_bald)
}

pub fn classify_facial_hair(attrs: &AttributeScores) -> bool {
    FusionThresholds::default().has_facial_hair(attrs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    FusionRule,
    MissingInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub is_bald: bool,
    pub has_facial_hair: bool,
    /// `None` when the image has no mask.
    pub hair_ratio: Option<f64>,
    pub bald_decided_by: Provenance,
    pub facial_hair_decided_by: Provenance,
}

impl AttributeLabels {
    pub fn provenance_tag(&self) -> String {
        format!(
            "bald={:?};facial_hair={:?}",
            self.bald_decided_by, self.facial_hair_decided_by
        )
    }
}

pub fn label_image(record: &ImageRecord, mask: Option<&HairMask>, thresholds: &FusionThresholds) -> AttributeLabels {
    let ratio = mask.map(hair_ratio);
    let is_bald = ratio.is_some_and(|h| thresholds.is_bald(h, record.attrs.ms_bald));
    let bald_decided_by = if ratio.is_none() || record.attrs.ms_bald.is_none() {
        Provenance::MissingInput
    } else {
        Provenance::FusionRule
    };
    let has_facial_hair = thresholds.has_facial_hair(&record.attrs);
    let a = &record.attrs;
    let any_absent =
        a.ms_beard.is_none() || a.ms_mustache.is_none() || a.ms_sideburns.is_none() || a.rek_facial_hair.is_none();
    let facial_hair_decided_by = if !has_facial_hair && any_absent {
        Provenance::MissingInput
    } else {
        Provenance::FusionRule
    };
    AttributeLabels {
        is_bald,
        has_facial_hair,
        hair_ratio: ratio,
        bald_decided_by,
        facial_hair_decided_by,
    }
}

/// Labels every image in corpus order.
pub fn label_corpus(corpus: &Corpus, thresholds: &FusionThresholds) -> Result<Vec<AttributeLabels>, AttributeError> {
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let mask = corpus.mask(i)?;
            Ok(label_image(corpus.record(i), mask.as_deref(), thresholds))
        })
        .collect()
}

pub fn write_labels_csv(
    path: &Path,
    header_comment: &str,
    corpus: &Corpus,
    labels: &[AttributeLabels],
) -> Result<(), AttributeError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(header_comment.as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["image_id", "is_bald", "has_facial_hair", "hair_ratio", "provenance"])?;
    for (r, l) in corpus.records().iter().zip(labels) {
        w.write_record([
            r.image_id.as_str(),
            if l.is_bald { "1" } else { "0" },
            if l.has_facial_hair { "1" } else { "0" },
            &l.hair_ratio.map(|h| h.to_string()).unwrap_or_default(),
            &l.provenance_tag(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_len(corpus_len: usize, labels: &[AttributeLabels]) -> Result<(), AttributeError> {
    if labels.len() != corpus_len {
        return Err(AttributeError::LabelCount {
            labels: labels.len(),
            records: corpus_len,
        });
    }
    Ok(())
}

/// Percentage rounded to one decimal place.
pub fn percent_1dp(count: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| (1000.0 * count as f64 / total as f64).round() / 10.0)
}

/// Renders `24958(70%)`-style cells: thousands separators, one decimal
/// with a trailing `.0` dropped.
pub fn count_cell(count: usize, pct: Option<f64>) -> String {
    let digits = count.to_string();
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            grouped.push(',');
        }
        grouped.push(c);
    }
    match pct {
        Some(p) => {
            let s = format!("{p:.1}");
            format!("{grouped}({}%)", s.strip_suffix(".0").unwrap_or(&s))
        }
        None => grouped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusRow {
    pub cohort: Cohort,
    pub images: usize,
    pub bald: usize,
    pub not_bald: usize,
    pub facial_hair: usize,
    pub no_facial_hair: usize,
    pub bald_pct: Option<f64>,
    pub not_bald_pct: Option<f64>,
    pub facial_hair_pct: Option<f64>,
    pub no_facial_hair_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusTable {
    pub rows: Vec<CensusRow>,
    pub warnings: Vec<String>,
}

/// Bald and facial-hair counts per cohort. Cohorts with no images yield an
/// empty row and a warning.
pub fn census(
    records: &[ImageRecord],
    labels: &[AttributeLabels],
    cohorts: &[Cohort],
) -> Result<CensusTable, AttributeError> {
    check_len(records.len(), labels)?;
    let mut counts: HashMap<Cohort, [usize; 3]> = HashMap::new();
    for (r, l) in records.iter().zip(labels) {
        let c = counts.entry(r.cohort()).or_default();
        c[0] += 1;
        c[1] += usize::from(l.is_bald);
        c[2] += usize::from(l.has_facial_hair);
    }
    let mut rows = Vec::with_capacity(cohorts.len());
    let mut warnings = Vec::new();
    for cohort in cohorts {
        let [images, bald, facial_hair] = counts.get(cohort).copied().unwrap_or_default();
        if images == 0 {
            warnings.push(format!("empty cohort {cohort}"));
        }
        rows.push(CensusRow {
            cohort: cohort.clone(),
            images,
            bald,
            not_bald: images - bald,
            facial_hair,
            no_facial_hair: images - facial_hair,
            bald_pct: percent_1dp(bald, images),
            not_bald_pct: percent_1dp(images - bald, images),
            facial_hair_pct: percent_1dp(facial_hair, images),
            no_facial_hair_pct: percent_1dp(images - facial_hair, images),
        });
    }
    Ok(CensusTable { rows, warnings })
}

impl CensusTable {
    pub fn render_text(&self) -> String {
        let header = ["cohort", "images", "bald", "not bald", "facial hair", "no facial hair"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                if r.images == 0 {
                    return [
                        r.cohort.to_string(),
                        "0".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                    ];
                }
                [
                    r.cohort.to_string(),
                    count_cell(r.images, None),
                    count_cell(r.bald, r.bald_pct),
                    count_cell(r.not_bald, r.not_bald_pct),
                    count_cell(r.facial_hair, r.facial_hair_pct),
                    count_cell(r.no_facial_hair, r.no_facial_hair_pct),
                ]
            })
            .collect();
        render_aligned(&header, &body)
    }
}

pub(crate) fn render_aligned<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header.to_vec());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, rule.iter().map(String::as_str).collect());
    for row in rows {
        line(&mut out, row.iter().map(String::as_str).collect());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TailRegion {
    LowerTail,
    Middle,
    UpperTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for TailBounds {
    fn default() -> Self {
        Self {
            lower: 0.25,
            upper: 0.50,
        }
    }
}

impl TailBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, AttributeError> {
        if !(0.0 <= lower && lower <= upper && upper <= 1.0) {
            return Err(AttributeError::InvalidThresholds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn classify(&self, hair_ratio: f64) -> TailRegion {
        if hair_ratio < self.lower {
            TailRegion::LowerTail
        } else if hair_ratio > self.upper {
            TailRegion::UpperTail
        } else {
            TailRegion::Middle
        }
    }
}

/// Tail region per image; `None` for images without a hair ratio.
pub fn tail_partition(
    labels: &[AttributeLabels],
    lower: f64,
    upper: f64,
) -> Result<Vec<Option<TailRegion>>, AttributeError> {
    let bounds = TailBounds::new(lower, upper)?;
    Ok(labels
        .iter()
        .map(|l| l.hair_ratio.map(|h| bounds.classify(h)))
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
            (false, true) => self.false_negative += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionTable {
    pub per_cohort: BTreeMap<String, ConfusionCounts>,
    pub total: ConfusionCounts,
}

/// Facial-hair predictions against hand labels for a subset of images.
pub fn confusion_report(
    corpus: &Corpus,
    labels: &[AttributeLabels],
    truth: &[(String, bool)],
) -> Result<ConfusionTable, AttributeError> {
    check_len(corpus.len(), labels)?;
    let mut per_cohort: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    let mut total = ConfusionCounts::default();
    for (id, has_fh) in truth {
        let idx = corpus
            .index_of(id)
            .ok_or_else(|| AttributeError::UnknownImageId(id.clone()))?;
        let predicted = labels[idx].has_facial_hair;
        per_cohort
            .entry(corpus.record(idx).cohort().to_string())
            .or_default()
            .add(predicted, *has_fh);
        total.add(predicted, *has_fh);
    }
    Ok(ConfusionTable { per_cohort, total })
}

/// Reads `image_id,has_facial_hair` with values 0/1.
pub fn read_truth_csv(path: &Path) -> Result<Vec<(String, bool)>, AttributeError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let (Some(id), Some(v)) = (row.get(0), row.get(1)) else {
            return Err(AttributeError::Truth(format!("row {line}: expected two columns")));
        };
        let v = match v {
            "0" => false,
            "1" => true,
            other => {
                return Err(AttributeError::Truth(format!(
                    "row {line}: has_facial_hair must be 0 or 1, got `{other}`"
                )))
            }
        };
        out.push((id.to_string(), v));
    }
    Ok(out)
}
