//! d-prime between score distributions and before/after gap reports.

use serde::Serialize;

use crate::attributes::render_aligned;
use crate::scoring::ScoreDistribution;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GapError {
    #[error("d-prime needs at least two samples per distribution (got {0} and {1})")]
    InsufficientSamples(u64, u64),
    #[error("both distributions have zero variance")]
    DegenerateVariance,
    #[error("{cell}: {source}")]
    Cell {
        cell: &'static str,
        #[source]
        source: Box<GapError>,
    },
}

/// `|mu_a - mu_b| / sqrt((var_a + var_b) / 2)` with sample variances.
pub fn dprime(a: &ScoreDistribution, b: &ScoreDistribution) -> Result<f64, GapError> {
    let (Some(va), Some(vb)) = (a.variance(), b.variance()) else {
        return Err(GapError::InsufficientSamples(a.n(), b.n()));
    };
    dprime_from_moments(a.mean(), va, b.mean(), vb)
}

pub fn dprime_from_moments(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64) -> Result<f64, GapError> {
    let pooled = (var_a + var_b) / 2.0;
    if pooled <= 0.0 {
        return Err(GapError::DegenerateVariance);
    }
    Ok((mean_a - mean_b).abs() / pooled.sqrt())
}

/// Signed percent change; `None` when `before` is zero.
pub fn delta_pct(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| 100.0 * (after - before) / before)
}

/// The four distributions of one race at one stage.
#[derive(Debug, Clone)]
pub struct CohortDistributions {
    pub female_impostor: ScoreDistribution,
    pub male_impostor: ScoreDistribution,
    pub female_genuine: ScoreDistribution,
    pub male_genuine: ScoreDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapContext {
    pub dataset: String,
    pub matcher: String,
    pub race: String,
    /// Row label, e.g. `C_M vs C_F`.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCell {
    pub dprime_before: f64,
    pub dprime_after: f64,
    /// Unrounded percent change.
    pub delta_pct: Option<f64>,
    /// Whole-percent change as displayed.
    pub delta_pct_rounded: Option<i64>,
    pub female_pairs_before: u64,
    pub male_pairs_before: u64,
    pub female_pairs_after: u64,
    pub male_pairs_after: u64,
}

impl GapCell {
    fn new(
        cell: &'static str,
        fb: &ScoreDistribution,
        mb: &ScoreDistribution,
        fa: &ScoreDistribution,
        ma: &ScoreDistribution,
    ) -> Result<Self, GapError> {
        let wrap = |e| GapError::Cell {
            cell,
            source: Box::new(e),
        };
        let before = dprime(fb, mb).map_err(wrap)?;
        let after = dprime(fa, ma).map_err(wrap)?;
        let delta = delta_pct(before, after);
        Ok(Self {
            dprime_before: before,
            dprime_after: after,
            delta_pct: delta,
            delta_pct_rounded: delta.map(|d| d.round() as i64),
            female_pairs_before: fb.n(),
            male_pairs_before: mb.n(),
            female_pairs_after: fa.n(),
            male_pairs_after: ma.n(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub context: GapContext,
    pub impostor: GapCell,
    pub genuine: GapCell,
}

pub fn gap_report(
    before: &CohortDistributions,
    after: &CohortDistributions,
    context: GapContext,
) -> Result<GapReport, GapError> {
    Ok(GapReport {
        impostor: GapCell::new(
            "impostor",
            &before.female_impostor,
            &before.male_impostor,
            &after.female_impostor,
            &after.male_impostor,
        )?,
        genuine: GapCell::new(
            "genuine",
            &before.female_genuine,
            &before.male_genuine,
            &after.female_genuine,
            &after.male_genuine,
        )?,
        context,
    })
}

pub fn format_delta(d: Option<i64>) -> String {
    d.map_or_else(|| "n/a".to_string(), |d| format!("{d}%"))
}

/// Aligned text with the impostor and genuine before/after/delta columns.
pub fn render_gap_table(reports: &[GapReport]) -> String {
    let header = [
        "dataset",
        "matcher",
        "pair",
        "imp d' before",
        "imp d' after",
        "imp delta",
        "gen d' before",
        "gen d' after",
        "gen delta",
    ];
    let rows: Vec<[String; 9]> = reports
        .iter()
        .map(|r| {
            [
                r.context.dataset.clone(),
                r.context.matcher.clone(),
                r.context.label.clone(),
                format!("{:.3}", r.impostor.dprime_before),
                format!("{:.3}", r.impostor.dprime_after),
                format_delta(r.impostor.delta_pct_rounded),
                format!("{:.3}", r.genuine.dprime_before),
                format!("{:.3}", r.genuine.dprime_after),
                format_delta(r.genuine.delta_pct_rounded),
            ]
        })
        .collect();
    render_aligned(&header, &rows)
}
