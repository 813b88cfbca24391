//! The end-to-end audit: labels, census, distributions before and after
//! balancing, gap reports and the resampling check.
//!
//! Each stage appends its name to `MANIFEST` in the output directory as it
//! completes, so a failed run leaves its finished artifacts behind with a
//! record of how far it got.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attributes::{self, AttributeLabels, CensusTable};
use crate::balancer::{self, BalancedSubset};
use crate::bootstrap::{self, BalancedDPrimes, BootstrapReport, TargetCounts};
use crate::config::RunConfig;
use crate::corpus::{Cohort, Corpus, Gender, Race};
use crate::error::Error;
use crate::gapstats::{self, CohortDistributions, GapContext, GapReport};
use crate::scoring::{PairKind, PairPlan, PairSpec, ScoreOptions, ScoringError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    Load,
    Attributes,
    Census,
    Before,
    Balance,
    After,
    Gap,
    Bootstrap,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{self:?}").to_lowercase();
        f.write_str(&s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct AuditError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, AuditError>;
}

impl<T, E: Into<Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, AuditError> {
        self.map_err(|e| AuditError {
            stage,
            source: e.into(),
        })
    }
}

/// Impostor and genuine distributions for both genders of `race`,
/// optionally restricted to `subset`.
pub fn cohort_distributions(
    corpus: &Corpus,
    race: &Race,
    subset: Option<&HashSet<String>>,
    opts: &ScoreOptions,
) -> Result<CohortDistributions, ScoringError> {
    let dist = |gender, kind| {
        let spec = PairSpec {
            cohort: Cohort::new(race.clone(), gender),
            kind,
            subset: subset.cloned(),
            split: None,
        };
        PairPlan::new(corpus, &spec, None, &Default::default())?.distribution(opts)
    };
    Ok(CohortDistributions {
        female_impostor: dist(Gender::Female, PairKind::Impostor)?,
        male_impostor: dist(Gender::Male, PairKind::Impostor)?,
        female_genuine: dist(Gender::Female, PairKind::Genuine)?,
        male_genuine: dist(Gender::Male, PairKind::Genuine)?,
    })
}

pub fn gap_context(config: &RunConfig, race: &Race) -> GapContext {
    let code = race.code();
    GapContext {
        dataset: config.dataset.clone(),
        matcher: config.matcher.clone(),
        race: race.to_string(),
        label: format!("{code}_M vs {code}_F"),
    }
}

/// Races selected by the config, or every race with both genders.
pub fn selected_races(corpus: &Corpus, config: &RunConfig) -> Vec<Race> {
    if config.races.is_empty() {
        corpus.races_with_both_genders()
    } else {
        config.races.iter().map(|r| Race::from(r.clone())).collect()
    }
}

/// Named histogram files for one race and stage, in a fixed order.
pub fn histogram_names(
    race: &Race,
    stage: &str,
    d: &CohortDistributions,
) -> Vec<(String, crate::scoring::ScoreDistribution)> {
    [
        ("female", "impostor", &d.female_impostor),
        ("male", "impostor", &d.male_impostor),
        ("female", "genuine", &d.female_genuine),
        ("male", "genuine", &d.male_genuine),
    ]
    .into_iter()
    .map(|(g, k, dist)| (format!("hist_{race}_{stage}_{g}_{k}.csv"), dist.clone()))
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetSummary {
    pub pairs: usize,
    pub threshold: f64,
    pub exclusions: std::collections::BTreeMap<String, usize>,
    pub unmatched_males: usize,
}

#[derive(Debug)]
pub struct AuditBundle {
    pub labels: Vec<AttributeLabels>,
    pub census: CensusTable,
    pub subset: BalancedSubset,
    pub before: Vec<(Race, CohortDistributions)>,
    pub after: Vec<(Race, CohortDistributions)>,
    pub gaps: Vec<GapReport>,
    pub bootstrap: Vec<BootstrapReport>,
    pub stages: Vec<Stage>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    header: String,
    stages: Vec<Stage>,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), std::io::Error> {
        let p = self.path(name);
        std::fs::write(p, format!("{}{body}", self.header))
    }

    fn complete(&mut self, stage: Stage) -> Result<(), AuditError> {
        self.stages.push(stage);
        let mut body = self.header.clone();
        for s in &self.stages {
            body.push_str(&format!("{s}\n"));
        }
        std::fs::write(self.dir.join("MANIFEST"), body).at(stage)
    }
}

/// Loads `config.corpus` and audits it into `config.out_dir`.
pub fn audit(config: &RunConfig) -> Result<AuditBundle, AuditError> {
    let missing = |what: &str| AuditError {
        stage: Stage::Load,
        source: Error::Config(crate::config::ConfigError::Read {
            path: PathBuf::from(what),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{what} not set")),
        }),
    };
    let corpus_path = config.corpus.as_ref().ok_or_else(|| missing("corpus"))?;
    let out_dir = config.out_dir.as_ref().ok_or_else(|| missing("out_dir"))?;
    std::fs::create_dir_all(out_dir).at(Stage::Load)?;
    let corpus = Corpus::load_with(corpus_path, config.hair_label).at(Stage::Load)?;
    audit_corpus(&corpus, config, out_dir)
}

pub fn audit_corpus(corpus: &Corpus, config: &RunConfig, out_dir: &Path) -> Result<AuditBundle, AuditError> {
    std::fs::create_dir_all(out_dir).at(Stage::Load)?;
    let mut w = Writer {
        dir: out_dir,
        header: config.comment_header(),
        stages: Vec::new(),
        files: Vec::new(),
    };
    let mut warnings = Vec::new();
    w.complete(Stage::Load)?;
    if !corpus.incomplete_records().is_empty() {
        warnings.push(format!(
            "{} images have absent attribute scores",
            corpus.incomplete_records().len()
        ));
    }

    config.tails().at(Stage::Attributes)?;
    let labels = attributes::label_corpus(corpus, &config.fusion()).at(Stage::Attributes)?;
    let p = w.path("labels.csv");
    attributes::write_labels_csv(&p, &w.header, corpus, &labels).at(Stage::Attributes)?;
    w.complete(Stage::Attributes)?;

    let census = attributes::census(corpus.records(), &labels, &corpus.cohorts()).at(Stage::Census)?;
    warnings.extend(census.warnings.iter().cloned());
    w.text("table1_census.txt", &census.render_text()).at(Stage::Census)?;
    w.complete(Stage::Census)?;

    let races = selected_races(corpus, config);
    let opts = config.score_options();
    let mut before = Vec::new();
    for race in &races {
        let d = cohort_distributions(corpus, race, None, &opts).at(Stage::Before)?;
        for (name, dist) in histogram_names(race, "before", &d) {
            let p = w.path(&name);
            dist.write_histogram_csv(&p, &w.header).at(Stage::Before)?;
        }
        before.push((race.clone(), d));
    }
    w.complete(Stage::Before)?;

    let subset = balancer::balance(corpus, &labels, config.iou_threshold).at(Stage::Balance)?;
    if subset.pairs.is_empty() {
        warnings.push("balanced subset is empty".into());
    }
    let (sp, ap) = (w.path("subset.csv"), w.path("exclusions.csv"));
    balancer::emit_subset(&subset, &sp, Some(&ap), &w.header).at(Stage::Balance)?;
    w.complete(Stage::Balance)?;

    let ids = subset.image_ids();
    let mut after = Vec::new();
    for race in &races {
        let d = cohort_distributions(corpus, race, Some(&ids), &opts).at(Stage::After)?;
        for (name, dist) in histogram_names(race, "after", &d) {
            let p = w.path(&name);
            dist.write_histogram_csv(&p, &w.header).at(Stage::After)?;
        }
        after.push((race.clone(), d));
    }
    w.complete(Stage::After)?;

    let gaps = before
        .iter()
        .zip(&after)
        .map(|((race, b), (_, a))| gapstats::gap_report(b, a, gap_context(config, race)))
        .collect::<Result<Vec<_>, _>>()
        .at(Stage::Gap)?;
    w.text("table2_gap.txt", &gapstats::render_gap_table(&gaps))
        .at(Stage::Gap)?;
    w.complete(Stage::Gap)?;

    let mut boot = Vec::new();
    if !config.skip_bootstrap {
        for (race, gap) in races.iter().zip(&gaps) {
            let counts = TargetCounts::from_subset(corpus, &subset, race);
            let balanced = BalancedDPrimes {
                impostor: gap.impostor.dprime_after,
                genuine: gap.genuine.dprime_after,
            };
            let report =
                bootstrap::bootstrap_gap(corpus, race, counts, config.samples, config.seed, Some(balanced), &opts)
                    .at(Stage::Bootstrap)?;
            warnings.extend(report.warnings.iter().cloned());
            boot.push(report);
        }
        w.text("table3_bootstrap.txt", &bootstrap::render_bootstrap_table(&boot))
            .at(Stage::Bootstrap)?;
        w.complete(Stage::Bootstrap)?;
    }

    let summaries: serde_json::Map<String, serde_json::Value> = before
        .iter()
        .map(|(r, d)| (r, "before", d))
        .chain(after.iter().map(|(r, d)| (r, "after", d)))
        .flat_map(|(r, stage, d)| histogram_names(r, stage, d))
        .map(|(name, d)| {
            let key = name.trim_start_matches("hist_").trim_end_matches(".csv").to_string();
            (key, serde_json::to_value(d.summary()).expect("summary serializes"))
        })
        .collect();
    let report = serde_json::json!({
        "tool": crate::TOOL_VERSION,
        "config": config,
        "stages": w.stages,
        "warnings": warnings,
        "census": census,
        "subset": SubsetSummary {
            pairs: subset.pairs.len(),
            threshold: subset.threshold,
            exclusions: subset.exclusion_counts(),
            unmatched_males: subset.unmatched_males.len(),
        },
        "distributions": summaries,
        "gaps": gaps,
        "bootstrap": boot,
    });
    let p = w.path("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(&report).expect("report serializes")).at(Stage::Report)?;
    w.complete(Stage::Report)?;

    Ok(AuditBundle {
        labels,
        census,
        subset,
        before,
        after,
        gaps,
        bootstrap: boot,
        stages: w.stages,
        files: w.files,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Throughput {
    pub images: usize,
    pub dim: usize,
    pub pairs: u64,
    pub seconds: f64,
    pub pairs_per_second: f64,
    pub mean: f64,
}

/// Smallest image count whose impostor pairs reach `pairs`.
pub fn images_for_pairs(pairs: u64) -> usize {
    let mut n = ((2.0 * pairs as f64).sqrt() as usize).max(2);
    while (n as u64) * (n as u64 - 1) / 2 < pairs {
        n += 1;
    }
    while n > 2 && ((n - 1) as u64) * ((n - 2) as u64) / 2 >= pairs {
        n -= 1;
    }
    n
}

/// One-subject-per-image cohort of random Gaussian embeddings.
pub fn random_cohort(images: usize, dim: usize, seed: u64) -> Result<Corpus, crate::corpus::CorpusError> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..images * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let embeddings = crate::corpus::EmbeddingMatrix::new(images, dim, data)?;
    let records = (0..images)
        .map(|i| crate::corpus::ImageRecord {
            image_id: format!("b{i:06}"),
            subject_id: format!("s{i:06}"),
            race: Race::Caucasian,
            gender: Gender::Female,
            embedding_index: i,
            mask_ref: None,
            attrs: Default::default(),
        })
        .collect();
    Corpus::from_parts(records, embeddings, vec![None; images])
}

/// Scores every impostor pair of `corpus`'s first cohort into a histogram
/// and reports the wall-clock rate.
pub fn throughput(corpus: &Corpus, opts: &ScoreOptions) -> Result<Throughput, ScoringError> {
    let members: Vec<usize> = (0..corpus.len()).collect();
    let plan = PairPlan::from_members(corpus, members, PairKind::Impostor);
    let t = std::time::Instant::now();
    let d = plan.distribution(opts)?;
    let seconds = t.elapsed().as_secs_f64();
    Ok(Throughput {
        images: corpus.len(),
        dim: corpus.embeddings().dim(),
        pairs: d.n(),
        seconds,
        pairs_per_second: d.n() as f64 / seconds,
        mean: d.mean(),
    })
}
