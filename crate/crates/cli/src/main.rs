use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapaudit::attributes;
use gapaudit::balancer;
use gapaudit::bootstrap::{self, BalancedDPrimes};
use gapaudit::gapstats;
use gapaudit::pipeline::{self, AuditError};
use gapaudit::scoring::{self, AttributeSplit, PairSpec};
use gapaudit::synthgen::{self, GeneratorConfig};
use gapaudit::{Cohort, Corpus, Error, PairKind, Race, RunConfig, TargetCounts};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "gapaudit",
    version,
    about = "Hairstyle-aware gender gap audit for face verification scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a corpus manifest
    Validate {
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Label bald and facial-hair images and tabulate the census
    Attrs {
        corpus: PathBuf,
        /// Per-image labels CSV
        #[arg(long)]
        out: PathBuf,
        /// Census as aligned text; JSON goes next to it with a .json extension
        #[arg(long)]
        census: Option<PathBuf>,
        /// Hand labels (image_id,has_facial_hair) for a confusion report
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        confusion: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score one cohort's genuine or impostor pairs into a histogram
    Score {
        corpus: PathBuf,
        #[arg(long)]
        cohort: Cohort,
        #[arg(long)]
        kind: PairKind,
        /// Restrict to the image ids of a subset CSV
        #[arg(long)]
        subset: Option<PathBuf>,
        /// Keep pairs with one image of each side, e.g. lower:upper
        #[arg(long)]
        split: Option<AttributeSplit>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Female/male d-prime gaps before and after restricting to a subset
    Gap {
        corpus: PathBuf,
        #[arg(long)]
        subset: PathBuf,
        /// Race to report; every race with both genders when omitted
        #[arg(long)]
        race: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build the hairstyle-balanced subset
    Balance {
        corpus: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Random subsets with the balanced subset's subject and image counts
    Bootstrap {
        corpus: PathBuf,
        #[arg(long)]
        race: String,
        #[arg(long)]
        samples: Option<usize>,
        /// f_subj,f_img,m_subj,m_img; taken from --subset when omitted
        #[arg(long)]
        counts: Option<TargetCounts>,
        /// Balanced subset whose d-primes are compared against the draws
        #[arg(long)]
        subset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic corpus
    Synth {
        /// Generator config JSON; the built-in default when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the whole audit and write a report bundle
    Audit {
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        race: Vec<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        skip_bootstrap: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Time cosine scoring with histogram accumulation
    Bench {
        /// Minimum pair count; every pair of the smallest sufficient cohort is scored
        #[arg(long, default_value_t = 100_000_000)]
        pairs: u64,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "GAPAUDIT_THREADS")]
        threads: Option<usize>,
    },
}

/// Run configuration file plus flag overrides.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Run configuration JSON; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "GAPAUDIT_THREADS")]
    threads: Option<usize>,
    /// Treat masks as label maps and select this class as hair
    #[arg(long)]
    hair_label: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    max_pairs: Option<u64>,
    #[arg(long)]
    bald_hair_ratio: Option<f64>,
    #[arg(long)]
    bald_confidence: Option<f64>,
    #[arg(long)]
    fh_ms_strong: Option<f64>,
    #[arg(long)]
    fh_ms_mid: Option<f64>,
    #[arg(long)]
    fh_rek_true_strong: Option<f64>,
    #[arg(long)]
    fh_rek_true_weak: Option<f64>,
    #[arg(long)]
    fh_rek_false_weak: Option<f64>,
    #[arg(long)]
    tail_lower: Option<f64>,
    #[arg(long)]
    tail_upper: Option<f64>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    matcher: Option<String>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let data = |e: &Error| if e.is_data_error() { EXIT_DATA } else { EXIT_INTERNAL };
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => data(e),
            CliError::Audit(e) => data(&e.source),
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn core<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Core(e.into()))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn resolve(&self, corpus: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => core(RunConfig::from_file(p))?,
            None => RunConfig::default(),
        };
        if let Some(p) = corpus {
            c.corpus = Some(p.to_path_buf());
        }
        c.threads = self.threads.or(c.threads);
        c.hair_label = self.hair_label.or(c.hair_label);
        c.max_pairs = self.max_pairs.or(c.max_pairs);
        set(&mut c.seed, self.seed);
        set(&mut c.bins, self.bins);
        set(&mut c.bald_hair_ratio, self.bald_hair_ratio);
        set(&mut c.bald_confidence, self.bald_confidence);
        set(&mut c.fh_ms_strong, self.fh_ms_strong);
        set(&mut c.fh_ms_mid, self.fh_ms_mid);
        set(&mut c.fh_rek_true_strong, self.fh_rek_true_strong);
        set(&mut c.fh_rek_true_weak, self.fh_rek_true_weak);
        set(&mut c.fh_rek_false_weak, self.fh_rek_false_weak);
        set(&mut c.tail_lower, self.tail_lower);
        set(&mut c.tail_upper, self.tail_upper);
        set(&mut c.dataset, self.dataset.clone());
        set(&mut c.matcher, self.matcher.clone());
        if c.bins == 0 {
            return Err(CliError::Usage("--bins must be positive".into()));
        }
        Ok(c)
    }
}

fn load(config: &RunConfig) -> Result<Corpus, CliError> {
    let path = config
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Usage("no corpus given".into()))?;
    core(Corpus::load_with(path, config.hair_label))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(0) => Err(CliError::Usage("thread count must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Internal(e.to_string())),
        None => Ok(f()),
    }
}

fn write_text(path: &Path, config: &RunConfig, body: &str) -> Result<(), CliError> {
    core(std::fs::write(path, format!("{}{body}", config.comment_header())))
}

/// Pretty JSON with the effective configuration and tool version merged in.
fn write_json(path: &Path, config: &RunConfig, value: serde_json::Value) -> Result<(), CliError> {
    let mut doc = config.provenance();
    doc.as_object_mut()
        .expect("provenance is an object")
        .insert("result".into(), value);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    core(std::fs::write(path, text))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn races(corpus: &Corpus, names: &[String]) -> Vec<Race> {
    if names.is_empty() {
        corpus.races_with_both_genders()
    } else {
        names.iter().map(|r| Race::from(r.clone())).collect()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { corpus, common } => {
            let config = common.resolve(Some(&corpus))?;
            let c = load(&config)?;
            let (w, h) = c.mask_dims();
            println!(
                "ok: {} images, {}-d embeddings, masks {w}x{h}",
                c.len(),
                c.embeddings().dim()
            );
            for cohort in c.cohorts() {
                println!("  {cohort}: {}", c.cohort_members(&cohort).len());
            }
            if !c.incomplete_records().is_empty() {
                eprintln!(
                    "warning: {} images have absent attribute scores",
                    c.incomplete_records().len()
                );
            }
            Ok(())
        }
        Command::Attrs {
            corpus,
            out,
            census,
            truth,
            confusion,
            common,
        } => {
            let config = common.resolve(Some(&corpus))?;
            let c = load(&config)?;
            with_threads(config.threads, || -> Result<(), CliError> {
                let labels = core(attributes::label_corpus(&c, &config.fusion()))?;
                core(attributes::write_labels_csv(
                    &out,
                    &config.comment_header(),
                    &c,
                    &labels,
                ))?;
                let table = core(attributes::census(c.records(), &labels, &c.cohorts()))?;
                for w in &table.warnings {
                    eprintln!("warning: {w}");
                }
                match &census {
                    Some(p) => {
                        write_text(p, &config, &table.render_text())?;
                        write_json(&p.with_extension("json"), &config, to_json(&table)?)?;
                    }
                    None => print!("{}", table.render_text()),
                }
                if let Some(t) = &truth {
                    let truth = core(attributes::read_truth_csv(t))?;
                    let report = to_json(&core(attributes::confusion_report(&c, &labels, &truth))?)?;
                    match &confusion {
                        Some(p) => write_json(p, &config, report)?,
                        None => println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default()),
                    }
                }
                Ok(())
            })?
        }
        Command::Score {
            corpus,
            cohort,
            kind,
            subset,
            split,
            out,
            common,
        } => {
            let config = common.resolve(Some(&corpus))?;
            let c = load(&config)?;
            let tails = core(config.tails())?;
            with_threads(config.threads, || -> Result<(), CliError> {
                let labels = match split {
                    Some(_) => Some(core(attributes::label_corpus(&c, &config.fusion()))?),
                    None => None,
                };
                let spec = PairSpec {
                    cohort,
                    kind,
                    subset: subset
                        .as_deref()
                        .map(balancer::read_subset_ids)
                        .transpose()
                        .map_err(Error::from)?,
                    split,
                };
                let d = core(scoring::score_distribution(
                    &c,
                    &spec,
                    labels.as_deref(),
                    &tails,
                    &config.score_options(),
                ))?;
                if d.is_empty() {
                    eprintln!("warning: no admissible pairs");
                }
                core(d.write_histogram_csv(&out, &config.comment_header()))?;
                println!("{}", serde_json::to_string(&d.summary()).unwrap_or_default());
                Ok(())
            })?
        }
        Command::Gap {
            corpus,
            subset,
            race,
            out,
            table,
            common,
        } => {
            let config = common.resolve(Some(&corpus))?;
            let c = load(&config)?;
            let ids = core(balancer::read_subset_ids(&subset))?;
            let opts = config.score_options();
            let reports = with_threads(config.threads, || {
                races(&c, &race)
                    .iter()
                    .map(|r| gap_for_race(&c, &config, r, &ids, &opts))
                    .collect::<Result<Vec<_>, CliError>>()
            })??;
            write_json(&out, &config, to_json(&reports)?)?;
            let text = gapstats::render_gap_table(&reports);
            match &table {
                Some(p) => write_text(p, &config, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Balance {
            corpus,
            threshold,
            out,
            audit,
            common,
        } => {
            let mut config = common.resolve(Some(&corpus))?;
            set(&mut config.iou_threshold, threshold);
            let c = load(&config)?;
            with_threads(config.threads, || -> Result<(), CliError> {
                let labels = core(attributes::label_corpus(&c, &config.fusion()))?;
                let s = core(balancer::balance(&c, &labels, config.iou_threshold))?;
                if s.pairs.is_empty() {
                    eprintln!("warning: balanced subset is empty");
                }
                core(balancer::emit_subset(
                    &s,
                    &out,
                    audit.as_deref(),
                    &config.comment_header(),
                ))?;
                println!("{} pairs, exclusions {:?}", s.pairs.len(), s.exclusion_counts());
                Ok(())
            })?
        }
        Command::Bootstrap {
            corpus,
            race,
            samples,
            counts,
            subset,
            out,
            table,
            common,
        } => {
            let mut config = common.resolve(Some(&corpus))?;
            set(&mut config.samples, samples);
            config.races = vec![race.clone()];
            let c = load(&config)?;
            let race = Race::from(race);
            let opts = config.score_options();
            let report = with_threads(config.threads, || -> Result<_, CliError> {
                let loaded = match &subset {
                    Some(p) => Some(core(balancer::load_subset(p, None))?),
                    None => None,
                };
                let counts = match (counts, &loaded) {
                    (Some(k), _) => k,
                    (None, Some(s)) => TargetCounts::from_subset(&c, s, &race),
                    (None, None) => return Err(CliError::Usage("give --counts or --subset".into())),
                };
                let balanced = match &loaded {
                    Some(s) => {
                        let g = gap_for_race(&c, &config, &race, &s.image_ids(), &opts)?;
                        Some(BalancedDPrimes {
                            impostor: g.impostor.dprime_after,
                            genuine: g.genuine.dprime_after,
                        })
                    }
                    None => None,
                };
                core(bootstrap::bootstrap_gap(
                    &c,
                    &race,
                    counts,
                    config.samples,
                    config.seed,
                    balanced,
                    &opts,
                ))
            })??;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_json(&out, &config, to_json(&report)?)?;
            let text = bootstrap::render_bootstrap_table(std::slice::from_ref(&report));
            match &table {
                Some(p) => write_text(p, &config, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Synth { config, out, seed } => {
            let mut g = match &config {
                Some(p) => {
                    let text = core(std::fs::read_to_string(p))?;
                    serde_json::from_str::<GeneratorConfig>(&text)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                }
                None => GeneratorConfig::default(),
            };
            set(&mut g.seed, seed);
            let generated = core(synthgen::generate(&g))?;
            let manifest = core(generated.write(&out))?;
            let text = serde_json::to_string_pretty(&g).map_err(|e| CliError::Internal(e.to_string()))?;
            core(std::fs::write(out.join("generator.json"), text))?;
            println!("{} images -> {}", generated.records.len(), manifest.display());
            Ok(())
        }
        Command::Audit {
            corpus,
            out,
            race,
            threshold,
            samples,
            skip_bootstrap,
            common,
        } => {
            let mut config = common.resolve(corpus.as_deref())?;
            if out.is_some() {
                config.out_dir = out;
            }
            if !race.is_empty() {
                config.races = race;
            }
            set(&mut config.iou_threshold, threshold);
            set(&mut config.samples, samples);
            config.skip_bootstrap |= skip_bootstrap;
            if config.corpus.is_none() || config.out_dir.is_none() {
                return Err(CliError::Usage("audit needs a corpus and --out".into()));
            }
            let bundle = with_threads(config.threads, || pipeline::audit(&config))??;
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", gapstats::render_gap_table(&bundle.gaps));
            if !bundle.bootstrap.is_empty() {
                print!("{}", bootstrap::render_bootstrap_table(&bundle.bootstrap));
            }
            Ok(())
        }
        Command::Bench {
            pairs,
            dim,
            seed,
            threads,
        } => {
            if pairs == 0 || dim == 0 {
                return Err(CliError::Usage("--pairs and --dim must be positive".into()));
            }
            let images = pipeline::images_for_pairs(pairs);
            let c = core(pipeline::random_cohort(images, dim, seed))?;
            let opts = scoring::ScoreOptions::default();
            let t = with_threads(threads, || pipeline::throughput(&c, &opts))?;
            let t = core(t)?;
            println!(
                "{}",
                serde_json::json!({
                    "tool": gapaudit::TOOL_VERSION,
                    "threads": rayon_threads(threads),
                    "result": t,
                })
            );
            Ok(())
        }
    }
}

fn rayon_threads(threads: Option<usize>) -> usize {
    threads.unwrap_or_else(rayon::current_num_threads)
}

fn gap_for_race(
    c: &Corpus,
    config: &RunConfig,
    race: &Race,
    ids: &HashSet<String>,
    opts: &scoring::ScoreOptions,
) -> Result<gapstats::GapReport, CliError> {
    let before = core(pipeline::cohort_distributions(c, race, None, opts))?;
    let after = core(pipeline::cohort_distributions(c, race, Some(ids), opts))?;
    core(gapstats::gap_report(
        &before,
        &after,
        pipeline::gap_context(config, race),
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
