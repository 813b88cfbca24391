//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p gapaudit-core --test acceptance -- 2 6`.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use gapaudit::attributes::{classify_bald, classify_facial_hair, label_corpus, FusionThresholds, TailBounds};
use gapaudit::balancer::{balance, emit_subset, load_subset};
use gapaudit::bootstrap::{bootstrap_gap, render_bootstrap_table, sample_rng, SubjectPool};
use gapaudit::gapstats::dprime;
use gapaudit::pipeline::{audit_corpus, images_for_pairs, random_cohort, throughput};
use gapaudit::scoring::{AttributeSplit, ImagePredicate, PairPlan, PairSpec, ScoreDistribution, ScoreOptions};
use gapaudit::synthgen::{generate, GeneratorConfig};
use gapaudit::{
    AttributeScores, Cohort, Corpus, ExclusionReason, Gender, HairMask, PairKind, Race, RunConfig, TargetCounts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

// 1 -------------------------------------------------------------------------

/// The three clauses, coded from the rule's wording.
fn facial_hair_oracle(m: f64, rek: Option<(bool, f64)>) -> bool {
    let strong_ms = m == 0.6 || m == 0.9;
    let strong_rek = matches!(rek, Some((true, c)) if c > 85.0);
    let mid = m == 0.4
        && match rek {
            Some((true, c)) => c > 55.0,
            Some((false, c)) => c < 65.0,
            None => false,
        };
    strong_ms || strong_rek || mid
}

fn fusion_truth_tables() -> Outcome {
    let levels = [0.0, 0.1, 0.4, 0.6, 0.9];
    let mut confidences = vec![50.0, 55.0, 55.5, 65.0, 85.0, 85.5, 100.0];
    confidences.extend((100..=200).map(|c| f64::from(c) / 2.0));
    let mut cells = 0usize;
    for (mi, &m) in levels.iter().enumerate() {
        // Every placement of the maximum over the three MS fields, with the
        // other two at every lower level.
        let lower = &levels[..=mi];
        for slot in 0..3 {
            for &a in lower {
                for &b in lower {
                    let others = [a, b];
                    let mut v = [0.0; 3];
                    v[slot] = m;
                    let mut k = 0;
                    for (s, cell) in v.iter_mut().enumerate() {
                        if s != slot {
                            *cell = others[k];
                            k += 1;
                        }
                    }
                    let mut reks: Vec<Option<(bool, f64)>> = vec![None];
                    for &c in &confidences {
                        reks.push(Some((true, c)));
                        reks.push(Some((false, c)));
                    }
                    for rek in reks {
                        let attrs = AttributeScores {
                            ms_beard: Some(v[0]),
                            ms_mustache: Some(v[1]),
                            ms_sideburns: Some(v[2]),
                            ms_bald: None,
                            rek_facial_hair: rek.map(|r| r.0),
                            rek_confidence: rek.map(|r| r.1),
                        };
                        let got = classify_facial_hair(&attrs);
                        let want = facial_hair_oracle(m, rek);
                        ensure(got == want, || {
                            format!("ms={v:?} rek={rek:?}: got {got}, oracle {want}")
                        })?;
                        cells += 1;
                    }
                }
            }
        }
    }
    // Absent MS scores count as zero.
    for &c in &confidences {
        for flag in [true, false] {
            let attrs = AttributeScores {
                rek_facial_hair: Some(flag),
                rek_confidence: Some(c),
                ..Default::default()
            };
            ensure(
                classify_facial_hair(&attrs) == facial_hair_oracle(0.0, Some((flag, c))),
                || format!("absent MS, rek=({flag},{c})"),
            )?;
            cells += 1;
        }
    }
    ensure(!classify_facial_hair(&AttributeScores::default()), || {
        "all absent".into()
    })?;

    let mut bald_cells = 0usize;
    let hs: Vec<f64> = (0..=31)
        .map(|k| f64::from(k) / 1000.0)
        .chain([0.02, 0.019_999_999, 0.020_000_001, 0.5, 1.0])
        .collect();
    let bs: Vec<f64> = (0..=31)
        .map(|k| 0.95 + f64::from(k) / 1000.0)
        .chain([0.97, 0.969_999_999, 0.970_000_001, 0.0, 1.0])
        .collect();
    for &h in &hs {
        for &b in &bs {
            let want = h < 0.02 && b >= 0.97;
            ensure(classify_bald(h, Some(b)) == want, || format!("bald({h}, {b})"))?;
            bald_cells += 1;
        }
    }
    ensure(bald_cells >= 1000, || format!("bald grid has {bald_cells} points"))?;
    Ok(format!("{cells} facial-hair cells, {bald_cells} bald points"))
}

// 2 -------------------------------------------------------------------------

fn dprime_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_210_301);
    let a: Vec<f64> = Normal::new(0.3, 0.05)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let b: Vec<f64> = Normal::new(0.5, 0.05)
        .unwrap()
        .sample_iter(&mut rng)
        .take(100_000)
        .collect();
    let da = ScoreDistribution::from_scores(400, a.iter().copied()).unwrap();
    let db = ScoreDistribution::from_scores(400, b.iter().copied()).unwrap();
    let d = dprime(&da, &db).map_err(|e| e.to_string())?;
    ensure((d - 4.0).abs() <= 0.05, || format!("dprime {d}, expected 4.0 +- 0.05"))?;

    let same = dprime(&da, &da.clone()).map_err(|e| e.to_string())?;
    ensure(same == 0.0, || format!("identical inputs gave {same}"))?;

    let raw = common::dprime_raw(&a, &b);
    ensure(common::rel_close(d, raw, 1e-9), || {
        format!("streaming {d} vs raw {raw}")
    })?;

    // Streaming in uneven chunks, merged.
    let mut merged = ScoreDistribution::new(400).unwrap();
    for chunk in a.chunks(7_919) {
        merged
            .merge(&ScoreDistribution::from_scores(400, chunk.iter().copied()).unwrap())
            .unwrap();
    }
    let dm = dprime(&merged, &db).map_err(|e| e.to_string())?;
    ensure(common::rel_close(dm, raw, 1e-9), || format!("merged {dm} vs raw {raw}"))?;
    Ok(format!("d'={d:.4}, |streaming-raw|/raw={:.1e}", (d - raw).abs() / raw))
}

// 3 -------------------------------------------------------------------------

fn brute_pairs(
    corpus: &Corpus,
    spec: &PairSpec,
    labels: &[gapaudit::AttributeLabels],
    tails: &TailBounds,
) -> Vec<(usize, usize)> {
    let members: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            let r = corpus.record(i);
            r.race == spec.cohort.race
                && r.gender == spec.cohort.gender
                && spec.subset.as_ref().is_none_or(|s| s.contains(&r.image_id))
        })
        .collect();
    let mut out = Vec::new();
    for x in 0..members.len() {
        for y in x + 1..members.len() {
            let (i, j) = (members[x], members[y]);
            let same = corpus.record(i).subject_id == corpus.record(j).subject_id;
            if same != (spec.kind == PairKind::Genuine) {
                continue;
            }
            if let Some(s) = spec.split {
                let (a, b) = (s.first, s.second);
                let ok = (a.matches(&labels[i], tails) && b.matches(&labels[j], tails))
                    || (b.matches(&labels[i], tails) && a.matches(&labels[j], tails));
                if !ok {
                    continue;
                }
            }
            out.push((i, j));
        }
    }
    out
}

fn same_distribution(a: &ScoreDistribution, b: &ScoreDistribution) -> Result<(), String> {
    ensure(a.counts() == b.counts(), || "histograms differ".into())?;
    ensure(a.n() == b.n(), || format!("n {} vs {}", a.n(), b.n()))?;
    ensure(a.min() == b.min() && a.max() == b.max(), || "extrema differ".into())?;
    let close = |x: f64, y: f64| common::rel_close(x, y, 1e-9) || (x - y).abs() < 1e-15;
    ensure(close(a.mean(), b.mean()), || {
        format!("mean {} vs {}", a.mean(), b.mean())
    })?;
    match (a.variance(), b.variance()) {
        (Some(x), Some(y)) => ensure(close(x, y), || format!("variance {x} vs {y}")),
        (x, y) => ensure(x == y, || "variance presence differs".into()),
    }
}

fn pair_enumeration() -> Outcome {
    let tails = TailBounds::default();
    let splits = [
        None,
        Some(AttributeSplit {
            first: ImagePredicate::LowerTail,
            second: ImagePredicate::UpperTail,
        }),
        Some(AttributeSplit {
            first: ImagePredicate::FacialHair,
            second: ImagePredicate::NoFacialHair,
        }),
        Some(AttributeSplit {
            first: ImagePredicate::Middle,
            second: ImagePredicate::Middle,
        }),
    ];
    let serial = pool(1);
    let parallel = pool(4);
    let mut checked = 0usize;
    let mut total_pairs = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = common::Shape {
            images: rng.random_range(2..=200),
            subjects: rng.random_range(1..=20),
            dim: rng.random_range(2..=24),
            masks: true,
            clean: 0.3,
        };
        let corpus = common::random_corpus(&mut rng, &shape);
        let labels = label_corpus(&corpus, &FusionThresholds::default()).map_err(|e| e.to_string())?;
        let subset: HashSet<String> = corpus
            .records()
            .iter()
            .filter(|_| rng.random_bool(0.6))
            .map(|r| r.image_id.clone())
            .collect();
        for cohort in corpus.cohorts() {
            for kind in [PairKind::Genuine, PairKind::Impostor] {
                for (k, split) in splits.iter().enumerate() {
                    let spec = PairSpec {
                        cohort: cohort.clone(),
                        kind,
                        subset: (k % 2 == 1).then(|| subset.clone()),
                        split: *split,
                    };
                    let plan = PairPlan::new(&corpus, &spec, Some(&labels), &tails).map_err(|e| e.to_string())?;
                    let want = brute_pairs(&corpus, &spec, &labels, &tails);
                    let got: Vec<(usize, usize)> = plan.pairs().collect();
                    ensure(got == want, || {
                        format!("seed {seed} {cohort} {kind} split {k}: pair lists differ")
                    })?;
                    ensure(plan.pair_count() == want.len() as u64, || {
                        format!(
                            "seed {seed} {cohort} {kind}: count {} vs {}",
                            plan.pair_count(),
                            want.len()
                        )
                    })?;

                    let serial_opts = ScoreOptions {
                        block_pairs: u64::MAX,
                        ..ScoreOptions::default()
                    };
                    let parallel_opts = ScoreOptions {
                        block_pairs: rng.random_range(1..64),
                        ..ScoreOptions::default()
                    };
                    let s = serial
                        .install(|| plan.distribution(&serial_opts))
                        .map_err(|e| e.to_string())?;
                    let p = parallel
                        .install(|| plan.distribution(&parallel_opts))
                        .map_err(|e| e.to_string())?;
                    same_distribution(&s, &p).map_err(|e| format!("seed {seed} {cohort} {kind}: {e}"))?;
                    ensure(s.n() == want.len() as u64, || "scored pair count differs".into())?;

                    if want.len() > 4 {
                        let cap = ScoreOptions {
                            max_pairs: Some(want.len() as u64 / 2),
                            seed,
                            ..serial_opts
                        };
                        let cap_par = ScoreOptions { block_pairs: 3, ..cap };
                        let s = serial.install(|| plan.distribution(&cap)).map_err(|e| e.to_string())?;
                        let p = parallel
                            .install(|| plan.distribution(&cap_par))
                            .map_err(|e| e.to_string())?;
                        same_distribution(&s, &p).map_err(|e| format!("seed {seed} subsample: {e}"))?;
                        ensure(s.n() == want.len() as u64 / 2, || "subsample size".into())?;
                    }

                    // Moments against f64 cosines of the brute-force pairs.
                    if want.len() > 1 {
                        let scores: Vec<f64> = want
                            .iter()
                            .map(|&(i, j)| common::cosine64(corpus.embedding(i), corpus.embedding(j)))
                            .collect();
                        let (mean, var) = common::moments(&scores);
                        ensure((s.mean() - mean).abs() < 1e-6, || {
                            format!("seed {seed}: mean {} vs {mean}", s.mean())
                        })?;
                        ensure((s.variance().unwrap() - var).abs() < 1e-6, || {
                            format!("seed {seed}: variance")
                        })?;
                    }
                    total_pairs += want.len();
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} pair specs, {total_pairs} pairs"))
}

// 4 -------------------------------------------------------------------------

fn iou_oracle(a: &HairMask, b: &HairMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += usize::from(p && q);
            union += usize::from(p || q);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Replays the greedy matcher from scratch and compares every decision.
fn replay(
    corpus: &Corpus,
    labels: &[gapaudit::AttributeLabels],
    subset: &gapaudit::BalancedSubset,
) -> Result<(), String> {
    let t = subset.threshold;
    let eligible = |i: usize| !labels[i].is_bald && !labels[i].has_facial_hair && corpus.mask(i).unwrap().is_some();
    let mut expected_pairs = Vec::new();
    let mut expected_unmatched = HashSet::new();
    let mut races: Vec<Race> = corpus.records().iter().map(|r| r.race.clone()).collect();
    races.sort();
    races.dedup();
    for race in &races {
        let females: Vec<usize> = common::members(corpus, race, Gender::Female)
            .into_iter()
            .filter(|&i| eligible(i))
            .collect();
        let males: Vec<usize> = common::members(corpus, race, Gender::Male)
            .into_iter()
            .filter(|&i| eligible(i))
            .collect();
        let mut taken = HashSet::new();
        for &f in &females {
            let fm = corpus.mask(f).unwrap().unwrap();
            let mut best: Option<(usize, f64)> = None;
            for &m in &males {
                if taken.contains(&m) {
                    continue;
                }
                let iou = iou_oracle(&fm, &corpus.mask(m).unwrap().unwrap());
                let better = match best {
                    None => true,
                    Some((bm, bi)) => iou > bi || (iou == bi && corpus.record(m).image_id < corpus.record(bm).image_id),
                };
                if better {
                    best = Some((m, iou));
                }
            }
            match best {
                Some((m, iou)) if iou >= t => {
                    taken.insert(m);
                    expected_pairs.push((
                        corpus.record(f).image_id.clone(),
                        corpus.record(m).image_id.clone(),
                        iou,
                    ));
                }
                _ => {
                    expected_unmatched.insert(corpus.record(f).image_id.clone());
                }
            }
        }
    }
    ensure(subset.pairs.len() == expected_pairs.len(), || {
        format!("{} pairs, replay expects {}", subset.pairs.len(), expected_pairs.len())
    })?;
    for (p, (f, m, iou)) in subset.pairs.iter().zip(&expected_pairs) {
        ensure(&p.female_id == f && &p.male_id == m && p.iou == *iou, || {
            format!(
                "pair ({}, {}, {}) but replay chose ({f}, {m}, {iou})",
                p.female_id, p.male_id, p.iou
            )
        })?;
    }
    for id in &expected_unmatched {
        ensure(
            subset.reason(id) == Some(ExclusionReason::NoMatchAboveThreshold),
            || format!("{id} should be unmatched"),
        )?;
    }
    Ok(())
}

fn balancer_invariants() -> Outcome {
    let mut total = 0usize;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let shape = common::Shape {
            images: rng.random_range(20..=160),
            subjects: rng.random_range(4..=30),
            dim: 2,
            masks: true,
            clean: 0.7,
        };
        let corpus = common::random_corpus(&mut rng, &shape);
        let labels = label_corpus(&corpus, &FusionThresholds::default()).map_err(|e| e.to_string())?;
        let mut last = usize::MAX;
        for threshold in [0.8, 0.85, 0.9, 0.95, 1.0] {
            let s = balance(&corpus, &labels, threshold).map_err(|e| e.to_string())?;
            let mut females = HashSet::new();
            let mut males = HashSet::new();
            for p in &s.pairs {
                let (fi, mi) = (
                    corpus.index_of(&p.female_id).unwrap(),
                    corpus.index_of(&p.male_id).unwrap(),
                );
                let iou = iou_oracle(&corpus.mask(fi).unwrap().unwrap(), &corpus.mask(mi).unwrap().unwrap());
                ensure(iou >= threshold && iou == p.iou, || {
                    format!("seed {seed}: pair IoU {iou} at {threshold}")
                })?;
                ensure(corpus.record(fi).race == corpus.record(mi).race, || {
                    "cross-race pair".into()
                })?;
                ensure(
                    corpus.record(fi).gender == Gender::Female && corpus.record(mi).gender == Gender::Male,
                    || "gender roles".into(),
                )?;
                ensure(females.insert(fi) && males.insert(mi), || {
                    format!("seed {seed}: image reused")
                })?;
            }
            ensure(s.pairs.len() <= last, || {
                format!("seed {seed}: more pairs at higher threshold {threshold}")
            })?;
            last = s.pairs.len();
            replay(&corpus, &labels, &s).map_err(|e| format!("seed {seed} t={threshold}: {e}"))?;
            if threshold == 0.8 {
                total += s.pairs.len();
            }
        }
    }
    Ok(format!("50 corpora, {total} pairs at 0.8"))
}

// 5 -------------------------------------------------------------------------

fn five_thousand_images() -> GeneratorConfig {
    let mut g = GeneratorConfig::default();
    for c in &mut g.cohorts {
        c.subjects = 625;
    }
    g.seed = 5_000;
    g
}

fn bootstrap_determinism() -> Outcome {
    let corpus = generate(&five_thousand_images())
        .unwrap()
        .to_corpus()
        .map_err(|e| e.to_string())?;
    let labels = label_corpus(&corpus, &FusionThresholds::default()).map_err(|e| e.to_string())?;
    let subset = balance(&corpus, &labels, 0.8).map_err(|e| e.to_string())?;
    let race = Race::Caucasian;
    let counts = TargetCounts::from_subset(&corpus, &subset, &race);
    let opts = ScoreOptions::default();
    let seed = 77;

    let t = Instant::now();
    let a = bootstrap_gap(&corpus, &race, counts, 1000, seed, None, &opts).map_err(|e| e.to_string())?;
    let full_run = t.elapsed();
    let b = pool(2)
        .install(|| bootstrap_gap(&corpus, &race, counts, 1000, seed, None, &opts))
        .map_err(|e| e.to_string())?;
    ensure(a == b, || "reports differ between runs".into())?;
    let ja = serde_json::to_string(&a).unwrap();
    ensure(ja == serde_json::to_string(&b).unwrap(), || {
        "serialized reports differ".into()
    })?;
    ensure(
        render_bootstrap_table(std::slice::from_ref(&a)) == render_bootstrap_table(&[b]),
        || "tables differ".into(),
    )?;
    let other = bootstrap_gap(&corpus, &race, counts, 5, seed + 1, None, &opts).map_err(|e| e.to_string())?;
    ensure(
        other.impostor.random_dprimes[..5] != a.impostor.random_dprimes[..5],
        || "seed has no effect".into(),
    )?;

    let female = SubjectPool::new(&corpus, &Cohort::new(race.clone(), Gender::Female));
    let male = SubjectPool::new(&corpus, &Cohort::new(race.clone(), Gender::Male));
    for s in 0..1000 {
        let mut rng = sample_rng(seed, s);
        let f = female
            .draw(counts.female_subjects, counts.female_images, &mut rng)
            .map_err(|e| e.to_string())?;
        let m = male
            .draw(counts.male_subjects, counts.male_images, &mut rng)
            .map_err(|e| e.to_string())?;
        for (drawn, subjects, images, gender) in [
            (&f, counts.female_subjects, counts.female_images, Gender::Female),
            (&m, counts.male_subjects, counts.male_images, Gender::Male),
        ] {
            let ids: HashSet<&str> = drawn.iter().map(|&i| corpus.record(i).image_id.as_str()).collect();
            let subj: HashSet<&str> = drawn.iter().map(|&i| corpus.record(i).subject_id.as_str()).collect();
            ensure(drawn.len() == images && ids.len() == images, || {
                format!("sample {s}: image count or duplicate")
            })?;
            ensure(subj.len() == subjects, || {
                format!("sample {s}: {} subjects, want {subjects}", subj.len())
            })?;
            ensure(
                drawn
                    .iter()
                    .all(|&i| corpus.record(i).gender == gender && corpus.record(i).race == race),
                || format!("sample {s}: image outside cohort"),
            )?;
        }
        if s < 10 {
            // The report's value for this sample, recomputed from raw scores.
            let scores = |idx: &[usize], genuine: bool| -> Vec<f64> {
                let mut out = Vec::new();
                for x in 0..idx.len() {
                    for y in x + 1..idx.len() {
                        let (i, j) = (idx[x], idx[y]);
                        if (corpus.record(i).subject_id == corpus.record(j).subject_id) == genuine {
                            out.push(common::cosine64(corpus.embedding(i), corpus.embedding(j)));
                        }
                    }
                }
                out
            };
            let imp = common::dprime_raw(&scores(&f, false), &scores(&m, false));
            let gen = common::dprime_raw(&scores(&f, true), &scores(&m, true));
            ensure(common::rel_close(imp, a.impostor.random_dprimes[s], 1e-4), || {
                format!("sample {s}: impostor d'")
            })?;
            ensure(common::rel_close(gen, a.genuine.random_dprimes[s], 1e-4), || {
                format!("sample {s}: genuine d'")
            })?;
        }
    }
    ensure(full_run < Duration::from_secs(120), || {
        format!("1000 samples took {full_run:?}")
    })?;
    Ok(format!(
        "{} images, counts {:?}, 1000 samples in {:.1}s",
        corpus.len(),
        (
            counts.female_subjects,
            counts.female_images,
            counts.male_subjects,
            counts.male_images
        ),
        full_run.as_secs_f64()
    ))
}

// 6 -------------------------------------------------------------------------

fn gap_collapse() -> Outcome {
    let corpus = generate(&GeneratorConfig::default())
        .unwrap()
        .to_corpus()
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig {
        samples: 1000,
        ..RunConfig::default()
    };
    let bundle = audit_corpus(&corpus, &config, dir.path()).map_err(|e| e.to_string())?;
    let gap = &bundle.gaps[0];
    let boot = &bundle.bootstrap[0];
    let mut notes = Vec::new();
    for (name, cell, summary) in [
        ("impostor", &gap.impostor, &boot.impostor),
        ("genuine", &gap.genuine, &boot.genuine),
    ] {
        let shrink = 1.0 - cell.dprime_after / cell.dprime_before;
        ensure(shrink >= 0.5, || {
            format!(
                "{name} gap {:.3} -> {:.3} shrinks {:.0}%",
                cell.dprime_before,
                cell.dprime_after,
                100.0 * shrink
            )
        })?;
        let bound = summary.mean_random - summary.std_random;
        ensure(cell.dprime_after < bound, || {
            format!(
                "{name} balanced d' {:.3} not below mean-std {bound:.3}",
                cell.dprime_after
            )
        })?;
        ensure(summary.within_one_sigma == Some(false), || {
            format!("{name}: within one sigma")
        })?;
        notes.push(format!(
            "{name} {:.3}->{:.3} ({:+.0}%), random {:.3}+-{:.3}",
            cell.dprime_before,
            cell.dprime_after,
            -100.0 * shrink,
            summary.mean_random,
            summary.std_random
        ));
    }
    Ok(notes.join("; "))
}

// 7 -------------------------------------------------------------------------

fn throughput_gate() -> Outcome {
    let images = images_for_pairs(100_000_000);
    let corpus = random_cohort(images, 512, 3).map_err(|e| e.to_string())?;
    let t = throughput(&corpus, &ScoreOptions::default()).map_err(|e| e.to_string())?;
    ensure(t.pairs >= 100_000_000, || format!("only {} pairs", t.pairs))?;
    ensure(t.seconds <= 60.0, || {
        format!("{} pairs took {:.1}s", t.pairs, t.seconds)
    })?;
    Ok(format!(
        "{} cosines (dim 512) in {:.1}s on {} threads, {:.2e}/s",
        t.pairs,
        t.seconds,
        rayon::current_num_threads(),
        t.pairs_per_second
    ))
}

// 8 -------------------------------------------------------------------------

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut corpora = 0;
    for _ in 0..10 {
        let shape = common::Shape {
            images: rng.random_range(2..=120),
            subjects: rng.random_range(1..=20),
            dim: rng.random_range(1..=64),
            masks: true,
            clean: 0.6,
        };
        let corpus = common::random_corpus(&mut rng, &shape);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let back = Corpus::load(corpus.save(dir.path()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(back.records() == corpus.records(), || "records differ".into())?;
        let bits = |c: &Corpus| {
            c.embeddings()
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        ensure(bits(&back) == bits(&corpus), || "embeddings not bit-exact".into())?;
        for i in 0..corpus.len() {
            ensure(back.mask(i).unwrap() == corpus.mask(i).unwrap(), || {
                format!("mask {i} differs")
            })?;
        }

        let labels = label_corpus(&corpus, &FusionThresholds::default()).map_err(|e| e.to_string())?;
        let s = balance(&corpus, &labels, 0.5).map_err(|e| e.to_string())?;
        let (p, a) = (dir.path().join("subset.csv"), dir.path().join("exclusions.csv"));
        emit_subset(&s, &p, Some(&a), "# tool: acceptance\n").map_err(|e| e.to_string())?;
        ensure(load_subset(&p, Some(&a)).map_err(|e| e.to_string())? == s, || {
            "subset differs after reload".into()
        })?;
        corpora += 1;
    }

    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let shape = common::Shape {
        images: 30,
        subjects: 6,
        dim: 8,
        masks: true,
        clean: 0.5,
    };
    let mut corpus = common::random_corpus(&mut rng, &shape);
    while (0..corpus.len()).any(|i| corpus.mask(i).unwrap().is_none()) {
        corpus = common::random_corpus(&mut rng, &shape);
    }
    corpus.save(base.path()).map_err(|e| e.to_string())?;
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cases, failures) = common::fuzz::run(base.path(), scratch.path());
    ensure(cases >= 50, || format!("only {cases} fuzz cases"))?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "{corpora} corpora and subsets round-tripped, {cases} malformed inputs rejected"
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "fusion truth tables",
            limit: Duration::from_secs(1),
            run: fusion_truth_tables,
        },
        Criterion {
            id: 2,
            name: "d-prime oracle",
            limit: Duration::from_secs(5),
            run: dprime_oracle,
        },
        Criterion {
            id: 3,
            name: "pair enumeration",
            limit: Duration::from_secs(30),
            run: pair_enumeration,
        },
        Criterion {
            id: 4,
            name: "balancer invariants",
            limit: Duration::from_secs(30),
            run: balancer_invariants,
        },
        Criterion {
            id: 5,
            name: "bootstrap determinism",
            limit: Duration::from_secs(120),
            run: bootstrap_determinism,
        },
        Criterion {
            id: 6,
            name: "end-to-end gap collapse",
            limit: Duration::from_secs(600),
            run: gap_collapse,
        },
        Criterion {
            id: 7,
            name: "throughput gate",
            limit: Duration::from_secs(60),
            run: throughput_gate,
        },
        Criterion {
            id: 8,
            name: "format round-trips",
            limit: Duration::from_secs(60),
            run: round_trips,
        },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut results = BTreeMap::new();
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > c.limit => Err(format!("exceeded {:?}", c.limit)),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        println!(
            "[{tag}] {}. {} ({:.2}s, limit {}s): {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
        results.insert(c.id, outcome.is_ok());
    }
    let failed = results.values().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
