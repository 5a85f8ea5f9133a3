//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 2 3`.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::checks;
use sg2hoi::config::{Architecture, EvalSetting, ModelConfig, RunConfig, Switches, TrainConfig};
use sg2hoi::datamodel::ImageDetections;
use sg2hoi::evalkit::map_role;
use sg2hoi::hoihead::gradcheck::{grad_check, Fixture, GradTarget, DEFAULT_STEP};
use sg2hoi::hoihead::train::train;
use sg2hoi::hoihead::PreparedScene;
use sg2hoi::params::ParameterStore;
use sg2hoi::pipeline::{predict_all, prepare_all, write_dataset, Dataset, LoadedScene};
use sg2hoi::synthworld::{generate_world, RuleTable, Split, World, WorldConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ------------------------------------------------------------ 1

fn gradients() -> Verdict {
    const FIXTURES: u64 = 10;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for target in GradTarget::ALL {
        let mut ok = true;
        for seed in 0..FIXTURES {
            let fx = Fixture::random(seed, 5).unwrap();
            let store = ParameterStore::init(&fx.arch, seed);
            let report = grad_check(target, &fx, &store, DEFAULT_STEP).unwrap();
            worst = worst.max(report.max_rel_err);
            ok &= report.passed(TOL);
        }
        if !ok {
            failed.push(target.name());
        }
    }
    let elapsed = start.elapsed();
    let in_time = elapsed < Duration::from_secs(120);
    verdict(
        failed.is_empty() && in_time,
        format!(
            "{} targets x {FIXTURES} fixtures, max rel err {worst:.2e} (tol {TOL:.0e}), {:.1}s{}",
            GradTarget::ALL.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(", ")) }
        ),
    )
}

// ------------------------------------------------------------ 2

fn oracles() -> Verdict {
    const N: u64 = 120;
    let emb = checks::embedding_deviation(N);
    let pass = checks::passing_deviation(N);
    let matching = checks::matching_agreement(N);
    let ap = checks::ap_mismatches(4 * N);
    let map = checks::map_mismatches(N);
    verdict(
        emb <= 1e-10 && pass <= 1e-10 && matching.mismatches == 0 && ap == 0 && map == 0,
        format!(
            "{N} instances each: embedding dev {emb:.1e}, passing dev {pass:.1e}, \
             matching mismatches {}, AP mismatches {ap}/{}, mAP mismatches {map}",
            matching.mismatches,
            4 * N
        ),
    )
}

// ------------------------------------------------------------ 3

fn invariants() -> Verdict {
    const N: u64 = 300;
    let mut failures = Vec::new();
    let mut count = |name: &str, ok: usize, of: usize| {
        if ok != of {
            failures.push(format!("{name} {ok}/{of}"));
        }
    };
    let seeds = 0..N;
    count("edgeless identity", seeds.clone().filter(|&s| checks::edgeless_identity(s)).count(), N as usize);
    count("permutation", seeds.clone().filter(|&s| checks::embedding_permutation(s)).count(), N as usize);
    let scale = |s: u64| 0.01 + (s % 97) as f64 * 1.03;
    count("score scaling", seeds.clone().filter(|&s| checks::score_scaling(s, scale(s))).count(), N as usize);
    count("trailing FP", seeds.clone().filter(|&s| checks::trailing_false_positive(s)).count(), N as usize);
    let leading: Vec<bool> = seeds.clone().filter_map(checks::leading_true_positive).collect();
    count("leading TP", leading.iter().filter(|&&b| b).count(), leading.len());
    count("fused range/monotone", seeds.filter(|&s| checks::fused_range_and_monotone(s)).count(), N as usize);
    let enough = leading.len() >= 100;
    verdict(
        failures.is_empty() && enough,
        if failures.is_empty() {
            format!("{N} cases per property ({} leading-TP cases applicable), no violations", leading.len())
        } else {
            format!("violations: {}", failures.join(", "))
        },
    )
}

// ------------------------------------------------------------ shared

fn in_memory(world: &World, split: Split, threshold: f64) -> Vec<LoadedScene> {
    world
        .split(split)
        .map(|s| {
            let mut graph = s.graph.clone();
            graph.filter_edges(threshold);
            LoadedScene {
                graph,
                features: s.features.clone(),
                annotations: Some(s.annotations.clone()),
            }
        })
        .collect()
}

fn evaluate(
    store: &ParameterStore,
    arch: &Architecture,
    test: &[PreparedScene],
    gts: &[LoadedScene],
    rare: &BTreeSet<usize>,
) -> f64 {
    let dets: Vec<ImageDetections> = predict_all(store, arch, test, 0.0)
        .unwrap()
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let gts: Vec<_> = gts.iter().map(|s| s.annotations.clone().unwrap()).collect();
    map_role(&dets, &gts, arch.num_interactions, EvalSetting::Default, rare, None, 0.5)
        .unwrap()
        .full
}

// ------------------------------------------------------------ 4

fn end_to_end() -> Verdict {
    let start = Instant::now();
    let world = generate_world(&WorldConfig::default(), &RuleTable::default_table()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&world, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let cfg = RunConfig::with_seed(7);
    let vocab = &ds.vocabulary;
    let arch = cfg.architecture(vocab.num_interactions(), vocab.word_dim).unwrap();
    let train_raw = ds.load_split(Split::Train, cfg.data.relation_threshold).unwrap();
    let test_raw = ds.load_split(Split::Test, cfg.data.relation_threshold).unwrap();
    let train_set = prepare_all(&train_raw, vocab, &arch).unwrap();
    let test_set = prepare_all(&test_raw, vocab, &arch).unwrap();
    let out = train(&train_set, &cfg.train, &arch, ParameterStore::init(&arch, cfg.seed), cfg.seed, |_| {}).unwrap();
    let rare: BTreeSet<usize> = ds.manifest.rare_classes.iter().copied().collect();
    let map = evaluate(&out.store, &arch, &test_set, &test_raw, &rare);
    verdict(
        map >= 0.90,
        format!(
            "seed 7, {} train / {} test scenes, full model, T = {}, {} epochs: mAP_role {map:.4} (need >= 0.90), {:.0}s on {} thread(s)",
            train_set.len(),
            test_set.len(),
            arch.rounds,
            cfg.train.epochs,
            start.elapsed().as_secs_f64(),
            rayon::current_num_threads()
        ),
    )
}

// ------------------------------------------------------------ 5

const ABLATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ABLATION_EPOCHS: usize = 30;

fn reduced_model() -> ModelConfig {
    ModelConfig {
        d_s: 32,
        d_h: 64,
        d_g: 64,
        d_f: 64,
        mask_size: 16,
        ..ModelConfig::default()
    }
}

/// Test mAP of each variant on one world.
fn ablation_run(world: &World, seed: u64, variants: &[&str]) -> Vec<f64> {
    let train_raw = in_memory(world, Split::Train, 0.2);
    let test_raw = in_memory(world, Split::Test, 0.2);
    let rare: BTreeSet<usize> = world.rare_classes.iter().copied().collect();
    let cfg = TrainConfig {
        epochs: ABLATION_EPOCHS,
        ..TrainConfig::default()
    };
    variants
        .iter()
        .map(|v| {
            let arch = Architecture::new(
                reduced_model(),
                Switches::preset(v).unwrap(),
                2,
                world.vocabulary.num_interactions(),
                world.vocabulary.word_dim,
            )
            .unwrap();
            let tr = prepare_all(&train_raw, &world.vocabulary, &arch).unwrap();
            let te = prepare_all(&test_raw, &world.vocabulary, &arch).unwrap();
            let out = train(&tr, &cfg, &arch, ParameterStore::init(&arch, seed), seed, |_| {}).unwrap();
            evaluate(&out.store, &arch, &te, &test_raw, &rare)
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn fmt_runs(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn ablation() -> Verdict {
    let start = Instant::now();
    let default_variants = ["full", "sge", "rel", "baseline"];
    let pred_variants = ["full", "sge-no-rel", "baseline"];
    let mut default_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for seed in ABLATION_SEEDS {
        let base = WorldConfig {
            seed,
            feature_dim: reduced_model().d_f,
            ..WorldConfig::default()
        };
        let world = generate_world(&base, &RuleTable::default_table()).unwrap();
        default_rows.push(ablation_run(&world, seed, &default_variants));
        let pred_cfg = WorldConfig { noise: 0.0, ..base };
        let world = generate_world(&pred_cfg, &RuleTable::predicate_only()).unwrap();
        pred_rows.push(ablation_run(&world, seed, &pred_variants));
    }
    let mut lines = Vec::new();
    for (i, v) in default_variants.iter().enumerate() {
        lines.push(format!("{v} [{}]", fmt_runs(&column(&default_rows, i))));
    }
    for (i, v) in pred_variants.iter().enumerate() {
        lines.push(format!("pred/{v} [{}]", fmt_runs(&column(&pred_rows, i))));
    }
    let m = |rows: &[Vec<f64>], i| median(column(rows, i));
    let (full, sge, rel, baseline) = (m(&default_rows, 0), m(&default_rows, 1), m(&default_rows, 2), m(&default_rows, 3));
    let (p_full, p_plain, p_base) = (m(&pred_rows, 0), m(&pred_rows, 1), m(&pred_rows, 2));
    let checks = [
        (full >= sge, format!("full {full:.3} >= sge {sge:.3}")),
        (full >= rel, format!("full {full:.3} >= rel {rel:.3}")),
        (full - baseline >= 0.05, format!("full - baseline {:.3} >= 0.05", full - baseline)),
        (
            p_full - p_plain >= 0.03,
            format!("predicate-only: relation-aware {p_full:.3} - plain passing {p_plain:.3} = {:.3} >= 0.03", p_full - p_plain),
        ),
        (
            p_full - p_base >= 0.3,
            format!("predicate-only: full - baseline {:.3} >= 0.3", p_full - p_base),
        ),
    ];
    let pass = checks.iter().all(|c| c.0);
    let summary: Vec<String> = checks
        .iter()
        .map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "NOT " }))
        .collect();
    verdict(
        pass,
        format!(
            "medians over seeds {ABLATION_SEEDS:?} ({ABLATION_EPOCHS} epochs, d_f 64, mask 16): {}; runs: {}; {:.0}s",
            summary.join("; "),
            lines.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------ 6

fn schedule() -> Verdict {
    let cfg = WorldConfig {
        seed: 3,
        num_scenes: 24,
        num_test: 4,
        feature_dim: 16,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg, &RuleTable::default_table()).unwrap();
    let model = ModelConfig {
        d_s: 8,
        d_h: 16,
        d_g: 16,
        d_f: 16,
        mask_size: 8,
        ..ModelConfig::default()
    };
    let arch = Architecture::new(model, Switches::FULL, 2, world.vocabulary.num_interactions(), world.vocabulary.word_dim).unwrap();
    let scenes = prepare_all(&in_memory(&world, Split::Train, 0.2), &world.vocabulary, &arch).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut logged = Vec::new();
    train(&scenes, &tc, &arch, ParameterStore::init(&arch, 3), 3, |e| logged.push((e.epoch, e.lr))).unwrap();
    let wrong: Vec<usize> = logged
        .iter()
        .filter(|(e, lr)| *lr != 0.01 * 0.9f64.powf((e / 10) as f64))
        .map(|(e, _)| *e)
        .collect();
    let distinct: Vec<String> = logged
        .iter()
        .map(|(_, lr)| format!("{lr}"))
        .collect::<Vec<_>>()
        .chunk_by(|a, b| a == b)
        .map(|c| format!("{}x{}", c[0], c.len()))
        .collect();
    verdict(
        logged.len() == 30 && wrong.is_empty(),
        format!("{} epochs logged, lr {}{}", logged.len(), distinct.join(" -> "),
            if wrong.is_empty() { String::new() } else { format!(", wrong at epochs {wrong:?}") }),
    )
}

// ------------------------------------------------------------ 7

fn pipeline_once(dir: &Path, threads: usize) -> (Vec<u8>, Vec<ImageDetections>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let wc = WorldConfig {
            seed: 7,
            num_scenes: 60,
            num_test: 15,
            feature_dim: 24,
            ..WorldConfig::default()
        };
        let world = generate_world(&wc, &RuleTable::default_table()).unwrap();
        write_dataset(&world, dir).unwrap();
        let ds = Dataset::open(dir).unwrap();
        let mut cfg = RunConfig::with_seed(7);
        cfg.model = ModelConfig {
            d_s: 12,
            d_h: 24,
            d_g: 24,
            d_f: 24,
            mask_size: 12,
            ..ModelConfig::default()
        };
        cfg.train.epochs = 6;
        let vocab = &ds.vocabulary;
        let arch = cfg.architecture(vocab.num_interactions(), vocab.word_dim).unwrap();
        let tr = prepare_all(&ds.load_split(Split::Train, 0.2).unwrap(), vocab, &arch).unwrap();
        let te = prepare_all(&ds.load_split(Split::Test, 0.2).unwrap(), vocab, &arch).unwrap();
        let out = train(&tr, &cfg.train, &arch, ParameterStore::init(&arch, 7), 7, |_| {}).unwrap();
        let dets: Vec<ImageDetections> = predict_all(&out.store, &arch, &te, 0.0)
            .unwrap()
            .into_iter()
            .map(|(_, d)| d)
            .collect();
        (serde_json::to_vec(&dets).unwrap(), dets)
    })
}

fn determinism() -> Verdict {
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a_bytes, a) = pipeline_once(a_dir.path(), 1);
    let (b_bytes, b) = pipeline_once(b_dir.path(), 3);
    let manifests_equal = std::fs::read(a_dir.path().join("manifest.json")).unwrap()
        == std::fs::read(b_dir.path().join("manifest.json")).unwrap();
    let mut max_diff = 0.0f64;
    let mut same_shape = a.len() == b.len();
    for (x, y) in a.iter().zip(&b) {
        same_shape &= x.detections.len() == y.detections.len();
        for (p, q) in x.detections.iter().zip(&y.detections) {
            max_diff = max_diff.max((p.score - q.score).abs());
        }
    }
    let count: usize = a.iter().map(|d| d.detections.len()).sum();
    verdict(
        manifests_equal && same_shape && a_bytes == b_bytes && count > 0,
        format!(
            "two synth-gen + train + predict runs (1 vs 3 threads): manifests {}, {count} detections, max score diff {max_diff:e}, bitwise {}",
            if manifests_equal { "identical" } else { "differ" },
            if a_bytes == b_bytes { "identical" } else { "different" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("gradient suite", gradients),
        ("oracle equivalence", oracles),
        ("invariant suite", invariants),
        ("end-to-end synthetic learning", end_to_end),
        ("ablation ordering", ablation),
        ("learning-rate schedule", schedule),
        ("determinism", determinism),
    ];
    let selected: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .filter(|n| (1..=criteria.len()).contains(n))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
