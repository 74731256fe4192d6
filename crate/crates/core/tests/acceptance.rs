//! Acceptance suite: ten criteria, one PASS/FAIL line each.
//!
//! `cargo test -p sillnet-core --test acceptance` runs everything (the
//! synthetic orderings take roughly half an hour on one core). Passing
//! criterion numbers after `--` runs just those.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sillnet_core::data::{
    generate_synthetic_dataset, Dataset, Image, Protocol, Split, SyntheticConfig,
};
use sillnet_core::eval::{
    augment_and_evaluate, evaluate, format_table, run_comparison, run_pipeline, support_for,
    transplant, TableRow,
};
use sillnet_core::features::mix;
use sillnet_core::losses::{
    augmentation_loss, bce_image_loss, exchange_loss, match_loss, pida,
};
use sillnet_core::model::FeatureGrid;
use sillnet_core::repository::{kmeans, IlluminationRepository, KMeansConfig, Provenance, RepoMeta};
use sillnet_core::training::{
    train_augmentation, train_real_reconstructor, train_separation, SeparationOutcome,
    TrainConfig, VariantSource,
};

const SEEDS: u64 = 5;
const COMPARISON_SEEDS: u64 = 3;
const SMALL_K: usize = 20;
const SELECT_K: usize = 100;

// Seed 0 of the benchmark configuration measured 0.215 and 0.201; frozen at
// about half.
const TRANSPLANT_DISTANCE_FLOOR: f64 = 0.10;
const TRANSPLANT_CORRELATION_FLOOR: f64 = 0.10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Central differences of `f` around `x`, step 1e-5.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn criterion_gradients() -> Outcome {
    const INSTANCES: usize = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..INSTANCES {
        let (n, m) = (rng.random_range(1..6), rng.random_range(2..7));
        let logits = uniform_vec(&mut rng, n * m, -3.0, 3.0);
        let labels = random_labels(&mut rng, n, m);
        for (name, loss) in [
            ("exchange", exchange_loss::<f64> as fn(&[f64], usize, &[usize]) -> _),
            ("augmentation", augmentation_loss::<f64>),
        ] {
            let g = loss(&logits, m, &labels).unwrap().grad;
            let num = numeric_grad(&logits, |x| loss(x, m, &labels).unwrap().value);
            record(name, max_rel(&g, &num));
        }

        let len = rng.random_range(2..40);
        let a = uniform_vec(&mut rng, len, -2.0, 2.0);
        let b = uniform_vec(&mut rng, len, -2.0, 2.0);
        let g = match_loss(&a, &b).unwrap().grad;
        record("match(rectified)", max_rel(&g, &numeric_grad(&a, |x| match_loss(x, &b).unwrap().value)));
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        record("match(template)", max_rel(&neg, &numeric_grad(&b, |x| match_loss(&a, x).unwrap().value)));

        let p = uniform_vec(&mut rng, len, 0.05, 0.95);
        let t = uniform_vec(&mut rng, len, 0.0, 1.0);
        let g = bce_image_loss(&p, &t).unwrap().grad;
        record("template-recon", max_rel(&g, &numeric_grad(&p, |x| bce_image_loss(x, &t).unwrap().value)));

        // real reconstruction: sigmoid outputs scored by BCE
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = uniform_vec(&mut rng, len, -3.0, 3.0);
        let out: Vec<f64> = pre.iter().map(|v| sig(*v)).collect();
        let g_out = bce_image_loss(&out, &t).unwrap().grad;
        let g: Vec<f64> = g_out.iter().zip(&out).map(|(g, s)| g * s * (1.0 - s)).collect();
        let composed = |x: &[f64]| {
            let o: Vec<f64> = x.iter().map(|v| sig(*v)).collect();
            bce_image_loss(&o, &t).unwrap().value
        };
        record("real-recon", max_rel(&g, &numeric_grad(&pre, composed)));

        let (count, dim) = (rng.random_range(3..10), rng.random_range(2..8));
        let labels = random_labels(&mut rng, count, 3);
        let flat = uniform_vec(&mut rng, count * dim, -1.0, 1.0);
        let value = |x: &[f64]| {
            let feats: Vec<&[f64]> = x.chunks(dim).collect();
            pida(&feats, &labels).unwrap().value
        };
        let feats: Vec<&[f64]> = flat.chunks(dim).collect();
        let g: Vec<f64> = pida(&feats, &labels).unwrap().grads.concat();
        record("illumination", max_rel(&g, &numeric_grad(&flat, value)));
    }
    let pass = worst.values().all(|e| *e < 1e-4);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("{INSTANCES} instances per loss, max rel err: {detail}"))
}

/// Independent PIDA: class means by scanning the whole batch per class.
fn brute_pida(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut seen = Vec::new();
    for &c in labels {
        if seen.contains(&c) {
            continue;
        }
        seen.push(c);
        let dim = features[0].len();
        let mut center = vec![0.0; dim];
        let mut n = 0.0;
        for (f, &y) in features.iter().zip(labels) {
            if y == c {
                n += 1.0;
                for d in 0..dim {
                    center[d] += f[d];
                }
            }
        }
        for (f, &y) in features.iter().zip(labels) {
            if y == c {
                let sq: f64 = (0..dim).map(|d| (f[d] - center[d] / n).powi(2)).sum();
                total += sq.sqrt();
            }
        }
    }
    total
}

fn criterion_pida_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut worst_shift, mut negatives) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let (n, dim, classes) = (rng.random_range(1..16), rng.random_range(1..10), rng.random_range(1..5));
        let labels = random_labels(&mut rng, n, classes);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(&mut rng, dim, -3.0, 3.0)).collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let value = pida(&refs, &labels).unwrap().value;
        worst = worst.max((value - brute_pida(&feats, &labels)).abs());
        let shift = uniform_vec(&mut rng, dim, -5.0, 5.0);
        let moved: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| f.iter().zip(&shift).map(|(a, b)| a + b).collect())
            .collect();
        let refs: Vec<&[f64]> = moved.iter().map(|f| f.as_slice()).collect();
        worst_shift = worst_shift.max((pida(&refs, &labels).unwrap().value - value).abs());
        if value < 0.0 {
            negatives += 1;
        }
    }
    outcome(
        worst < 1e-6 && worst_shift < 1e-6 && negatives == 0,
        format!("100 groupings, oracle diff {worst:.1e}, translation diff {worst_shift:.1e}, negative values {negatives}"),
    )
}

fn random_grid(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> FeatureGrid {
    let n = shape.0 * shape.1 * shape.2;
    FeatureGrid::new(shape.0, shape.1, shape.2, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn grid_diff(a: &FeatureGrid, b: &FeatureGrid) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

fn criterion_mix_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let shape = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let (a, b, c) = (random_grid(&mut rng, shape), random_grid(&mut rng, shape), random_grid(&mut rng, shape));
        let r: f32 = rng.random_range(0.0..=1.0);
        let alpha: f32 = rng.random_range(-2.0..2.0);
        worst = worst.max(grid_diff(&mix(&a, &b, 1.0).unwrap(), &a));
        worst = worst.max(grid_diff(&mix(&a, &b, 0.0).unwrap(), &b));
        worst = worst.max(grid_diff(&mix(&a, &a, r).unwrap(), &a));
        let scale = |g: &FeatureGrid, s: f32| {
            FeatureGrid::new(g.channels, g.height, g.width, g.values.iter().map(|v| v * s).collect()).unwrap()
        };
        let add = |g: &FeatureGrid, h: &FeatureGrid| {
            FeatureGrid::new(g.channels, g.height, g.width, g.values.iter().zip(&h.values).map(|(x, y)| x + y).collect())
                .unwrap()
        };
        let m = mix(&a, &b, r).unwrap();
        worst = worst.max(grid_diff(&mix(&scale(&a, alpha), &scale(&b, alpha), r).unwrap(), &scale(&m, alpha)));
        worst = worst.max(grid_diff(&mix(&add(&a, &c), &add(&b, &c), r).unwrap(), &add(&m, &c)));
    }
    outcome(worst < 1e-6, format!("1000 random grids, max deviation {worst:.1e}"))
}

fn criterion_repository_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let dir = tempfile::tempdir().unwrap();
    let mut failures = 0;
    for i in 0..50 {
        let shape = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..7));
        let n = rng.random_range(0..20);
        let features: Vec<FeatureGrid> = (0..n).map(|_| random_grid(&mut rng, shape)).collect();
        let provenance = (0..n)
            .map(|_| [Provenance::Raw, Provenance::Center, Provenance::Interpolated][rng.random_range(0..3)])
            .collect();
        let meta = RepoMeta {
            source: format!("random-{i}-{}", rng.random::<u32>()),
            channels: shape.0,
            height: shape.1,
            width: shape.2,
            seed: rng.random(),
            provenance,
        };
        let repo = IlluminationRepository::from_parts(features, meta).unwrap();
        let path = dir.path().join(format!("r{i}.silr"));
        repo.save(&path).unwrap();
        let back = IlluminationRepository::load(&path).unwrap();
        let bits = |r: &IlluminationRepository| -> Vec<u32> {
            r.features().iter().flat_map(|f| f.values.iter().map(|v| v.to_bits())).collect()
        };
        if back != repo || bits(&back) != bits(&repo) || back.to_bytes().unwrap() != std::fs::read(&path).unwrap() {
            failures += 1;
        }
    }
    let golden: &[u8] = include_bytes!("fixtures/golden_v1.silr");
    let golden_ok = IlluminationRepository::from_bytes(golden)
        .and_then(|r| r.to_bytes())
        .map(|b| b == golden)
        .unwrap_or(false);
    outcome(
        failures == 0 && golden_ok,
        format!("50 random repositories, {failures} mismatches; golden fixture byte-identical: {golden_ok}"),
    )
}

/// Minimum within-cluster sum of squares over every two-way split.
fn best_split(points: &[f64]) -> (f64, [f64; 2]) {
    let n = points.len();
    let mut best = (f64::INFINITY, [0.0; 2]);
    for mask in 1..(1u32 << n) - 1 {
        let mut groups = [Vec::new(), Vec::new()];
        for (i, p) in points.iter().enumerate() {
            groups[((mask >> i) & 1) as usize].push(*p);
        }
        let centers = groups.clone().map(|g| g.iter().sum::<f64>() / g.len() as f64);
        let sse: f64 = (0..2)
            .map(|k| groups[k].iter().map(|p| (p - centers[k]).powi(2)).sum::<f64>())
            .sum();
        if sse < best.0 {
            let mut c = centers;
            c.sort_by(f64::total_cmp);
            best = (sse, c);
        }
    }
    best
}

fn criterion_kmeans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut increases, mut worst_center) = (0, 0.0f64);
    for trial in 0..30 {
        let (n, dim) = (rng.random_range(5..60), rng.random_range(1..6));
        let k = rng.random_range(1..=n.min(8));
        let pts: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
        let res = kmeans(&refs, KMeansConfig::new(k, trial)).unwrap();
        increases += res.objective_history.windows(2).filter(|w| w[1] > w[0]).count();
        for (c, center) in res.centers.iter().enumerate() {
            let members: Vec<&Vec<f32>> = pts.iter().zip(&res.assignments).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            for d in 0..dim {
                let m = members.iter().map(|p| p[d] as f64).sum::<f64>() / members.len() as f64;
                worst_center = worst_center.max((m - center[d]).abs());
            }
        }
    }
    let points = [0.0f32, 1.0, 10.0, 11.0];
    let refs: Vec<&[f32]> = points.iter().map(std::slice::from_ref).collect();
    let res = kmeans(&refs, KMeansConfig::new(2, 0)).unwrap();
    let mut got: Vec<f64> = res.centers.iter().map(|c| c[0]).collect();
    got.sort_by(f64::total_cmp);
    let (_, oracle) = best_split(&points.map(|p| p as f64));
    let toy = (got[0] - oracle[0]).abs() < 1e-5 && (got[1] - oracle[1]).abs() < 1e-5;
    outcome(
        increases == 0 && worst_center < 1e-5 && toy,
        format!(
            "30 random runs: {increases} objective increases, center-mean gap {worst_center:.1e}; {{0,1,10,11}} k=2 -> {got:?} (oracle {oracle:?})"
        ),
    )
}

fn benchmark_data(seed: u64) -> Dataset {
    generate_synthetic_dataset(&SyntheticConfig {
        n_classes: 30,
        samples_per_class: 60,
        image_size: 16,
        test_classes: 10,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn benchmark_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        channels: 8,
        encoder_width: 16,
        decoder_width: 16,
        localizer_width: 8,
        classifier_width0: 16,
        classifier_width1: 32,
        epochs_phase1: 10,
        epochs_phase2: 10,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

/// The full separation run of one seed, shared by criteria 6, 7, 8 and 10.
struct SeedRun {
    dataset: Dataset,
    cfg: TrainConfig,
    phase1: SeparationOutcome,
}

struct Runs {
    seeds: BTreeMap<u64, SeedRun>,
    full: BTreeMap<u64, f64>,
}

impl Runs {
    fn get(&mut self, seed: u64) -> &SeedRun {
        self.seeds.entry(seed).or_insert_with(|| {
            let dataset = benchmark_data(seed);
            let cfg = benchmark_config(seed);
            let phase1 = train_separation(&dataset, &cfg).unwrap();
            SeedRun { dataset, cfg, phase1 }
        })
    }

    fn full_accuracy(&mut self, seed: u64) -> f64 {
        if let Some(a) = self.full.get(&seed) {
            return *a;
        }
        let run = self.get(seed);
        let a = augment_and_evaluate(&run.phase1, &run.dataset, &run.cfg, &VariantSource::from_config(&run.cfg))
            .unwrap()
            .report
            .accuracy;
        self.full.insert(seed, a);
        a
    }
}

fn criterion_ordering(runs: &mut Runs) -> Outcome {
    let names = ["full", "arm (a)", "no-exchange", "no-match", "no-recon", "no-illu", "no-template-processing"];
    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..SEEDS {
        let full = runs.full_accuracy(seed);
        acc.entry("full").or_default().push(full);
        let run = runs.get(seed);
        for &name in &names[1..] {
            let mut cfg = run.cfg.clone();
            match name {
                "arm (a)" => cfg.illumination_augmentation = false,
                "no-exchange" => cfg.exchange = false,
                "no-match" => cfg.matching = false,
                "no-recon" => cfg.recon = false,
                "no-illu" => cfg.illu = false,
                _ => cfg.template_processing = false,
            }
            let own;
            let phase1 = if cfg.toggles() == run.cfg.toggles() {
                &run.phase1
            } else {
                own = train_separation(&run.dataset, &cfg).unwrap();
                &own
            };
            let a = augment_and_evaluate(phase1, &run.dataset, &cfg, &VariantSource::from_config(&cfg))
                .unwrap()
                .report
                .accuracy;
            acc.entry(name).or_default().push(a);
        }
    }
    println!("  criterion 6 per-seed accuracy (%):");
    for name in names {
        let v = &acc[name];
        let seeds: Vec<String> = v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
        println!("    {name:<24} mean {:>5.1}  [{}]", 100.0 * mean(v), seeds.join(", "));
    }
    let full = mean(&acc["full"]);
    let margins: Vec<(&str, f64)> = names[1..].iter().map(|n| (*n, 100.0 * (full - mean(&acc[n])))).collect();
    let pass = margins.iter().all(|(_, m)| *m > 0.0);
    let arm_a = margins[0].1;
    let text = margins
        .iter()
        .map(|(n, m)| format!("{n} {m:+.1}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pass,
        format!(
            "{SEEDS} seeds, full {:.1}%; margins (points): {text}; arm (a) target +10: {}",
            100.0 * full,
            if arm_a >= 10.0 { "met" } else { "missed" }
        ),
    )
}

fn criterion_selection(runs: &mut Runs) -> Outcome {
    let (mut raw, mut small, mut interp) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        raw.push(runs.full_accuracy(seed));
        let run = runs.get(seed);
        let n_raw = run.phase1.repository.len();
        let eval = |k: usize, n_exp: Option<usize>| {
            let mut cfg = run.cfg.clone();
            cfg.k = Some(k);
            cfg.n_exp = n_exp;
            augment_and_evaluate(&run.phase1, &run.dataset, &cfg, &VariantSource::from_config(&cfg))
                .unwrap()
                .report
                .accuracy
        };
        small.push(eval(SMALL_K, None));
        interp.push(eval(SELECT_K, Some(n_raw)));
    }
    let pct = |v: &[f64]| v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join(", ");
    println!("  criterion 7 per-seed accuracy (%):");
    println!("    raw [{}]; k={SMALL_K} [{}]; k={SELECT_K}+interp [{}]", pct(&raw), pct(&small), pct(&interp));
    let (r, s, i) = (100.0 * mean(&raw), 100.0 * mean(&small), 100.0 * mean(&interp));
    outcome(
        s <= i && (i - r).abs() <= 3.0,
        format!(
            "{SEEDS} seeds: select k={SMALL_K} {s:.1}%, select k={SELECT_K} + interpolate to raw size {i:.1}%, raw {r:.1}% (gap {:+.1})",
            i - r
        ),
    )
}

fn criterion_comparison(runs: &mut Runs) -> Outcome {
    let mut by_arm: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for seed in 0..COMPARISON_SEEDS {
        let run = runs.get(seed);
        let rows: Vec<TableRow> = run_comparison(&run.phase1, &run.dataset, &run.cfg).unwrap();
        for row in rows {
            if !order.contains(&row.name) {
                order.push(row.name.clone());
            }
            by_arm.entry(row.name).or_default().push(row.report.accuracy);
        }
    }
    let table: Vec<TableRow> = order
        .iter()
        .map(|name| TableRow {
            name: name.clone(),
            report: mean_report(&by_arm[name]),
        })
        .collect();
    for line in format_table(&table).lines() {
        println!("    {line}");
    }
    let (illu, all) = (mean(&by_arm["Illu-Aug"]), mean(&by_arm["All-Aug"]));
    outcome(
        illu >= all,
        format!("{COMPARISON_SEEDS} seeds: Illu-Aug {:.1}% vs All-Aug {:.1}%", 100.0 * illu, 100.0 * all),
    )
}

fn mean_report(v: &[f64]) -> sillnet_core::eval::EvalReport {
    sillnet_core::eval::EvalReport {
        accuracy: mean(v),
        per_class: Vec::new(),
        n_test: 0,
        protocol: Protocol::OneShot,
        seed: 0,
        config_digest: String::new(),
    }
}

fn criterion_protocol() -> Outcome {
    let base = benchmark_data(0);
    let mut cfg = benchmark_config(0);
    cfg.epochs_phase1 = 2;
    cfg.epochs_phase2 = 2;

    let ds = base.clone();
    let test_classes = ds.classes_in(Split::Test);
    let phase1 = train_separation(&ds, &cfg).unwrap();
    let (model, _) = train_augmentation(
        &phase1.model,
        &phase1.repository,
        &support_for(&ds),
        &cfg,
        &VariantSource::from_config(&cfg),
    )
    .unwrap();
    let reads = ds.access_log().reads(Split::Test) + ds.access_log().reads_of_classes(&test_classes);

    let traditional = generate_synthetic_dataset(&SyntheticConfig {
        n_classes: 6,
        samples_per_class: 5,
        image_size: 16,
        one_shot: false,
        ..Default::default()
    })
    .unwrap();
    let rejected = evaluate(&model, &traditional, Protocol::OneShot, &cfg).is_err();

    let (_, a) = run_pipeline(&base.clone(), &cfg).unwrap();
    let (_, b) = run_pipeline(&base.clone(), &cfg).unwrap();
    let gap = 100.0 * (a.report.accuracy - b.report.accuracy).abs();
    outcome(
        reads == 0 && rejected && gap <= 0.5,
        format!(
            "test-class photo reads during training {reads}; overlapping splits rejected: {rejected}; identical-seed accuracy {:.2}% vs {:.2}% (exact: {})",
            100.0 * a.report.accuracy,
            100.0 * b.report.accuracy,
            a.report == b.report
        ),
    )
}

fn luminance(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| {
            let [r, g, b] = img.pixel(y, x);
            (0.299 * r + 0.587 * g + 0.114 * b) as f64
        })
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt().max(1e-12)
}

fn criterion_transplant(runs: &mut Runs) -> Outcome {
    let run = runs.get(0);
    let (model, _) = train_real_reconstructor(&run.phase1.model, &run.dataset, &run.cfg).unwrap();
    let repo = &run.phase1.repository;
    let class = *run.dataset.classes_in(Split::Test).iter().next().unwrap();
    let template = run.dataset.template(class);
    let (i, j) = (0, repo.len() / 2);
    let a = transplant(&model, template, repo, i).unwrap();
    let b = transplant(&model, template, repo, j).unwrap();
    let distance = a.mean_abs_diff(&b) as f64;
    let t = luminance(template);
    let corr = correlation(&luminance(&a), &t).min(correlation(&luminance(&b), &t));
    outcome(
        distance > TRANSPLANT_DISTANCE_FLOOR && corr > TRANSPLANT_CORRELATION_FLOOR,
        format!(
            "repo features {i} and {j} on template {}: pixel distance {distance:.4} (floor {TRANSPLANT_DISTANCE_FLOOR}), layout correlation {corr:.3} (floor {TRANSPLANT_CORRELATION_FLOOR})",
            run.dataset.class_names()[class]
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let picked: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if !args.is_empty() && picked.is_empty() {
        println!("acceptance: no criterion numbers in filter {args:?}, skipping");
        return;
    }
    let wanted = |n: u32| picked.is_empty() || picked.contains(&n);

    let mut runs = Runs {
        seeds: BTreeMap::new(),
        full: BTreeMap::new(),
    };
    let mut results = Vec::new();
    let titles = [
        (1, "gradient correctness"),
        (2, "PIDA oracle equivalence"),
        (3, "mixup algebra"),
        (4, "repository round-trip"),
        (5, "k-means contracts"),
        (6, "synthetic one-shot ordering"),
        (7, "selection/interpolation pattern"),
        (8, "standard-augmentation comparison"),
        (9, "protocol invariants"),
        (10, "transplantation sanity"),
    ];
    for (n, title) in titles {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let out = match n {
            1 => criterion_gradients(),
            2 => criterion_pida_oracle(),
            3 => criterion_mix_algebra(),
            4 => criterion_repository_roundtrip(),
            5 => criterion_kmeans(),
            6 => criterion_ordering(&mut runs),
            7 => criterion_selection(&mut runs),
            8 => criterion_comparison(&mut runs),
            9 => criterion_protocol(),
            _ => criterion_transplant(&mut runs),
        };
        let secs = start.elapsed().as_secs_f64();
        let line = format!(
            "criterion {n:>2} {}: {title} ({secs:.1}s) {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        println!("{line}");
        results.push((n, out.pass, line));
    }
    println!("\nacceptance summary:");
    for (_, _, line) in &results {
        println!("  {line}");
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
