//! Prediction, evaluation, and the ablation / augmentation comparison
//! harnesses.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{AugPolicy, Family};
use crate::data::{Dataset, Image, Protocol, Split};
use crate::error::{Error, Result};
use crate::features::{check_r, mix_into};
use crate::model::{FeatureGrid, SillModel, SplitFeature};
use crate::repository::IlluminationRepository;
use crate::tensor::Tensor;
use crate::training::{
    train_augmentation, train_separation, AugmentationReport, SeparationOutcome, SupportSet,
    TrainConfig, VariantSource,
};

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Mixes each item's own halves, the same rule the classifier sees in
/// augmentation training.
pub fn self_mixed(z: &Tensor, channels: usize, r: f32) -> Tensor {
    let (n, _, h, w) = z.dims4();
    let half = channels * h * w;
    let mut out = Tensor::zeros(&[n, channels, h, w]);
    for i in 0..n {
        let item = z.item(i);
        mix_into(&item[..half], &item[half..], r, out.item_mut(i));
    }
    out
}

fn check_ready(model: &SillModel) -> Result<()> {
    if model.classifier_ready {
        Ok(())
    } else {
        Err(Error::UntrainedClassifier)
    }
}

pub fn predict_batch(model: &SillModel, images: &[&Image], r: f32) -> Result<Vec<usize>> {
    check_ready(model)?;
    check_r(r)?;
    let m = model.config.classes;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let z = model.encode_batch(chunk)?;
        let logits = model.classify_batch(&self_mixed(&z, model.channels(), r));
        if !logits.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        out.extend(logits.data().chunks(m).map(argmax));
    }
    Ok(out)
}

pub fn predict(model: &SillModel, image: &Image, r: f32) -> Result<usize> {
    Ok(predict_batch(model, &[image], r)?[0])
}

/// Rectified semantic halves of the support templates, one per entry.
pub fn support_semantics(model: &SillModel, support: &SupportSet) -> Result<Vec<(usize, FeatureGrid)>> {
    support
        .entries()
        .into_iter()
        .map(|(label, t)| {
            let split = model.encode(t)?;
            Ok((label, model.rectify(&split.sem)?.0))
        })
        .collect()
}

/// Class of the nearest support grid; equal distances go to the lower class.
pub fn nearest(query: &FeatureGrid, support: &[(usize, FeatureGrid)]) -> Result<usize> {
    if support.is_empty() {
        return Err(Error::Empty("support semantics".into()));
    }
    let mut best: Option<(f64, usize)> = None;
    for (label, grid) in support {
        if grid.shape() != query.shape() {
            return Err(Error::Shape(format!(
                "support grid {:?} vs query {:?}",
                grid.shape(),
                query.shape()
            )));
        }
        let d = query.l2_distance(grid);
        best = match best {
            Some((bd, bl)) if bd < d || (bd == d && bl <= *label) => Some((bd, bl)),
            _ => Some((d, *label)),
        };
    }
    Ok(best.expect("nonempty").1)
}

pub fn predict_nn(model: &SillModel, image: &Image, support: &[(usize, FeatureGrid)]) -> Result<usize> {
    if support.is_empty() {
        return Err(Error::Empty("support semantics".into()));
    }
    let split = model.encode(image)?;
    nearest(&model.rectify(&split.sem)?.0, support)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub n_test: usize,
    pub protocol: Protocol,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalReport {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        class_names: &[String],
        protocol: Protocol,
        seed: u64,
        config_digest: String,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut per_class: Vec<ClassAccuracy> = Vec::new();
        let mut by_class = std::collections::BTreeMap::<usize, (usize, usize)>::new();
        for (&y, &p) in labels.iter().zip(predictions) {
            let e = by_class.entry(y).or_default();
            e.1 += 1;
            if y == p {
                e.0 += 1;
            }
        }
        let mut correct = 0;
        for (class, (c, t)) in by_class {
            correct += c;
            per_class.push(ClassAccuracy {
                class,
                name: class_names.get(class).cloned().unwrap_or_else(|| class.to_string()),
                correct: c,
                total: t,
                accuracy: c as f64 / t as f64,
            });
        }
        let n = labels.len();
        Ok(Self {
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            per_class,
            n_test: n,
            protocol,
            seed,
            config_digest,
        })
    }
}

/// How test photographs are classified.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// The trained classifier on self-mixed features.
    Classifier,
    /// Nearest rectified support semantics.
    NearestNeighbor(&'a [(usize, FeatureGrid)]),
}

/// Scores the model on the test split. Leaves the model untouched.
pub fn evaluate(
    model: &SillModel,
    dataset: &Dataset,
    protocol: Protocol,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    evaluate_with(model, dataset, protocol, cfg, Predictor::Classifier)
}

pub fn evaluate_with(
    model: &SillModel,
    dataset: &Dataset,
    protocol: Protocol,
    cfg: &TrainConfig,
    predictor: Predictor<'_>,
) -> Result<EvalReport> {
    if protocol == Protocol::OneShot {
        dataset.check_disjoint()?;
    }
    let n = dataset.len(Split::Test);
    let images: Vec<&Image> = (0..n).map(|i| dataset.photo(Split::Test, i)).collect();
    let predictions = match predictor {
        Predictor::Classifier => predict_batch(model, &images, cfg.r)?,
        Predictor::NearestNeighbor(support) => images
            .iter()
            .map(|im| predict_nn(model, im, support))
            .collect::<Result<Vec<_>>>()?,
    };
    EvalReport::from_predictions(
        &dataset.labels(Split::Test),
        &predictions,
        dataset.class_names(),
        protocol,
        cfg.seed,
        cfg.digest(),
    )
}

/// Classes the augmentation phase must learn: the test classes under the
/// one-shot protocol, every class otherwise.
pub fn support_for(dataset: &Dataset) -> SupportSet {
    match dataset.protocol() {
        Protocol::OneShot => SupportSet::from_templates(dataset, dataset.classes_in(Split::Test)),
        _ => SupportSet::from_templates(dataset, 0..dataset.num_classes()),
    }
}

/// Optional k-means selection followed by optional interpolation.
pub fn prepare_repository(raw: &IlluminationRepository, cfg: &TrainConfig) -> Result<IlluminationRepository> {
    let mut repo = raw.clone();
    if let Some(k) = cfg.k {
        repo = repo.select_kmeans(k, cfg.seed)?;
    }
    if let Some(n) = cfg.n_exp {
        repo = repo.expand_interpolate(n, cfg.seed)?;
    }
    Ok(repo)
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub model: SillModel,
    pub report: EvalReport,
    pub augmentation: AugmentationReport,
}

/// Augmentation training from a finished separation run, then evaluation.
pub fn augment_and_evaluate(
    phase1: &SeparationOutcome,
    dataset: &Dataset,
    cfg: &TrainConfig,
    source: &VariantSource,
) -> Result<AugmentOutcome> {
    let repo = prepare_repository(&phase1.repository, cfg)?;
    let support = support_for(dataset);
    let (model, augmentation) = train_augmentation(&phase1.model, &repo, &support, cfg, source)?;
    let report = evaluate(&model, dataset, dataset.protocol(), cfg)?;
    Ok(AugmentOutcome {
        model,
        report,
        augmentation,
    })
}

/// Separation, repository recipe, augmentation and evaluation.
pub fn run_pipeline(dataset: &Dataset, cfg: &TrainConfig) -> Result<(SeparationOutcome, AugmentOutcome)> {
    let phase1 = train_separation(dataset, cfg)?;
    let out = augment_and_evaluate(&phase1, dataset, cfg, &VariantSource::from_config(cfg))?;
    Ok((phase1, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub report: EvalReport,
}

pub const ABLATION_ROWS: [&str; 6] = [
    "full",
    "no-exchange",
    "no-match",
    "no-recon",
    "no-illu",
    "no-template-processing",
];

/// The full method plus one row per disabled component, all on the same
/// seed. The template-processing row reuses the full separation run since
/// that switch only affects augmentation.
pub fn run_ablation(base: &TrainConfig, dataset: &Dataset) -> Result<Vec<TableRow>> {
    let full_phase1 = train_separation(dataset, base)?;
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for name in ABLATION_ROWS {
        let mut cfg = base.clone();
        match name {
            "no-exchange" => cfg.exchange = false,
            "no-match" => cfg.matching = false,
            "no-recon" => cfg.recon = false,
            "no-illu" => cfg.illu = false,
            "no-template-processing" => cfg.template_processing = false,
            _ => {}
        }
        let own;
        let phase1 = if cfg.toggles() == base.toggles() {
            &full_phase1
        } else {
            own = train_separation(dataset, &cfg)?;
            &own
        };
        let out = augment_and_evaluate(phase1, dataset, &cfg, &VariantSource::from_config(&cfg))?;
        log::info!("ablation {name}: accuracy {:.4}", out.report.accuracy);
        rows.push(TableRow {
            name: name.to_string(),
            report: out.report,
        });
    }
    Ok(rows)
}

/// Six single-family arms, all families together, and illumination
/// augmentation with template processing off. Standard arms mix each
/// support feature with its own illumination half.
pub fn comparison_arms(base: &TrainConfig) -> Vec<(String, TrainConfig, VariantSource)> {
    let mut standard = base.clone();
    standard.illumination_augmentation = false;
    let mut arms: Vec<(String, TrainConfig, VariantSource)> = Family::ALL
        .iter()
        .map(|&f| {
            (
                f.label().to_string(),
                standard.clone(),
                VariantSource::Standard(AugPolicy::single(f)),
            )
        })
        .collect();
    arms.push(("All-Aug".into(), standard, VariantSource::Standard(AugPolicy::all())));
    let mut illu = base.clone();
    illu.illumination_augmentation = true;
    illu.template_processing = false;
    arms.push(("Illu-Aug".into(), illu, VariantSource::Raw));
    arms
}

/// Every arm trains augmentation from the same separation run.
pub fn run_comparison(
    phase1: &SeparationOutcome,
    dataset: &Dataset,
    base: &TrainConfig,
) -> Result<Vec<TableRow>> {
    comparison_arms(base)
        .into_iter()
        .map(|(name, cfg, source)| {
            let out = augment_and_evaluate(phase1, dataset, &cfg, &source)?;
            log::info!("comparison {name}: accuracy {:.4}", out.report.accuracy);
            Ok(TableRow {
                name,
                report: out.report,
            })
        })
        .collect()
}

/// Aligned-column text rendering of a results table.
pub fn format_table(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>8}  {:>6}", "method", "accuracy", "n_test");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>8.2}  {:>6}",
            r.name,
            100.0 * r.report.accuracy,
            r.report.n_test
        );
    }
    s
}

/// Decodes a support template's semantic half with a banked illumination
/// feature.
pub fn transplant(
    model: &SillModel,
    template: &Image,
    repo: &IlluminationRepository,
    index: usize,
) -> Result<Image> {
    let illu = repo.get(index)?.clone();
    let sem = model.encode(template)?.sem;
    model.reconstruct_real(&SplitFeature::new(sem, illu)?)
}

pub fn transplant_to_png(
    model: &SillModel,
    template: &Image,
    repo: &IlluminationRepository,
    index: usize,
    path: impl AsRef<Path>,
) -> Result<Image> {
    let img = transplant(model, template, repo, index)?;
    img.save_png(path)?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[3.0, 1.0, 3.0]), 0);
        let shifted: Vec<f32> = [0.1, 2.0, -1.0].iter().map(|v| v + 7.5).collect();
        assert_eq!(argmax(&shifted), 1);
    }

    fn grid(rng: &mut ChaCha8Rng) -> FeatureGrid {
        FeatureGrid::new(2, 3, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn nearest_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let support: Vec<(usize, FeatureGrid)> =
                (0..8).map(|_| (rng.random_range(0..5), grid(&mut rng))).collect();
            let q = grid(&mut rng);
            // independent scan: squared distances, then lowest class among minima
            let d: Vec<f64> = support
                .iter()
                .map(|(_, g)| {
                    g.values
                        .iter()
                        .zip(&q.values)
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum()
                })
                .collect();
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let expected = support
                .iter()
                .zip(&d)
                .filter(|(_, &di)| di == min)
                .map(|((l, _), _)| *l)
                .min()
                .unwrap();
            assert_eq!(nearest(&q, &support).unwrap(), expected);
        }
    }

    #[test]
    fn nearest_ties_and_exact_hits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = grid(&mut rng);
        let b = grid(&mut rng);
        assert_eq!(nearest(&a, &[(3, b.clone()), (1, a.clone())]).unwrap(), 1);
        assert_eq!(nearest(&a, &[(4, a.clone()), (2, a.clone())]).unwrap(), 2);
        assert!(nearest(&a, &[]).is_err());
    }

    #[test]
    fn report_bookkeeping() {
        let names: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let r = EvalReport::from_predictions(&[0, 0, 1, 2, 2], &[0, 1, 1, 2, 0], &names, Protocol::OneShot, 1, "x".into())
            .unwrap();
        assert!((r.accuracy - 0.6).abs() < 1e-12);
        assert_eq!(r.per_class.iter().map(|c| c.total).sum::<usize>(), r.n_test);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"one-shot\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn random_guessing_scores_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let guesses: Vec<usize> = (0..1000).map(|_| rng.random_range(0..10)).collect();
        let r = EvalReport::from_predictions(&labels, &guesses, &[], Protocol::Traditional, 0, String::new()).unwrap();
        assert!((r.accuracy - 0.1).abs() <= 0.03, "{}", r.accuracy);
    }

    #[test]
    fn comparison_has_eight_arms() {
        let arms = comparison_arms(&TrainConfig::default());
        assert_eq!(arms.len(), 8);
        let names: Vec<&str> = arms.iter().map(|a| a.0.as_str()).collect();
        assert_eq!(&names[6..], ["All-Aug", "Illu-Aug"]);
        assert!(arms[..7].iter().all(|a| !a.1.illumination_augmentation));
        assert!(!arms[7].1.template_processing);
        assert!(arms.iter().all(|a| a.1.seed == 0));
    }
}
