use std::collections::BTreeMap;

use sillnet_core::data::{generate_synthetic_dataset, Dataset, Split, SyntheticConfig};
use sillnet_core::eval::{evaluate, run_pipeline, support_for};
use sillnet_core::losses::bce_image_loss;
use sillnet_core::model::{load_checkpoint, save_checkpoint, SillModel, SplitFeature};
use sillnet_core::nn::{Module, TensorKind};
use sillnet_core::training::{
    train_augmentation, train_real_reconstructor, train_separation, SupportSet, TrainConfig,
    VariantSource,
};
use sillnet_core::Error;

fn dataset() -> Dataset {
    generate_synthetic_dataset(&SyntheticConfig {
        n_classes: 6,
        samples_per_class: 8,
        image_size: 12,
        test_classes: 2,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        channels: 4,
        encoder_width: 8,
        decoder_width: 8,
        localizer_width: 4,
        classifier_width0: 8,
        classifier_width1: 8,
        batch_size: 16,
        epochs_phase1: 3,
        epochs_phase2: 2,
        epochs_recon: 2,
        variants: 3,
        ..TrainConfig::default()
    }
}

fn params(model: &SillModel, prefix: &str) -> BTreeMap<String, Vec<f32>> {
    let mut out = BTreeMap::new();
    model.clone().visit("", &mut |name, kind, p| {
        if kind == TensorKind::Trainable && name.starts_with(prefix) {
            out.insert(name.to_string(), p.value.clone());
        }
    });
    out
}

fn initial(ds: &Dataset, cfg: &TrainConfig) -> SillModel {
    SillModel::new(cfg.model_config(ds.num_classes(), ds.image_size())).unwrap()
}

#[test]
fn separation_loss_decreases() {
    let ds = dataset();
    let mut cfg = config();
    cfg.epochs_phase1 = 4;
    let out = train_separation(&ds, &cfg).unwrap();
    let first = out.reports.first().unwrap();
    let last = out.reports.last().unwrap();
    assert!(last.total < first.total, "{first:?} -> {last:?}");
    assert!(last.exchange < first.exchange);
    for r in &out.reports {
        assert!(r.exchange > 0.0 && r.matching > 0.0 && r.template_recon > 0.0 && r.illumination < 0.0);
        let sum = r.exchange + r.matching + r.template_recon + r.illumination;
        assert!((r.total - sum).abs() < 1e-6);
    }
    assert_eq!(out.repository.len(), ds.len(Split::Train));
}

#[test]
fn disabled_terms_leave_their_parameters_untouched() {
    let ds = dataset();
    let mut cfg = config();
    cfg.matching = false;
    cfg.recon = false;
    cfg.illu = false;
    let init = initial(&ds, &cfg);
    let out = train_separation(&ds, &cfg).unwrap();
    for r in &out.reports {
        assert_eq!((r.matching, r.template_recon, r.illumination), (0.0, 0.0, 0.0));
    }
    assert_eq!(params(&out.model, "localizer"), params(&init, "localizer"));
    assert_eq!(params(&out.model, "template_decoder"), params(&init, "template_decoder"));
    assert_ne!(params(&out.model, "classifier"), params(&init, "classifier"));

    let mut cfg = config();
    cfg.exchange = false;
    let out = train_separation(&ds, &cfg).unwrap();
    assert!(out.reports.iter().all(|r| r.exchange == 0.0));
    assert_eq!(params(&out.model, "classifier"), params(&init, "classifier"));
}

#[test]
fn one_shot_training_never_reads_test_photographs() {
    let ds = dataset();
    let cfg = config();
    let test_classes = ds.classes_in(Split::Test);
    let out = train_separation(&ds, &cfg).unwrap();
    let (model, _) = train_augmentation(
        &out.model,
        &out.repository,
        &support_for(&ds),
        &cfg,
        &VariantSource::from_config(&cfg),
    )
    .unwrap();
    assert_eq!(ds.access_log().reads(Split::Test), 0);
    assert_eq!(ds.access_log().reads_of_classes(&test_classes), 0);
    assert!(ds.access_log().reads(Split::Train) > 0);
    evaluate(&model, &ds, ds.protocol(), &cfg).unwrap();
    assert_eq!(ds.access_log().reads(Split::Test), ds.len(Split::Test));
}

#[test]
fn augmentation_cardinality_and_variants() {
    let ds = dataset();
    let cfg = config();
    let out = train_separation(&ds, &cfg).unwrap();
    let support = support_for(&ds);
    let (model, report) = train_augmentation(
        &out.model,
        &out.repository,
        &support,
        &cfg,
        &VariantSource::from_config(&cfg),
    )
    .unwrap();
    assert!(model.classifier_ready);
    assert_eq!(report.features_per_epoch, 2 * out.repository.len());
    assert!(report.min_distinct_variants >= cfg.variants);
    assert_eq!(report.epoch_losses.len(), cfg.epochs_phase2);
    // frozen by default
    assert_eq!(params(&model, "encoder"), params(&out.model, "encoder"));

    let mut unfrozen = cfg.clone();
    unfrozen.freeze_encoder_phase2 = false;
    let (moved, _) =
        train_augmentation(&out.model, &out.repository, &support, &unfrozen, &VariantSource::Raw).unwrap();
    assert_ne!(params(&moved, "encoder"), params(&out.model, "encoder"));
}

#[test]
fn missing_support_class_is_named() {
    let ds = dataset();
    let cfg = config();
    let model = initial(&ds, &cfg);
    let out = train_separation(&ds, &cfg).unwrap();
    let mut support = support_for(&ds);
    let missing = *support.required.iter().next().unwrap();
    support.templates.remove(&missing);
    let err = train_augmentation(&model, &out.repository, &support, &cfg, &VariantSource::Raw).unwrap_err();
    match err {
        Error::MissingSupportClass(name) => assert_eq!(name, ds.class_names()[missing]),
        other => panic!("unexpected {other:?}"),
    }
    let empty = SupportSet::default();
    assert!(train_augmentation(&model, &out.repository, &empty, &cfg, &VariantSource::Raw).is_err());
}

#[test]
fn untrained_classifier_is_rejected() {
    let ds = dataset();
    let cfg = config();
    let model = initial(&ds, &cfg);
    assert!(matches!(
        evaluate(&model, &ds, ds.protocol(), &cfg),
        Err(Error::UntrainedClassifier)
    ));
}

#[test]
fn identical_seeds_reproduce_exactly() {
    let ds = dataset();
    let cfg = config();
    let (_, a) = run_pipeline(&ds, &cfg).unwrap();
    let (_, b) = run_pipeline(&ds, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(params(&a.model, ""), params(&b.model, ""));
}

#[test]
fn checkpoint_roundtrip_after_training() {
    let ds = dataset();
    let cfg = config();
    let (_, out) = run_pipeline(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&out.model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.classifier_ready);
    assert_eq!(params(&back, ""), params(&out.model, ""));
    assert_eq!(evaluate(&back, &ds, ds.protocol(), &cfg).unwrap(), out.report);
}

#[test]
fn real_reconstructor_trains_decoder_only_and_uses_illumination() {
    let ds = dataset();
    let mut cfg = config();
    cfg.epochs_recon = 40;
    let out = train_separation(&ds, &cfg).unwrap();
    let (model, report) = train_real_reconstructor(&out.model, &ds, &cfg).unwrap();
    assert!(report.epoch_losses.last() < report.epoch_losses.first(), "{report:?}");
    for prefix in ["encoder", "localizer", "template_decoder", "classifier"] {
        assert_eq!(params(&model, prefix), params(&out.model, prefix), "{prefix}");
    }

    // own illumination half reconstructs better than a shuffled one
    let n = ds.len(Split::Train);
    let split: Vec<SplitFeature> = (0..n)
        .map(|i| model.encode(ds.photo(Split::Train, i)).unwrap())
        .collect();
    let bce = |i: usize, illu_from: usize| {
        let f = SplitFeature::new(split[i].sem.clone(), split[illu_from].illu.clone()).unwrap();
        let img = model.reconstruct_real(&f).unwrap();
        bce_image_loss(img.data(), ds.photo(Split::Train, i).data()).unwrap().value as f64
    };
    let (mut own, mut shuffled) = (0.0, 0.0);
    for i in 0..n {
        own += bce(i, i);
        shuffled += bce(i, (i + n / 2 + 1) % n);
    }
    assert!(own < shuffled, "own {own} shuffled {shuffled}");
}
