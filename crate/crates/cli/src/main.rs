//! `sillnet`: separation, repository, augmentation and evaluation commands.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
//! command fails at run time.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sillnet_core::data::{generate_synthetic_dataset, Dataset, Image, Protocol, SyntheticConfig};
use sillnet_core::eval::{
    evaluate, evaluate_with, format_table, predict, run_ablation, run_comparison, support_for,
    support_semantics, transplant_to_png, Predictor,
};
use sillnet_core::model::{load_checkpoint, save_checkpoint, SillModel};
use sillnet_core::repository::IlluminationRepository;
use sillnet_core::training::{
    build_repository, train_augmentation, train_real_reconstructor, train_separation,
    SeparationOutcome, TrainConfig, VariantSource,
};
use sillnet_core::{Error, Result};

use manifest::{digest_path, now_unix, RunManifest};

const SEED_ENV: &str = "SILLNET_SEED";
const DATASET_META: &str = "dataset.json";

#[derive(Debug, Parser)]
#[command(name = "sillnet", version, about = "Semantic/illumination separation and illumination feature augmentation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON file with training configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed; takes precedence over the config file and SILLNET_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory receiving every output and the manifest.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory (as written by `synth-data` or the export layout).
    #[arg(long)]
    data: PathBuf,
    /// Image side length; read from the dataset's metadata when absent.
    #[arg(long)]
    image_size: Option<usize>,
    /// traditional | one-shot | cross-domain; read from metadata when absent.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic template/photograph dataset.
    SynthData {
        /// JSON generator settings; flags below override it.
        #[arg(long)]
        synth: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        test_classes: Option<usize>,
        /// Per-class train/test split over all classes.
        #[arg(long)]
        traditional: bool,
    },
    /// Train the separation phase; writes the model and the raw repository.
    TrainSeparate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Encode every training photograph into an illumination repository.
    BuildRepo {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Replace a repository by its k-means centers.
    RepoSelect {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Draw interpolated features from a repository.
    RepoExpand {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long = "n-exp")]
        n_exp: usize,
    },
    /// Train the classifier on support semantics mixed with banked illumination.
    TrainAugment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        repo: PathBuf,
    },
    /// Classify image files.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score a model on the test split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Nearest rectified support template instead of the classifier.
        #[arg(long)]
        nn: bool,
    },
    /// Full method plus one run per disabled component.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Standard augmentation arms against illumination augmentation.
    CompareAug {
        #[command(flatten)]
        data: DataArgs,
        /// Separation-phase model to share; trained from scratch when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Raw repository matching `--model`; rebuilt when absent.
        #[arg(long)]
        repo: Option<PathBuf>,
    },
    /// Fit the real-image decoder on a frozen encoder.
    TrainRecon {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Decode a template's semantic half with a banked illumination feature.
    Transplant {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        index: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "synth-data",
            Command::TrainSeparate { .. } => "train-separate",
            Command::BuildRepo { .. } => "build-repo",
            Command::RepoSelect { .. } => "repo-select",
            Command::RepoExpand { .. } => "repo-expand",
            Command::TrainAugment { .. } => "train-augment",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::CompareAug { .. } => "compare-aug",
            Command::TrainRecon { .. } => "train-recon",
            Command::Transplant { .. } => "transplant",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    image_size: usize,
    protocol: Protocol,
}

/// Config file, then `--set`, then SILLNET_SEED, then `--seed`.
fn resolve_config(global: &Global) -> Result<TrainConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    for kv in &global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_protocol(s: &str) -> Result<Protocol> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown protocol `{s}`")))
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let meta_path = args.data.join(DATASET_META);
    let meta: Option<DatasetMeta> = match fs::read(&meta_path) {
        Ok(raw) => Some(serde_json::from_slice(&raw)?),
        Err(_) => None,
    };
    let image_size = args
        .image_size
        .or(meta.as_ref().map(|m| m.image_size))
        .ok_or_else(|| Error::Config("--image-size is required without dataset metadata".into()))?;
    let protocol = match &args.protocol {
        Some(p) => parse_protocol(p)?,
        None => meta.map(|m| m.protocol).unwrap_or(Protocol::OneShot),
    };
    Dataset::load_exported(&args.data, image_size, protocol)
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

struct Run {
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }
}

fn separation_from(model: SillModel, dataset: &Dataset, repo: Option<&Path>, cfg: &TrainConfig) -> Result<SeparationOutcome> {
    let repository = match repo {
        Some(p) => IlluminationRepository::load(p)?,
        None => build_repository(&model, dataset)?.with_origin(dataset.name.clone(), cfg.seed),
    };
    Ok(SeparationOutcome {
        model,
        repository,
        reports: Vec::new(),
    })
}

fn execute(command: &Command, cfg: &TrainConfig, run: &mut Run) -> Result<()> {
    match command {
        Command::SynthData {
            synth,
            classes,
            samples_per_class,
            image_size,
            test_classes,
            traditional,
        } => {
            let mut sc: SyntheticConfig = match synth {
                Some(p) => {
                    run.inputs.push(p.clone());
                    let raw = fs::read(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            sc.seed = cfg.seed;
            if let Some(v) = classes {
                sc.n_classes = *v;
            }
            if let Some(v) = samples_per_class {
                sc.samples_per_class = *v;
            }
            if let Some(v) = image_size {
                sc.image_size = *v;
            }
            if let Some(v) = test_classes {
                sc.test_classes = *v;
            }
            if *traditional {
                sc.one_shot = false;
            }
            let ds = generate_synthetic_dataset(&sc)?;
            let dir = run.output("data");
            ds.export(&dir)?;
            write_json(
                &dir.join(DATASET_META),
                &DatasetMeta {
                    image_size: sc.image_size,
                    protocol: ds.protocol(),
                },
            )?;
            write_json(&dir.join("synthetic.json"), &sc)?;
            emit(json!({
                "event": "dataset",
                "classes": ds.num_classes(),
                "train": ds.len(sillnet_core::data::Split::Train),
                "test": ds.len(sillnet_core::data::Split::Test),
                "path": dir,
            }));
        }
        Command::TrainSeparate { data } => {
            run.inputs.push(data.data.clone());
            let ds = load_data(data)?;
            let mut cfg = cfg.clone();
            if cfg.checkpoint.is_none() {
                cfg.checkpoint = Some(run.out.join("model.ckpt").to_string_lossy().into_owned());
            }
            let outcome = train_separation(&ds, &cfg)?;
            for (epoch, r) in outcome.reports.iter().enumerate() {
                emit(json!({"event": "epoch", "phase": "separation", "epoch": epoch, "loss": r}));
            }
            save_checkpoint(&outcome.model, run.output("model.ckpt"))?;
            outcome.repository.save(run.output("repo.silr"))?;
            emit(json!({"event": "repository", "features": outcome.repository.len()}));
        }
        Command::BuildRepo { data, model } => {
            run.inputs.extend([data.data.clone(), model.clone()]);
            let ds = load_data(data)?;
            let m = load_checkpoint(model)?;
            let repo = build_repository(&m, &ds)?.with_origin(ds.name.clone(), cfg.seed);
            repo.save(run.output("repo.silr"))?;
            emit(json!({"event": "repository", "features": repo.len()}));
        }
        Command::RepoSelect { repo, k } => {
            run.inputs.push(repo.clone());
            let r = IlluminationRepository::load(repo)?.select_kmeans(*k, cfg.seed)?;
            r.save(run.output("repo.silr"))?;
            emit(json!({"event": "repository", "features": r.len()}));
        }
        Command::RepoExpand { repo, n_exp } => {
            run.inputs.push(repo.clone());
            let r = IlluminationRepository::load(repo)?.expand_interpolate(*n_exp, cfg.seed)?;
            r.save(run.output("repo.silr"))?;
            emit(json!({"event": "repository", "features": r.len()}));
        }
        Command::TrainAugment { data, model, repo } => {
            run.inputs.extend([data.data.clone(), model.clone(), repo.clone()]);
            let ds = load_data(data)?;
            let m = load_checkpoint(model)?;
            let r = IlluminationRepository::load(repo)?;
            let (trained, report) =
                train_augmentation(&m, &r, &support_for(&ds), cfg, &VariantSource::from_config(cfg))?;
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                emit(json!({"event": "epoch", "phase": "augmentation", "epoch": epoch, "loss": loss}));
            }
            save_checkpoint(&trained, run.output("model.ckpt"))?;
        }
        Command::Infer { model, images } => {
            run.inputs.push(model.clone());
            run.inputs.extend(images.iter().cloned());
            let m = load_checkpoint(model)?;
            let s = m.config.image_size;
            let mut rows = Vec::new();
            for path in images {
                let img = Image::load(path)?.resize(s, s);
                let class = predict(&m, &img, cfg.r)?;
                let row = json!({"event": "prediction", "image": path, "class": class});
                emit(row.clone());
                rows.push(row);
            }
            write_json(&run.output("predictions.json"), &rows)?;
        }
        Command::Evaluate { data, model, nn } => {
            run.inputs.extend([data.data.clone(), model.clone()]);
            let ds = load_data(data)?;
            let m = load_checkpoint(model)?;
            let report = if *nn {
                let sems = support_semantics(&m, &support_for(&ds))?;
                evaluate_with(&m, &ds, ds.protocol(), cfg, Predictor::NearestNeighbor(&sems))?
            } else {
                evaluate(&m, &ds, ds.protocol(), cfg)?
            };
            write_json(&run.output("eval.json"), &report)?;
            emit(json!({"event": "eval", "accuracy": report.accuracy, "n_test": report.n_test}));
        }
        Command::Ablate { data } => {
            run.inputs.push(data.data.clone());
            let ds = load_data(data)?;
            let rows = run_ablation(cfg, &ds)?;
            for r in &rows {
                emit(json!({"event": "ablation", "name": r.name, "accuracy": r.report.accuracy}));
            }
            write_json(&run.output("ablation.json"), &rows)?;
            let txt = run.output("ablation.txt");
            fs::write(&txt, format_table(&rows)).map_err(|e| Error::io(&txt, e))?;
        }
        Command::CompareAug { data, model, repo } => {
            run.inputs.push(data.data.clone());
            run.inputs.extend(model.iter().cloned());
            run.inputs.extend(repo.iter().cloned());
            let ds = load_data(data)?;
            let phase1 = match model {
                Some(p) => separation_from(load_checkpoint(p)?, &ds, repo.as_deref(), cfg)?,
                None => train_separation(&ds, cfg)?,
            };
            let rows = run_comparison(&phase1, &ds, cfg)?;
            for r in &rows {
                emit(json!({"event": "comparison", "name": r.name, "accuracy": r.report.accuracy}));
            }
            write_json(&run.output("comparison.json"), &rows)?;
            let txt = run.output("comparison.txt");
            fs::write(&txt, format_table(&rows)).map_err(|e| Error::io(&txt, e))?;
        }
        Command::TrainRecon { data, model } => {
            run.inputs.extend([data.data.clone(), model.clone()]);
            let ds = load_data(data)?;
            let m = load_checkpoint(model)?;
            let (trained, report) = train_real_reconstructor(&m, &ds, cfg)?;
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                emit(json!({"event": "epoch", "phase": "real-recon", "epoch": epoch, "loss": loss}));
            }
            save_checkpoint(&trained, run.output("model.ckpt"))?;
        }
        Command::Transplant {
            model,
            repo,
            template,
            index,
        } => {
            run.inputs.extend([model.clone(), repo.clone(), template.clone()]);
            let m = load_checkpoint(model)?;
            let r = IlluminationRepository::load(repo)?;
            let s = m.config.image_size;
            let t = Image::load(template)?.resize(s, s);
            let path = run.output(&format!("transplant_{index}.png"));
            transplant_to_png(&m, &t, &r, *index, &path)?;
            emit(json!({"event": "transplant", "index": index, "path": path}));
        }
    }
    Ok(())
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Config(_))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match resolve_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let started = now_unix();
    let out = cli.global.out.clone();
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let mut run = Run {
        out: out.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Err(e) = execute(&cli.command, &cfg, &mut run) {
        eprintln!("error: {e}");
        return ExitCode::from(if is_usage(&e) { 1 } else { 2 });
    }
    let inputs = match run.inputs.iter().map(|p| digest_path(p)).collect::<Result<Vec<_>>>() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        argv,
        config_digest: cfg.digest(),
        seed: cfg.seed,
        config: cfg,
        out_dir: out,
        inputs,
        outputs: run.outputs,
        started_unix: started,
        finished_unix: now_unix(),
    };
    match manifest.write() {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
