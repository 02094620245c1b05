use std::path::{Path, PathBuf};
use std::{env, fs};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tool_affordance::dataset::split::{SplitSpec, SPLIT_SIDECAR};
use tool_affordance::dataset::{load_manifest, CachedExamples, ImageCache};
use tool_affordance::evaluation::{emit_report, evaluate, EvalReport, ResultsTable};
use tool_affordance::models::{
    build_fusion_model, load_checkpoint, read_checkpoint_header, BackboneFamily, BackboneSpec, FusionConfig,
    FusionVariant,
};
use tool_affordance::pipeline::{run_repro, split_and_write, PreparedData, ReproConfig};
use tool_affordance::synthgen::{self, generate_synthetic_dataset, MANIFEST_FILE};
use tool_affordance::training::{
    grid_search, train_with_validator, validation_metrics, write_run_dir, SearchSpace, TrainConfig,
};
use tool_affordance::{Error, TaskSpec};

use crate::config::{self, FileConfig};
use crate::manifest::RunManifest;
use crate::{CliError, EvalArgs, GridArgs, ModelArgs, ReportArgs, ReproArgs, SplitArgs, SynthArgs, TrainArgs, DATA_ROOT_ENV};

type CliResult<T = ()> = Result<T, CliError>;

/// Evaluation output of one checkpoint, as written by `eval`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: String,
    pub backbone: String,
    pub task: TaskSpec,
    pub checkpoint: PathBuf,
    pub report: EvalReport,
}

fn data_root(flag: Option<&Path>, file: &FileConfig) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| file.data.clone())
        .or_else(|| env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Usage(format!("no dataset given: pass --data or set {DATA_ROOT_ENV}")))
}

/// Directory holding the manifest, whether given the directory or the file.
fn dataset_root(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

fn resolve_model(args: &ModelArgs, file: &FileConfig, default_task: TaskSpec) -> CliResult<(TaskSpec, FusionConfig)> {
    let pick = |flag: &Option<String>, from_file: &Option<String>| flag.clone().or_else(|| from_file.clone());
    let task: TaskSpec = match pick(&args.task, &file.task) {
        Some(s) => s.parse()?,
        None => default_task,
    };
    let variant: FusionVariant = pick(&args.arch, &file.arch).as_deref().unwrap_or("1c1n").parse()?;
    let family: BackboneFamily = pick(&args.backbone, &file.backbone).as_deref().unwrap_or("tiny").parse()?;
    let mut spec = BackboneSpec::new(family);
    let kernel = args.kernel.or(file.model.kernel).unwrap_or(spec.first_block_kernel);
    let stride = args.stride.or(file.model.stride).unwrap_or(spec.first_block_stride);
    spec = spec.with_first_block(kernel, stride);
    let width = args.tiny_width.or(file.model.tiny_width);
    let emb = args.embedding_dim.or(file.model.embedding_dim);
    if family == BackboneFamily::Tiny {
        let (w, e) = (width.unwrap_or(spec.width), emb.unwrap_or(spec.embedding_dim));
        spec = spec.with_tiny_size(w, e);
    } else if width.is_some() || emb.is_some() {
        return Err(CliError::Usage("--tiny-width and --embedding-dim apply to the tiny backbone only".into()));
    }
    let fusion = FusionConfig::for_task(variant, spec, task);
    fusion.validate()?;
    fusion.check_task(task)?;
    Ok((task, fusion))
}

/// Makes sure `root` has split manifests, splitting 6:2:2 with seed 0 if not.
fn ensure_splits(root: &Path) -> CliResult {
    if root.join(SPLIT_SIDECAR).is_file() {
        return Ok(());
    }
    let manifest = root.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(CliError::Runtime(format!(
            "{} has neither split manifests nor {MANIFEST_FILE}",
            root.display()
        )));
    }
    eprintln!("no split found in {}; splitting 6:2:2 with seed 0", root.display());
    split_and_write(&manifest, &SplitSpec::default())?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, json).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn synth(a: SynthArgs) -> CliResult {
    synthgen::check_sizes(a.objects, a.reps)?;
    RunManifest::new("synth", json!({"objects": a.objects, "reps": a.reps, "seed": a.seed, "out": a.out}))
        .outputs([a.out.clone()])
        .seeds([a.seed])
        .write(&a.out)?;
    let manifest = generate_synthetic_dataset(&a.out, a.objects, a.reps, a.seed)?;
    let n = a.objects as usize * 16 * a.reps as usize;
    println!("wrote {n} samples ({} images) to {}", n * 6, manifest.display());
    Ok(())
}

fn parse_ratios(s: &str) -> CliResult<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("invalid --ratios `{s}`: {e}")))?;
    <[u32; 3]>::try_from(parts).map_err(|_| CliError::Usage(format!("--ratios needs three numbers, got `{s}`")))
}

pub fn split(a: SplitArgs) -> CliResult {
    let path = data_root(a.data.as_deref(), &FileConfig::default())?;
    let root = dataset_root(&path);
    let manifest = if path.is_file() { path.clone() } else { root.join(MANIFEST_FILE) };
    let spec = SplitSpec {
        ratios: parse_ratios(&a.ratios)?,
        seed: a.seed,
    };
    RunManifest::new("split", json!({"manifest": manifest, "ratios": spec.ratios, "seed": spec.seed}))
        .inputs([manifest.clone()])
        .outputs([root.clone()])
        .seeds([a.seed])
        .write(&root)?;
    let (train, val, test, _) = split_and_write(&manifest, &spec)?;
    println!("train {}  val {}  test {}", train.len(), val.len(), test.len());
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult {
    let file = config::load(a.model.config.as_deref())?;
    let (task, fusion) = resolve_model(&a.model, &file, TaskSpec::ToolsPlusActions)?;
    let root = dataset_root(&data_root(a.model.data.as_deref(), &file)?);
    let cfg = TrainConfig {
        learning_rate: a.lr.or(file.train.learning_rate).unwrap_or(1e-3),
        batch_size: a.batch_size.or(file.train.batch_size).unwrap_or(32),
        epochs: a.epochs.or(file.train.epochs).unwrap_or(150),
        seed: a.seed.or(file.train.seed).unwrap_or(0),
        ..Default::default()
    };
    cfg.validate()?;
    let out = a.out.clone().or(file.out.clone()).unwrap_or_else(|| {
        PathBuf::from("runs").join(format!(
            "{}_{}_{}_seed{}",
            fusion.variant.cli_name(),
            fusion.backbone.family.name(),
            task.cli_name(),
            cfg.seed
        ))
    });
    RunManifest::new(
        "train",
        json!({"task": task, "fusion": fusion, "train": cfg, "data": root, "out": out, "config_hash": fusion.hash()}),
    )
    .inputs([root.clone()])
    .outputs([out.clone()])
    .seeds([cfg.seed])
    .write(&out)?;

    ensure_splits(&root)?;
    let data = PreparedData::from_root(&root, &fusion.variant.views())?;
    let src = data.sources(task, &fusion)?;
    let model = build_fusion_model::<f32>(&fusion, cfg.seed)?;
    eprintln!(
        "training {} / {} / {} ({} parameters) on {} samples",
        fusion.variant.short_name(),
        fusion.backbone.family.name(),
        task.cli_name(),
        model.count_parameters(),
        data.train.len()
    );
    let outcome = train_with_validator(
        model,
        &src.train,
        &cfg,
        task,
        |m, _| validation_metrics(m, &src.val, task),
        |r| {
            eprintln!(
                "epoch {:>3}  loss {:.4}  train {:.4}  val {:.4}",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.val.selection()
            )
        },
    )?;
    let paths = write_run_dir(&out, &outcome, &cfg, task, &src.stats)?;
    let report = evaluate(&outcome.best, &src.test, task)?;
    write_json(
        &out.join("test_eval.json"),
        &EvalRecord {
            arch: fusion.variant.short_name().into(),
            backbone: fusion.backbone.family.name().into(),
            task,
            checkpoint: paths.best.clone(),
            report: report.clone(),
        },
    )?;
    println!(
        "best epoch {}  test accuracy {:.4}  run dir {}",
        outcome.history.best_epoch.unwrap_or(0),
        report.headline(),
        out.display()
    );
    Ok(())
}

pub fn grid(a: GridArgs) -> CliResult {
    let file = config::load(a.model.config.as_deref())?;
    let (task, fusion) = resolve_model(&a.model, &file, TaskSpec::Joint16)?;
    let root = dataset_root(&data_root(a.model.data.as_deref(), &file)?);
    let space = if a.reduced {
        SearchSpace::reduced(fusion.backbone.first_block_kernel, fusion.backbone.first_block_stride)
    } else {
        SearchSpace::full()
    };
    let epochs = a.epochs.or(file.train.epochs).unwrap_or(if a.reduced { 5 } else { 150 });
    if epochs == 0 || a.jobs == 0 {
        return Err(CliError::Usage("--epochs and --jobs must be at least 1".into()));
    }
    RunManifest::new(
        "grid",
        json!({"task": task, "fusion": fusion, "space": space, "epochs": epochs, "seed": a.seed,
               "jobs": a.jobs, "data": root, "out": a.out}),
    )
    .inputs([root.clone()])
    .outputs([a.out.clone()])
    .seeds([a.seed])
    .write(&a.out)?;

    ensure_splits(&root)?;
    let data = PreparedData::from_root(&root, &fusion.variant.views())?;
    let src = data.sources(task, &fusion)?;
    eprintln!("grid search: {} trials of {epochs} epochs", space.len());
    let result = grid_search::<f32>(&space, &fusion, task, &src.train, &src.val, epochs, a.seed, a.jobs)?;
    let csv = a.out.join("trials.csv");
    fs::write(&csv, result.to_csv()).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv.display())))?;
    write_json(&a.out.join("grid.json"), &result)?;
    match result.best_trial() {
        Some(t) => println!(
            "best: lr {} batch {} kernel {} stride {}  val accuracy {:.4}  ({})",
            t.point.learning_rate,
            t.point.batch_size,
            t.point.kernel,
            t.point.stride,
            t.val_accuracy.unwrap_or(0.0),
            csv.display()
        ),
        None => return Err(CliError::Runtime("every trial failed; see trials.csv".into())),
    }
    Ok(())
}

fn resolve_checkpoint(path: &Path) -> CliResult<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let with_ext = path.with_extension("ckpt");
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    Err(CliError::Runtime(format!("checkpoint {} not found", path.display())))
}

/// A manifest file, a split name (`root/test` for `root/test.jsonl`), or a
/// dataset root whose test split (or full manifest) is used.
fn resolve_manifest(path: &Path) -> CliResult<PathBuf> {
    let candidates = [
        path.to_path_buf(),
        path.with_extension("jsonl"),
        path.join("test.jsonl"),
        path.join(MANIFEST_FILE),
    ];
    candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Runtime(format!("no manifest found at {}", path.display())))
}

pub fn eval(a: EvalArgs) -> CliResult {
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let header = read_checkpoint_header(&ckpt)?;
    let task = match (&a.task, header.task) {
        (Some(s), _) => s.parse::<TaskSpec>()?,
        (None, Some(t)) => t,
        (None, None) => return Err(CliError::Usage("checkpoint stores no task; pass --task".into())),
    };
    header.config.check_task(task)?;
    let stats = header
        .norm_stats
        .clone()
        .ok_or_else(|| CliError::Runtime("checkpoint stores no normalization statistics".into()))?;
    let manifest = resolve_manifest(&data_root(a.data.as_deref(), &FileConfig::default())?)?;
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join(format!("eval_{stem}")));
    RunManifest::new(
        "eval",
        json!({"checkpoint": ckpt, "manifest": manifest, "task": task, "config_hash": header.config_hash, "out": out}),
    )
    .inputs([ckpt.clone(), manifest.clone()])
    .outputs([out.clone()])
    .write(&out)?;

    let dataset = load_manifest(&manifest)?;
    let cache = ImageCache::load(&dataset, &header.config.variant.views())?;
    let src = CachedExamples::new(&dataset, &cache, task, &header.config, stats)?;
    let (model, _) = load_checkpoint::<f32>(&ckpt, None)?;
    let report = evaluate(&model, &src, task)?;
    let record = EvalRecord {
        arch: header.config.variant.short_name().into(),
        backbone: header.config.backbone.family.name().into(),
        task,
        checkpoint: ckpt,
        report,
    };
    write_json(&out.join("eval.json"), &record)?;
    let mut table = ResultsTable::new(format!("{} test accuracy (%)", task.cli_name()));
    table.insert(&record.arch, &record.backbone, vec![record.report.headline()], &header.config_hash);
    emit_report(&table, &[(format!("{}_{}", record.arch, record.backbone), record.report.clone())], &out)?;
    let show = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{} samples  tool {}  action {}  joint {}  ({})",
        record.report.samples,
        show(record.report.tool_accuracy),
        show(record.report.action_accuracy),
        show(record.report.joint_accuracy),
        out.display()
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult {
    RunManifest::new("report", json!({"inputs": a.inputs, "out": a.out}))
        .inputs(a.inputs.clone())
        .outputs([a.out.clone()])
        .write(&a.out)?;
    let mut groups: Vec<(String, String, String, Vec<f64>, EvalReport)> = Vec::new();
    let mut tasks = Vec::new();
    for path in &a.inputs {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let rec: EvalRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{} is not an eval record: {e}", path.display())))?;
        let hash = rec.report.config_hash.clone().unwrap_or_default();
        if !tasks.contains(&rec.task) {
            tasks.push(rec.task);
        }
        match groups.iter_mut().find(|g| g.0 == rec.arch && g.1 == rec.backbone && g.2 == hash) {
            Some(g) => g.3.push(rec.report.headline()),
            None => groups.push((rec.arch, rec.backbone, hash, vec![rec.report.headline()], rec.report)),
        }
    }
    let names: Vec<&str> = tasks.iter().map(|t| t.cli_name()).collect();
    let mut table = ResultsTable::new(format!("{} test accuracy (%)", names.join(", ")));
    let mut evals = Vec::new();
    for (arch, backbone, hash, values, first) in groups {
        table.insert(&arch, &backbone, values, &hash);
        evals.push((format!("{arch}_{backbone}"), first));
    }
    emit_report(&table, &evals, &a.out)?;
    print!("{}", table.render_text());
    Ok(())
}

pub fn repro(a: ReproArgs) -> CliResult {
    let mut cfg = if a.full {
        eprintln!(
            "warning: --full trains 5 architectures × 3 residual backbones × 5 seeds for 150 epochs each; \
             expect days to weeks of CPU time"
        );
        ReproConfig::full()
    } else {
        ReproConfig::desk()
    };
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(o) = a.objects {
        cfg.n_objects = o;
    }
    if let Some(r) = a.reps {
        cfg.n_reps = r;
    }
    cfg.ablation = !a.no_ablation;
    cfg.jobs = a.jobs.max(1);
    cfg.validate()?;
    synthgen::check_sizes(cfg.n_objects, cfg.n_reps)?;
    RunManifest::new("repro", serde_json::to_value(&cfg).expect("config serializes"))
        .outputs([a.out.clone()])
        .seeds(cfg.seeds.clone())
        .write(&a.out)?;
    let outcome = run_repro(&cfg, &a.out, &mut |msg: &str| eprintln!("{msg}")).map_err(|e| match e {
        Error::Stage { .. } => CliError::Core(e),
        other => CliError::Core(other),
    })?;
    print!("{}", outcome.table.render_text());
    if let Some(t) = &outcome.ablation {
        println!();
        print!("{}", t.render_text());
    }
    println!("report written to {}", outcome.report.table_text.display());
    Ok(())
}
