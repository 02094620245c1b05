//! End-to-end workflows shared by the command line and the test suites:
//! cached split data and the desk-scale reproduction sweep.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::labels::ViewKey;
use crate::dataset::split::SplitSpec;
use crate::dataset::{load_manifest, load_splits, split_dataset, write_splits, CachedExamples, Dataset, ImageCache, NormStats};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, EvalReport, ReportFiles, ResultsTable};
use crate::models::{BackboneFamily, BackboneSpec, FusionConfig, FusionVariant};
use crate::synthgen::generate_synthetic_dataset;
use crate::task::TaskSpec;
use crate::training::{run_seeds, SeedRun, TrainConfig};

/// Train, validation and test partitions with their resized images in memory.
#[derive(Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    caches: [ImageCache; 3],
}

/// Batch sources for one (task, fusion) pair, standardized with statistics
/// of the training images the fusion variant consumes.
#[derive(Clone, Debug)]
pub struct Sources<'a> {
    pub train: CachedExamples<'a>,
    pub val: CachedExamples<'a>,
    pub test: CachedExamples<'a>,
    pub stats: NormStats,
}

impl PreparedData {
    pub fn new(train: Dataset, val: Dataset, test: Dataset, views: &[ViewKey]) -> Result<Self> {
        let caches = [
            ImageCache::load(&train, views)?,
            ImageCache::load(&val, views)?,
            ImageCache::load(&test, views)?,
        ];
        Ok(PreparedData {
            train,
            val,
            test,
            caches,
        })
    }

    /// Loads the split manifests written under `root`.
    pub fn from_root(root: &Path, views: &[ViewKey]) -> Result<Self> {
        let (train, val, test, _) = load_splits(root)?;
        Self::new(train, val, test, views)
    }

    pub fn views(&self) -> &[ViewKey] {
        self.caches[0].views()
    }

    /// Per-channel statistics of the training images of `views`.
    pub fn stats(&self, views: &[ViewKey]) -> NormStats {
        self.caches[0].stats_for(views)
    }

    pub fn sources(&self, task: TaskSpec, fusion: &FusionConfig) -> Result<Sources<'_>> {
        let stats = self.stats(&fusion.variant.views());
        let make = |i: usize, ds| CachedExamples::new(ds, &self.caches[i], task, fusion, stats.clone());
        Ok(Sources {
            train: make(0, &self.train)?,
            val: make(1, &self.val)?,
            test: make(2, &self.test)?,
            stats: stats.clone(),
        })
    }
}

/// Splits the dataset at `manifest` and writes the split files next to it.
/// The sidecar statistics cover all six views of the training split.
pub fn split_and_write(manifest: &Path, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset, NormStats)> {
    let dataset = load_manifest(manifest)?;
    let splits = split_dataset(&dataset, spec)?;
    let stats = ImageCache::load(&splits.train, &ViewKey::ALL)?.stats();
    write_splits(&splits, spec, &stats)?;
    Ok((splits.train, splits.val, splits.test, stats))
}

/// Settings of the reproduction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproConfig {
    pub n_objects: u32,
    pub n_reps: u32,
    pub synth_seed: u64,
    pub split_ratios: [u32; 3],
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub backbones: Vec<BackboneFamily>,
    /// Width and embedding size of the tiny backbone.
    pub tiny_width: usize,
    pub tiny_embedding: usize,
    pub variants: Vec<FusionVariant>,
    pub task: TaskSpec,
    /// Also compare dual heads with one 16-way head on 1C-1N.
    pub ablation: bool,
    pub jobs: usize,
}

impl ReproConfig {
    /// Desk-scale sweep: tiny backbone, two seeds, full-size synthetic set.
    pub fn desk() -> Self {
        ReproConfig {
            n_objects: 20,
            n_reps: 10,
            synth_seed: 7,
            split_ratios: [6, 2, 2],
            split_seed: 0,
            seeds: vec![0, 1],
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            backbones: vec![BackboneFamily::Tiny],
            tiny_width: crate::models::backbone::TINY_DEFAULT_WIDTH,
            tiny_embedding: 64,
            variants: FusionVariant::ALL.to_vec(),
            task: TaskSpec::ToolsPlusActions,
            ablation: true,
            jobs: 1,
        }
    }

    /// The reference protocol: three residual backbones, five seeds, 150 epochs.
    pub fn full() -> Self {
        ReproConfig {
            seeds: vec![0, 1, 2, 3, 4],
            epochs: 150,
            backbones: vec![BackboneFamily::Resnet18, BackboneFamily::Resnet50, BackboneFamily::Resnet101],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.variants.is_empty() || self.backbones.is_empty() {
            return Err(Error::Config("need at least one architecture and one backbone".into()));
        }
        if self.split_ratios.iter().sum::<u32>() != self.n_reps {
            return Err(Error::Config(format!(
                "split ratios {:?} must add up to the {} repetitions per group",
                self.split_ratios, self.n_reps
            )));
        }
        self.train_config(0).validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..Default::default()
        }
    }

    pub fn fusion(&self, variant: FusionVariant, family: BackboneFamily, task: TaskSpec) -> FusionConfig {
        let mut spec = BackboneSpec::new(family);
        if family == BackboneFamily::Tiny {
            spec = spec.with_tiny_size(self.tiny_width, self.tiny_embedding);
        }
        FusionConfig::for_task(variant, spec, task)
    }
}

#[derive(Clone, Debug)]
pub struct ReproOutcome {
    pub table: ResultsTable,
    pub ablation: Option<ResultsTable>,
    pub report: ReportFiles,
    pub ablation_report: Option<ReportFiles>,
}

fn accuracies(runs: &[SeedRun]) -> Vec<f64> {
    runs.iter().map(SeedRun::accuracy).collect()
}

/// Runs synth, split, training of every (variant, backbone) over all seeds,
/// aggregation and reporting under `out_dir`. Errors name the failing stage.
pub fn run_repro(cfg: &ReproConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<ReproOutcome> {
    cfg.validate()?;
    let data_dir = out_dir.join("data");
    log(&format!("synth: {} objects × {} repetitions", cfg.n_objects, cfg.n_reps));
    let manifest = generate_synthetic_dataset(&data_dir, cfg.n_objects, cfg.n_reps, cfg.synth_seed)
        .map_err(|e| e.in_stage("synth"))?;

    log("split");
    let spec = SplitSpec {
        ratios: cfg.split_ratios,
        seed: cfg.split_seed,
    };
    let data = (|| {
        let splits = split_dataset(&load_manifest(&manifest)?, &spec)?;
        let data = PreparedData::new(splits.train.clone(), splits.val.clone(), splits.test.clone(), &ViewKey::ALL)?;
        write_splits(&splits, &spec, &data.stats(&ViewKey::ALL))?;
        Ok::<_, Error>(data)
    })()
    .map_err(|e| e.in_stage("split"))?;

    let mut table = ResultsTable::new(format!("{} test accuracy (%)", cfg.task.cli_name()));
    let mut evaluations: Vec<(String, EvalReport)> = Vec::new();
    let cycle = |variant: FusionVariant, family: BackboneFamily, task: TaskSpec, log: &mut dyn FnMut(&str)| {
        let fusion = cfg.fusion(variant, family, task);
        let sources = data.sources(task, &fusion)?;
        let runs = run_seeds::<f32>(
            &fusion,
            &cfg.train_config(0),
            task,
            &sources.train,
            &sources.val,
            &sources.test,
            &cfg.seeds,
            cfg.jobs,
        )?;
        let values = accuracies(&runs);
        log(&format!(
            "{} {} {}: {}",
            variant.short_name(),
            family.name(),
            task.cli_name(),
            values.iter().map(|v| format!("{:.4}", v)).collect::<Vec<_>>().join(" ")
        ));
        Ok::<_, Error>((fusion.hash(), values, runs.into_iter().next().map(|r| r.test)))
    };

    for &family in &cfg.backbones {
        for &variant in &cfg.variants {
            let (hash, values, first) = cycle(variant, family, cfg.task, log).map_err(|e| e.in_stage("train"))?;
            table.insert(variant.short_name(), family.name(), values, &hash);
            if let Some(r) = first {
                evaluations.push((format!("{}_{}", variant.short_name(), family.name()), r));
            }
        }
    }

    let mut ablation = None;
    let mut ablation_evals = Vec::new();
    if cfg.ablation {
        let family = cfg.backbones[0];
        let variant = FusionVariant::SharedCentral1C1N;
        let mut t = ResultsTable::new("1C-1N ablation: joint test accuracy (%)");
        let dual = match table.cell(variant.short_name(), family.name()) {
            Some(c) if cfg.task == TaskSpec::ToolsPlusActions => (c.config_hash.clone(), c.values.clone()),
            _ => {
                let (h, v, _) = cycle(variant, family, TaskSpec::ToolsPlusActions, log).map_err(|e| e.in_stage("ablation"))?;
                (h, v)
            }
        };
        t.insert("dual-head", family.name(), dual.1, &dual.0);
        let (h, v, first) = cycle(variant, family, TaskSpec::Joint16, log).map_err(|e| e.in_stage("ablation"))?;
        t.insert("joint16", family.name(), v, &h);
        if let Some(r) = first {
            ablation_evals.push((format!("joint16_{}", family.name()), r));
        }
        ablation = Some(t);
    }

    log("report");
    let report_dir = out_dir.join("report");
    let report = emit_report(&table, &evaluations, &report_dir).map_err(|e| e.in_stage("report"))?;
    let ablation_report = match &ablation {
        Some(t) => Some(emit_report(t, &ablation_evals, &report_dir.join("ablation")).map_err(|e| e.in_stage("report"))?),
        None => None,
    };
    let cfg_path = report_dir.join("repro_config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg).expect("config serializes"))
        .map_err(|e| Error::io(&cfg_path, e).in_stage("report"))?;
    Ok(ReproOutcome {
        table,
        ablation,
        report,
        ablation_report,
    })
}

/// Manifest path inside a repro output directory.
pub fn repro_manifest(out_dir: &Path) -> PathBuf {
    out_dir.join("data").join(crate::synthgen::MANIFEST_FILE)
}
