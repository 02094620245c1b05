//! Line-delimited JSON manifests of before/after samples.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{Action, Tool, ViewKey, NUM_ACTIONS, NUM_TOOLS};
use crate::error::{Error, Result};

pub const NUM_OBJECTS: u32 = 20;
pub const NUM_REPETITIONS: u32 = 10;
/// Size of a complete dataset: every object, tool, action and repetition.
pub const FULL_DATASET_LEN: usize =
    NUM_OBJECTS as usize * NUM_TOOLS * NUM_ACTIONS * NUM_REPETITIONS as usize;

/// One trial: an object moved with a tool by an action, photographed by
/// three cameras before and after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub object_id: u32,
    pub repetition: u32,
    pub tool: Tool,
    pub action: Action,
    /// Image paths relative to the dataset root, one per view.
    pub images: BTreeMap<ViewKey, PathBuf>,
}

/// Identity of a sample; unique within a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleKey {
    pub object_id: u32,
    pub tool: Tool,
    pub action: Action,
    pub repetition: u32,
}

impl std::fmt::Display for SampleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(object {}, {}, {}, repetition {})",
            self.object_id, self.tool, self.action, self.repetition
        )
    }
}

impl Sample {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            object_id: self.object_id,
            tool: self.tool,
            action: self.action,
            repetition: self.repetition,
        }
    }

    pub fn group(&self) -> (u32, Tool, Action) {
        (self.object_id, self.tool, self.action)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub per_object: BTreeMap<u32, usize>,
    pub per_tool: [usize; NUM_TOOLS],
    pub per_action: [usize; NUM_ACTIONS],
}

impl DatasetMeta {
    fn tally(samples: &[Sample]) -> Self {
        let mut meta = DatasetMeta::default();
        for s in samples {
            *meta.per_object.entry(s.object_id).or_default() += 1;
            meta.per_tool[s.tool.index()] += 1;
            meta.per_action[s.action.index()] += 1;
        }
        meta
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    samples: Vec<Sample>,
    meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate sample keys and out-of-range ids.
    pub fn new(root: impl Into<PathBuf>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            validate_ranges(s).map_err(Error::Integrity)?;
            if !seen.insert(s.key()) {
                return Err(Error::Integrity(format!("duplicate sample key {}", s.key())));
            }
        }
        let meta = DatasetMeta::tally(&samples);
        Ok(Dataset {
            root: root.into(),
            samples,
            meta,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// True when every object, tool, action and repetition is present.
    pub fn is_complete(&self) -> bool {
        self.samples.len() == FULL_DATASET_LEN
    }

    pub fn image_path(&self, sample: &Sample, view: ViewKey) -> PathBuf {
        self.root.join(&sample.images[&view])
    }

    /// Same root, a subset of samples.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Self {
        let meta = DatasetMeta::tally(&samples);
        Dataset {
            root: self.root.clone(),
            samples,
            meta,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    object_id: u32,
    repetition: u32,
    tool: Tool,
    action: Action,
    images: BTreeMap<String, String>,
}

fn validate_ranges(s: &Sample) -> std::result::Result<(), String> {
    if s.object_id >= NUM_OBJECTS {
        return Err(format!(
            "object_id {} outside [0, {}]",
            s.object_id,
            NUM_OBJECTS - 1
        ));
    }
    if s.repetition >= NUM_REPETITIONS {
        return Err(format!(
            "repetition {} outside [0, {}]",
            s.repetition,
            NUM_REPETITIONS - 1
        ));
    }
    Ok(())
}

fn parse_record(line: &str) -> std::result::Result<Sample, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut images = BTreeMap::new();
    for (name, path) in rec.images {
        let view =
            ViewKey::parse_field(&name).ok_or_else(|| format!("unknown image key `{name}`"))?;
        images.insert(view, PathBuf::from(path));
    }
    if let Some(missing) = ViewKey::ALL.iter().find(|k| !images.contains_key(k)) {
        return Err(format!("missing image key `{missing}`"));
    }
    let sample = Sample {
        object_id: rec.object_id,
        repetition: rec.repetition,
        tool: rec.tool,
        action: rec.action,
        images,
    };
    validate_ranges(&sample)?;
    Ok(sample)
}

/// Loads and validates a manifest. Image paths resolve against the
/// manifest's directory; every referenced file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        if !seen.insert(sample.key()) {
            return Err(Error::Integrity(format!(
                "duplicate sample key {} at line {}",
                sample.key(),
                i + 1
            )));
        }
        samples.push(sample);
    }

    let missing: Vec<String> = samples
        .iter()
        .flat_map(|s| s.images.values())
        .map(|rel| root.join(rel))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Integrity(format!(
            "{} missing image(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }

    Dataset::new(root, samples)
}

/// Writes one JSON record per sample, in the given order.
pub fn write_manifest<'a>(
    path: impl AsRef<Path>,
    samples: impl IntoIterator<Item = &'a Sample>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let rec = Record {
            object_id: s.object_id,
            repetition: s.repetition,
            tool: s.tool,
            action: s.action,
            images: s
                .images
                .iter()
                .map(|(k, p)| (k.field_name(), p.to_string_lossy().replace('\\', "/")))
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
