//! Stratified train/val/test partitioning over repetitions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{Action, Tool};
use super::manifest::{load_manifest, write_manifest, Dataset};
use super::preprocess::NormStats;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Repetitions per (object, tool, action) group sent to train, val, test.
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [6, 2, 2],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn group_size(&self) -> usize {
        self.ratios.iter().map(|&r| r as usize).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// Partition of each input sample, in input order.
    pub assignments: Vec<Partition>,
}

/// Partitions every (object, tool, action) group by a seeded permutation of
/// its repetitions: the first `ratios[0]` go to train, the next `ratios[1]`
/// to val, the rest to test. Subsets keep the input order.
pub fn split_dataset(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let mut groups: BTreeMap<(u32, Tool, Action), Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        groups.entry(s.group()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assignments = vec![Partition::Train; dataset.len()];
    let [n_train, n_val, _] = spec.ratios.map(|r| r as usize);
    for ((object, tool, action), mut members) in groups {
        if members.len() != spec.group_size() {
            return Err(Error::Split(format!(
                "group (object {object}, {tool}, {action}) has {} repetition(s), expected {}",
                members.len(),
                spec.group_size()
            )));
        }
        members.sort_by_key(|&i| dataset.samples()[i].repetition);
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            assignments[i] = if rank < n_train {
                Partition::Train
            } else if rank < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
        }
    }

    let subset = |p: Partition| {
        let picked = dataset
            .samples()
            .iter()
            .zip(&assignments)
            .filter(|(_, a)| **a == p)
            .map(|(s, _)| s.clone())
            .collect();
        dataset.with_samples(picked)
    };
    Ok(Splits {
        train: subset(Partition::Train),
        val: subset(Partition::Val),
        test: subset(Partition::Test),
        assignments,
    })
}

/// Sidecar written next to the three split manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSidecar {
    pub seed: u64,
    pub ratios: [u32; 3],
    pub counts: [usize; 3],
    pub stats: NormStats,
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const VAL_MANIFEST: &str = "val.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";
pub const SPLIT_SIDECAR: &str = "split.json";

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `split.json` into the
/// dataset root so relative image paths stay valid.
pub fn write_splits(splits: &Splits, spec: &SplitSpec, stats: &NormStats) -> Result<PathBuf> {
    let root = splits.train.root().to_path_buf();
    write_manifest(root.join(TRAIN_MANIFEST), splits.train.samples())?;
    write_manifest(root.join(VAL_MANIFEST), splits.val.samples())?;
    write_manifest(root.join(TEST_MANIFEST), splits.test.samples())?;
    let sidecar = SplitSidecar {
        seed: spec.seed,
        ratios: spec.ratios,
        counts: [splits.train.len(), splits.val.len(), splits.test.len()],
        stats: stats.clone(),
    };
    let path = root.join(SPLIT_SIDECAR);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads previously written split manifests and their sidecar from `root`.
pub fn load_splits(root: &Path) -> Result<(Dataset, Dataset, Dataset, SplitSidecar)> {
    let path = root.join(SPLIT_SIDECAR);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: SplitSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok((
        load_manifest(root.join(TRAIN_MANIFEST))?,
        load_manifest(root.join(VAL_MANIFEST))?,
        load_manifest(root.join(TEST_MANIFEST))?,
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::labels::ViewKey;
    use crate::dataset::manifest::Sample;
    use std::collections::HashSet;

    fn synthetic(n_objects: u32, reps: u32) -> Dataset {
        let mut samples = Vec::new();
        for object_id in 0..n_objects {
            for tool in Tool::ALL {
                for action in Action::ALL {
                    for repetition in 0..reps {
                        samples.push(Sample {
                            object_id,
                            repetition,
                            tool,
                            action,
                            images: ViewKey::ALL
                                .iter()
                                .map(|k| (*k, PathBuf::from(format!("{object_id}{tool}{action}{repetition}{k}"))))
                                .collect(),
                        });
                    }
                }
            }
        }
        Dataset::new("/data", samples).unwrap()
    }

    #[test]
    fn full_size_splits_six_two_two() {
        let ds = synthetic(20, 10);
        let s = split_dataset(&ds, &SplitSpec::with_seed(0)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1920, 640, 640));

        let mut per_group: BTreeMap<(u32, Tool, Action), [usize; 3]> = BTreeMap::new();
        for (sample, p) in ds.samples().iter().zip(&s.assignments) {
            per_group.entry(sample.group()).or_default()[*p as usize] += 1;
        }
        assert_eq!(per_group.len(), 320);
        assert!(per_group.values().all(|c| *c == [6, 2, 2]));

        let keys = |d: &Dataset| d.samples().iter().map(|s| s.key()).collect::<HashSet<_>>();
        let (tr, va, te) = (keys(&s.train), keys(&s.val), keys(&s.test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
    }

    #[test]
    fn split_is_seed_pure() {
        let ds = synthetic(3, 10);
        let a = split_dataset(&ds, &SplitSpec::with_seed(0)).unwrap();
        let b = split_dataset(&ds, &SplitSpec::with_seed(0)).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = split_dataset(&ds, &SplitSpec::with_seed(1)).unwrap();
        assert_eq!(
            (a.train.len(), a.val.len(), a.test.len()),
            (c.train.len(), c.val.len(), c.test.len())
        );
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn wrong_group_size_names_the_group() {
        let ds = synthetic(1, 10);
        let trimmed: Vec<_> = ds
            .samples()
            .iter()
            .filter(|s| !(s.tool == Tool::Ruler && s.action == Action::Pull && s.repetition == 9))
            .cloned()
            .collect();
        let ds = ds.with_samples(trimmed);
        let msg = split_dataset(&ds, &SplitSpec::default()).unwrap_err().to_string();
        assert!(msg.contains("object 0, ruler, pull") && msg.contains("9 repetition"), "{msg}");
    }

    #[test]
    fn custom_ratios() {
        let ds = synthetic(2, 5);
        let spec = SplitSpec {
            ratios: [3, 1, 1],
            seed: 4,
        };
        let s = split_dataset(&ds, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (96, 32, 32));
    }
}
