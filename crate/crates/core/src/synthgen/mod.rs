//! Deterministic synthetic datasets in the manifest format, with a
//! rule-based oracle that proves them solvable.

pub mod oracle;
pub mod render;
pub mod scene;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::labels::{Action, Tool, ViewKey};
use crate::dataset::manifest::{write_manifest, Sample, NUM_OBJECTS, NUM_REPETITIONS};
use crate::error::{Error, Result};

pub use oracle::{oracle_classify, oracle_classify_sample};
pub use render::render_view;
pub use scene::{draw_scene, CameraModel, GeneratorParams, ObjectSpec, SceneParams, Shape, ToolSignature};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PARAMS_FILE: &str = "generator.json";

/// Relative path of one image: `images/oNN/<tool>_<action>_rNN_<view>.png`.
pub fn image_rel_path(scene: &SceneParams, view: ViewKey) -> PathBuf {
    PathBuf::from(format!(
        "images/o{:02}/{}_{}_r{:02}_{}.png",
        scene.object_id,
        scene.tool,
        scene.action,
        scene.repetition,
        view.field_name()
    ))
}

/// Draws every sample's parameters from one sequential stream, ordered by
/// object, tool, action, repetition.
pub fn draw_scenes(params: &GeneratorParams) -> Result<Vec<SceneParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut scenes = Vec::new();
    for object in 0..params.n_objects {
        for tool in Tool::ALL {
            for action in Action::ALL {
                for rep in 0..params.n_reps {
                    scenes.push(draw_scene(params, &mut rng, object, tool, action, rep)?);
                }
            }
        }
    }
    Ok(scenes)
}

/// Rejects dataset sizes outside the object table and repetition range.
pub fn check_sizes(n_objects: u32, n_reps: u32) -> Result<()> {
    if !(1..=NUM_OBJECTS).contains(&n_objects) {
        return Err(Error::Config(format!("objects must be in 1..={NUM_OBJECTS}, got {n_objects}")));
    }
    if !(1..=NUM_REPETITIONS).contains(&n_reps) {
        return Err(Error::Config(format!("repetitions must be in 1..={NUM_REPETITIONS}, got {n_reps}")));
    }
    Ok(())
}

/// Writes `n_objects × 4 × 4 × n_reps` samples (six PNGs each), the
/// manifest and the generator settings under `out_dir`. Returns the
/// manifest path.
pub fn generate_synthetic_dataset(out_dir: impl AsRef<Path>, n_objects: u32, n_reps: u32, seed: u64) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    check_sizes(n_objects, n_reps)?;
    let params = GeneratorParams::new(seed, n_objects, n_reps);
    let scenes = draw_scenes(&params)?;

    for object in 0..n_objects {
        let dir = out_dir.join(format!("images/o{object:02}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    scenes.par_iter().try_for_each(|scene| {
        ViewKey::ALL.iter().try_for_each(|&view| {
            let path = out_dir.join(image_rel_path(scene, view));
            render_view(&params, scene, view).save(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })
        })
    })?;

    let samples: Vec<Sample> = scenes
        .iter()
        .map(|s| Sample {
            object_id: s.object_id,
            repetition: s.repetition,
            tool: s.tool,
            action: s.action,
            images: ViewKey::ALL.iter().map(|&k| (k, image_rel_path(s, k))).collect::<BTreeMap<_, _>>(),
        })
        .collect();
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &samples)?;
    let params_path = out_dir.join(PARAMS_FILE);
    let json = serde_json::to_string_pretty(&params).expect("generator params serialize");
    fs::write(&params_path, json).map_err(|e| Error::io(&params_path, e))?;
    Ok(manifest)
}

/// Reads the generator settings written next to a manifest.
pub fn load_generator_params(path: impl AsRef<Path>) -> Result<GeneratorParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
