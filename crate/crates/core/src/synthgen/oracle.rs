//! Rule-based classifier that reads the generator's settings and two
//! center-camera images. It never sees labels.

use std::collections::BTreeMap;

use image::RgbImage;

use super::render::render_backdrop;
use super::scene::GeneratorParams;
use crate::dataset::labels::{Action, CameraView, Phase, Tool, ViewKey};
use crate::dataset::preprocess::decode_image;
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

/// Max per-channel distance from the background that counts as foreground.
const FOREGROUND_THRESHOLD: i32 = 45;

fn centroid(img: &RgbImage, params: &GeneratorParams) -> Option<[f64; 2]> {
    let bg = params.background;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    let rows = (params.table_bottom.ceil() as u32).min(img.height());
    for v in 0..rows {
        for u in 0..img.width() {
            let px = img.get_pixel(u, v);
            let diff = (0..3).map(|c| (px[c] as i32 - bg[c] as i32).abs()).max().unwrap_or(0);
            if diff > FOREGROUND_THRESHOLD {
                sx += u as f64 + 0.5;
                sy += v as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Action from the dominant axis and sign of the displacement.
pub fn action_from_displacement(dx: f64, dy: f64) -> Action {
    if dx.abs() > dy.abs() {
        if dx > 0.0 {
            Action::LeftToRight
        } else {
            Action::RightToLeft
        }
    } else if dy < 0.0 {
        Action::Push
    } else {
        Action::Pull
    }
}

/// Tool whose nominal displacement is nearest to `distance`.
pub fn tool_from_magnitude(distance: f64, params: &GeneratorParams) -> Tool {
    params
        .tools
        .iter()
        .min_by(|a, b| (a.magnitude - distance).abs().total_cmp(&(b.magnitude - distance).abs()))
        .expect("tool table is non-empty")
        .tool
}

/// Tool whose noise-free sprite rendering best matches the tool region.
pub fn tool_from_template(img: &RgbImage, params: &GeneratorParams) -> Tool {
    let cam = params.camera(CameraView::Center);
    let top = params.table_bottom.ceil() as u32;
    let score = |tmpl: &RgbImage| -> u64 {
        let mut s = 0u64;
        for v in top..img.height() {
            for u in 0..img.width() {
                let (a, b) = (img.get_pixel(u, v), tmpl.get_pixel(u, v));
                s += (0..3).map(|c| (a[c] as i32 - b[c] as i32).unsigned_abs() as u64).sum::<u64>();
            }
        }
        s
    };
    params
        .tools
        .iter()
        .map(|t| (t.tool, score(&render_backdrop(params, cam, t))))
        .min_by_key(|(_, s)| *s)
        .expect("tool table is non-empty")
        .0
}

/// Recovers (tool, action) from a sample's images. The sprite and the
/// displacement magnitude must agree on the tool; disagreement, or an
/// undetectable object, signals a generator bug.
pub fn oracle_classify(images: &BTreeMap<ViewKey, RgbImage>, params: &GeneratorParams) -> Result<(Tool, Action)> {
    let get = |phase| {
        images
            .get(&ViewKey::new(CameraView::Center, phase))
            .ok_or_else(|| Error::Oracle(format!("missing center {} image", phase.name())))
    };
    let (initial, last) = (get(Phase::Initial)?, get(Phase::Final)?);
    let expected = (params.canvas[0], params.canvas[1]);
    if initial.dimensions() != expected || last.dimensions() != expected {
        return Err(Error::Oracle("image size differs from the generator canvas".into()));
    }
    let a = centroid(initial, params).ok_or_else(|| Error::Oracle("no object in the initial image".into()))?;
    let b = centroid(last, params).ok_or_else(|| Error::Oracle("no object in the final image".into()))?;
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let action = action_from_displacement(dx, dy);
    let by_magnitude = tool_from_magnitude(dx.hypot(dy), params);
    let by_sprite = tool_from_template(initial, params);
    if by_sprite != by_magnitude {
        return Err(Error::Oracle(format!(
            "sprite says {by_sprite} but a displacement of {:.1} px says {by_magnitude}",
            dx.hypot(dy)
        )));
    }
    Ok((by_sprite, action))
}

/// Loads a sample's images from disk and classifies it.
pub fn oracle_classify_sample(dataset: &Dataset, sample: &Sample, params: &GeneratorParams) -> Result<(Tool, Action)> {
    let mut images = BTreeMap::new();
    for phase in Phase::ALL {
        let key = ViewKey::new(CameraView::Center, phase);
        let img = decode_image(&dataset.image_path(sample, key))?;
        images.insert(key, img.to_rgb8());
    }
    oracle_classify(&images, params)
}
