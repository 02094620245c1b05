use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{CameraModel, GeneratorParams, ObjectSpec, SceneParams, ToolSignature};
use crate::dataset::labels::{Phase, ViewKey};

/// Paints every pixel whose centre maps into `inside` (a world-space test)
/// within the world box `bounds`.
fn fill(
    img: &mut RgbImage,
    cam: &CameraModel,
    bounds: (f64, f64, f64, f64),
    color: [u8; 3],
    inside: impl Fn(f64, f64) -> bool,
) {
    let (x0, y0) = cam.to_image(bounds.0, bounds.1);
    let (x1, y1) = cam.to_image(bounds.2, bounds.3);
    let (w, h) = img.dimensions();
    let clamp_x = |v: f64| (v.max(0.0) as u32).min(w);
    let clamp_y = |v: f64| (v.max(0.0) as u32).min(h);
    for v in clamp_y(y0.floor())..clamp_y(y1.ceil() + 1.0) {
        for u in clamp_x(x0.floor())..clamp_x(x1.ceil() + 1.0) {
            let (x, y) = cam.to_world(u as f64 + 0.5, v as f64 + 0.5);
            if inside(x, y) {
                img.put_pixel(u, v, Rgb(color));
            }
        }
    }
}

pub fn draw_tool(img: &mut RgbImage, cam: &CameraModel, tool: &ToolSignature) {
    for part in &tool.parts {
        fill(img, cam, part.bounds(), tool.color, |x, y| part.contains(x, y));
    }
}

pub fn draw_object(img: &mut RgbImage, cam: &CameraModel, object: &ObjectSpec, at: [f64; 2]) {
    let r = object.radius;
    let bounds = (at[0] - r, at[1] - r, at[0] + r, at[1] + r);
    fill(img, cam, bounds, object.color, |x, y| {
        object.shape.contains(at[0], at[1], r, x, y)
    });
}

/// Adds zero-mean Gaussian noise, constant over square blocks of pixels.
fn add_block_noise(img: &mut RgbImage, std: f64, block: u32, seed: u64, stream: u64) {
    if std <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, std).expect("finite std");
    let (bw, bh) = (img.width().div_ceil(block), img.height().div_ceil(block));
    let offsets: Vec<[f64; 3]> = (0..bw * bh)
        .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
        .collect();
    for (u, v, px) in img.enumerate_pixels_mut() {
        let off = offsets[((v / block) * bw + u / block) as usize];
        for c in 0..3 {
            px[c] = (px[c] as f64 + off[c]).round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Background plus tool sprite as seen by `cam`, without noise or object.
pub fn render_backdrop(params: &GeneratorParams, cam: &CameraModel, tool: &ToolSignature) -> RgbImage {
    let mut img = RgbImage::from_pixel(params.canvas[0], params.canvas[1], Rgb(params.background));
    draw_tool(&mut img, cam, tool);
    img
}

/// One of the six images of a sample.
pub fn render_view(params: &GeneratorParams, scene: &SceneParams, view: ViewKey) -> RgbImage {
    let cam = params.camera(view.camera);
    let mut img = render_backdrop(params, cam, params.tool(scene.tool));
    let at = match view.phase {
        Phase::Initial => scene.initial,
        Phase::Final => scene.final_pos,
    };
    draw_object(&mut img, cam, &params.objects[scene.object_id as usize], at);
    let stream = ViewKey::ALL.iter().position(|k| *k == view).expect("known view") as u64;
    add_block_noise(&mut img, cam.noise_std, params.noise_block, scene.noise_seed, stream);
    img
}
