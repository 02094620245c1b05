//! Scene description: object table, tool signatures, cameras and the
//! per-sample parameter stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::labels::{Action, CameraView, Tool};
use crate::error::{Error, Result};

pub const CANVAS_WIDTH: u32 = 640;
pub const CANVAS_HEIGHT: u32 = 480;
/// Maximum draws of an initial position before giving up on a sample.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
}

impl Shape {
    /// Whether world point `(x, y)` lies inside the shape centred at
    /// `(cx, cy)` with circumradius `r`.
    pub fn contains(self, cx: f64, cy: f64, r: f64, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - cx, y - cy);
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs().max(dy.abs()) <= r * 0.8,
            Shape::Diamond => dx.abs() + dy.abs() <= r,
            Shape::Triangle => {
                // apex up, base at cy + r/2
                let h = 1.5 * r;
                let top = cy - r;
                let t = (y - top) / h;
                (0.0..=1.0).contains(&t) && dx.abs() <= t * r * 0.866
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub shape: Shape,
    pub color: [u8; 3],
    pub radius: f64,
}

const PALETTE: [[u8; 3]; 20] = [
    [220, 40, 40],
    [40, 180, 60],
    [40, 70, 220],
    [240, 220, 40],
    [200, 40, 200],
    [30, 200, 210],
    [250, 150, 30],
    [20, 20, 20],
    [245, 245, 245],
    [140, 30, 60],
    [100, 230, 120],
    [60, 20, 140],
    [250, 120, 170],
    [20, 110, 90],
    [180, 230, 20],
    [230, 200, 160],
    [10, 60, 120],
    [215, 80, 0],
    [160, 160, 240],
    [90, 50, 10],
];

/// The 20 objects: four shapes cycled over a fixed palette and sizes.
pub fn object_table() -> Vec<ObjectSpec> {
    const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Diamond];
    (0..20u32)
        .map(|i| ObjectSpec {
            id: i,
            shape: SHAPES[i as usize % 4],
            color: PALETTE[i as usize],
            radius: 22.0 + ((i * 7) % 14) as f64,
        })
        .collect()
}

/// Filled primitive in world (center camera) coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Part {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Line segment thickened to `half_width` on each side.
    Bar { ax: f64, ay: f64, bx: f64, by: f64, half_width: f64 },
}

impl Part {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Part::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
            Part::Bar {
                ax,
                ay,
                bx,
                by,
                half_width,
            } => {
                let (ux, uy) = (bx - ax, by - ay);
                let len2 = ux * ux + uy * uy;
                let t = (((x - ax) * ux + (y - ay) * uy) / len2).clamp(0.0, 1.0);
                let (px, py) = (ax + t * ux - x, ay + t * uy - y);
                px * px + py * py <= half_width * half_width
            }
        }
    }

    /// World-space bounding box `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Part::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Part::Bar {
                ax,
                ay,
                bx,
                by,
                half_width: h,
            } => (ax.min(bx) - h, ay.min(by) - h, ax.max(bx) + h, ay.max(by) + h),
        }
    }
}

/// What identifies a tool in the images: its sprite and how far it moves
/// the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSignature {
    pub tool: Tool,
    pub color: [u8; 3],
    pub magnitude: f64,
    pub parts: Vec<Part>,
}

pub fn tool_signatures() -> Vec<ToolSignature> {
    let bar = |ax, ay, bx, by, half_width| Part::Bar {
        ax,
        ay,
        bx,
        by,
        half_width,
    };
    vec![
        ToolSignature {
            tool: Tool::Boomerang,
            color: [235, 140, 20],
            magnitude: 40.0,
            parts: vec![bar(250.0, 455.0, 320.0, 400.0, 9.0), bar(320.0, 400.0, 390.0, 455.0, 9.0)],
        },
        ToolSignature {
            tool: Tool::Ruler,
            color: [245, 235, 80],
            magnitude: 60.0,
            parts: vec![Part::Rect {
                x0: 210.0,
                y0: 418.0,
                x1: 430.0,
                y1: 438.0,
            }],
        },
        ToolSignature {
            tool: Tool::Slingshot,
            color: [30, 30, 30],
            magnitude: 80.0,
            parts: vec![
                bar(320.0, 465.0, 320.0, 430.0, 7.0),
                bar(320.0, 430.0, 285.0, 395.0, 7.0),
                bar(320.0, 430.0, 355.0, 395.0, 7.0),
            ],
        },
        ToolSignature {
            tool: Tool::Spatula,
            color: [30, 160, 230],
            magnitude: 100.0,
            parts: vec![
                bar(230.0, 430.0, 340.0, 430.0, 6.0),
                Part::Rect {
                    x0: 340.0,
                    y0: 405.0,
                    x1: 420.0,
                    y1: 455.0,
                },
            ],
        },
    ]
}

/// Unit displacement of the object in image coordinates (y grows downward).
pub fn action_direction(action: Action) -> [f64; 2] {
    match action {
        Action::Push => [0.0, -1.0],
        Action::Pull => [0.0, 1.0],
        Action::LeftToRight => [1.0, 0.0],
        Action::RightToLeft => [-1.0, 0.0],
    }
}

/// Affine view of the world: scale about the canvas centre, then a
/// horizontal shift. Noise is added per 8×8 pixel block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub view: CameraView,
    pub scale: f64,
    pub shift_x: f64,
    pub noise_std: f64,
}

impl CameraModel {
    pub fn standard() -> [CameraModel; 3] {
        let center_noise = 2.0;
        [
            CameraModel {
                view: CameraView::Left,
                scale: 0.95,
                shift_x: 30.0,
                noise_std: 3.0 * center_noise,
            },
            CameraModel {
                view: CameraView::Center,
                scale: 1.0,
                shift_x: 0.0,
                noise_std: center_noise,
            },
            CameraModel {
                view: CameraView::Right,
                scale: 0.95,
                shift_x: -30.0,
                noise_std: 3.0 * center_noise,
            },
        ]
    }

    fn centre() -> (f64, f64) {
        (CANVAS_WIDTH as f64 / 2.0, CANVAS_HEIGHT as f64 / 2.0)
    }

    pub fn to_image(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = Self::centre();
        (cx + self.scale * (x - cx) + self.shift_x, cy + self.scale * (y - cy))
    }

    pub fn to_world(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = Self::centre();
        (cx + (u - self.shift_x - cx) / self.scale, cy + (v - cy) / self.scale)
    }
}

/// Fixed generator settings, written next to the manifest. The oracle reads
/// only this, never per-sample ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seed: u64,
    pub n_objects: u32,
    pub n_reps: u32,
    pub canvas: [u32; 2],
    pub background: [u8; 3],
    /// Objects stay above this row; the tool sprite sits below it.
    pub table_bottom: f64,
    /// Clearance from the canvas border beyond the object radius, so that
    /// shifted lateral views keep the object whole.
    pub edge_margin: f64,
    pub magnitude_jitter: f64,
    pub noise_block: u32,
    pub objects: Vec<ObjectSpec>,
    pub tools: Vec<ToolSignature>,
    pub cameras: Vec<CameraModel>,
}

impl GeneratorParams {
    pub fn new(seed: u64, n_objects: u32, n_reps: u32) -> Self {
        GeneratorParams {
            seed,
            n_objects,
            n_reps,
            canvas: [CANVAS_WIDTH, CANVAS_HEIGHT],
            background: [125, 110, 95],
            table_bottom: 370.0,
            edge_margin: 40.0,
            magnitude_jitter: 5.0,
            noise_block: 8,
            objects: object_table(),
            tools: tool_signatures(),
            cameras: CameraModel::standard().to_vec(),
        }
    }

    pub fn tool(&self, tool: Tool) -> &ToolSignature {
        self.tools.iter().find(|t| t.tool == tool).expect("every tool has a signature")
    }

    pub fn camera(&self, view: CameraView) -> &CameraModel {
        self.cameras.iter().find(|c| c.view == view).expect("every view has a camera")
    }

    /// Region where the object centre may lie for an object of radius `r`.
    fn placement_box(&self, r: f64) -> (f64, f64, f64, f64) {
        let m = r + self.edge_margin;
        (m, m, self.canvas[0] as f64 - m, self.table_bottom - r)
    }
}

/// Everything random about one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub object_id: u32,
    pub tool: Tool,
    pub action: Action,
    pub repetition: u32,
    pub initial: [f64; 2],
    pub final_pos: [f64; 2],
    pub magnitude: f64,
    pub noise_seed: u64,
}

/// Draws one sample's parameters. The initial position is redrawn until
/// the object stays in the placement box in both frames.
pub fn draw_scene<R: Rng + ?Sized>(
    params: &GeneratorParams,
    rng: &mut R,
    object_id: u32,
    tool: Tool,
    action: Action,
    repetition: u32,
) -> Result<SceneParams> {
    let object = params
        .objects
        .get(object_id as usize)
        .ok_or_else(|| Error::Generation(format!("no object with id {object_id}")))?;
    let j = params.magnitude_jitter;
    let magnitude = params.tool(tool).magnitude + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let [dx, dy] = action_direction(action);
    let (x0, y0, x1, y1) = params.placement_box(object.radius);
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let ix = rng.random_range(x0.min(x1)..=x1.max(x0));
        let iy = rng.random_range(y0.min(y1)..=y1.max(y0));
        let (fx, fy) = (ix + dx * magnitude, iy + dy * magnitude);
        let inside = |x: f64, y: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;
        if inside(ix, iy) && inside(fx, fy) {
            return Ok(SceneParams {
                object_id,
                tool,
                action,
                repetition,
                initial: [ix, iy],
                final_pos: [fx, fy],
                magnitude,
                noise_seed: rng.random(),
            });
        }
    }
    Err(Error::Generation(format!(
        "object {object_id} ({tool}, {action}, repetition {repetition}) could not be placed \
         inside the canvas after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn signatures_are_distinct() {
        let tools = tool_signatures();
        for i in 0..4 {
            for k in i + 1..4 {
                assert_ne!(tools[i].color, tools[k].color);
                assert!((tools[i].magnitude - tools[k].magnitude).abs() >= 20.0);
            }
        }
        let dirs: Vec<_> = Action::ALL.iter().map(|a| action_direction(*a)).collect();
        for i in 0..4 {
            for k in i + 1..4 {
                assert_ne!(dirs[i], dirs[k]);
            }
        }
    }

    #[test]
    fn object_colors_stand_out_from_background() {
        let p = GeneratorParams::new(0, 20, 10);
        for o in &p.objects {
            let diff = (0..3)
                .map(|c| (o.color[c] as i32 - p.background[c] as i32).abs())
                .max()
                .unwrap();
            assert!(diff >= 80, "object {} too close to background", o.id);
        }
    }

    #[test]
    fn center_noise_is_lowest() {
        let cams = CameraModel::standard();
        let center = cams[1].noise_std;
        assert!(cams.iter().filter(|c| c.view != CameraView::Center).all(|c| c.noise_std > center));
    }

    #[test]
    fn camera_transform_inverts() {
        for cam in CameraModel::standard() {
            let (u, v) = cam.to_image(123.4, 321.0);
            let (x, y) = cam.to_world(u, v);
            assert!((x - 123.4).abs() < 1e-9 && (y - 321.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scenes_respect_the_canvas() {
        let p = GeneratorParams::new(0, 20, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for obj in 0..20 {
            for tool in Tool::ALL {
                for action in Action::ALL {
                    let s = draw_scene(&p, &mut rng, obj, tool, action, 0).unwrap();
                    let [dx, dy] = action_direction(action);
                    assert!((s.final_pos[0] - s.initial[0] - dx * s.magnitude).abs() < 1e-9);
                    assert!((s.final_pos[1] - s.initial[1] - dy * s.magnitude).abs() < 1e-9);
                    assert!((s.magnitude - p.tool(tool).magnitude).abs() <= 5.0);
                    let r = p.objects[obj as usize].radius;
                    for [x, y] in [s.initial, s.final_pos] {
                        assert!(x - r >= 0.0 && x + r <= 640.0 && y - r >= 0.0 && y + r <= p.table_bottom);
                    }
                }
            }
        }
    }

    #[test]
    fn unplaceable_object_errors() {
        let mut p = GeneratorParams::new(0, 1, 1);
        p.table_bottom = 150.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = draw_scene(&p, &mut rng, 0, Tool::Spatula, Action::Pull, 0).unwrap_err();
        assert!(matches!(err, Error::Generation(msg) if msg.contains("100 attempts")));
    }
}
