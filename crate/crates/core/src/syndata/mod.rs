//! Synthetic moving-shape videos with exact ground-truth flow.
//!
//! A sequence shows textured objects translating over a continuous textured
//! background, optionally with camera motion. Positions and velocities are
//! whole pixels, so every displacement is exact and rendering needs no
//! resampling. Object 0 is the salient object: it is drawn on top and is the
//! only object marked in the mask.
//!
//! Frame `t`'s flow is the displacement of the visible surface from `t` to
//! `t + 1`. Flow images are rendered with the color wheel in [`flow_color`],
//! normalized by the largest displacement in the sequence.

pub mod augment;
pub mod flow_color;
pub mod io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use augment::{augment, augment_with, AugmentParams, SCALES};
pub use flow_color::{render_flow_color, wheel_position};
pub use io::{load_dataset, write_dataset};

/// Dense per-pixel displacement `(dx, dy)` in pixels per frame, stored as a
/// `(1, 2, H, W)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField(Tensor);

impl FlowField {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 2 {
            return Err(Error::Shape(format!("flow field must be (1, 2, H, W), got {s}")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(FlowField(t))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Tensor::zeros(Shape::new(1, 2, height, width)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape().h
    }

    pub fn width(&self) -> usize {
        self.0.shape().w
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.0.at(0, 0, y, x), self.0.at(0, 1, y, x))
    }

    pub fn max_magnitude(&self) -> f64 {
        let (h, w) = (self.height(), self.width());
        (0..h * w)
            .map(|i| {
                let (dx, dy) = (self.0.data()[i], self.0.data()[h * w + i]);
                dx.hypot(dy)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Polygon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Total objects including the salient one.
    pub num_objects: usize,
    pub kinds: Vec<ShapeKind>,
    /// Range of the object half-extent in pixels.
    pub min_size: f64,
    pub max_size: f64,
    /// Range of the object speed in pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Camera speed in pixels per frame; 0 keeps the background still.
    pub camera_speed: f64,
    /// Whether objects other than the salient one move.
    pub distractor_motion: bool,
    /// RGB distance between object and background base colors, in `[0, 1]`.
    pub contrast: f64,
    /// Mixed into every sequence seed for the background texture.
    pub texture_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            frames: 8,
            num_objects: 1,
            kinds: vec![ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Polygon],
            min_size: 8.0,
            max_size: 14.0,
            min_speed: 1.0,
            max_speed: 3.0,
            camera_speed: 0.0,
            distractor_motion: true,
            contrast: 0.5,
            texture_seed: 0,
        }
    }
}

impl SceneConfig {
    /// Foreground barely distinguishable from the background by color.
    pub fn low_contrast() -> Self {
        SceneConfig {
            contrast: 0.06,
            ..Self::default()
        }
    }

    /// Objects moving more than 10 pixels per frame.
    pub fn fast_motion() -> Self {
        SceneConfig {
            height: 96,
            width: 96,
            min_speed: 11.0,
            max_speed: 14.0,
            ..Self::default()
        }
    }

    /// Several moving objects of which only one is labeled salient.
    pub fn multiple_objects() -> Self {
        SceneConfig {
            num_objects: 3,
            min_size: 6.0,
            max_size: 10.0,
            ..Self::default()
        }
    }

    /// Largest displacement any pixel can have.
    pub fn max_displacement(&self) -> f64 {
        self.max_speed.max(self.camera_speed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return bad("scene height, width and frames must be positive".into());
        }
        if self.num_objects == 0 {
            return bad("a scene needs at least one object".into());
        }
        if self.kinds.is_empty() {
            return bad("no object kinds enabled".into());
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return bad(format!("invalid size range {}..{}", self.min_size, self.max_size));
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) {
            return bad(format!("invalid speed range {}..{}", self.min_speed, self.max_speed));
        }
        if !(self.camera_speed >= 0.0 && self.camera_speed.is_finite()) {
            return bad(format!("invalid camera speed {}", self.camera_speed));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return bad(format!("contrast {} is outside [0, 1]", self.contrast));
        }
        let side = self.height.min(self.width) as f64;
        if 2.0 * self.max_size.ceil() + 1.0 > side {
            return bad(format!(
                "objects of half-extent {} do not fit a {}x{} frame",
                self.max_size, self.height, self.width
            ));
        }
        Ok(())
    }
}

/// One frame: RGB image, ground-truth flow, its rendering and the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: String,
    pub index: usize,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub rgb: Tensor,
    /// `(1, 3, H, W)` rendered flow in `[0, 1]`.
    pub flow_image: Tensor,
    /// `(1, 1, H, W)` with values in `{0, 1}`.
    pub mask: Tensor,
    /// Raw displacement field, when known.
    pub flow: Option<FlowField>,
    /// Magnitude that renders at full saturation.
    pub flow_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug)]
enum Outline {
    Disk(f64),
    Rect(f64, f64),
    Polygon(Vec<(f64, f64)>),
}

impl Outline {
    fn extent(&self) -> (f64, f64) {
        match self {
            Outline::Disk(r) => (*r, *r),
            Outline::Rect(a, b) => (*a, *b),
            Outline::Polygon(v) => v.iter().fold((0.0, 0.0), |(ex, ey), &(x, y)| {
                (f64::max(ex, x.abs()), f64::max(ey, y.abs()))
            }),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Outline::Disk(r) => x * x + y * y <= r * r,
            Outline::Rect(a, b) => x.abs() <= *a && y.abs() <= *b,
            Outline::Polygon(v) => {
                let mut inside = false;
                let mut j = v.len() - 1;
                for i in 0..v.len() {
                    let (xi, yi) = v[i];
                    let (xj, yj) = v[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

/// Smooth periodic texture: base color plus a few sinusoids.
#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 2], [f64; 3], f64)>,
}

impl Texture {
    fn random(rng: &mut impl Rng, base: [f64; 3], amplitude: f64, freq: (f64, f64)) -> Self {
        let waves = (0..3)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let f = rng.random_range(freq.0..freq.1);
                let phase = [
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ];
                ([f * angle.cos(), f * angle.sin()], phase, amplitude / 3.0)
            })
            .collect();
        Texture { base, waves }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = self.base;
        for (k, phase, a) in &self.waves {
            let t = k[0] * x + k[1] * y;
            for (ch, p) in c.iter_mut().zip(phase) {
                *ch += a * (t + p).sin();
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
struct Object {
    outline: Outline,
    texture: Texture,
    /// Integer center trajectory, one entry per rendered state.
    path: Vec<(i64, i64)>,
}

fn random_velocity(rng: &mut impl Rng, min: f64, max: f64) -> Result<(i64, i64)> {
    let bound = max.floor() as i64;
    let candidates: Vec<(i64, i64)> = (-bound..=bound)
        .flat_map(|vx| (-bound..=bound).map(move |vy| (vx, vy)))
        .filter(|&(vx, vy)| {
            let m = ((vx * vx + vy * vy) as f64).sqrt();
            m >= min && m <= max
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Config(format!(
            "no whole-pixel velocity has speed in {min}..{max}"
        )));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Moves `p` by `v` inside `[lo, hi]`, reflecting at the borders.
fn reflect(p: i64, v: i64, lo: i64, hi: i64) -> (i64, i64) {
    let next = p + v;
    if next > hi {
        ((2 * hi - next).max(lo), -v)
    } else if next < lo {
        ((2 * lo - next).min(hi), -v)
    } else {
        (next, v)
    }
}

fn random_outline(rng: &mut impl Rng, kind: ShapeKind, min: f64, max: f64) -> Outline {
    let r = if min < max { rng.random_range(min..=max) } else { min };
    match kind {
        ShapeKind::Disk => Outline::Disk(r),
        ShapeKind::Rectangle => Outline::Rect(r, rng.random_range(0.6..=1.0) * r),
        ShapeKind::Polygon => {
            let k = rng.random_range(5..=8);
            let step = std::f64::consts::TAU / k as f64;
            let v = (0..k)
                .map(|i| {
                    let a = step * (i as f64 + rng.random_range(-0.25..0.25));
                    let rr = r * rng.random_range(0.65..=1.0);
                    (rr * a.cos(), rr * a.sin())
                })
                .collect();
            Outline::Polygon(v)
        }
    }
}

fn object_color(rng: &mut impl Rng, background: [f64; 3], contrast: f64) -> [f64; 3] {
    // Equal-magnitude step along a random sign pattern keeps the distance
    // exact while staying away from the clamp for contrast up to ~0.5.
    let step = contrast / 3f64.sqrt();
    background.map(|b| {
        let up = if b + step > 1.0 {
            false
        } else if b - step < 0.0 {
            true
        } else {
            rng.random_bool(0.5)
        };
        if up {
            b + step
        } else {
            b - step
        }
    })
}

/// Renders a deterministic sequence for `(cfg, seed)`.
pub fn generate_sequence(cfg: &SceneConfig, seed: u64) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cfg.texture_seed.rotate_left(32));
    let (h, w) = (cfg.height, cfg.width);
    let states = cfg.frames + 1;

    let bg_base = [0; 3].map(|_| rng.random_range(0.3..0.7));
    let background = Texture::random(&mut rng, bg_base, 0.18, (0.08, 0.3));
    let camera = random_velocity(&mut rng, cfg.camera_speed.floor(), cfg.camera_speed)?;

    let mut objects = Vec::with_capacity(cfg.num_objects);
    for i in 0..cfg.num_objects {
        let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
        let outline = random_outline(&mut rng, kind, cfg.min_size, cfg.max_size);
        let (ex, ey) = outline.extent();
        let (lo_x, hi_x) = (ex.ceil() as i64, w as i64 - 1 - ex.ceil() as i64);
        let (lo_y, hi_y) = (ey.ceil() as i64, h as i64 - 1 - ey.ceil() as i64);
        if lo_x > hi_x || lo_y > hi_y {
            return Err(Error::Config(format!("object {i} is larger than the {h}x{w} frame")));
        }
        let color = object_color(&mut rng, bg_base, cfg.contrast);
        let texture = Texture::random(&mut rng, color, 0.08, (0.2, 0.6));
        let moving = i == 0 || cfg.distractor_motion;
        let (mut vx, mut vy) = if moving {
            random_velocity(&mut rng, cfg.min_speed, cfg.max_speed)?
        } else {
            (0, 0)
        };
        let mut p = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
        let mut path = Vec::with_capacity(states);
        for _ in 0..states {
            path.push(p);
            let (nx, nvx) = reflect(p.0, vx, lo_x, hi_x);
            let (ny, nvy) = reflect(p.1, vy, lo_y, hi_y);
            p = (nx, ny);
            (vx, vy) = (nvx, nvy);
        }
        objects.push(Object {
            outline,
            texture,
            path,
        });
    }

    let plane = h * w;
    let mut rgbs = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut flows = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let cam = (camera.0 * t as i64, camera.1 * t as i64);
        let mut rgb = vec![0.0; 3 * plane];
        let mut mask = vec![0.0; plane];
        let mut flow = vec![0.0; 2 * plane];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let i = y * w + x;
                // Topmost surface: object 0 first, then the rest in order.
                let hit = objects.iter().enumerate().find(|(_, o)| {
                    let (cx, cy) = o.path[t];
                    o.outline.contains(fx - cx as f64, fy - cy as f64)
                });
                let (color, disp) = match hit {
                    Some((k, o)) => {
                        let (cx, cy) = o.path[t];
                        let (nx, ny) = o.path[t + 1];
                        if k == 0 {
                            mask[i] = 1.0;
                        }
                        (
                            o.texture.color(fx - cx as f64, fy - cy as f64),
                            ((nx - cx) as f64, (ny - cy) as f64),
                        )
                    }
                    None => (
                        background.color(fx - cam.0 as f64, fy - cam.1 as f64),
                        (camera.0 as f64, camera.1 as f64),
                    ),
                };
                for c in 0..3 {
                    rgb[c * plane + i] = color[c];
                }
                flow[i] = disp.0;
                flow[plane + i] = disp.1;
            }
        }
        rgbs.push(Tensor::from_vec(Shape::new(1, 3, h, w), rgb)?);
        masks.push(Tensor::from_vec(Shape::new(1, 1, h, w), mask)?);
        flows.push(FlowField::new(Tensor::from_vec(Shape::new(1, 2, h, w), flow)?)?);
    }

    let norm = flows.iter().map(FlowField::max_magnitude).fold(0.0, f64::max);
    let name = format!("seq{seed:05}");
    let samples = rgbs
        .into_iter()
        .zip(masks)
        .zip(flows)
        .enumerate()
        .map(|(index, ((rgb, mask), flow))| {
            Ok(Sample {
                sequence: name.clone(),
                index,
                flow_image: render_flow_color(&flow, norm)?,
                rgb,
                mask,
                flow: Some(flow),
                flow_norm: norm,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Sequence { name, samples })
}

/// How corrupted sequences have their flow renderings damaged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Corruption {
    /// Additive Gaussian noise of the given standard deviation, clamped.
    Noise { sigma: f64 },
    /// Rendering replaced by black.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub sequences: usize,
    pub seed: u64,
    /// Fraction of sequences whose flow renderings are corrupted.
    pub corrupt_fraction: f64,
    pub corruption: Corruption,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            sequences: 4,
            seed: 0,
            corrupt_fraction: 0.0,
            corruption: Corruption::Noise { sigma: 0.5 },
        }
    }
}

/// Damages a sequence's flow renderings and drops its raw flow, so later
/// augmentation cannot re-render a clean image.
pub fn corrupt_sequence(seq: &mut Sequence, corruption: Corruption, rng: &mut impl Rng) {
    for s in &mut seq.samples {
        match corruption {
            Corruption::Noise { sigma } => {
                let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                for v in s.flow_image.data_mut() {
                    *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
                }
            }
            Corruption::Zero => s.flow_image.data_mut().fill(0.0),
        }
        s.flow = None;
    }
}

/// Generates `cfg.sequences` sequences; sequence `i` uses seed
/// `cfg.seed * 1000 + i`. Exactly `round(fraction * n)` sequences, chosen by
/// a seeded shuffle, are corrupted.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sequence>> {
    if !(0.0..=1.0).contains(&cfg.corrupt_fraction) {
        return Err(Error::Config(format!(
            "corrupt_fraction {} is outside [0, 1]",
            cfg.corrupt_fraction
        )));
    }
    let mut seqs = (0..cfg.sequences as u64)
        .map(|i| generate_sequence(&cfg.scene, cfg.seed.wrapping_mul(1000).wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng);
    let count = (cfg.corrupt_fraction * seqs.len() as f64).round() as usize;
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        corrupt_sequence(&mut seqs[i], cfg.corruption, &mut rng);
    }
    Ok(seqs)
}
