//! Synthetic scenes with known ground truth, an oracle score-map generator,
//! and a multi-epoch harness that runs every pipeline ablation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blot::{derive_seed, generate_blots};
use crate::distance::aggregated_fields;
use crate::error::{Error, Result};
use crate::eval::mask_miou;
use crate::expansion::ExpansionState;
use crate::pac::refine;
use crate::pseudomask::{compose, Ablation, PipelineConfig};
use crate::raster::{LabelMask, Point, PointSet, RasterImage, ScoreStack, IGNORE};

/// Minimum Euclidean distance between any two region mean colors (0-255 scale).
pub const MIN_COLOR_DISTANCE: f64 = 60.0;
/// Score noise at the first and last simulated epoch.
pub const DEFAULT_NOISE_START: f64 = 0.5;
pub const DEFAULT_NOISE_END: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 200;
const BACKGROUND_POINTS_PER_SHAPE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Disk { radius: f64 },
    Rectangle { half_width: f64, half_height: f64 },
    Ellipse { radius_x: f64, radius_y: f64 },
}

impl ShapeKind {
    fn half_extent(&self) -> (f64, f64) {
        match *self {
            ShapeKind::Disk { radius } => (radius, radius),
            ShapeKind::Rectangle {
                half_width,
                half_height,
            } => (half_width, half_height),
            ShapeKind::Ellipse { radius_x, radius_y } => (radius_x, radius_y),
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            ShapeKind::Disk { radius } => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Rectangle {
                half_width,
                half_height,
            } => dx.abs() <= half_width && dy.abs() <= half_height,
            ShapeKind::Ellipse { radius_x, radius_y } => {
                (dx / radius_x).powi(2) + (dy / radius_y).powi(2) <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub class_id: u16,
    pub kind: ShapeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: u16,
    pub shapes: Vec<ShapeSpec>,
    /// Mean color per object class, indexed by `class_id - 1`.
    pub class_colors: Vec<[u8; 3]>,
    pub background_color: [u8; 3],
    /// Per-channel uniform noise amplitude on the 0-255 scale.
    pub texture_amplitude: f64,
    pub background_amplitude: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig("scene needs a non-empty raster and classes".into()));
        }
        if self.class_colors.len() != self.num_classes as usize {
            return Err(Error::InvalidConfig(format!(
                "{} class colors for {} classes",
                self.class_colors.len(),
                self.num_classes
            )));
        }
        for s in &self.shapes {
            if s.class_id == 0 || s.class_id > self.num_classes {
                return Err(Error::InvalidConfig(format!("shape class {} invalid", s.class_id)));
            }
            let (hx, hy) = s.kind.half_extent();
            if !(hx > 0.0 && hy > 0.0)
                || 2.0 * hx + 1.0 > self.width as f64
                || 2.0 * hy + 1.0 > self.height as f64
            {
                return Err(Error::InvalidConfig(format!("shape {:?} does not fit", s.kind)));
            }
        }
        let mut colors = self.class_colors.clone();
        colors.push(self.background_color);
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if color_distance(colors[i], colors[j]) < MIN_COLOR_DISTANCE {
                    return Err(Error::InvalidConfig(format!(
                        "colors {:?} and {:?} are closer than {MIN_COLOR_DISTANCE}",
                        colors[i], colors[j]
                    )));
                }
            }
        }
        if !(self.texture_amplitude >= 0.0 && self.background_amplitude >= 0.0) {
            return Err(Error::InvalidConfig("noise amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Random scene with `shapes` objects of random classes and kinds.
    pub fn random(
        height: usize,
        width: usize,
        num_classes: u16,
        shapes: usize,
        texture_amplitude: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut palette: Vec<[u8; 3]> = Vec::new();
        while palette.len() < num_classes as usize + 1 {
            let c = [rng.gen(), rng.gen(), rng.gen()];
            if palette.iter().all(|&p| color_distance(p, c) >= MIN_COLOR_DISTANCE) {
                palette.push(c);
            }
        }
        let background_color = palette.pop().unwrap();
        let side = height.min(width) as f64;
        let shapes = (0..shapes)
            .map(|_| {
                let class_id = rng.gen_range(1..=num_classes);
                let a = rng.gen_range(0.10..0.20) * side;
                let b = rng.gen_range(0.10..0.20) * side;
                let kind = match rng.gen_range(0..3) {
                    0 => ShapeKind::Disk { radius: a },
                    1 => ShapeKind::Rectangle {
                        half_width: a,
                        half_height: b,
                    },
                    _ => ShapeKind::Ellipse {
                        radius_x: a,
                        radius_y: b,
                    },
                };
                ShapeSpec { class_id, kind }
            })
            .collect();
        Self {
            height,
            width,
            num_classes,
            shapes,
            class_colors: palette,
            background_color,
            texture_amplitude,
            background_amplitude: texture_amplitude,
            seed,
        }
    }
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RasterImage,
    pub ground_truth: LabelMask,
    pub points: PointSet,
}

pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let bg = spec.num_classes + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![bg; h * w];
    let mut shape_pixels: Vec<Vec<usize>> = Vec::with_capacity(spec.shapes.len());

    for shape in &spec.shapes {
        let (hx, hy) = shape.kind.half_extent();
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cx = rng.gen_range(hx..=(w as f64 - 1.0 - hx));
            let cy = rng.gen_range(hy..=(h as f64 - 1.0 - hy));
            let pixels: Vec<usize> = (0..h * w)
                .filter(|&i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    shape.kind.contains(x - cx, y - cy)
                })
                .collect();
            // keep a one-pixel gap to earlier shapes
            let clear = !pixels.is_empty()
                && pixels.iter().all(|&i| {
                    let (x, y) = (i % w, i / w);
                    (y.saturating_sub(1)..(y + 2).min(h))
                        .all(|yy| (x.saturating_sub(1)..(x + 2).min(w)).all(|xx| labels[yy * w + xx] == bg))
                });
            if clear {
                placed = Some(pixels);
                break;
            }
        }
        let pixels = placed.ok_or(Error::PlacementFailure(spec.shapes.len()))?;
        for &i in &pixels {
            labels[i] = shape.class_id;
        }
        shape_pixels.push(pixels);
    }

    let mut bytes = Vec::with_capacity(h * w * 3);
    for &l in &labels {
        let (base, amp) = if l == bg {
            (spec.background_color, spec.background_amplitude)
        } else {
            (spec.class_colors[l as usize - 1], spec.texture_amplitude)
        };
        for &c in &base {
            let noise = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            bytes.push((f64::from(c) + noise).round().clamp(0.0, 255.0) as u8);
        }
    }

    let mut entries = Vec::new();
    for (shape, pixels) in spec.shapes.iter().zip(&shape_pixels) {
        let i = pixels[rng.gen_range(0..pixels.len())];
        entries.push(Point::new(shape.class_id, (i % w) as u32, (i / w) as u32));
    }
    let outside: Vec<usize> = (0..h * w).filter(|&i| labels[i] == bg).collect();
    let wanted = (BACKGROUND_POINTS_PER_SHAPE * spec.shapes.len()).min(outside.len());
    let chosen = rand::seq::index::sample(&mut rng, outside.len(), wanted);
    for k in chosen.iter() {
        let i = outside[k];
        entries.push(Point::new(bg, (i % w) as u32, (i / w) as u32));
    }

    Ok(Scene {
        image: RasterImage::from_rgb8(h, w, bytes)?,
        ground_truth: LabelMask::new(h, w, spec.num_classes, labels)?,
        points: PointSet::new(spec.num_classes, entries)?,
    })
}

/// Blends one-hot ground truth with uniform noise, `(1 - n) * onehot + n * u`,
/// and rescales any pixel whose planes sum above 1.
pub fn oracle_scores(ground_truth: &LabelMask, noise: f64, rng: &mut impl Rng) -> Result<ScoreStack> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::OutOfRange(format!("noise level {noise} outside [0, 1]")));
    }
    let planes = ground_truth.num_classes() as usize + 1;
    let n = ground_truth.height() * ground_truth.width();
    let mut data = vec![0.0f32; planes * n];
    let mut pixel = vec![0.0f64; planes];
    for (i, &label) in ground_truth.labels().iter().enumerate() {
        for (c, v) in pixel.iter_mut().enumerate() {
            let onehot = if label != IGNORE && c + 1 == label as usize { 1.0 } else { 0.0 };
            let u: f64 = if noise > 0.0 { rng.gen() } else { 0.0 };
            *v = (1.0 - noise) * onehot + noise * u;
        }
        let sum: f64 = pixel.iter().sum();
        let scale = if sum > 1.0 { 1.0 / sum } else { 1.0 };
        for (c, &v) in pixel.iter().enumerate() {
            data[c * n + i] = ((v * scale) as f32).min(1.0);
        }
    }
    ScoreStack::new(planes, ground_truth.height(), ground_truth.width(), data)
}

/// Mean per-pixel cross-entropy of `scores` against the ground truth.
pub fn cross_entropy(scores: &ScoreStack, ground_truth: &LabelMask) -> f64 {
    let n = scores.height() * scores.width();
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &label) in ground_truth.labels().iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let p = f64::from(scores.data()[(label as usize - 1) * n + i]).max(1e-12);
        total -= p.ln();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSchedule {
    /// Score noise per epoch, expected to decrease.
    pub noise: Vec<f64>,
    /// Loss observed at the end of each epoch.
    pub losses: Vec<f64>,
    /// Loss before the first epoch; primes the expansion state so the first
    /// epoch already takes a step.
    pub initial_loss: Option<f64>,
}

impl EpochSchedule {
    /// Linearly decreasing noise with a loss that halves every epoch.
    pub fn halving(epochs: usize, noise_start: f64, noise_end: f64) -> Self {
        let noise = linear(epochs, noise_start, noise_end);
        let losses = (1..=epochs).map(|e| 0.5f64.powi(e as i32)).collect();
        Self {
            noise,
            losses,
            initial_loss: Some(1.0),
        }
    }

    /// Linearly decreasing noise with the loss measured as the mean
    /// cross-entropy of oracle scores over `scenes`. The initial loss uses
    /// noise 1. Losses are floored at 1e-9 so a noiseless epoch stays valid.
    pub fn cross_entropy(
        scenes: &[Scene],
        epochs: usize,
        noise_start: f64,
        noise_end: f64,
        seed: u64,
    ) -> Result<Self> {
        let noise = linear(epochs, noise_start, noise_end);
        let mean_loss = |level: f64, tag: &str| -> Result<f64> {
            let total = scenes
                .par_iter()
                .enumerate()
                .map(|(si, s)| {
                    let key = format!("loss-{tag}-{si}");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &key));
                    Ok(cross_entropy(&oracle_scores(&s.ground_truth, level, &mut rng)?, &s.ground_truth))
                })
                .collect::<Result<Vec<f64>>>()?
                .iter()
                .sum::<f64>();
            Ok((total / scenes.len().max(1) as f64).max(1e-9))
        };
        let losses = noise
            .iter()
            .enumerate()
            .map(|(e, &n)| mean_loss(n, &e.to_string()))
            .collect::<Result<_>>()?;
        Ok(Self {
            noise,
            losses,
            initial_loss: Some(mean_loss(1.0, "initial")?),
        })
    }

    pub fn epochs(&self) -> usize {
        self.noise.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.len() != self.losses.len() || self.noise.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "schedule has {} noise levels and {} losses",
                self.noise.len(),
                self.losses.len()
            )));
        }
        if let Some(v) = self.noise.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("noise level {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Expansion state after each epoch.
    pub fn states(&self, eta: f64, omega: f64) -> Result<Vec<ExpansionState>> {
        let mut state = ExpansionState::new(eta, omega)?;
        if let Some(l) = self.initial_loss {
            state.update(l)?;
        }
        self.losses
            .iter()
            .map(|&l| {
                state.update(l)?;
                Ok(state.clone())
            })
            .collect()
    }
}

fn linear(n: usize, start: f64, end: f64) -> Vec<f64> {
    if n == 1 {
        return vec![end];
    }
    (0..n)
        .map(|i| {
            // two-sided form hits both endpoints exactly
            let t = i as f64 / (n - 1) as f64;
            start * (1.0 - t) + end * t
        })
        .collect()
}

/// Ablations reported by the simulation, in report order.
pub const SIMULATED_VARIANTS: [Ablation; 6] = [
    Ablation::POINTS_ONLY,
    Ablation::BLOTS_ONLY,
    Ablation::FIELDS_ONLY,
    Ablation::FIELDS_BLOTS,
    Ablation::FIELDS_REFINER,
    Ablation::FULL,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub scenes: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: u16,
    pub shapes_per_scene: usize,
    pub texture_amplitude: f64,
    pub eta: f64,
    pub omega: f64,
    pub pipeline: PipelineConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scenes: 50,
            seed: 0,
            height: 64,
            width: 64,
            num_classes: 3,
            shapes_per_scene: 2,
            texture_amplitude: 24.0,
            eta: crate::expansion::DEFAULT_ETA,
            omega: crate::expansion::DEFAULT_OMEGA,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        SceneSpec::random(
            self.height,
            self.width,
            self.num_classes,
            self.shapes_per_scene,
            self.texture_amplitude,
            derive_seed(self.seed, &format!("scene-{index}")),
        )
    }

    pub fn scenes(&self) -> Result<Vec<Scene>> {
        (0..self.scenes)
            .into_par_iter()
            .map(|i| gen_scene(&self.scene_spec(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub variant: Ablation,
    pub mean_miou: f64,
    pub object_score: f64,
    pub background_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub rows: Vec<EpochRow>,
}

impl SimulationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,variant,mean_mIoU,object_E,background_E\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                r.epoch,
                r.variant.name(),
                r.mean_miou,
                r.object_score,
                r.background_score
            ));
        }
        out
    }

    pub fn final_epoch(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn miou(&self, epoch: usize, variant: Ablation) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epoch == epoch && r.variant == variant)
            .map(|r| r.mean_miou)
    }
}

/// Runs every simulated ablation over the scene set for each epoch and
/// reports the mean per-scene mIoU.
pub fn simulate_epochs(
    scenes: &[Scene],
    schedule: &EpochSchedule,
    config: &SimulationConfig,
) -> Result<SimulationReport> {
    schedule.validate()?;
    let states = schedule.states(config.eta, config.omega)?;
    let pipeline = &config.pipeline;

    // per scene: [epoch][variant] mIoU
    let per_scene: Vec<Vec<Vec<f64>>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, scene)| -> Result<Vec<Vec<f64>>> {
            let (h, w) = (scene.image.height(), scene.image.width());
            let mut blot_cfg = pipeline.blot.clone();
            blot_cfg.rng_seed = derive_seed(config.seed, &format!("blots-{si}"));
            let blots = generate_blots(&scene.image, &scene.points, &blot_cfg)?;
            let point_mask = LabelMask::from_points(h, w, &scene.points);
            let aggregated = aggregated_fields(&scene.points, h, w)?;
            let mut out = Vec::with_capacity(states.len());
            for (e, state) in states.iter().enumerate() {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("scores-{si}-{e}")));
                let scores = oracle_scores(&scene.ground_truth, schedule.noise[e], &mut rng)?;
                let refined = refine(&scores, &scene.image, &pipeline.refiner)?;
                let expanded = state.apply(&aggregated)?;
                let mut row = Vec::with_capacity(SIMULATED_VARIANTS.len());
                for v in SIMULATED_VARIANTS {
                    let features = match (v.thresholds_features(), v.refiner) {
                        (false, _) => None,
                        (true, true) => Some(&refined),
                        (true, false) => Some(&scores),
                    };
                    let fields = v.fields.then_some(&expanded);
                    let overlay = if v.blots { &blots } else { &point_mask };
                    let mask = compose(features, fields, &scene.points, overlay, pipeline.threshold)?;
                    row.push(mask_miou(&mask.labels, &scene.ground_truth)?);
                }
                out.push(row);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (e, state) in states.iter().enumerate() {
        for (k, v) in SIMULATED_VARIANTS.iter().enumerate() {
            let mean = per_scene.iter().map(|s| s[e][k]).sum::<f64>() / per_scene.len().max(1) as f64;
            rows.push(EpochRow {
                epoch: e + 1,
                variant: *v,
                mean_miou: mean,
                object_score: state.object_score(),
                background_score: state.background_score(),
            });
        }
    }
    Ok(SimulationReport { rows })
}
