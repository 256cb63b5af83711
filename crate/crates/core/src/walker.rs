//! Seeded random-walker segmentation.
//!
//! Pixels form a 4-connected lattice with edge weights
//! `exp(-beta * |X_u - X_v|^2) + 1e-6`. For each seeded class the
//! probability that a walker first reaches that class's seeds solves a
//! Dirichlet problem on the graph Laplacian restricted to unseeded pixels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multigrid::{Laplacian, Multigrid};
use crate::raster::{LabelMask, PointSet, RasterImage, IGNORE};

pub const DEFAULT_BETA: f64 = 130.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;
pub const DEFAULT_TAU: f64 = 0.9;
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkerConfig {
    pub beta: f64,
    /// Relative residual bound `|r| <= tolerance * |b|` for each solve.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(format!(
                "walker needs beta > 0, tolerance > 0 and max_iterations > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub struct WalkerProblem<'a> {
    pub image: &'a RasterImage,
    pub seeds: &'a PointSet,
    pub config: WalkerConfig,
}

/// Per-class first-arrival probabilities for every seeded class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack {
    height: usize,
    width: usize,
    num_classes: u16,
    classes: Vec<u16>,
    seed_labels: Vec<u16>,
    data: Vec<f64>,
}

impl ProbabilityStack {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Seeded classes in ascending order; plane `i` belongs to `classes()[i]`.
    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Seed class per pixel, `IGNORE` where unseeded.
    pub fn seed_labels(&self) -> &[u16] {
        &self.seed_labels
    }

    /// Dense `(C + 1)`-plane view; unseeded classes get all-zero planes.
    pub fn to_full_planes(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0f32; (self.num_classes as usize + 1) * n];
        for (i, &c) in self.classes.iter().enumerate() {
            let dst = &mut out[(c as usize - 1) * n..c as usize * n];
            for (d, &v) in dst.iter_mut().zip(self.plane(i)) {
                *d = v.clamp(0.0, 1.0) as f32;
            }
        }
        out
    }
}

pub fn edge_weight(a: [f64; 3], b: [f64; 3], beta: f64) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    (-beta * d2).exp() + WEIGHT_FLOOR
}

fn neighbors(idx: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (idx / width, idx % width);
    let up = (y > 0).then(|| idx - width);
    let down = (y + 1 < height).then(|| idx + width);
    let left = (x > 0).then(|| idx - 1);
    let right = (x + 1 < width).then(|| idx + 1);
    [up, left, right, down].into_iter().flatten()
}

/// Seed class per pixel; two classes on one pixel is an error.
pub(crate) fn seed_map(seeds: &PointSet, height: usize, width: usize) -> Result<Vec<u16>> {
    seeds.check_bounds(height, width)?;
    let mut map = vec![IGNORE; height * width];
    for p in seeds.points() {
        let slot = &mut map[p.index(width)];
        if *slot != IGNORE && *slot != p.class_id {
            return Err(Error::ConflictingSeeds {
                x: p.x,
                y: p.y,
                first: *slot,
                second: p.class_id,
            });
        }
        *slot = p.class_id;
    }
    Ok(map)
}

pub fn solve_walker(problem: &WalkerProblem<'_>) -> Result<ProbabilityStack> {
    problem.config.validate()?;
    let image = problem.image;
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    let seed_labels = seed_map(problem.seeds, h, w)?;
    let classes = problem.seeds.present_classes();
    if classes.is_empty() {
        return Err(Error::NoSeeds);
    }

    // unseeded pixel -> row in the reduced system
    let mut row_of = vec![usize::MAX; n];
    let mut free = Vec::new();
    for (i, &s) in seed_labels.iter().enumerate() {
        if s == IGNORE {
            row_of[i] = free.len();
            free.push(i);
        }
    }

    let colors: Vec<[f64; 3]> = (0..n).map(|i| image.color(i)).collect();
    let beta = problem.config.beta;
    let mut lap = Laplacian {
        diag: Vec::with_capacity(free.len()),
        offsets: Vec::with_capacity(free.len() + 1),
        cols: Vec::new(),
        vals: Vec::new(),
    };
    // boundary coupling: (row, seeded neighbor class, weight)
    let mut boundary: Vec<(usize, u16, f64)> = Vec::new();
    lap.offsets.push(0);
    for (r, &i) in free.iter().enumerate() {
        let mut degree = 0.0;
        for j in neighbors(i, h, w) {
            let wij = edge_weight(colors[i], colors[j], beta);
            degree += wij;
            if seed_labels[j] == IGNORE {
                lap.cols.push(row_of[j]);
                lap.vals.push(wij);
            } else {
                boundary.push((r, seed_labels[j], wij));
            }
        }
        lap.diag.push(degree);
        lap.offsets.push(lap.cols.len());
    }

    let coords = free.iter().map(|&i| ((i % w) as u32, (i / w) as u32)).collect();
    let mg = Multigrid::build(lap.clone(), coords);

    let solutions: Vec<Vec<f64>> = classes
        .par_iter()
        .map(|&c| {
            let mut rhs = vec![0.0; free.len()];
            for &(r, sc, wij) in &boundary {
                if sc == c {
                    rhs[r] += wij;
                }
            }
            conjugate_gradient(&lap, &mg, &rhs, problem.config.tolerance, problem.config.max_iterations)
        })
        .collect::<Result<_>>()?;

    let mut data = vec![0.0; classes.len() * n];
    for (k, (&c, sol)) in classes.iter().zip(&solutions).enumerate() {
        let plane = &mut data[k * n..(k + 1) * n];
        for (i, v) in plane.iter_mut().enumerate() {
            *v = match seed_labels[i] {
                IGNORE => sol[row_of[i]],
                s if s == c => 1.0,
                _ => 0.0,
            };
        }
    }
    Ok(ProbabilityStack {
        height: h,
        width: w,
        num_classes: problem.seeds.num_classes(),
        classes,
        seed_labels,
        data,
    })
}

/// Conjugate gradient for the SPD reduced Laplacian, preconditioned with one
/// multigrid V-cycle per iteration.
fn conjugate_gradient(
    lap: &Laplacian,
    mg: &Multigrid,
    rhs: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    let m = rhs.len();
    let mut x = vec![0.0; m];
    let b_norm = norm(rhs);
    if b_norm == 0.0 || m == 0 {
        return Ok(x);
    }
    let target = tolerance * b_norm;
    let mut ws = mg.workspace();
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; m];
    mg.precondition(&r, &mut z, &mut ws);
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz = dot(&r, &z);
    let mut residual = b_norm;
    for _ in 0..max_iterations {
        lap.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = norm(&r);
        if residual <= target {
            return Ok(x);
        }
        mg.precondition(&r, &mut z, &mut ws);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iterations,
        residual: residual / b_norm,
        tolerance,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Labels pixels whose best class probability reaches `tau`; seed pixels are
/// always labeled. Ties go to the lowest class index.
pub fn walker_mask(probs: &ProbabilityStack, tau: f64) -> Result<LabelMask> {
    if !(tau > 0.5 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("tau must lie in (0.5, 1], got {tau}")));
    }
    let n = probs.height * probs.width;
    let mut labels = vec![IGNORE; n];
    for (i, label) in labels.iter_mut().enumerate() {
        if probs.seed_labels[i] != IGNORE {
            *label = probs.seed_labels[i];
            continue;
        }
        let mut best = (f64::NEG_INFINITY, IGNORE);
        for (k, &c) in probs.classes.iter().enumerate() {
            let v = probs.data[k * n + i];
            if v > best.0 {
                best = (v, c);
            }
        }
        if best.0 >= tau {
            *label = best.1;
        }
    }
    LabelMask::new(probs.height, probs.width, probs.num_classes, labels)
}

/// Walker solve followed by thresholding.
pub fn walker_labels(
    image: &RasterImage,
    seeds: &PointSet,
    config: WalkerConfig,
    tau: f64,
) -> Result<LabelMask> {
    let probs = solve_walker(&WalkerProblem {
        image,
        seeds,
        config,
    })?;
    walker_mask(&probs, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Point;

    fn uniform(h: usize, w: usize) -> RasterImage {
        RasterImage::from_rgb8(h, w, vec![100; h * w * 3]).unwrap()
    }

    #[test]
    fn symmetric_line() {
        let img = uniform(1, 3);
        let seeds = PointSet::new(2, vec![Point::new(1, 0, 0), Point::new(2, 2, 0)]).unwrap();
        let p = solve_walker(&WalkerProblem {
            image: &img,
            seeds: &seeds,
            config: WalkerConfig::default(),
        })
        .unwrap();
        assert!((p.plane(0)[1] - 0.5).abs() < 1e-12);
        assert!((p.plane(1)[1] - 0.5).abs() < 1e-12);
        assert_eq!(p.plane(0)[0], 1.0);
        assert_eq!(p.plane(1)[0], 0.0);
    }

    #[test]
    fn no_seeds_is_an_error() {
        let img = uniform(2, 2);
        let seeds = PointSet::empty(2).unwrap();
        let r = solve_walker(&WalkerProblem {
            image: &img,
            seeds: &seeds,
            config: WalkerConfig::default(),
        });
        assert!(matches!(r, Err(Error::NoSeeds)));
    }

    #[test]
    fn conflicting_seeds_rejected() {
        let img = uniform(2, 2);
        let seeds = PointSet::new(2, vec![Point::new(1, 0, 0), Point::new(2, 0, 0)]).unwrap();
        let r = solve_walker(&WalkerProblem {
            image: &img,
            seeds: &seeds,
            config: WalkerConfig::default(),
        });
        assert!(matches!(r, Err(Error::ConflictingSeeds { .. })));
    }

    #[test]
    fn iteration_budget_exhaustion() {
        let img = uniform(40, 40);
        let seeds = PointSet::new(2, vec![Point::new(1, 0, 0), Point::new(2, 39, 39)]).unwrap();
        let r = solve_walker(&WalkerProblem {
            image: &img,
            seeds: &seeds,
            config: WalkerConfig {
                max_iterations: 1,
                ..WalkerConfig::default()
            },
        });
        assert!(matches!(r, Err(Error::SolverDiverged { .. })));
    }

    #[test]
    fn mask_threshold() {
        let probs = ProbabilityStack {
            height: 1,
            width: 2,
            num_classes: 1,
            classes: vec![1, 2],
            seed_labels: vec![IGNORE, IGNORE],
            data: vec![0.95, 0.6, 0.05, 0.4],
        };
        let m = walker_mask(&probs, 0.9).unwrap();
        assert_eq!(m.labels(), &[1, 0]);
        assert!(walker_mask(&probs, 0.5).is_err());
    }

    #[test]
    fn bicolor_regions_fill() {
        // left half dark, right half bright
        let (h, w) = (6, 8);
        let mut bytes = Vec::new();
        for _y in 0..h {
            for x in 0..w {
                let v = if x < 4 { 20 } else { 230 };
                bytes.extend_from_slice(&[v, v, v]);
            }
        }
        let img = RasterImage::from_rgb8(h, w, bytes).unwrap();
        let seeds = PointSet::new(1, vec![Point::new(1, 1, 2), Point::new(2, 6, 3)]).unwrap();
        let mask = walker_labels(&img, &seeds, WalkerConfig::default(), 0.9).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(mask.get(x, y), if x < 4 { 1 } else { 2 });
            }
        }
    }
}
