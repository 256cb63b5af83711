//! Per-class Euclidean distance fields, their confidence form, and
//! background-suppressed aggregation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::Pmsm;
use crate::raster::{Point, PointSet};

/// Processing stage of a [`FieldStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RawDistance,
    Confidence,
    Aggregated,
    Expanded,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::RawDistance => "raw",
            Stage::Confidence => "confidence",
            Stage::Aggregated => "aggregated",
            Stage::Expanded => "expanded",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw-distance" => Ok(Stage::RawDistance),
            "confidence" => Ok(Stage::Confidence),
            "aggregated" => Ok(Stage::Aggregated),
            "expanded" => Ok(Stage::Expanded),
            other => Err(Error::InvalidConfig(format!("unknown field stage {other:?}"))),
        }
    }
}

/// `(C + 1) x H x W` field planes, plane `c - 1` belonging to class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    planes: usize,
    height: usize,
    width: usize,
    stage: Stage,
    present: Vec<bool>,
    data: Vec<f64>,
}

impl FieldStack {
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        stage: Stage,
        present: Vec<bool>,
        data: Vec<f64>,
    ) -> Self {
        let planes = present.len();
        debug_assert_eq!(data.len(), planes * height * width);
        Self {
            planes,
            height,
            width,
            stage,
            present,
            data,
        }
    }

    /// Raw distance planes for every class of `points`. Classes without points
    /// get the image diagonal everywhere, which maps to zero confidence.
    pub fn raw(points: &PointSet, height: usize, width: usize) -> Result<Self> {
        points.check_bounds(height, width)?;
        let planes = points.num_classes() as usize + 1;
        let diag = diagonal(height, width);
        let per_class: Vec<(bool, Vec<f64>)> = (1..=planes as u16)
            .into_par_iter()
            .map(|c| {
                let seeds: Vec<Point> = points.of_class(c).copied().collect();
                match distance_field(&seeds, height, width) {
                    Ok(plane) => (true, plane),
                    Err(_) => (false, vec![diag; height * width]),
                }
            })
            .collect();
        let mut present = Vec::with_capacity(planes);
        let mut data = Vec::with_capacity(planes * height * width);
        for (p, plane) in per_class {
            present.push(p);
            data.extend(plane);
        }
        Ok(Self::from_parts(height, width, Stage::RawDistance, present, data))
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Whether class `class_id` (1-based) has annotated points.
    pub fn is_present(&self, class_id: u16) -> bool {
        self.present[class_id as usize - 1]
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, class_id: u16) -> &[f64] {
        let n = self.height * self.width;
        let c = class_id as usize - 1;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn planes_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let n = self.height * self.width;
        self.data.chunks_exact_mut(n)
    }

    pub(crate) fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }

    pub(crate) fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::StageMismatch {
                expected,
                found: self.stage,
            });
        }
        Ok(())
    }

    /// Single-precision dump for inspection.
    pub fn to_pmsm(&self) -> Pmsm {
        Pmsm {
            planes: self.planes,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

pub fn diagonal(height: usize, width: usize) -> f64 {
    ((height * height + width * width) as f64).sqrt()
}

const INF: i64 = i64::MAX;

/// Exact Euclidean distance from every pixel to the nearest seed.
///
/// Squared distances are computed in integers with a separable lower-envelope
/// transform (columns, then rows); the only rounding is the final `sqrt`, so the
/// result is bit-identical to a brute-force minimum over seeds.
pub fn distance_field(seeds: &[Point], height: usize, width: usize) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut grid = vec![INF; height * width];
    for p in seeds {
        if p.x as usize >= width || p.y as usize >= height {
            return Err(Error::OutOfRange(format!(
                "seed ({}, {}) outside {height}x{width}",
                p.x, p.y
            )));
        }
        grid[p.index(width)] = 0;
    }
    let mut env = Envelope::with_capacity(height.max(width));
    let mut line = vec![0i64; height.max(width)];
    let mut out = vec![0i64; height.max(width)];

    for x in 0..width {
        for y in 0..height {
            line[y] = grid[y * width + x];
        }
        env.transform(&line[..height], &mut out[..height]);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for row in grid.chunks_exact_mut(width) {
        line[..width].copy_from_slice(row);
        env.transform(&line[..width], &mut out[..width]);
        row.copy_from_slice(&out[..width]);
    }
    Ok(grid.into_iter().map(|d| (d as f64).sqrt()).collect())
}

/// Lower envelope of parabolas `(q - v)^2 + f(v)` with boundaries kept as exact rationals.
struct Envelope {
    vertices: Vec<usize>,
    // left boundary of parabola k (k >= 1) as numerator / positive denominator
    bounds: Vec<(i64, i64)>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n),
        }
    }

    fn transform(&mut self, f: &[i64], out: &mut [i64]) {
        self.vertices.clear();
        self.bounds.clear();
        let intersect = |f: &[i64], v: usize, q: usize| -> (i64, i64) {
            let (vi, qi) = (v as i64, q as i64);
            ((f[q] + qi * qi) - (f[v] + vi * vi), 2 * (qi - vi))
        };
        // a/b <= c/d with b, d > 0
        let le = |a: (i64, i64), b: (i64, i64)| (a.0 as i128) * (b.1 as i128) <= (b.0 as i128) * (a.1 as i128);

        for q in 0..f.len() {
            if f[q] == INF {
                continue;
            }
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    break;
                };
                let s = intersect(f, v, q);
                if self.vertices.len() > 1 && le(s, self.bounds[self.vertices.len() - 2]) {
                    self.vertices.pop();
                    self.bounds.pop();
                    continue;
                }
                self.vertices.push(q);
                self.bounds.push(s);
                break;
            }
        }
        if self.vertices.is_empty() {
            out.fill(INF);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            // advance while the next parabola's left boundary lies strictly before q
            while k + 1 < self.vertices.len() {
                let (num, den) = self.bounds[k];
                if num < (q as i64) * den {
                    k += 1;
                } else {
                    break;
                }
            }
            let v = self.vertices[k];
            let d = q as i64 - v as i64;
            *o = d * d + f[v];
        }
    }
}

/// Maps raw distances to confidence `max(0, 1 - d / sqrt(H^2 + W^2))`.
pub fn to_confidence(stack: &FieldStack) -> Result<FieldStack> {
    stack.expect_stage(Stage::RawDistance)?;
    let diag = diagonal(stack.height, stack.width);
    let mut out = stack.clone();
    let n = out.height * out.width;
    for (c, plane) in out.data.chunks_exact_mut(n).enumerate() {
        if !stack.present[c] {
            plane.fill(0.0);
            continue;
        }
        for v in plane.iter_mut() {
            *v = confidence(*v, diag);
        }
    }
    out.stage = Stage::Confidence;
    Ok(out)
}

#[inline]
pub fn confidence(distance: f64, diag: f64) -> f64 {
    (1.0 - distance / diag).max(0.0)
}

/// Suppresses object planes where background confidence is high:
/// `F_c <- F_c * (1 - F_bg)` for every object class; background is unchanged.
pub fn aggregate(stack: &FieldStack) -> Result<FieldStack> {
    stack.expect_stage(Stage::Confidence)?;
    let n = stack.height * stack.width;
    let mut out = stack.clone();
    let (objects, background) = out.data.split_at_mut((stack.planes - 1) * n);
    objects.par_chunks_exact_mut(n).for_each(|plane| {
        for (v, &b) in plane.iter_mut().zip(background.iter()) {
            *v *= 1.0 - b;
        }
    });
    out.stage = Stage::Aggregated;
    Ok(out)
}

/// Raw distances through aggregation in one call.
pub fn aggregated_fields(points: &PointSet, height: usize, width: usize) -> Result<FieldStack> {
    aggregate(&to_confidence(&FieldStack::raw(points, height, width)?)?)
}
