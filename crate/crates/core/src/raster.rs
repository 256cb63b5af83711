//! Rasters and annotations shared by every stage of the engine.
//!
//! Coordinates are `(x, y)` = (column, row), zero-based, top-left origin.
//! Labels use one encoding everywhere: `0` is ignore, `1..=C` are object
//! classes and `C + 1` is background.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Label reserved for pixels excluded from supervision and evaluation.
pub const IGNORE: u16 = 0;

/// An 8-bit, 3-channel color raster together with its unit-normalized view.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    bytes: Vec<u8>,
    normalized: Vec<f64>,
}

impl RasterImage {
    /// Builds an image from interleaved RGB bytes in row-major order.
    pub fn from_rgb8(height: usize, width: usize, bytes: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if bytes.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x3 image needs {} bytes, got {}",
                height * width * 3,
                bytes.len()
            )));
        }
        let normalized = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(Self {
            height,
            width,
            bytes,
            normalized,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Interleaved RGB values in `[0, 1]`.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.bytes[i], self.bytes[i + 1], self.bytes[i + 2]]
    }

    /// Normalized color of the pixel at flat index `idx = y * width + x`.
    pub fn color(&self, idx: usize) -> [f64; 3] {
        let i = idx * 3;
        [
            self.normalized[i],
            self.normalized[i + 1],
            self.normalized[i + 2],
        ]
    }
}

/// One annotated pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point {
    pub class_id: u16,
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(class_id: u16, x: u32, y: u32) -> Self {
        Self { class_id, x, y }
    }

    pub fn index(&self, width: usize) -> usize {
        self.y as usize * width + self.x as usize
    }
}

/// Sparse point annotations for one image. Class `num_classes + 1` marks background points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSet {
    entries: Vec<Point>,
    num_classes: u16,
}

impl PointSet {
    pub fn new(num_classes: u16, entries: Vec<Point>) -> Result<Self> {
        if num_classes == 0 || num_classes == u16::MAX {
            return Err(Error::OutOfRange(format!(
                "number of classes must be in 1..{}, got {num_classes}",
                u16::MAX
            )));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for p in &entries {
            if p.class_id == IGNORE || p.class_id > num_classes + 1 {
                return Err(Error::OutOfRange(format!(
                    "class {} outside 1..={}",
                    p.class_id,
                    num_classes + 1
                )));
            }
            if !seen.insert(*p) {
                return Err(Error::DuplicatePoint {
                    class_id: p.class_id,
                    x: p.x,
                    y: p.y,
                });
            }
        }
        Ok(Self {
            entries,
            num_classes,
        })
    }

    pub fn empty(num_classes: u16) -> Result<Self> {
        Self::new(num_classes, Vec::new())
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    /// Label used for background points (`C + 1`).
    pub fn background_class(&self) -> u16 {
        self.num_classes + 1
    }

    pub fn points(&self) -> &[Point] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn of_class(&self, class_id: u16) -> impl Iterator<Item = &Point> + '_ {
        self.entries.iter().filter(move |p| p.class_id == class_id)
    }

    /// Sorted list of classes that carry at least one point.
    pub fn present_classes(&self) -> Vec<u16> {
        let mut classes: Vec<u16> = self.entries.iter().map(|p| p.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Checks every coordinate against an `height x width` raster.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        for p in &self.entries {
            if p.x as usize >= width || p.y as usize >= height {
                return Err(Error::OutOfRange(format!(
                    "point ({}, {}) of class {} outside {height}x{width} image",
                    p.x, p.y, p.class_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-class score planes `(C + 1) x H x W`, plane-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStack {
    planes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScoreStack {
    pub fn new(planes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if planes < 2 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "score stack needs at least 2 planes of 1x1, got {planes}x{height}x{width}"
            )));
        }
        if data.len() != planes * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{planes}x{height}x{width} stack needs {} values, got {}",
                planes * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("score {v} outside [0, 1]")));
        }
        Ok(Self {
            planes,
            height,
            width,
            data,
        })
    }

    pub fn zeros(planes: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(planes, height, width, vec![0.0; planes * height * width])
    }

    /// Number of planes, `C + 1`.
    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn num_classes(&self) -> u16 {
        (self.planes - 1) as u16
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Plane for class `class_id` (1-based; `C + 1` is background).
    pub fn plane(&self, class_id: u16) -> &[f32] {
        let n = self.height * self.width;
        let c = class_id as usize - 1;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Label raster: `0` ignore, `1..=C` objects, `C + 1` background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    num_classes: u16,
    labels: Vec<u16>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, num_classes: u16, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > num_classes + 1) {
            return Err(Error::OutOfRange(format!(
                "label {l} outside 0..={}",
                num_classes + 1
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    /// An all-ignore mask.
    pub fn ignore(height: usize, width: usize, num_classes: u16) -> Self {
        Self {
            height,
            width,
            num_classes,
            labels: vec![IGNORE; height * width],
        }
    }

    /// A mask with only the annotated pixels labeled. Later points win on collisions.
    pub fn from_points(height: usize, width: usize, points: &PointSet) -> Self {
        let mut mask = Self::ignore(height, width, points.num_classes());
        for p in points.points() {
            mask.labels[p.index(width)] = p.class_id;
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_view_is_exact_division() {
        let img = RasterImage::from_rgb8(1, 2, vec![0, 128, 255, 1, 2, 3]).unwrap();
        assert_eq!(img.normalized()[0], 0.0);
        assert_eq!(img.normalized()[2], 1.0);
        assert_eq!(img.normalized()[1], 128.0 / 255.0);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(RasterImage::from_rgb8(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::from_rgb8(0, 2, vec![]).is_err());
    }

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(20, vec![Point::new(21, 0, 0)]).is_ok());
        assert!(matches!(
            PointSet::new(20, vec![Point::new(0, 5, 5)]),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            PointSet::new(20, vec![Point::new(22, 5, 5)]),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            PointSet::new(2, vec![Point::new(1, 5, 5), Point::new(1, 5, 5)]),
            Err(Error::DuplicatePoint { .. })
        ));
        let ps = PointSet::new(2, vec![Point::new(1, 5, 5), Point::new(3, 5, 5)]).unwrap();
        assert!(ps.check_bounds(6, 6).is_ok());
        assert!(ps.check_bounds(5, 6).is_err());
        assert_eq!(ps.present_classes(), vec![1, 3]);
    }

    #[test]
    fn score_stack_rejects_out_of_range_values() {
        assert!(ScoreStack::new(2, 1, 1, vec![0.5, 1.5]).is_err());
        assert!(ScoreStack::new(2, 1, 1, vec![0.5, f32::NAN]).is_err());
        let s = ScoreStack::new(2, 1, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(s.plane(2), &[0.3, 0.4]);
    }

    #[test]
    fn mask_label_range() {
        assert!(LabelMask::new(1, 2, 2, vec![0, 3]).is_ok());
        assert!(LabelMask::new(1, 2, 2, vec![0, 4]).is_err());
    }
}
