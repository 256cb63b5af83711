//! Color overlays of label masks and heatmaps of single planes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{encode_png, write_atomic};
use crate::raster::{LabelMask, RasterImage, IGNORE};

/// Object class colors; class `c` uses entry `(c - 1) % 21`.
pub const PALETTE: [[u8; 3]; 21] = [
    [128, 0, 0],
    [0, 128, 0],
    [128, 128, 0],
    [0, 0, 128],
    [128, 0, 128],
    [0, 128, 128],
    [128, 128, 128],
    [64, 0, 0],
    [192, 0, 0],
    [64, 128, 0],
    [192, 128, 0],
    [64, 0, 128],
    [192, 0, 128],
    [64, 128, 128],
    [192, 128, 128],
    [0, 64, 0],
    [128, 64, 0],
    [0, 192, 0],
    [128, 192, 0],
    [0, 64, 128],
    [128, 64, 128],
];

pub const BACKGROUND_COLOR: [u8; 3] = [64, 64, 64];

pub fn class_color(class_id: u16, num_classes: u16) -> Option<[u8; 3]> {
    match class_id {
        IGNORE => None,
        c if c == num_classes + 1 => Some(BACKGROUND_COLOR),
        c => Some(PALETTE[(c as usize - 1) % PALETTE.len()]),
    }
}

/// 8-bit RGBA raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbaRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbaRaster {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.data, self.width, self.height, image::ExtendedColorType::Rgba8)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_png()?)
    }
}

pub fn render_overlay(image: &RasterImage, mask: &LabelMask, alpha: f64) -> Result<RgbaRaster> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut data = Vec::with_capacity(image.len() * 4);
    for (i, &label) in mask.labels().iter().enumerate() {
        let px = &image.as_bytes()[i * 3..i * 3 + 3];
        match class_color(label, mask.num_classes()) {
            None => data.extend_from_slice(px),
            Some(color) => {
                for ch in 0..3 {
                    let v = (1.0 - alpha) * f64::from(px[ch]) + alpha * f64::from(color[ch]);
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        data.push(255);
    }
    Ok(RgbaRaster {
        height: image.height(),
        width: image.width(),
        data,
    })
}

/// Black → red → yellow → white; every channel is non-decreasing in `v`.
pub fn heat_color(v: f64) -> [u8; 3] {
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * v), ch(3.0 * v - 1.0), ch(3.0 * v - 2.0)]
}

pub fn render_heatmap(plane: &[f64], height: usize, width: usize) -> Result<RasterImage> {
    if plane.len() != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width} heatmap needs {} values, got {}",
            height * width,
            plane.len()
        )));
    }
    if let Some(v) = plane.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("value {v} outside [0, 1]")));
    }
    let bytes = plane.iter().flat_map(|&v| heat_color(v)).collect();
    RasterImage::from_rgb8(height, width, bytes)
}
