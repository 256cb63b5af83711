//! Parameter-free pixel-adaptive convolution stack used to smooth score maps
//! along image structure.
//!
//! Each layer correlates every class plane with a per-location kernel built
//! from the guidance image window (color distance to the center pixel, scaled
//! by the window's color standard deviation) and the mean of the class plane
//! over the same window. Stride-2 layers downsample; the guidance image is
//! average-pooled alongside, and the final stack is bilinearly upsampled back
//! to the input resolution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{RasterImage, ScoreStack};

pub const KERNEL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacLayerSpec {
    pub kernel_size: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl PacLayerSpec {
    pub fn new(kernel_size: usize, dilation: usize, stride: usize) -> Result<Self> {
        if ![3, 5, 7].contains(&kernel_size) {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be 3, 5 or 7, got {kernel_size}"
            )));
        }
        if dilation == 0 {
            return Err(Error::InvalidConfig("dilation must be at least 1".into()));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidConfig(format!("stride must be 1 or 2, got {stride}")));
        }
        Ok(Self {
            kernel_size,
            dilation,
            stride,
        })
    }

    /// Dilation actually used on an `height x width` input when capping is on.
    pub fn effective_dilation(&self, height: usize, width: usize) -> usize {
        let cap = ((height.min(width) - 1) / (self.kernel_size - 1)).max(1);
        self.dilation.min(cap)
    }
}

const fn layer(kernel_size: usize, dilation: usize, stride: usize) -> PacLayerSpec {
    PacLayerSpec {
        kernel_size,
        dilation,
        stride,
    }
}

/// Twelve-layer default stack.
pub const DEFAULT_LAYERS: [PacLayerSpec; 12] = [
    layer(7, 1, 2),
    layer(7, 1, 2),
    layer(5, 2, 2),
    layer(5, 2, 2),
    layer(3, 4, 1),
    layer(3, 4, 1),
    layer(3, 8, 1),
    layer(3, 8, 1),
    layer(3, 16, 1),
    layer(3, 16, 1),
    layer(3, 32, 1),
    layer(3, 32, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    /// `exp(-delta / (sigma + eps)) * mu`, L1-normalized.
    #[default]
    ExpRatio,
    /// `-delta / (sigma + eps) * mu`, unnormalized.
    Literal,
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp-ratio" => Ok(Self::ExpRatio),
            "literal" => Ok(Self::Literal),
            other => Err(Error::InvalidConfig(format!("unknown kernel variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExpRatio => "exp-ratio",
            Self::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerConfig {
    pub layers: Vec<PacLayerSpec>,
    pub variant: KernelVariant,
    pub cap_dilation: bool,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS.to_vec(),
            variant: KernelVariant::ExpRatio,
            cap_dilation: true,
        }
    }
}

/// Parses a layer table: one `kernel_size dilation stride` triple per line, `#` comments.
pub fn parse_layers(text: &str) -> Result<Vec<PacLayerSpec>> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{e}"),
            })?;
        if nums.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `kernel_size dilation stride`".into(),
            });
        }
        layers.push(PacLayerSpec::new(nums[0], nums[1], nums[2]).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    if layers.is_empty() {
        return Err(Error::InvalidConfig("layer table is empty".into()));
    }
    Ok(layers)
}

/// Statistics of one kernel window.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    /// Standard deviation of all guidance channel values in the window.
    pub sigma: f64,
    /// Mean of the feature plane over the window.
    pub mu: f64,
    /// Color distance from the center pixel to each tap.
    pub delta: Vec<f64>,
}

impl KernelContext {
    /// `guidance` and `features` hold the window taps in row-major order; the
    /// center tap is the middle element.
    pub fn from_window(guidance: &[[f64; 3]], features: &[f64]) -> Self {
        let n = guidance.len();
        let center = guidance[n / 2];
        let count = (3 * n) as f64;
        let mean = guidance.iter().flatten().sum::<f64>() / count;
        let var = guidance
            .iter()
            .flatten()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count;
        let delta = guidance.iter().map(|g| color_distance(&center, g)).collect();
        Self {
            sigma: var.sqrt(),
            mu: features.iter().sum::<f64>() / features.len() as f64,
            delta,
        }
    }

    pub fn weights(&self, variant: KernelVariant) -> Vec<f64> {
        let scale = self.sigma + KERNEL_EPS;
        match variant {
            KernelVariant::ExpRatio => {
                let raw: Vec<f64> = self
                    .delta
                    .iter()
                    .map(|d| (-d / scale).exp() * self.mu)
                    .collect();
                let total: f64 = raw.iter().sum();
                if total > 0.0 {
                    raw.iter().map(|w| w / total).collect()
                } else {
                    vec![0.0; raw.len()]
                }
            }
            KernelVariant::Literal => self.delta.iter().map(|d| -d / scale * self.mu).collect(),
        }
    }
}

/// Tap weights for one window.
pub fn compute_kernel(guidance: &[[f64; 3]], features: &[f64], variant: KernelVariant) -> Vec<f64> {
    KernelContext::from_window(guidance, features).weights(variant)
}

#[inline]
fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

/// Multi-plane feature map in double precision, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_scores(stack: &ScoreStack) -> Self {
        Self {
            planes: stack.planes(),
            height: stack.height(),
            width: stack.width(),
            data: stack.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn plane(&self, p: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[p * n..(p + 1) * n]
    }
}

/// Normalized RGB guidance at some working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<[f64; 3]>,
}

impl GuidanceMap {
    pub fn from_image(image: &RasterImage) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            data: (0..image.len()).map(|i| image.color(i)).collect(),
        }
    }

    /// Averages `factor x factor` blocks; edge blocks average the pixels they cover.
    pub fn pooled(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let h = self.height.div_ceil(factor);
        let w = self.width.div_ceil(factor);
        let mut data = Vec::with_capacity(h * w);
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = [0.0; 3];
                let mut n = 0usize;
                for y in oy * factor..((oy + 1) * factor).min(self.height) {
                    for x in ox * factor..((ox + 1) * factor).min(self.width) {
                        let g = &self.data[y * self.width + x];
                        acc[0] += g[0];
                        acc[1] += g[1];
                        acc[2] += g[2];
                        n += 1;
                    }
                }
                let n = n as f64;
                data.push([acc[0] / n, acc[1] / n, acc[2] / n]);
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }
}

/// One pixel-adaptive layer over every plane of `features`.
///
/// Output location `(oy, ox)` is centered at input `(oy * stride, ox * stride)`;
/// taps outside the raster are edge-replicated.
pub fn pac_layer(
    features: &FeatureMap,
    guidance: &GuidanceMap,
    spec: PacLayerSpec,
    variant: KernelVariant,
    cap_dilation: bool,
) -> Result<FeatureMap> {
    let (h, w) = (features.height, features.width);
    if guidance.height != h || guidance.width != w {
        return Err(Error::DimensionMismatch(format!(
            "guidance {}x{} vs features {h}x{w}",
            guidance.height, guidance.width
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::ImageTooSmall(format!("{h}x{w} feature map")));
    }
    let k = spec.kernel_size;
    let radius = (k - 1) / 2;
    let dilation = if cap_dilation {
        spec.effective_dilation(h, w)
    } else {
        spec.dilation
    };
    let out_h = h.div_ceil(spec.stride);
    let out_w = w.div_ceil(spec.stride);
    let planes = features.planes;
    let n_in = h * w;
    let taps = k * k;
    let inv_count = 1.0 / taps as f64;
    let clamp = |center: usize, t: usize, len: usize| -> usize {
        let off = center as isize + (t as isize - radius as isize) * dilation as isize;
        off.clamp(0, len as isize - 1) as usize
    };

    // row-major over outputs, planes innermost
    let rows: Vec<Vec<f64>> = (0..out_h)
        .into_par_iter()
        .map(|oy| {
            let cy = oy * spec.stride;
            let mut row = vec![0.0; out_w * planes];
            let mut idx = vec![0usize; taps];
            let mut win = vec![[0.0; 3]; taps];
            let mut base = vec![0.0; taps];
            let ys: Vec<usize> = (0..k).map(|t| clamp(cy, t, h)).collect();
            for ox in 0..out_w {
                let cx = ox * spec.stride;
                for (a, &y) in ys.iter().enumerate() {
                    for b in 0..k {
                        let x = clamp(cx, b, w);
                        idx[a * k + b] = y * w + x;
                    }
                }
                for (g, &i) in win.iter_mut().zip(&idx) {
                    *g = guidance.data[i];
                }
                let center = win[taps / 2];
                let mean = win.iter().flatten().sum::<f64>() / (3 * taps) as f64;
                let var = win
                    .iter()
                    .flatten()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / (3 * taps) as f64;
                let scale = var.sqrt() + KERNEL_EPS;
                match variant {
                    KernelVariant::ExpRatio => {
                        for (bw, g) in base.iter_mut().zip(&win) {
                            *bw = (-color_distance(&center, g) / scale).exp();
                        }
                    }
                    KernelVariant::Literal => {
                        for (bw, g) in base.iter_mut().zip(&win) {
                            *bw = -color_distance(&center, g) / scale;
                        }
                    }
                }
                for p in 0..planes {
                    let plane = &features.data[p * n_in..(p + 1) * n_in];
                    let mut sum_x = 0.0;
                    let mut sum_w = 0.0;
                    let mut sum_wx = 0.0;
                    for (&i, &bw) in idx.iter().zip(&base) {
                        let x = plane[i];
                        sum_x += x;
                        sum_w += bw;
                        sum_wx += bw * x;
                    }
                    let mu = sum_x * inv_count;
                    row[ox * planes + p] = match variant {
                        KernelVariant::ExpRatio => {
                            let denom = mu * sum_w;
                            if denom > 0.0 {
                                (mu * sum_wx) / denom
                            } else {
                                0.0
                            }
                        }
                        KernelVariant::Literal => mu * sum_wx,
                    };
                }
            }
            row
        })
        .collect();

    let n_out = out_h * out_w;
    let mut data = vec![0.0; planes * n_out];
    for (oy, row) in rows.iter().enumerate() {
        for ox in 0..out_w {
            for p in 0..planes {
                data[p * n_out + oy * out_w + ox] = row[ox * planes + p];
            }
        }
    }
    Ok(FeatureMap {
        planes,
        height: out_h,
        width: out_w,
        data,
    })
}

/// Bilinear resize of a map whose pixel `j` was sampled at input position
/// `j * stride`, which is how strided layers place their outputs. Positions
/// past the last sample hold its value.
pub fn upsample_bilinear(map: &FeatureMap, stride: usize, height: usize, width: usize) -> FeatureMap {
    if stride == 1 && map.height == height && map.width == width {
        return map.clone();
    }
    let coords = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let s = (dst as f64 / stride as f64).min((src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let ys: Vec<_> = (0..height).map(|y| coords(y, map.height)).collect();
    let xs: Vec<_> = (0..width).map(|x| coords(x, map.width)).collect();
    let mut data = Vec::with_capacity(map.planes * height * width);
    for p in 0..map.planes {
        let plane = map.plane(p);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * map.width + x0], plane[y0 * map.width + x1], fx);
                let bottom = lerp(plane[y1 * map.width + x0], plane[y1 * map.width + x1], fx);
                data.push(lerp(top, bottom, fy));
            }
        }
    }
    FeatureMap {
        planes: map.planes,
        height,
        width,
        data,
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Runs the full layer stack and restores the input resolution.
pub fn refine(stack: &ScoreStack, image: &RasterImage, config: &RefinerConfig) -> Result<ScoreStack> {
    if stack.height() != image.height() || stack.width() != image.width() {
        return Err(Error::DimensionMismatch(format!(
            "scores {}x{} vs image {}x{}",
            stack.height(),
            stack.width(),
            image.height(),
            image.width()
        )));
    }
    if config.layers.is_empty() {
        return Err(Error::InvalidConfig("refiner needs at least one layer".into()));
    }
    let mut features = FeatureMap::from_scores(stack);
    let mut guidance = GuidanceMap::from_image(image);
    for spec in &config.layers {
        features = pac_layer(&features, &guidance, *spec, config.variant, config.cap_dilation)?;
        if spec.stride > 1 {
            guidance = guidance.pooled(spec.stride);
        }
    }
    let stride = config.layers.iter().map(|l| l.stride).product();
    let restored = upsample_bilinear(&features, stride, stack.height(), stack.width());
    let data = restored
        .data
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
        .collect();
    ScoreStack::new(stack.planes(), stack.height(), stack.width(), data)
}

/// Resolutions seen by each layer's input, then the final pre-upsampling size.
pub fn resolution_chain(height: usize, width: usize, layers: &[PacLayerSpec]) -> Vec<(usize, usize)> {
    let mut dims = vec![(height, width)];
    let (mut h, mut w) = (height, width);
    for l in layers {
        h = h.div_ceil(l.stride);
        w = w.div_ceil(l.stride);
        dims.push((h, w));
    }
    dims
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_window_gives_uniform_weights() {
        let g = vec![[0.3, 0.5, 0.7]; 9];
        let f = vec![0.4; 9];
        let w = compute_kernel(&g, &f, KernelVariant::ExpRatio);
        for v in w {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
        let lit = compute_kernel(&g, &f, KernelVariant::Literal);
        assert!(lit.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_distant_tap_weight() {
        // sigma and delta are supplied directly: exp(-0.5 / 0.25) * 0.8
        let ctx = KernelContext {
            sigma: 0.25 - KERNEL_EPS,
            mu: 0.8,
            delta: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5],
        };
        let raw = (-ctx.delta[8] / (ctx.sigma + KERNEL_EPS)).exp() * ctx.mu;
        assert!((raw - (-2f64).exp() * 0.8).abs() < 1e-12);
        assert!((raw - 0.1083).abs() < 1e-4);
        let w = ctx.weights(KernelVariant::ExpRatio);
        let total = 8.0 * 0.8 + raw;
        assert!((w[8] - raw / total).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stride_two_output_size() {
        let f = FeatureMap {
            planes: 1,
            height: 5,
            width: 5,
            data: vec![0.5; 25],
        };
        let g = GuidanceMap {
            height: 5,
            width: 5,
            data: vec![[0.1, 0.2, 0.3]; 25],
        };
        let out = pac_layer(&f, &g, layer(3, 1, 2), KernelVariant::ExpRatio, true).unwrap();
        assert_eq!((out.height, out.width), (3, 3));
        assert!(out.data.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn guidance_dimension_mismatch() {
        let f = FeatureMap {
            planes: 1,
            height: 4,
            width: 4,
            data: vec![0.0; 16],
        };
        let g = GuidanceMap {
            height: 3,
            width: 4,
            data: vec![[0.0; 3]; 12],
        };
        assert!(matches!(
            pac_layer(&f, &g, layer(3, 1, 1), KernelVariant::ExpRatio, true),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn resolution_chain_for_64() {
        let chain = resolution_chain(64, 64, &DEFAULT_LAYERS);
        let sides: Vec<usize> = chain.iter().map(|d| d.0).collect();
        assert_eq!(&sides[..5], &[64, 32, 16, 8, 4]);
        assert_eq!(*sides.last().unwrap(), 4);
    }

    #[test]
    fn dilation_cap() {
        assert_eq!(layer(3, 32, 1).effective_dilation(4, 4), 1);
        assert_eq!(layer(3, 32, 1).effective_dilation(9, 20), 4);
        assert_eq!(layer(3, 2, 1).effective_dilation(100, 100), 2);
        assert_eq!(layer(7, 1, 2).effective_dilation(2, 2), 1);
    }

    #[test]
    fn pooling_averages_partial_blocks() {
        let g = GuidanceMap {
            height: 1,
            width: 3,
            data: vec![[0.0; 3], [1.0; 3], [0.5; 3]],
        };
        let p = g.pooled(2);
        assert_eq!(p.width, 2);
        assert_eq!(p.data, vec![[0.5; 3], [0.5; 3]]);
    }

    #[test]
    fn upsample_preserves_constants() {
        let m = FeatureMap {
            planes: 2,
            height: 3,
            width: 2,
            data: vec![0.37; 12],
        };
        let up = upsample_bilinear(&m, 4, 7, 9);
        assert!(up.data.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn upsample_hits_sample_positions() {
        let m = FeatureMap {
            planes: 1,
            height: 1,
            width: 3,
            data: vec![0.0, 1.0, 0.5],
        };
        let up = upsample_bilinear(&m, 2, 1, 6);
        assert_eq!(up.data, vec![0.0, 0.5, 1.0, 0.75, 0.5, 0.5]);
    }

    #[test]
    fn layer_table_parsing() {
        let layers = parse_layers("# k d s\n7 1 2\n3,4,1\n").unwrap();
        assert_eq!(layers, vec![layer(7, 1, 2), layer(3, 4, 1)]);
        assert!(parse_layers("4 1 1\n").is_err());
        assert!(parse_layers("3 1 3\n").is_err());
        assert!(parse_layers("3 1\n").is_err());
        assert!(parse_layers("").is_err());
    }

    #[test]
    fn refine_preserves_dimensions_and_one_hot_constant() {
        let img = RasterImage::from_rgb8(
            37,
            23,
            (0..37 * 23 * 3).map(|i| (i * 7 % 256) as u8).collect(),
        )
        .unwrap();
        let n = 37 * 23;
        let mut data = vec![0.0f32; 3 * n];
        data[n..2 * n].fill(1.0);
        let stack = ScoreStack::new(3, 37, 23, data.clone()).unwrap();
        let out = refine(&stack, &img, &RefinerConfig::default()).unwrap();
        assert_eq!((out.height(), out.width()), (37, 23));
        for (a, b) in out.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn literal_variant_output_stays_valid() {
        // sharp edges drive the unnormalized kernel to overflow over 12 layers
        let (h, w) = (32, 32);
        let bytes: Vec<u8> = (0..h * w)
            .flat_map(|i| if (i % w) < 16 { [250, 10, 10] } else { [10, 10, 250] })
            .collect();
        let image = RasterImage::from_rgb8(h, w, bytes).unwrap();
        let data: Vec<f32> = (0..2 * h * w).map(|i| ((i * 37) % 100) as f32 / 100.0).collect();
        let stack = ScoreStack::new(2, h, w, data).unwrap();
        let config = RefinerConfig {
            variant: KernelVariant::Literal,
            ..RefinerConfig::default()
        };
        let out = refine(&stack, &image, &config).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
