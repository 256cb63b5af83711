//! Independent reference implementations used as test oracles. They share no
//! code with the library beyond its plain data types.
#![allow(dead_code)]

use pmp_core::{Point, RasterImage};

/// Minimum Euclidean distance from every pixel to any seed, by brute force.
pub fn brute_force_edt(seeds: &[Point], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; height * width];
    for y in 0..height {
        for x in 0..width {
            for p in seeds {
                let dx = x as f64 - f64::from(p.x);
                let dy = y as f64 - f64::from(p.y);
                let d = (dx * dx + dy * dy).sqrt();
                if d < out[y * width + x] {
                    out[y * width + x] = d;
                }
            }
        }
    }
    out
}

fn rgb(image: &RasterImage, i: usize) -> [f64; 3] {
    let b = image.as_bytes();
    [
        f64::from(b[3 * i]) / 255.0,
        f64::from(b[3 * i + 1]) / 255.0,
        f64::from(b[3 * i + 2]) / 255.0,
    ]
}

/// Random-walker probabilities by dense Gaussian elimination. Returns one
/// plane per entry of `classes`; `seeds` holds `(pixel, class)` pairs.
pub fn dense_walker(image: &RasterImage, seeds: &[(usize, u16)], classes: &[u16], beta: f64) -> Vec<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    let mut lap = vec![vec![0.0; n]; n];
    let weight = |a: usize, b: usize| {
        let (ca, cb) = (rgb(image, a), rgb(image, b));
        let d2: f64 = (0..3).map(|k| (ca[k] - cb[k]).powi(2)).sum();
        (-beta * d2).exp() + 1e-6
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut nbrs = Vec::new();
            if x + 1 < w {
                nbrs.push(i + 1);
            }
            if y + 1 < h {
                nbrs.push(i + w);
            }
            for j in nbrs {
                let wt = weight(i, j);
                lap[i][j] -= wt;
                lap[j][i] -= wt;
                lap[i][i] += wt;
                lap[j][j] += wt;
            }
        }
    }
    let seeded: Vec<Option<u16>> = (0..n)
        .map(|i| seeds.iter().find(|s| s.0 == i).map(|s| s.1))
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| seeded[i].is_none()).collect();
    let m = free.len();
    let mut planes = Vec::new();
    for &c in classes {
        // augmented system [L_uu | -L_ub x_b]
        let mut a: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| {
                let mut row: Vec<f64> = free.iter().map(|&j| lap[i][j]).collect();
                let rhs: f64 = (0..n)
                    .filter(|&j| seeded[j] == Some(c))
                    .map(|j| -lap[i][j])
                    .sum();
                row.push(rhs);
                row
            })
            .collect();
        for col in 0..m {
            let pivot = (col..m)
                .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            let pv = a[col][col];
            for r in col + 1..m {
                let f = a[r][col] / pv;
                if f != 0.0 {
                    for k in col..=m {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        let mut x = vec![0.0; m];
        for r in (0..m).rev() {
            let s: f64 = (r + 1..m).map(|k| a[r][k] * x[k]).sum();
            x[r] = (a[r][m] - s) / a[r][r];
        }
        let mut plane: Vec<f64> = seeded
            .iter()
            .map(|s| if *s == Some(c) { 1.0 } else { 0.0 })
            .collect();
        for (k, &i) in free.iter().enumerate() {
            plane[i] = x[k];
        }
        planes.push(plane);
    }
    planes
}

/// One refiner layer computed tap by tap from the kernel definition:
/// weight `exp(-delta / (sigma + 1e-6)) * mu`, normalized to sum 1, with
/// edge-replicated taps and the dilation capped to fit the map.
pub fn naive_pac_layer(
    plane: &[f64],
    guidance: &[[f64; 3]],
    height: usize,
    width: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
) -> Vec<f64> {
    let r = (kernel - 1) as isize / 2;
    let cap = ((height.min(width) - 1) / (kernel - 1)).max(1);
    let d = dilation.min(cap) as isize;
    let out_h = height.div_ceil(stride);
    let out_w = width.div_ceil(stride);
    let at = |y: isize, x: isize| -> usize {
        let y = y.clamp(0, height as isize - 1) as usize;
        let x = x.clamp(0, width as isize - 1) as usize;
        y * width + x
    };
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (cy, cx) = ((oy * stride) as isize, (ox * stride) as isize);
            let mut taps = Vec::new();
            for a in -r..=r {
                for b in -r..=r {
                    taps.push(at(cy + a * d, cx + b * d));
                }
            }
            let center = guidance[at(cy, cx)];
            let values: Vec<f64> = taps.iter().flat_map(|&t| guidance[t]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let sigma = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
            let mu = taps.iter().map(|&t| plane[t]).sum::<f64>() / taps.len() as f64;
            let raw: Vec<f64> = taps
                .iter()
                .map(|&t| {
                    let g = guidance[t];
                    let delta = ((g[0] - center[0]).powi(2) + (g[1] - center[1]).powi(2) + (g[2] - center[2]).powi(2)).sqrt();
                    (-delta / (sigma + 1e-6)).exp() * mu
                })
                .collect();
            let total: f64 = raw.iter().sum();
            out[oy * out_w + ox] = if total > 0.0 {
                taps.iter().zip(&raw).map(|(&t, wt)| wt / total * plane[t]).sum()
            } else {
                0.0
            };
        }
    }
    out
}

pub fn image_guidance(image: &RasterImage) -> Vec<[f64; 3]> {
    (0..image.height() * image.width()).map(|i| rgb(image, i)).collect()
}
