//! Point blots: grow annotated points into small trusted regions by
//! repeatedly perturbing the points, re-running the random walker, and
//! accepting candidate blobs that overlap their current blob and share its
//! color distribution.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::components::label_components;
use crate::error::{Error, Result};
use crate::raster::{LabelMask, Point, PointSet, RasterImage, IGNORE};
use crate::walker::{walker_labels, WalkerConfig, DEFAULT_TAU};

#[derive(Debug, Clone, PartialEq)]
pub struct BlotConfig {
    /// Number of perturb-and-walk rounds.
    pub iterations: usize,
    /// Maximum symmetric KL divergence for accepting a candidate.
    pub kld_threshold: f64,
    /// Minimum IoU between a candidate and its current blob.
    pub iou_threshold: f64,
    /// Rotation range per round in degrees; round `t` samples from `±t * base`.
    pub rotation_base: f64,
    /// Translation range per round as a fraction of `min(H, W)`.
    pub translation_base: f64,
    pub histogram_bins: usize,
    pub rng_seed: u64,
    pub tau: f64,
    pub walker: WalkerConfig,
}

impl Default for BlotConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            kld_threshold: 0.5,
            iou_threshold: 0.3,
            rotation_base: 5.0,
            translation_base: 0.02,
            histogram_bins: 32,
            rng_seed: 0,
            tau: DEFAULT_TAU,
            walker: WalkerConfig::default(),
        }
    }
}

impl BlotConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kld_threshold > 0.0
            && self.iou_threshold > 0.0
            && self.iou_threshold < 1.0
            && self.rotation_base > 0.0
            && self.translation_base > 0.0
            && self.histogram_bins > 0
            && self.tau > 0.5
            && self.tau <= 1.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid blot configuration {self:?}")));
        }
        self.walker.validate()
    }
}

/// Perturbed copy of a point set; `origin[i]` is the index of the source
/// point of `points.points()[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPoints {
    pub points: PointSet,
    pub origin: Vec<usize>,
}

/// Rotates by `angle` radians about the raster center, translates by
/// `(dx, dy)`, and rounds to the nearest pixel. Points that leave the raster
/// are dropped, as are later points landing on an already occupied pixel.
pub fn affine_points(
    points: &PointSet,
    angle: f64,
    dx: f64,
    dy: f64,
    height: usize,
    width: usize,
) -> PerturbedPoints {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut occupied = BTreeSet::new();
    let mut entries = Vec::new();
    let mut origin = Vec::new();
    for (i, p) in points.points().iter().enumerate() {
        let (px, py) = (p.x as f64 - cx, p.y as f64 - cy);
        let x = (cx + cos * px - sin * py + dx).round();
        let y = (cy + sin * px + cos * py + dy).round();
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let (x, y) = (x as u32, y as u32);
        if !occupied.insert((x, y)) {
            continue;
        }
        entries.push(Point::new(p.class_id, x, y));
        origin.push(i);
    }
    PerturbedPoints {
        points: PointSet::new(points.num_classes(), entries)
            .expect("perturbed points keep classes and are deduplicated"),
        origin,
    }
}

/// One random affine perturbation whose range grows linearly with round `t`.
pub fn perturb_points(
    points: &PointSet,
    t: usize,
    config: &BlotConfig,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> PerturbedPoints {
    let t = t as f64;
    let max_angle = t * config.rotation_base;
    let max_shift = t * config.translation_base * height.min(width) as f64;
    let angle = rng.gen_range(-max_angle..=max_angle).to_radians();
    let dx = rng.gen_range(-max_shift..=max_shift);
    let dy = rng.gen_range(-max_shift..=max_shift);
    affine_points(points, angle, dx, dy, height, width)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub class_id: u16,
    /// Sorted flat pixel indices.
    pub pixels: Vec<usize>,
    /// Indices of the original points inside the blob.
    pub provenance: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlobSet {
    pub blobs: Vec<Blob>,
}

impl BlobSet {
    /// Connected components of `mask` that contain at least one seed.
    /// `seeds` pairs each seed with the index of the original point it came from.
    pub fn from_mask(mask: &LabelMask, seeds: &[(usize, Point)]) -> Self {
        let comps = label_components(mask);
        let mut provenance = vec![BTreeSet::new(); comps.count()];
        for &(origin, p) in seeds {
            let id = comps.ids[p.index(mask.width())];
            if id != 0 && comps.class_of(id) == p.class_id {
                provenance[id as usize - 1].insert(origin);
            }
        }
        let blobs = comps
            .pixel_lists()
            .into_iter()
            .zip(provenance)
            .enumerate()
            .filter(|(_, (_, prov))| !prov.is_empty())
            .map(|(k, (pixels, provenance))| Blob {
                class_id: comps.classes[k],
                pixels,
                provenance,
            })
            .collect();
        Self { blobs }
    }
}

/// Components of a mask with provenance from original points.
pub fn connected_components(mask: &LabelMask, points: &PointSet) -> BlobSet {
    let seeds: Vec<(usize, Point)> = points.points().iter().copied().enumerate().collect();
    BlobSet::from_mask(mask, &seeds)
}

fn channel_histograms(image: &RasterImage, pixels: &[usize], bins: usize) -> Vec<[f64; 3]> {
    let mut hist = vec![[0.0; 3]; bins];
    for &i in pixels {
        let c = image.color(i);
        for ch in 0..3 {
            let b = ((c[ch] * bins as f64) as usize).min(bins - 1);
            hist[b][ch] += 1.0;
        }
    }
    hist
}

/// Symmetrized KL divergence between per-channel color histograms, summed
/// over channels. Bins get `1e-6` added before normalization.
pub fn blob_divergence(image: &RasterImage, a: &[usize], b: &[usize], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBlob);
    }
    const SMOOTHING: f64 = 1e-6;
    let ha = channel_histograms(image, a, bins);
    let hb = channel_histograms(image, b, bins);
    let mut total = 0.0;
    for ch in 0..3 {
        let sa: f64 = ha.iter().map(|h| h[ch] + SMOOTHING).sum();
        let sb: f64 = hb.iter().map(|h| h[ch] + SMOOTHING).sum();
        let mut kl_pq = 0.0;
        let mut kl_qp = 0.0;
        for k in 0..bins {
            let p = (ha[k][ch] + SMOOTHING) / sa;
            let q = (hb[k][ch] + SMOOTHING) / sb;
            kl_pq += p * (p / q).ln();
            kl_qp += q * (q / p).ln();
        }
        total += 0.5 * (kl_pq + kl_qp);
    }
    Ok(total)
}

/// IoU of two sorted pixel lists.
pub fn pixel_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Accepts a candidate iff its divergence from the current blob is below
/// `phi` and their IoU exceeds `delta`.
pub fn accept_candidate(
    image: &RasterImage,
    current: &[usize],
    candidate: &[usize],
    phi: f64,
    delta: f64,
    bins: usize,
) -> Result<bool> {
    if pixel_iou(current, candidate) <= delta {
        return Ok(false);
    }
    Ok(blob_divergence(image, current, candidate, bins)? < phi)
}

/// Masks after the initial walk and after every round.
#[derive(Debug, Clone, PartialEq)]
pub struct BlotTrace {
    pub masks: Vec<LabelMask>,
    pub accepted: usize,
    pub rejected: usize,
}

impl BlotTrace {
    pub fn final_mask(&self) -> &LabelMask {
        self.masks.last().expect("trace holds the initial mask")
    }
}

pub fn generate_blots(image: &RasterImage, points: &PointSet, config: &BlotConfig) -> Result<LabelMask> {
    Ok(generate_blots_trace(image, points, config)?.masks.pop().unwrap())
}

pub fn generate_blots_trace(
    image: &RasterImage,
    points: &PointSet,
    config: &BlotConfig,
) -> Result<BlotTrace> {
    config.validate()?;
    let (h, w) = (image.height(), image.width());
    points.check_bounds(h, w)?;
    let mut mask = walker_labels(image, points, config.walker, config.tau)?;
    let mut trace = BlotTrace {
        masks: vec![mask.clone()],
        accepted: 0,
        rejected: 0,
    };
    let originals: Vec<(usize, Point)> = points.points().iter().copied().enumerate().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    for t in 1..=config.iterations {
        let perturbed = perturb_points(points, t, config, h, w, &mut rng);
        if perturbed.points.is_empty() {
            trace.masks.push(mask.clone());
            continue;
        }
        let candidate_mask = walker_labels(image, &perturbed.points, config.walker, config.tau)?;
        let current = BlobSet::from_mask(&mask, &originals);
        let seeds: Vec<(usize, Point)> = perturbed
            .origin
            .iter()
            .copied()
            .zip(perturbed.points.points().iter().copied())
            .collect();
        let candidates = BlobSet::from_mask(&candidate_mask, &seeds);

        for cand in &candidates.blobs {
            let mut accepted = false;
            for cur in current.blobs.iter().filter(|b| {
                b.class_id == cand.class_id && !b.provenance.is_disjoint(&cand.provenance)
            }) {
                if accept_candidate(
                    image,
                    &cur.pixels,
                    &cand.pixels,
                    config.kld_threshold,
                    config.iou_threshold,
                    config.histogram_bins,
                )? {
                    accepted = true;
                    break;
                }
            }
            if accepted {
                trace.accepted += 1;
                let labels = mask.labels_mut();
                for &px in &cand.pixels {
                    if labels[px] == IGNORE {
                        labels[px] = cand.class_id;
                    }
                }
            } else {
                trace.rejected += 1;
            }
        }
        trace.masks.push(mask.clone());
    }
    Ok(trace)
}

/// Independent per-item seed derived from a master seed and a key such as a file path.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    // FNV-1a, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(points: &[(u16, u32, u32)]) -> PointSet {
        PointSet::new(2, points.iter().map(|&(c, x, y)| Point::new(c, x, y)).collect()).unwrap()
    }

    #[test]
    fn half_turn_about_center() {
        let out = affine_points(&ps(&[(1, 3, 2)]), std::f64::consts::PI, 0.0, 0.0, 5, 5);
        assert_eq!(out.points.points(), &[Point::new(1, 1, 2)]);
        assert_eq!(out.origin, vec![0]);
    }

    #[test]
    fn translation_and_discard() {
        let out = affine_points(&ps(&[(1, 3, 2)]), 0.0, 1.0, 0.0, 5, 5);
        assert_eq!(out.points.points(), &[Point::new(1, 4, 2)]);
        let out = affine_points(&ps(&[(1, 4, 2), (2, 0, 0)]), 0.0, 1.0, 0.0, 5, 5);
        assert_eq!(out.points.points(), &[Point::new(2, 1, 0)]);
        assert_eq!(out.origin, vec![1]);
    }

    #[test]
    fn collisions_keep_first_point() {
        let out = affine_points(&ps(&[(1, 0, 0), (2, 1, 0)]), 0.0, 0.6, 0.0, 3, 3);
        // 0.6 -> 1 and 1.6 -> 2
        assert_eq!(out.points.len(), 2);
        let out = affine_points(&ps(&[(1, 0, 0), (2, 1, 0)]), 0.0, 0.4, 0.0, 3, 3);
        assert_eq!(out.points.len(), 2);
        let out = affine_points(&ps(&[(1, 0, 0), (2, 0, 1)]), 0.0, 0.0, 5.0, 3, 3);
        assert!(out.points.is_empty());
    }

    #[test]
    fn perturbation_range_grows() {
        let cfg = BlotConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ps(&[(1, 50, 50)]);
        for t in 1..=5 {
            for _ in 0..50 {
                let out = perturb_points(&p, t, &cfg, 101, 101, &mut rng);
                let q = out.points.points()[0];
                // rotation about the center does not move it; shift bounded by t * 0.02 * 101
                let bound = (t as f64 * 0.02 * 101.0).round() as i64;
                assert!((q.x as i64 - 50).abs() <= bound);
                assert!((q.y as i64 - 50).abs() <= bound);
            }
        }
    }

    fn two_tone() -> RasterImage {
        let mut bytes = Vec::new();
        for _y in 0..4 {
            for x in 0..4 {
                let v = if x < 2 { 0 } else { 255 };
                bytes.extend_from_slice(&[v, v, v]);
            }
        }
        RasterImage::from_rgb8(4, 4, bytes).unwrap()
    }

    #[test]
    fn divergence_properties() {
        let img = two_tone();
        let dark = [0usize, 1, 4, 5];
        let bright = [2usize, 3, 6, 7];
        assert_eq!(blob_divergence(&img, &dark, &dark, 32).unwrap(), 0.0);
        let ab = blob_divergence(&img, &dark, &bright, 32).unwrap();
        let ba = blob_divergence(&img, &bright, &dark, 32).unwrap();
        assert!(ab > 10.0);
        assert_eq!(ab, ba);
        assert!(matches!(blob_divergence(&img, &[], &dark, 32), Err(Error::EmptyBlob)));
    }

    #[test]
    fn divergence_matches_direct_oracle() {
        let img = two_tone();
        let a = [0usize, 1];
        let b = [2usize, 3, 6];
        // All-black blob: bin 0 holds 2 of 2; all-white: bin 31 holds 3 of 3.
        let bins = 32;
        let eps = 1e-6;
        let mut pa = vec![eps; bins];
        pa[0] += 2.0;
        let mut pb = vec![eps; bins];
        pb[31] += 3.0;
        let (sa, sb): (f64, f64) = (pa.iter().sum(), pb.iter().sum());
        let mut kl = 0.0;
        for k in 0..bins {
            let (p, q) = (pa[k] / sa, pb[k] / sb);
            kl += 0.5 * (p * (p / q).ln() + q * (q / p).ln());
        }
        let expected = 3.0 * kl;
        let got = blob_divergence(&img, &a, &b, bins).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn acceptance_rules() {
        let img = two_tone();
        let cur = [0usize, 1, 4, 5];
        assert!(accept_candidate(&img, &cur, &cur, 0.5, 0.3, 32).unwrap());
        assert!(!accept_candidate(&img, &cur, &[10, 11], 0.5, 0.3, 32).unwrap());
        // overlaps but spills into the bright half
        let spill = [0usize, 1, 2, 3, 4, 5, 6, 7];
        assert!(pixel_iou(&cur, &spill) > 0.3);
        assert!(!accept_candidate(&img, &cur, &spill, 0.5, 0.3, 32).unwrap());
    }

    #[test]
    fn zero_iterations_equal_initial_walk() {
        let img = two_tone();
        let points = ps(&[(1, 0, 0), (3, 3, 3)]);
        let cfg = BlotConfig {
            iterations: 0,
            ..BlotConfig::default()
        };
        let blots = generate_blots(&img, &points, &cfg).unwrap();
        let walk = walker_labels(&img, &points, cfg.walker, cfg.tau).unwrap();
        assert_eq!(blots, walk);
    }

    #[test]
    fn blob_provenance() {
        let mask = LabelMask::new(1, 5, 2, vec![1, 1, 0, 1, 2]).unwrap();
        let points = ps(&[(1, 0, 0), (1, 1, 0), (2, 4, 0)]);
        let set = connected_components(&mask, &points);
        assert_eq!(set.blobs.len(), 2);
        assert_eq!(set.blobs[0].provenance, BTreeSet::from([0, 1]));
        assert_eq!(set.blobs[1].class_id, 2);
    }

    #[test]
    fn seeds_are_stable() {
        assert_eq!(derive_seed(7, "a.png"), derive_seed(7, "a.png"));
        assert_ne!(derive_seed(7, "a.png"), derive_seed(7, "b.png"));
        assert_ne!(derive_seed(7, "a.png"), derive_seed(8, "a.png"));
    }
}
