//! Final assembly: refined scores times expanded fields, thresholded, with
//! point blots superimposed on top.

use std::time::{Duration, Instant};

use crate::blot::{generate_blots, BlotConfig};
use crate::distance::{aggregated_fields, FieldStack, Stage};
use crate::error::{Error, Result};
use crate::expansion::ExpansionState;
use crate::pac::{refine, RefinerConfig};
use crate::raster::{LabelMask, PointSet, RasterImage, ScoreStack, IGNORE};

pub const DEFAULT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Provenance {
    Ignore = 0,
    Thresholded = 1,
    Blot = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoMask {
    pub labels: LabelMask,
    pub provenance: Vec<Provenance>,
}

impl PseudoMask {
    /// Provenance as a label-free mask (`0` ignore, `1` thresholded, `2` blot),
    /// suitable for writing as PGM.
    pub fn provenance_mask(&self) -> LabelMask {
        LabelMask::new(
            self.labels.height(),
            self.labels.width(),
            1,
            self.provenance.iter().map(|&p| p as u16).collect(),
        )
        .expect("provenance tags fit a one-class mask")
    }
}

/// Thresholds `refined * fields` per pixel. Only classes present in `fields`
/// compete; ties go to the lower class index.
pub fn assemble(refined: &ScoreStack, fields: &FieldStack, threshold: f64) -> Result<LabelMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    fields.expect_stage(Stage::Expanded)?;
    if refined.planes() != fields.planes()
        || refined.height() != fields.height()
        || refined.width() != fields.width()
    {
        return Err(Error::DimensionMismatch(format!(
            "scores {}x{}x{} vs fields {}x{}x{}",
            refined.planes(),
            refined.height(),
            refined.width(),
            fields.planes(),
            fields.height(),
            fields.width()
        )));
    }
    let n = refined.height() * refined.width();
    let present: Vec<u16> = (1..=fields.planes() as u16)
        .filter(|&c| fields.is_present(c))
        .collect();
    let mut labels = vec![IGNORE; n];
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (f64::NEG_INFINITY, IGNORE);
        for &c in &present {
            let k = (c as usize - 1) * n + i;
            let v = f64::from(refined.data()[k]) * fields.data()[k];
            if v > best.0 {
                best = (v, c);
            }
        }
        if best.0 >= threshold {
            *label = best.1;
        }
    }
    LabelMask::new(refined.height(), refined.width(), refined.num_classes(), labels)
}

/// Blot labels override the intermediate mask wherever a blot exists.
pub fn superimpose(intermediate: &LabelMask, blots: &LabelMask) -> Result<PseudoMask> {
    if !intermediate.same_shape(blots) {
        return Err(Error::DimensionMismatch(format!(
            "intermediate {}x{} vs blots {}x{}",
            intermediate.height(),
            intermediate.width(),
            blots.height(),
            blots.width()
        )));
    }
    let mut labels = intermediate.labels().to_vec();
    let mut provenance = Vec::with_capacity(labels.len());
    for (l, &b) in labels.iter_mut().zip(blots.labels()) {
        if b != IGNORE {
            *l = b;
            provenance.push(Provenance::Blot);
        } else if *l != IGNORE {
            provenance.push(Provenance::Thresholded);
        } else {
            provenance.push(Provenance::Ignore);
        }
    }
    Ok(PseudoMask {
        labels: LabelMask::new(
            intermediate.height(),
            intermediate.width(),
            intermediate.num_classes().max(blots.num_classes()),
            labels,
        )?,
        provenance,
    })
}

/// Which pipeline components are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub fields: bool,
    pub blots: bool,
    pub refiner: bool,
}

impl Ablation {
    pub const FULL: Self = Self::new(true, true, true);
    pub const POINTS_ONLY: Self = Self::new(false, false, false);
    pub const BLOTS_ONLY: Self = Self::new(false, true, false);
    pub const BLOTS_REFINER: Self = Self::new(false, true, true);
    pub const FIELDS_ONLY: Self = Self::new(true, false, false);
    pub const FIELDS_BLOTS: Self = Self::new(true, true, false);
    pub const FIELDS_REFINER: Self = Self::new(true, false, true);

    pub const fn new(fields: bool, blots: bool, refiner: bool) -> Self {
        Self {
            fields,
            blots,
            refiner,
        }
    }

    /// Whether the thresholded feature branch runs at all.
    pub fn thresholds_features(&self) -> bool {
        self.fields || self.refiner
    }

    pub fn name(&self) -> &'static str {
        match (self.fields, self.blots, self.refiner) {
            (false, false, false) => "points-only",
            (false, true, false) => "blots-only",
            (false, true, true) => "blots+refiner",
            (false, false, true) => "refiner-only",
            (true, false, false) => "fields-only",
            (true, true, false) => "fields+blots",
            (true, false, true) => "fields+refiner",
            (true, true, true) => "full",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::FULL,
            Self::POINTS_ONLY,
            Self::BLOTS_ONLY,
            Self::BLOTS_REFINER,
            Self::new(false, false, true),
            Self::FIELDS_ONLY,
            Self::FIELDS_BLOTS,
            Self::FIELDS_REFINER,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub refiner: RefinerConfig,
    pub blot: BlotConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            refiner: RefinerConfig::default(),
            blot: BlotConfig::default(),
        }
    }
}

/// Fields stack that leaves scores unchanged: ones for present classes.
fn neutral_fields(points: &PointSet, height: usize, width: usize) -> FieldStack {
    let planes = points.num_classes() as usize + 1;
    let mut present = vec![false; planes];
    for c in points.present_classes() {
        present[c as usize - 1] = true;
    }
    let n = height * width;
    let mut data = vec![0.0; planes * n];
    for (c, plane) in data.chunks_exact_mut(n).enumerate() {
        if present[c] {
            plane.fill(1.0);
        }
    }
    FieldStack::from_parts(height, width, Stage::Expanded, present, data)
}

/// Expanded fields for `points` under `state`.
pub fn expanded_fields(
    points: &PointSet,
    height: usize,
    width: usize,
    state: &ExpansionState,
) -> Result<FieldStack> {
    state.apply(&aggregated_fields(points, height, width)?)
}

/// Combines precomputed pieces into a pseudo-mask.
///
/// `features` is the score stack to threshold (refined or raw), `fields` the
/// expanded fields or `None` when distance fields are disabled, and `overlay`
/// the trusted labels (blots or bare points).
pub fn compose(
    features: Option<&ScoreStack>,
    fields: Option<&FieldStack>,
    points: &PointSet,
    overlay: &LabelMask,
    threshold: f64,
) -> Result<PseudoMask> {
    let intermediate = match features {
        Some(scores) => {
            let neutral;
            let fields = match fields {
                Some(f) => f,
                None => {
                    neutral = neutral_fields(points, scores.height(), scores.width());
                    &neutral
                }
            };
            assemble(scores, fields, threshold)?
        }
        None => LabelMask::ignore(overlay.height(), overlay.width(), points.num_classes()),
    };
    superimpose(&intermediate, overlay)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub blots: Duration,
    pub fields: Duration,
    pub refine: Duration,
    pub assemble: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.blots + self.fields + self.refine + self.assemble
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub mask: PseudoMask,
    pub blots: Option<LabelMask>,
    pub timings: StageTimings,
}

/// Runs blot → fields → expansion → refine → assemble → superimpose.
pub fn run_pipeline(
    image: &RasterImage,
    points: &PointSet,
    scores: &ScoreStack,
    state: &ExpansionState,
    config: &PipelineConfig,
    ablation: Ablation,
) -> Result<PipelineOutput> {
    let (h, w) = (image.height(), image.width());
    if scores.height() != h || scores.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "scores {}x{} vs image {h}x{w}",
            scores.height(),
            scores.width()
        )));
    }
    if scores.num_classes() != points.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "scores carry {} classes, points {}",
            scores.num_classes(),
            points.num_classes()
        )));
    }
    points.check_bounds(h, w)?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let blots = if ablation.blots {
        Some(generate_blots(image, points, &config.blot)?)
    } else {
        None
    };
    timings.blots = t.elapsed();

    let t = Instant::now();
    let fields = if ablation.fields {
        Some(expanded_fields(points, h, w, state)?)
    } else {
        None
    };
    timings.fields = t.elapsed();

    let t = Instant::now();
    let refined = if ablation.refiner {
        Some(refine(scores, image, &config.refiner)?)
    } else {
        None
    };
    timings.refine = t.elapsed();

    let t = Instant::now();
    let features = if ablation.thresholds_features() {
        Some(refined.as_ref().unwrap_or(scores))
    } else {
        None
    };
    let points_mask;
    let overlay = match &blots {
        Some(b) => b,
        None => {
            points_mask = LabelMask::from_points(h, w, points);
            &points_mask
        }
    };
    let mask = compose(features, fields.as_ref(), points, overlay, config.threshold)?;
    timings.assemble = t.elapsed();

    Ok(PipelineOutput {
        mask,
        blots,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Point;

    fn expanded(planes: usize, values: Vec<f64>) -> FieldStack {
        FieldStack::from_parts(1, values.len() / planes, Stage::Expanded, vec![true; planes], values)
    }

    #[test]
    fn threshold_arithmetic() {
        let scores = ScoreStack::new(2, 1, 1, vec![0.8, 0.0]).unwrap();
        let fields = expanded(2, vec![0.95, 0.0]);
        assert_eq!(assemble(&scores, &fields, 0.75).unwrap().labels(), &[1]);
        let scores = ScoreStack::new(2, 1, 1, vec![0.9, 0.0]).unwrap();
        let fields = expanded(2, vec![0.8, 0.0]);
        assert_eq!(assemble(&scores, &fields, 0.75).unwrap().labels(), &[0]);
    }

    #[test]
    fn ties_go_to_lower_class() {
        let scores = ScoreStack::new(3, 1, 1, vec![0.0, 0.8, 0.8]).unwrap();
        let fields = expanded(3, vec![1.0, 1.0, 1.0]);
        assert_eq!(assemble(&scores, &fields, 0.75).unwrap().labels(), &[2]);
    }

    #[test]
    fn absent_classes_never_win() {
        let scores = ScoreStack::new(3, 1, 1, vec![1.0, 0.8, 0.0]).unwrap();
        let fields =
            FieldStack::from_parts(1, 1, Stage::Expanded, vec![false, true, true], vec![1.0, 1.0, 1.0]);
        assert_eq!(assemble(&scores, &fields, 0.75).unwrap().labels(), &[2]);
    }

    #[test]
    fn assemble_checks() {
        let scores = ScoreStack::new(2, 1, 2, vec![0.0; 4]).unwrap();
        let fields = expanded(2, vec![0.0; 2]);
        assert!(matches!(
            assemble(&scores, &fields, 0.75),
            Err(Error::DimensionMismatch(_))
        ));
        let fields = FieldStack::from_parts(1, 2, Stage::Aggregated, vec![true; 2], vec![0.0; 4]);
        assert!(matches!(assemble(&scores, &fields, 0.75), Err(Error::StageMismatch { .. })));
    }

    #[test]
    fn blots_take_precedence() {
        let inter = LabelMask::new(1, 3, 2, vec![0, 1, 2]).unwrap();
        let blots = LabelMask::new(1, 3, 2, vec![2, 2, 0]).unwrap();
        let pm = superimpose(&inter, &blots).unwrap();
        assert_eq!(pm.labels.labels(), &[2, 2, 2]);
        assert_eq!(
            pm.provenance,
            vec![Provenance::Blot, Provenance::Blot, Provenance::Thresholded]
        );
        let empty = LabelMask::ignore(1, 3, 2);
        assert_eq!(superimpose(&inter, &empty).unwrap().labels, inter);
        assert!(superimpose(&inter, &LabelMask::ignore(3, 1, 2)).is_err());
    }

    #[test]
    fn fully_expanded_low_scores_give_blots_only() {
        let points = PointSet::new(1, vec![Point::new(1, 0, 0), Point::new(2, 3, 0)]).unwrap();
        let scores = ScoreStack::new(2, 1, 4, vec![0.5; 8]).unwrap();
        let mut state = ExpansionState::default();
        let mut loss = 1.0;
        state.update(loss).unwrap();
        for _ in 0..80 {
            loss /= 2.0;
            state.update(loss).unwrap();
        }
        let fields = expanded_fields(&points, 1, 4, &state).unwrap();
        assert!(fields.data().iter().all(|&v| v == 1.0));
        let blots = LabelMask::new(1, 4, 1, vec![1, 1, 0, 2]).unwrap();
        let pm = compose(Some(&scores), Some(&fields), &points, &blots, 0.75).unwrap();
        assert_eq!(pm.labels, blots);
    }

    #[test]
    fn ablation_names_roundtrip() {
        for a in [
            Ablation::FULL,
            Ablation::POINTS_ONLY,
            Ablation::BLOTS_ONLY,
            Ablation::FIELDS_ONLY,
            Ablation::FIELDS_BLOTS,
            Ablation::FIELDS_REFINER,
        ] {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }
}
