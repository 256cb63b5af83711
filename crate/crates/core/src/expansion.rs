//! Expansion confidence scores driven by the epoch-loss trajectory.
//!
//! Each update adds `clamp(L_prev / L_cur - 1, omega, eta)` to the object
//! score and half of it to the background score. Scores are unbounded; the
//! `[0, 1]` clip is applied when they are added to field planes.

use std::fmt;
use std::str::FromStr;

use crate::distance::{FieldStack, Stage};
use crate::error::{Error, Result};

pub const DEFAULT_ETA: f64 = 0.025;
pub const DEFAULT_OMEGA: f64 = -0.025;

/// Running sum kept as an unevaluated pair `hi + lo` (TwoSum), so that the
/// reported value is the correctly rounded exact sum of all steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ExactSum {
    hi: f64,
    lo: f64,
}

impl ExactSum {
    fn from_value(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, self.lo + e);
        self.hi = hi;
        self.lo = lo;
    }

    fn value(&self) -> f64 {
        self.hi
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionState {
    object: ExactSum,
    background: ExactSum,
    previous_loss: Option<f64>,
    eta: f64,
    omega: f64,
}

impl Default for ExpansionState {
    fn default() -> Self {
        Self::new(DEFAULT_ETA, DEFAULT_OMEGA).expect("default limits are valid")
    }
}

impl ExpansionState {
    /// Fresh state with zero scores and step limits `[omega, eta]`.
    pub fn new(eta: f64, omega: f64) -> Result<Self> {
        if !(omega <= 0.0 && 0.0 <= eta) || !eta.is_finite() || !omega.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "expansion limits must satisfy omega <= 0 <= eta, got omega={omega}, eta={eta}"
            )));
        }
        Ok(Self {
            object: ExactSum::default(),
            background: ExactSum::default(),
            previous_loss: None,
            eta,
            omega,
        })
    }

    pub fn object_score(&self) -> f64 {
        self.object.value()
    }

    pub fn background_score(&self) -> f64 {
        self.background.value()
    }

    pub fn previous_loss(&self) -> Option<f64> {
        self.previous_loss
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Folds in the loss of the epoch that just finished.
    ///
    /// The first call only records the loss, since there is no previous epoch
    /// to compare against.
    pub fn update(&mut self, epoch_loss: f64) -> Result<()> {
        if !(epoch_loss > 0.0) || !epoch_loss.is_finite() {
            return Err(Error::NonPositiveLoss(epoch_loss));
        }
        if let Some(prev) = self.previous_loss {
            let gamma = prev / epoch_loss - 1.0;
            let step = gamma.min(self.eta).max(self.omega);
            self.object.add(step);
            self.background.add(step / 2.0);
        }
        self.previous_loss = Some(epoch_loss);
        Ok(())
    }

    /// Adds the scores to an aggregated stack and clips to `[0, 1]`.
    /// Planes of classes without points are left untouched.
    pub fn apply(&self, fields: &FieldStack) -> Result<FieldStack> {
        fields.expect_stage(Stage::Aggregated)?;
        let mut out = fields.clone();
        let planes = out.planes();
        let present = fields.present().to_vec();
        let (obj, bg) = (self.object_score(), self.background_score());
        for (c, plane) in out.planes_mut().enumerate() {
            if !present[c] {
                continue;
            }
            let score = if c + 1 == planes { bg } else { obj };
            for v in plane.iter_mut() {
                *v = expand(*v, score);
            }
        }
        out.set_stage(Stage::Expanded);
        Ok(out)
    }
}

/// `clip(field + score, 0, 1)`.
#[inline]
pub fn expand(field: f64, score: f64) -> f64 {
    let s = field + score;
    if s >= 1.0 {
        1.0
    } else if s <= 0.0 {
        0.0
    } else {
        s
    }
}

/// Text form `object_score background_score previous_loss`, with `none` for an
/// unset previous loss. Step limits are not part of the file.
impl fmt::Display for ExpansionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {:?} ", self.object_score(), self.background_score())?;
        match self.previous_loss {
            Some(l) => write!(f, "{l:?}"),
            None => write!(f, "none"),
        }
    }
}

impl ExpansionState {
    /// Parses the text form written by `Display`, attaching the given step limits.
    pub fn parse(text: &str, eta: f64, omega: f64) -> Result<Self> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected 3 fields in expansion state, found {}", fields.len()),
            });
        }
        let num = |s: &str| {
            f64::from_str(s).ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("bad number {s:?}"),
            })
        };
        let mut state = Self::new(eta, omega)?;
        state.object = ExactSum::from_value(num(fields[0])?);
        state.background = ExactSum::from_value(num(fields[1])?);
        state.previous_loss = match fields[2] {
            "none" => None,
            s => {
                let l = num(s)?;
                if l <= 0.0 {
                    return Err(Error::NonPositiveLoss(l));
                }
                Some(l)
            }
        };
        Ok(state)
    }
}
