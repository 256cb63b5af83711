//! Confusion-matrix accumulation and mean IoU.
//!
//! Rows are ground-truth classes `1..=C+1`; columns are predicted classes with
//! an extra leading column for unlabeled (ignore) predictions, which count as
//! false negatives. Pixels whose ground truth is ignore are skipped.

use crate::error::{Error, Result};
use crate::raster::{LabelMask, IGNORE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: u16,
    // (C+1) rows x (C+2) columns; column 0 = unlabeled prediction
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: u16) -> Self {
        let k = num_classes as usize + 1;
        Self {
            num_classes,
            counts: vec![0; k * (k + 1)],
        }
    }

    fn cols(&self) -> usize {
        self.num_classes as usize + 2
    }

    /// Number of evaluated classes, `C + 1`.
    pub fn classes(&self) -> usize {
        self.num_classes as usize + 1
    }

    /// Count for ground truth `gt` (1-based) and prediction `pred` (0 = unlabeled).
    pub fn get(&self, gt: u16, pred: u16) -> u64 {
        self.counts[(gt as usize - 1) * self.cols() + pred as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, prediction: &LabelMask, ground_truth: &LabelMask) -> Result<()> {
        if !prediction.same_shape(ground_truth) {
            return Err(Error::DimensionMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                prediction.height(),
                prediction.width(),
                ground_truth.height(),
                ground_truth.width()
            )));
        }
        let max = self.num_classes + 1;
        let cols = self.cols();
        for (&p, &g) in prediction.labels().iter().zip(ground_truth.labels()) {
            if g == IGNORE {
                continue;
            }
            if g > max || p > max {
                return Err(Error::OutOfRange(format!(
                    "label {} exceeds {max}",
                    g.max(p)
                )));
            }
            self.counts[(g as usize - 1) * cols + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "merging {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn miou(&self) -> Result<IouReport> {
        if self.total() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let k = self.classes();
        let cols = self.cols();
        let mut per_class = Vec::with_capacity(k);
        for c in 1..=k {
            let tp = self.counts[(c - 1) * cols + c];
            let row: u64 = self.counts[(c - 1) * cols..c * cols].iter().sum();
            let col: u64 = (0..k).map(|r| self.counts[r * cols + c]).sum();
            let (fn_, fp) = (row - tp, col - tp);
            per_class.push(ClassIou {
                class_id: c as u16,
                tp,
                fp,
                fn_,
                iou: (row > 0).then(|| tp as f64 / (tp + fp + fn_) as f64),
            });
        }
        let evaluated: Vec<f64> = per_class.iter().filter_map(|c| c.iou).collect();
        let mean = evaluated.iter().sum::<f64>() / evaluated.len() as f64;
        Ok(IouReport { per_class, mean })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIou {
    pub class_id: u16,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// `None` when the class never occurs in the ground truth.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<ClassIou>,
    pub mean: f64,
}

impl IouReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("class      IoU       TP        FP        FN\n");
        for c in &self.per_class {
            let iou = c.iou.map_or_else(|| "   n/a".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{:<6} {:>8} {:>9} {:>9} {:>9}\n",
                c.class_id, iou, c.tp, c.fp, c.fn_
            ));
        }
        out.push_str(&format!("mIoU   {:.4}\n", self.mean));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,tp,fp,fn\n");
        for c in &self.per_class {
            let iou = c.iou.map_or_else(String::new, |v| format!("{v}"));
            out.push_str(&format!("{},{},{},{},{}\n", c.class_id, iou, c.tp, c.fp, c.fn_));
        }
        out.push_str(&format!("mean,{},,,\n", self.mean));
        out
    }
}

/// mIoU of a single prediction against its ground truth.
pub fn mask_miou(prediction: &LabelMask, ground_truth: &LabelMask) -> Result<f64> {
    let mut m = ConfusionMatrix::new(ground_truth.num_classes().max(prediction.num_classes()));
    m.accumulate(prediction, ground_truth)?;
    Ok(m.miou()?.mean)
}
