//! Pixel-level confusion counts, derived ratios, and the μ + cσ threshold baseline.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_io::{BinaryMask, ScoreGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelScores {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

impl PixelScores {
    /// Ratios from counts. Empty denominators give 0, except IoU of two
    /// empty masks, which is 1.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let iou = if tp + fp + fn_ == 0 { 1.0 } else { ratio(tp, tp + fp + fn_) };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            iou,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn score(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelScores> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Structural(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(PixelScores::from_counts(tp, fp, fn_, tn))
}

/// Unweighted means of the four ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanScores {
    pub count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

pub fn aggregate(scores: &[PixelScores]) -> Result<MeanScores> {
    if scores.is_empty() {
        return Err(Error::Empty("cannot aggregate an empty score list".into()));
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&PixelScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(MeanScores {
        count: scores.len(),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        iou: mean(|s| s.iou),
    })
}

pub const DEFAULT_THR_C: f64 = 3.0;

/// `A >= μ + c·σ` with the population standard deviation.
pub fn threshold_baseline(grid: &ScoreGrid, c: f64) -> BinaryMask {
    let vals = grid.values();
    let n = vals.len() as f64;
    let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    grid.superlevel(mean + c * var.sqrt())
}
