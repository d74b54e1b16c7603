//! Saliency evaluation: max F-measure, S-measure and MAE.
//!
//! F-measure follows the usual video-saliency toolbox convention: a frame's
//! prediction is binarized at 256 evenly spaced thresholds `k / 255`
//! (a pixel is positive when strictly above the threshold), precision and
//! recall are computed per frame, averaged over the frames, and only then
//! combined into `F_beta` per threshold with `beta^2 = 0.3`. The reported
//! value is the maximum over thresholds.
//!
//! S-measure is the structure measure of Fan et al. (ICCV 2017) with
//! `alpha = 0.5`, computed per frame and averaged. MAE is the mean absolute
//! pixel error, averaged per frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const THRESHOLDS: usize = 256;
pub const BETA_SQ: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;

/// Threshold `k` of the evaluation grid.
#[inline]
pub fn threshold(k: usize) -> f64 {
    k as f64 / (THRESHOLDS - 1) as f64
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA_SQ * precision + recall;
    if precision + recall == 0.0 || den == 0.0 {
        0.0
    } else {
        (1.0 + BETA_SQ) * precision * recall / den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub max_f_beta: f64,
    pub s_measure: f64,
    pub mae: f64,
    pub per_threshold_f: Vec<f64>,
    pub frame_count: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Number of thresholds `k` with `threshold(k) < v`; a pixel with value `v`
/// is predicted positive exactly at thresholds `k < bin(v)`.
fn bin(v: f64) -> usize {
    let mut c = (v * (THRESHOLDS - 1) as f64).ceil().clamp(0.0, THRESHOLDS as f64) as usize;
    while c > 0 && threshold(c - 1) >= v {
        c -= 1;
    }
    while c < THRESHOLDS && threshold(c) < v {
        c += 1;
    }
    c
}

fn binary_gt(gt: &[f64]) -> Result<Vec<bool>> {
    gt.iter()
        .map(|&v| {
            if v == 1.0 {
                Ok(true)
            } else if v == 0.0 {
                Ok(false)
            } else {
                Err(Error::NonBinaryMask(v))
            }
        })
        .collect()
}

/// Per-threshold precision and recall of one frame. Empty denominators give 0.
pub fn frame_pr(pred: &[f64], gt: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut fg_hist = [0usize; THRESHOLDS + 1];
    let mut all_hist = [0usize; THRESHOLDS + 1];
    for (&p, &g) in pred.iter().zip(gt) {
        let b = bin(p);
        all_hist[b] += 1;
        if g {
            fg_hist[b] += 1;
        }
    }
    let positives = gt.iter().filter(|&&g| g).count();
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    // Pixels in bins > k are positive at threshold k.
    let (mut tp, mut pp) = (0usize, 0usize);
    for k in (0..THRESHOLDS).rev() {
        tp += fg_hist[k + 1];
        pp += all_hist[k + 1];
        precision[k] = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
        recall[k] = if positives == 0 {
            0.0
        } else {
            tp as f64 / positives as f64
        };
    }
    (precision, recall)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt(), n)
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma, n) = mean_std(values);
    if n == 0 {
        return 0.0;
    }
    2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p);
    let bg = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p);
    let o_fg = object_score(fg);
    let o_bg = object_score(bg);
    let u = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    u * o_fg + (1.0 - u) * o_bg
}

/// Half-away-from-zero rounding, as in MATLAB's `round`.
fn round_half_away(v: f64) -> usize {
    v.round() as usize
}

/// Foreground centroid as 1-based `(row, col)`, or the frame centre when empty.
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let total = gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return (round_half_away(h as f64 / 2.0), round_half_away(w as f64 / 2.0));
    }
    let (mut sy, mut sx) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] {
                sy += (y + 1) as f64;
                sx += (x + 1) as f64;
            }
        }
    }
    (
        round_half_away(sy / total as f64),
        round_half_away(sx / total as f64),
    )
}

fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = n - 1.0 + f64::EPSILON;
    let sx2 = pred.iter().map(|p| (p - x) * (p - x)).sum::<f64>() / denom;
    let sy2 = gt.iter().map(|g| (g - y) * (g - y)).sum::<f64>() / denom;
    let sxy = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - x) * (g - y))
        .sum::<f64>()
        / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cy, cx) = centroid(gt, h, w);
    let area = (h * w) as f64;
    let mut score = 0.0;
    for (ys, ye) in [(0, cy), (cy, h)] {
        for (xs, xe) in [(0, cx), (cx, w)] {
            if ye <= ys || xe <= xs {
                continue;
            }
            let mut p = Vec::with_capacity((ye - ys) * (xe - xs));
            let mut g = Vec::with_capacity(p.capacity());
            for y in ys..ye {
                for x in xs..xe {
                    p.push(pred[y * w + x]);
                    g.push(if gt[y * w + x] { 1.0 } else { 0.0 });
                }
            }
            let weight = p.len() as f64 / area;
            score += weight * region_ssim(&p, &g);
        }
    }
    score
}

fn frame_s_measure(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let y = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    let mean_pred = pred.iter().sum::<f64>() / pred.len() as f64;
    if y == 0.0 {
        1.0 - mean_pred
    } else if y == 1.0 {
        mean_pred
    } else {
        let q = S_ALPHA * s_object(pred, gt) + (1.0 - S_ALPHA) * s_region(pred, gt, h, w);
        q.max(0.0)
    }
}

fn frame_mae(pred: &[f64], gt: &[f64]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64
}

fn check_frames(p: &Tensor, g: &Tensor) -> Result<()> {
    let (ps, gs) = (p.shape(), g.shape());
    if ps != gs || ps.c != 1 {
        return Err(Error::Shape(format!(
            "prediction {ps} and ground truth {gs} must be equal single-channel stacks"
        )));
    }
    Ok(())
}

/// Running dataset statistics. Frames can be added in any order and partial
/// accumulators merged.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricAccumulator {
    precision: Vec<f64>,
    recall: Vec<f64>,
    s_sum: f64,
    mae_sum: f64,
    frames: usize,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        MetricAccumulator {
            precision: vec![0.0; THRESHOLDS],
            recall: vec![0.0; THRESHOLDS],
            s_sum: 0.0,
            mae_sum: 0.0,
            frames: 0,
        }
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one `h x w` frame; `gt` must be binary.
    pub fn push_frame(&mut self, pred: &[f64], gt: &[f64], h: usize, w: usize) -> Result<()> {
        if pred.len() != h * w || gt.len() != h * w || pred.is_empty() {
            return Err(Error::Shape(format!(
                "frame of {h}x{w} given {} predicted and {} ground-truth pixels",
                pred.len(),
                gt.len()
            )));
        }
        let gt_bin = binary_gt(gt)?;
        let (p, r) = frame_pr(pred, &gt_bin);
        for k in 0..THRESHOLDS {
            self.precision[k] += p[k];
            self.recall[k] += r[k];
        }
        self.s_sum += frame_s_measure(pred, &gt_bin, h, w);
        self.mae_sum += frame_mae(pred, gt);
        self.frames += 1;
        Ok(())
    }

    /// Adds every frame of a `(frames, 1, h, w)` stack.
    pub fn push_batch(&mut self, pred: &Tensor, gt: &Tensor) -> Result<()> {
        check_frames(pred, gt)?;
        let s = pred.shape();
        for n in 0..s.n {
            self.push_frame(pred.sample(n), gt.sample(n), s.h, s.w)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        for k in 0..THRESHOLDS {
            self.precision[k] += other.precision[k];
            self.recall[k] += other.recall[k];
        }
        self.s_sum += other.s_sum;
        self.mae_sum += other.mae_sum;
        self.frames += other.frames;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self) -> MetricReport {
        if self.frames == 0 {
            return MetricReport {
                max_f_beta: 0.0,
                s_measure: 0.0,
                mae: 0.0,
                per_threshold_f: vec![0.0; THRESHOLDS],
                frame_count: 0,
            };
        }
        let n = self.frames as f64;
        let per_threshold_f: Vec<f64> = (0..THRESHOLDS)
            .map(|k| f_beta(self.precision[k] / n, self.recall[k] / n))
            .collect();
        let max_f_beta = per_threshold_f.iter().copied().fold(0.0, f64::max);
        MetricReport {
            max_f_beta,
            s_measure: self.s_sum / n,
            mae: self.mae_sum / n,
            per_threshold_f,
            frame_count: self.frames,
        }
    }
}

/// Max F-measure over a stack of frames; returns the maximum and the
/// per-threshold curve.
pub fn max_f_measure(pred: &Tensor, gt: &Tensor) -> Result<(f64, Vec<f64>)> {
    let mut acc = MetricAccumulator::new();
    acc.push_batch(pred, gt)?;
    let r = acc.finish();
    Ok((r.max_f_beta, r.per_threshold_f))
}

/// Mean S-measure over a stack of frames.
pub fn s_measure(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_frames(pred, gt)?;
    let s = pred.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        let g = binary_gt(gt.sample(n))?;
        total += frame_s_measure(pred.sample(n), &g, s.h, s.w);
    }
    Ok(total / s.n as f64)
}

/// Mean absolute error over all pixels of all frames.
pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_frames(pred, gt)?;
    let s = pred.shape();
    Ok((0..s.n)
        .map(|n| frame_mae(pred.sample(n), gt.sample(n)))
        .sum::<f64>()
        / s.n as f64)
}

/// Scores paired prediction and ground-truth streams of `(frames, 1, h, w)`
/// stacks; stacks may differ in resolution from one item to the next.
pub fn evaluate_dataset<'a>(
    predictions: impl IntoIterator<Item = &'a Tensor>,
    ground_truth: impl IntoIterator<Item = &'a Tensor>,
) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    let mut preds = predictions.into_iter();
    let mut gts = ground_truth.into_iter();
    loop {
        match (preds.next(), gts.next()) {
            (Some(p), Some(g)) => acc.push_batch(p, g)?,
            (None, None) => break,
            _ => {
                return Err(Error::Shape(
                    "prediction and ground-truth streams differ in length".into(),
                ))
            }
        }
    }
    Ok(acc.finish())
}
