use std::path::Path;

use vsod_core::cag::iou_target;
use vsod_core::encoder::ImageTensor;
use vsod_core::kernels::resize_bilinear;
use vsod_core::losses::downsample_mask;
use vsod_core::metrics::{MetricAccumulator, MetricReport};
use vsod_core::syndata::io::write_gray_png;
use vsod_core::syndata::augment::resize_nearest;
use vsod_core::syndata::Sample;
use vsod_core::{Model, Prediction, Tensor};

use crate::data::valid_size;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Mean `|s - IoU(P_i, G_i)|` over every gate and frame; `None` for
    /// ungated models.
    pub confidence_error: Option<f64>,
    /// Frames whose size was not a multiple of 32.
    pub resized_frames: usize,
}

/// Runs the model on one frame pair. Inputs whose sides are not multiples of
/// 32 are resized to the nearest valid size and the saliency map is resized
/// back. Returns the full-resolution map, the raw prediction at the working
/// size, and whether resizing happened.
pub fn predict_saliency(model: &Model, rgb: &Tensor, flow: &Tensor) -> Result<(Tensor, Prediction, bool)> {
    let s = rgb.shape();
    let (h, w) = (valid_size(s.h), valid_size(s.w));
    let resized = (h, w) != (s.h, s.w);
    let fit = |t: &Tensor| -> Result<ImageTensor> {
        let t = if resized { resize_bilinear(t, h, w)? } else { t.clone() };
        Ok(ImageTensor::new(t.map(|v| v.clamp(0.0, 1.0)))?)
    };
    let pred = model.predict(&fit(rgb)?, &fit(flow)?)?;
    let saliency = if resized {
        resize_bilinear(&pred.saliency, s.h, s.w)?.map(|v| v.clamp(0.0, 1.0))
    } else {
        pred.saliency.clone()
    };
    Ok((saliency, pred, resized))
}

/// Mean gate calibration error of one frame, against `mask` at the working size.
fn confidence_error(pred: &Prediction, mask: &Tensor) -> Result<Option<f64>> {
    if pred.aux_maps.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (p, conf) in pred.aux_maps.iter().zip(&pred.confidences) {
        let g = downsample_mask(mask, p.shape())?;
        sum += (conf[0] - iou_target(p, &g)?[0]).abs();
    }
    Ok(Some(sum / pred.aux_maps.len() as f64))
}

/// Scores `model` on every sample. With `maps_dir`, each prediction is also
/// written to `maps_dir/<sequence>/<index>.png`.
pub fn evaluate(model: &Model, samples: &[Sample], maps_dir: Option<&Path>) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(HarnessError::Input("evaluation set is empty".into()));
    }
    let mut acc = MetricAccumulator::new();
    let mut resized_frames = 0;
    let mut conf = (0.0, 0usize);
    for sample in samples {
        let (saliency, pred, resized) = predict_saliency(model, &sample.rgb, &sample.flow_image)?;
        resized_frames += resized as usize;
        let work = pred.saliency.shape();
        let mask = resize_nearest(&sample.mask, work.h, work.w);
        if let Some(e) = confidence_error(&pred, &mask)? {
            conf = (conf.0 + e, conf.1 + 1);
        }
        acc.push_batch(&saliency, &sample.mask)?;
        if let Some(dir) = maps_dir {
            let seq = dir.join(&sample.sequence);
            std::fs::create_dir_all(&seq).map_err(|e| HarnessError::io(&seq, e))?;
            write_gray_png(&seq.join(format!("{:05}.png", sample.index)), &saliency)?;
        }
    }
    Ok(Evaluation {
        report: acc.finish(),
        confidence_error: (conf.1 > 0).then(|| conf.0 / conf.1 as f64),
        resized_frames,
    })
}

/// Scores precomputed maps against the samples' masks.
pub fn score_maps(maps: &[Tensor], samples: &[Sample]) -> Result<MetricReport> {
    if maps.len() != samples.len() {
        return Err(HarnessError::Input(format!(
            "{} maps for {} frames",
            maps.len(),
            samples.len()
        )));
    }
    let mut acc = MetricAccumulator::new();
    for (m, s) in maps.iter().zip(samples) {
        acc.push_batch(m, &s.mask)?;
    }
    Ok(acc.finish())
}
