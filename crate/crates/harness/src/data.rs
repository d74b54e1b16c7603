use std::path::Path;

use vsod_core::kernels::resize_bilinear;
use vsod_core::syndata::augment::resize_nearest;
use vsod_core::syndata::{load_dataset, Sample};
use vsod_core::Tensor;

use crate::error::Result;

/// Nearest positive multiple of 32.
pub fn valid_size(len: usize) -> usize {
    ((len + 16) / 32).max(1) * 32
}

/// Loads every frame of every sequence under `path`, in dataset order.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    Ok(load_dataset(path)?.into_iter().flat_map(|s| s.samples).collect())
}

/// Resizes a sample's rasters; the raw flow field is dropped.
pub fn resize_sample(sample: &Sample, h: usize, w: usize) -> Result<Sample> {
    let s = sample.rgb.shape();
    if (s.h, s.w) == (h, w) {
        return Ok(sample.clone());
    }
    Ok(Sample {
        sequence: sample.sequence.clone(),
        index: sample.index,
        rgb: resize_bilinear(&sample.rgb, h, w)?,
        flow_image: resize_bilinear(&sample.flow_image, h, w)?,
        mask: resize_nearest(&sample.mask, h, w),
        flow: None,
        flow_norm: sample.flow_norm,
    })
}

/// Stacked `(rgb, flow image, mask)` tensors.
pub struct Batch {
    pub rgb: Tensor,
    pub flow: Tensor,
    pub mask: Tensor,
}

pub fn make_batch(samples: &[Sample]) -> Result<Batch> {
    let rgb: Vec<&Tensor> = samples.iter().map(|s| &s.rgb).collect();
    let flow: Vec<&Tensor> = samples.iter().map(|s| &s.flow_image).collect();
    let mask: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok(Batch {
        rgb: Tensor::stack(&rgb)?,
        flow: Tensor::stack(&flow)?,
        mask: Tensor::stack(&mask)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_multiples_of_32() {
        assert_eq!(valid_size(1), 32);
        assert_eq!(valid_size(47), 32);
        assert_eq!(valid_size(48), 64);
        assert_eq!(valid_size(64), 64);
        assert_eq!(valid_size(100), 96);
    }
}
