use std::path::{Path, PathBuf};

use vsod_core::syndata::io::{read_rgb_png, write_gray_png};
use vsod_core::Model;

use crate::error::{HarnessError, Result};
use crate::evaluate::predict_saliency;

/// PNG files directly under `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Writes one 8-bit saliency map per frame pair into `out_dir`, named after
/// the RGB frame. Frames pair up by sorted position.
pub fn infer(model: &Model, rgb_dir: &Path, flow_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rgb = list_frames(rgb_dir)?;
    let flow = list_frames(flow_dir)?;
    if rgb.len() != flow.len() {
        return Err(HarnessError::Input(format!(
            "{} rgb frames but {} flow frames",
            rgb.len(),
            flow.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(rgb.len());
    for (r, f) in rgb.iter().zip(&flow) {
        let (a, b) = (read_rgb_png(r)?, read_rgb_png(f)?);
        if a.shape() != b.shape() {
            return Err(HarnessError::Input(format!(
                "{} is {} but {} is {}",
                r.display(),
                a.shape(),
                f.display(),
                b.shape()
            )));
        }
        let (saliency, _, _) = predict_saliency(model, &a, &b)?;
        let out = out_dir.join(r.file_name().expect("listed files have names"));
        write_gray_png(&out, &saliency)?;
        written.push(out);
    }
    Ok(written)
}
