//! On-disk dataset layout.
//!
//! ```text
//! <root>/<sequence>/rgb/00000.png        8-bit RGB frame
//! <root>/<sequence>/flow/00000.png       8-bit RGB flow rendering
//! <root>/<sequence>/mask/00000.png       8-bit gray, 0 or 255
//! <root>/<sequence>/flow_raw/00000.bin   optional raw flow field
//! ```
//!
//! Sequences and frames load in lexicographic order. A raw flow file holds
//! the magic `VSODFLOW`, height and width as little-endian `u32`, the
//! normalization radius as `f64`, then the `dx` plane and the `dy` plane as
//! little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::syndata::{FlowField, Sample, Sequence};
use crate::tensor::{Shape, Tensor};

const FLOW_MAGIC: &[u8; 8] = b"VSODFLOW";

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_err(sequence: &str, frame: usize, message: impl Into<String>) -> Error {
    Error::Frame {
        sequence: sequence.to_string(),
        frame,
        message: message.into(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a `(1, 3, H, W)` tensor as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Shape(format!("RGB raster needs (1, 3, H, W), got {s}")));
    }
    let mut buf = Vec::with_capacity(3 * s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                buf.push(quantize(t.at(0, c, y, x)));
            }
        }
    }
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, buf).expect("buffer size matches");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a `(1, 1, H, W)` tensor as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!("gray raster needs (1, 1, H, W), got {s}")));
    }
    let buf = t.data().iter().map(|&v| quantize(v)).collect();
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, buf).expect("buffer size matches");
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

pub fn read_gray_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

fn encode_flow(field: &FlowField, norm: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * field.tensor().len());
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&norm.to_le_bytes());
    for v in field.tensor().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_flow(bytes: &[u8]) -> std::result::Result<(FlowField, f64), String> {
    if bytes.len() < 24 || &bytes[..8] != FLOW_MAGIC {
        return Err("raw flow file has a bad header".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let (h, w) = (u32_at(8), u32_at(12));
    let norm = f64_at(16);
    let n = 2 * h * w;
    if bytes.len() != 24 + 8 * n {
        return Err(format!("raw flow file size does not match {h}x{w}"));
    }
    let data = (0..n).map(|i| f64_at(24 + 8 * i)).collect();
    let t = Tensor::from_vec(Shape::new(1, 2, h, w), data).map_err(|e| e.to_string())?;
    let field = FlowField::new(t).map_err(|e| e.to_string())?;
    Ok((field, norm))
}

/// Writes sequences under `root`. Raw flow fields are written when present
/// and `raw_flow` is set.
pub fn write_dataset(root: &Path, sequences: &[Sequence], raw_flow: bool) -> Result<()> {
    for seq in sequences {
        let dir = root.join(&seq.name);
        for sub in ["rgb", "flow", "mask"] {
            create_dir(&dir.join(sub))?;
        }
        let has_raw = raw_flow && seq.samples.iter().any(|s| s.flow.is_some());
        if has_raw {
            create_dir(&dir.join("flow_raw"))?;
        }
        for (i, s) in seq.samples.iter().enumerate() {
            let name = format!("{i:05}");
            let png = format!("{name}.png");
            write_rgb_png(&dir.join("rgb").join(&png), &s.rgb)?;
            write_rgb_png(&dir.join("flow").join(&png), &s.flow_image)?;
            write_gray_png(&dir.join("mask").join(&png), &s.mask)?;
            if let (true, Some(field)) = (has_raw, &s.flow) {
                let path = dir.join("flow_raw").join(format!("{name}.bin"));
                fs::write(&path, encode_flow(field, s.flow_norm)).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn load_sequence(dir: &Path) -> Result<Sequence> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rgb_dir = dir.join("rgb");
    if !rgb_dir.is_dir() {
        return Err(frame_err(&name, 0, "missing rgb directory"));
    }
    let frames: Vec<PathBuf> = sorted_entries(&rgb_dir)?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    let mut samples = Vec::with_capacity(frames.len());
    for (index, rgb_path) in frames.iter().enumerate() {
        let file = rgb_path.file_name().expect("entries have names");
        let stem = rgb_path.file_stem().expect("entries have names").to_string_lossy();
        let flow_path = dir.join("flow").join(file);
        let mask_path = dir.join("mask").join(file);
        let raw_path = dir.join("flow_raw").join(format!("{stem}.bin"));
        let wrap = |e: Error| frame_err(&name, index, e.to_string());
        for p in [&flow_path, &mask_path] {
            if !p.is_file() {
                return Err(frame_err(&name, index, format!("missing {}", p.display())));
            }
        }
        let rgb = read_rgb_png(rgb_path).map_err(wrap)?;
        let flow_image = read_rgb_png(&flow_path).map_err(wrap)?;
        let mask = read_gray_png(&mask_path)
            .map_err(wrap)?
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let (rs, fs_, ms) = (rgb.shape(), flow_image.shape(), mask.shape());
        if (rs.h, rs.w) != (fs_.h, fs_.w) || (rs.h, rs.w) != (ms.h, ms.w) {
            return Err(frame_err(
                &name,
                index,
                format!("rgb {rs}, flow {fs_} and mask {ms} differ in size"),
            ));
        }
        let (flow, flow_norm) = if raw_path.is_file() {
            let bytes = fs::read(&raw_path).map_err(|e| wrap(Error::io(&raw_path, e)))?;
            let (field, norm) = decode_flow(&bytes).map_err(|m| frame_err(&name, index, m))?;
            if (field.height(), field.width()) != (rs.h, rs.w) {
                return Err(frame_err(&name, index, "raw flow size differs from frame"));
            }
            (Some(field), norm)
        } else {
            (None, 0.0)
        };
        samples.push(Sample {
            sequence: name.clone(),
            index,
            rgb,
            flow_image,
            mask,
            flow,
            flow_norm,
        });
    }
    Ok(Sequence { name, samples })
}

/// Loads every sequence under `root`, in lexicographic order.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>> {
    let mut sequences = Vec::new();
    for dir in sorted_entries(root)? {
        if dir.is_dir() {
            let seq = load_sequence(&dir)?;
            if !seq.samples.is_empty() {
                sequences.push(seq);
            }
        }
    }
    if sequences.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(sequences)
}
