//! 8-bit RGB PNG only.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};
use rwf_core::Tensor;

use crate::error::{Result, RwfError};

/// Decodes an 8-bit RGB PNG into `[3, h, w]` with values `v / 255`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| RwfError::io(path, e))?;
    let reader = ImageReader::with_format(BufReader::new(file), ImageFormat::Png);
    let img = reader
        .decode()
        .map_err(|e| RwfError::Data(format!("{}: not a readable PNG: {e}", path.display())))?;
    let color = img.color();
    if color != image::ColorType::Rgb8 {
        return Err(RwfError::Data(format!(
            "{}: unsupported pixel format {color:?}, expected 8-bit RGB",
            path.display()
        )));
    }
    Ok(to_tensor(&img.into_rgb8()))
}

pub fn to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    })
}

/// Clamps to `[0, 1]` and quantizes with `round(v · 255)`.
pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(RwfError::Data(format!("expected a [3, h, w] image, got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut raw = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for (p, &v) in t.plane(c).iter().enumerate() {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            raw[p * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from the tensor"))
}

pub fn save_image(t: &Tensor, path: &Path) -> Result<()> {
    to_rgb8(t)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => RwfError::io(path, io),
            other => RwfError::Data(format!("{}: {other}", path.display())),
        })
}

/// `(width, height)` from the PNG header.
pub fn image_size(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(|e| RwfError::io(path, e))?;
    let (w, h) = ImageReader::with_format(BufReader::new(file), ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| RwfError::Data(format!("{}: not a readable PNG: {e}", path.display())))?;
    Ok((w as usize, h as usize))
}
