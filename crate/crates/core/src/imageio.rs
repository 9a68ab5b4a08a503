//! PNG <-> [`RgbImage`] conversion. Samples are quantized to 8 bits.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage as Rgb8};

use crate::error::{CamError, Result};
use crate::tensor::RgbImage;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &RgbImage) -> Rgb8 {
    let (w, h) = img.dims();
    Rgb8::from_fn(w as u32, h as u32, |x, y| {
        let p = img.pixel(x as usize, y as usize);
        image::Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
    })
}

pub fn from_rgb8(buf: &Rgb8) -> Result<RgbImage> {
    let (w, h) = buf.dimensions();
    if w == 0 || h == 0 {
        return Err(CamError::invalid("empty image"));
    }
    Ok(RgbImage::from_fn(w as usize, h as usize, |x, y| {
        let p = buf.get_pixel(x as u32, y as u32).0;
        [p[0], p[1], p[2]].map(|c| f64::from(c) / 255.0)
    }))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_rgb8(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CamError::invalid(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| CamError::Format(format!("png decode: {e}")))?;
    from_rgb8(&dynimg.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| CamError::io(path, e))
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| CamError::io(path, e))?;
    decode_png(&bytes).map_err(|e| CamError::Format(format!("{}: {e}", path.display())))
}
