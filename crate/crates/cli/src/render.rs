//! Heatmap overlays.
//!
//! A fixed 256-entry colormap runs blue, cyan, green, yellow, red. Each pixel
//! of the input is blended toward the colormap entry of its normalized CAM
//! value with alpha `0.5 * value`, in linear light. A zero CAM therefore
//! leaves the input pixels untouched.

use std::sync::OnceLock;

use camforge::imageio::quantize;
use camforge::tensor::{Grid2D, RgbImage};
use image::{Rgba, RgbaImage};

pub const COLORMAP_LEN: usize = 256;
pub const MAX_ALPHA: f64 = 0.5;

const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
];

/// The colormap as 8-bit sRGB.
pub fn colormap() -> &'static [[u8; 3]; COLORMAP_LEN] {
    static LUT: OnceLock<[[u8; 3]; COLORMAP_LEN]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0u8; 3]; COLORMAP_LEN];
        let segments = (STOPS.len() - 1) as f64;
        for (i, entry) in lut.iter_mut().enumerate() {
            let t = i as f64 / (COLORMAP_LEN - 1) as f64 * segments;
            let k = (t.floor() as usize).min(STOPS.len() - 2);
            let f = t - k as f64;
            for c in 0..3 {
                entry[c] = quantize(STOPS[k][c] * (1.0 - f) + STOPS[k + 1][c] * f);
            }
        }
        lut
    })
}

pub fn colormap_index(v: f64) -> usize {
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    (v * (COLORMAP_LEN - 1) as f64).round() as usize
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Blends one 8-bit channel toward `over` with weight `alpha`.
fn blend(base: u8, over: u8, alpha: f64) -> u8 {
    if alpha <= 0.0 {
        return base;
    }
    let b = srgb_to_linear(f64::from(base) / 255.0);
    let o = srgb_to_linear(f64::from(over) / 255.0);
    quantize(linear_to_srgb(b * (1.0 - alpha) + o * alpha))
}

/// Overlays `normalized` (values in `[0, 1]`) on `image` as opaque RGBA8.
pub fn render_overlay(image: &RgbImage, normalized: &Grid2D) -> Result<RgbaImage, String> {
    let (w, h) = image.dims();
    if normalized.dims() != (w, h) {
        return Err(format!(
            "cam is {:?} but the image is {:?}",
            normalized.dims(),
            (w, h)
        ));
    }
    let lut = colormap();
    let mut out = RgbaImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image.pixel(x, y).map(quantize);
            let v = normalized.get(x, y);
            let alpha = MAX_ALPHA
                * if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                };
            let c = lut[colormap_index(v)];
            out.put_pixel(
                x as u32,
                y as u32,
                Rgba([
                    blend(px[0], c[0], alpha),
                    blend(px[1], c[1], alpha),
                    blend(px[2], c[2], alpha),
                    255,
                ]),
            );
        }
    }
    Ok(out)
}

pub fn encode_rgba_png(img: &RgbaImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}
