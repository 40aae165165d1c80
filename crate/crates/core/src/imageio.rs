//! Image file formats: raw `IMGF` floats and 8/16-bit grayscale PNG.
//!
//! `IMGF` layout: magic `IMGF`, height and width as little-endian `u32`, then
//! `height * width` little-endian `f32` pixels in row-major order.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const IMGF_MAGIC: &[u8; 4] = b"IMGF";

pub fn encode_imgf(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * img.len());
    out.extend_from_slice(IMGF_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_imgf(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 12 || &bytes[..4] != IMGF_MAGIC {
        return Err(Error::format("IMGF", path, "missing IMGF header"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * h * w {
        return Err(Error::format(
            "IMGF",
            path,
            format!("expected {} payload bytes, found {}", 4 * h * w, body.len()),
        ));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::from_vec(h, w, pixels).map_err(|e| Error::format("IMGF", path, e.to_string()))
}

pub fn write_imgf(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_imgf(img))
}

pub fn read_imgf(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_imgf(&bytes, path)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// PNG sample depth for export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Decoded PNG before gray conversion.
#[derive(Debug, Clone)]
pub enum PngPixels {
    Gray(Image),
    /// Separate R, G, B planes scaled to [0,1].
    Rgb([Image; 3]),
}

/// Reads a PNG, scaling samples linearly to [0,1]. Alpha is dropped.
pub fn read_png_planes(path: impl AsRef<Path>) -> Result<PngPixels> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("PNG", path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::format("PNG", path, "indexed color is not supported"))
        }
    };
    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        other => {
            return Err(Error::format(
                "PNG",
                path,
                format!("unsupported bit depth {other:?}"),
            ))
        }
    };
    let plane = |k: usize| {
        Image::from_fn(h, w, |r, c| samples[(r * w + c) * channels + k])
    };
    Ok(if channels <= 2 {
        PngPixels::Gray(plane(0))
    } else {
        PngPixels::Rgb([plane(0), plane(1), plane(2)])
    })
}

/// Reads a single-channel PNG.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match read_png_planes(path)? {
        PngPixels::Gray(img) => Ok(img),
        PngPixels::Rgb(_) => Err(Error::format(
            "PNG",
            path,
            "expected a single-channel image; convert RGB with harvest::rgb_to_gray",
        )),
    }
}

/// Writes a grayscale PNG, clamping to [0,1] and quantizing round-half-up.
pub fn write_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = match depth {
            BitDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                img.pixels().iter().map(|&v| quantize(v, 255.0) as u8).collect()
            }
            BitDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                img.pixels()
                    .iter()
                    .flat_map(|&v| (quantize(v, 65535.0) as u16).to_be_bytes())
                    .collect()
            }
        };
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("PNG", path, e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::format("PNG", path, e.to_string()))?;
    }
    write_atomic(path, &bytes)
}

fn quantize(v: f32, scale: f64) -> u32 {
    let x = (v as f64).clamp(0.0, 1.0) * scale;
    (x + 0.5).floor() as u32
}

/// Loads `.imgf` or `.png` by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("png") => read_png(path),
        _ => read_imgf(path),
    }
}

/// Saves `.png` (16-bit) or `.imgf` by extension.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("png") => write_png(img, path, BitDepth::Sixteen),
        _ => write_imgf(img, path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}
