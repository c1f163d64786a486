//! Image and float-plane file I/O. Images are 8-bit RGB PNG or binary PPM;
//! samples map to floats on `[0, 255]` with no transfer function applied.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::colorspace::{ColorSpace, PlanarImage};
use crate::plane::Plane;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a PNG or binary PPM (P6) file")]
    UnknownFormat,
    #[error("PNG decode failed: {0}")]
    Png(String),
    #[error("unsupported PNG format: color type {color:?}, bit depth {depth}")]
    UnsupportedPng { color: png::ColorType, depth: u8 },
    #[error("malformed PPM: {0}")]
    BadPpm(&'static str),
    #[error("unsupported PPM maxval {0}; only 255 is accepted")]
    PpmMaxval(u32),
    #[error("image has zero width or height")]
    Empty,
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_image(path: &Path) -> Result<PlanarImage, ImageError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_image(&bytes)
}

/// Sniffs the format from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<PlanarImage, ImageError> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(ImageError::UnknownFormat)
    }
}

fn interleaved_to_planar(width: usize, height: usize, data: &[u8], channels: usize) -> Result<PlanarImage, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Empty);
    }
    let mut planes = [Plane::new(width, height), Plane::new(width, height), Plane::new(width, height)];
    for (c, p) in planes.iter_mut().enumerate() {
        let src = if channels == 1 { 0 } else { c };
        for (dst, px) in p.as_mut_slice().iter_mut().zip(data.chunks_exact(channels)) {
            *dst = f64::from(px[src]);
        }
    }
    PlanarImage::new(ColorSpace::Rgb, planes).map_err(|_| ImageError::Empty)
}

pub fn decode_png(bytes: &[u8]) -> Result<PlanarImage, ImageError> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| ImageError::Png(e.to_string()))?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    let channels = match (color, depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        _ => {
            return Err(ImageError::UnsupportedPng {
                color,
                depth: depth as u8,
            })
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| ImageError::Png(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let line = frame.line_size;
    let mut packed = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(line).take(h) {
        packed.extend_from_slice(&row[..w * channels]);
    }
    interleaved_to_planar(w, h, &packed, channels)
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(ImageError::BadPpm("truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn ppm_number(bytes: &[u8], pos: &mut usize) -> Result<u32, ImageError> {
    std::str::from_utf8(ppm_token(bytes, pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(ImageError::BadPpm("bad header number"))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<PlanarImage, ImageError> {
    let mut pos = 0;
    if ppm_token(bytes, &mut pos)? != b"P6" {
        return Err(ImageError::BadPpm("missing P6 magic"));
    }
    let w = ppm_number(bytes, &mut pos)? as usize;
    let h = ppm_number(bytes, &mut pos)? as usize;
    let maxval = ppm_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(ImageError::PpmMaxval(maxval));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(ImageError::BadPpm("truncated header"));
    }
    pos += 1;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or(ImageError::BadPpm("dimensions overflow"))?;
    let data = bytes
        .get(pos..pos + need)
        .ok_or(ImageError::BadPpm("truncated pixel data"))?;
    interleaved_to_planar(w, h, data, 3)
}

/// Interleaved 8-bit RGB; rounds half up and clamps to `[0, 255]`.
pub fn to_rgb8(img: &PlanarImage) -> Vec<u8> {
    let n = img.width() * img.height();
    let mut out = Vec::with_capacity(3 * n);
    let [r, g, b] = img.planes();
    for i in 0..n {
        for p in [r, g, b] {
            out.push((p.as_slice()[i] + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn encode_ppm(img: &PlanarImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(to_rgb8(img));
    out
}

pub fn encode_png(img: &PlanarImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| ImageError::Png(e.to_string());
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&to_rgb8(img)).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Writes PNG when the extension is `png` (any case), PPM otherwise.
pub fn save_image(img: &PlanarImage, path: &Path) -> Result<(), ImageError> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_ppm(img) };
    write_atomic(path, &bytes).map_err(|e| io_err(path, e))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Three planes as raw little-endian `f32`, plane after plane, rows in order.
pub fn encode_f32_planes(planes: &[Plane; 3]) -> Vec<u8> {
    planes
        .iter()
        .flat_map(|p| p.as_slice().iter())
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32_planes(bytes: &[u8], width: usize, height: usize) -> Option<[Plane; 3]> {
    let n = width * height;
    if bytes.len() != 3 * 4 * n {
        return None;
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let plane = |i: usize| Plane::from_vec(width, height, vals[i * n..(i + 1) * n].to_vec());
    Some([plane(0)?, plane(1)?, plane(2)?])
}
