//! PPM (P6, 8-bit) and PNG encoding of [`Image`]s.
//!
//! Quantization multiplies by 255 and rounds half to even after clamping to
//! `[0, 1]`, so 0.5 becomes 128 (127.5 rounds to the even neighbour).

use std::fs;
use std::path::Path;

use super::IoError;
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("ppm") => Ok(Self::Ppm),
            Some("png") => Ok(Self::Png),
            _ => Err(IoError::Format(format!(
                "{}: expected a .ppm or .png extension",
                path.display()
            ))),
        }
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn to_bytes(img: &Image) -> Vec<u8> {
    img.data.iter().map(|&v| quantize(v)).collect()
}

fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Image {
    let mut img = Image::new(width, height);
    for (d, &b) in img.data.iter_mut().zip(bytes) {
        *d = f64::from(b) / 255.0;
    }
    img
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(to_bytes(img));
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String, IoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Format("PPM header ends early".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, IoError> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P6" {
        return Err(IoError::Format("not a binary PPM (P6)".into()));
    }
    let mut num = |what: &str| -> Result<usize, IoError> {
        let tok = header_token(bytes, &mut pos)?;
        tok.parse()
            .map_err(|_| IoError::Format(format!("PPM {what}: {tok:?} is not a number")))
    };
    let (width, height, max) = (num("width")?, num("height")?, num("maxval")?);
    if max != 255 {
        return Err(IoError::Format(format!("PPM maxval {max} unsupported (expected 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(IoError::Format(format!(
            "PPM raster truncated: {} of {need} bytes",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(from_bytes(width, height, &bytes[pos..pos + need]))
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), IoError> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => fs::write(path, encode_ppm(img)).map_err(|e| IoError::file(path, e)),
        ImageFormat::Png => image::save_buffer(
            path,
            &to_bytes(img),
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| IoError::Format(format!("{}: {e}", path.display()))),
    }
}

pub fn read_image(path: &Path) -> Result<Image, IoError> {
    match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => decode_ppm(&fs::read(path).map_err(|e| IoError::file(path, e))?),
        ImageFormat::Png => {
            let img = image::open(path)
                .map_err(|e| IoError::Format(format!("{}: {e}", path.display())))?
                .to_rgb8();
            Ok(from_bytes(img.width() as usize, img.height() as usize, img.as_raw()))
        }
    }
}
