//! PGM / PNG grayscale I/O plus the plain-text kernel format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

fn io_err(path: &Path, cause: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        cause,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads a grayscale image, scaling intensities to `[0, 1]`. PGM (P2/P5)
/// is parsed directly; anything else goes through the PNG decoder, with
/// colour images reduced to luminance.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return parse_pgm(&bytes).map_err(|reason| format_err(path, reason));
    }
    if !bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return Err(format_err(path, "expected a PGM (P2/P5) or PNG file"));
    }
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| format_err(path, e.to_string()))?;
    let luma = decoded.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Image::new(h as usize, w as usize, data)
}

/// Writes the image with round-half-up quantization after clamping to
/// `[0, 1]`. The format follows the extension: `.pgm` writes binary PGM,
/// everything else PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let levels = quantize(img, depth);
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_pgm(img.height(), img.width(), &levels, depth)
    } else {
        encode_png(img.height(), img.width(), &levels, depth).map_err(|e| format_err(path, e.to_string()))?
    };
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn quantize(img: &Image, depth: BitDepth) -> Vec<u16> {
    let max = depth.max_value() as f64;
    img.data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * max + 0.5).floor() as u16)
        .collect()
}

fn encode_pgm(h: usize, w: usize, levels: &[u16], depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n{}\n", depth.max_value()).into_bytes();
    match depth {
        BitDepth::Eight => out.extend(levels.iter().map(|&v| v as u8)),
        BitDepth::Sixteen => {
            for &v in levels {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    out
}

fn encode_png(h: usize, w: usize, levels: &[u16], depth: BitDepth) -> image::ImageResult<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = levels.iter().map(|&v| v as u8).collect();
            image::GrayImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer length matches dimensions")
                .write_to(&mut buf, image::ImageFormat::Png)?;
        }
        BitDepth::Sixteen => {
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, levels.to_vec())
                .expect("buffer length matches dimensions")
                .write_to(&mut buf, image::ImageFormat::Png)?;
        }
    }
    Ok(buf.into_inner())
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> std::result::Result<u32, String> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed PGM header near byte {start}"))
    }
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let binary = &bytes[..2] == b"P5";
    let mut rd = HeaderReader { bytes, pos: 2 };
    let w = rd.token()? as usize;
    let h = rd.token()? as usize;
    let maxval = rd.token()?;
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let n = w * h;
    let scale = maxval as f64;
    let data: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = rd.pos + 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes
            .get(start..start + need)
            .ok_or_else(|| format!("raster truncated: expected {need} bytes"))?;
        if wide {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
                .collect()
        } else {
            raster.iter().map(|&b| b as f64 / scale).collect()
        }
    } else {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(rd.token()? as f64 / scale);
        }
        out
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err("sample exceeds maxval".into());
    }
    Image::new(h, w, data).map_err(|e| e.to_string())
}

/// Reads a blur kernel: one row per line, entries separated by whitespace.
/// Blank lines and `#` comments are ignored.
pub fn load_kernel(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_kernel(&text).map_err(|reason| format_err(path, reason))
}

pub fn parse_kernel(text: &str) -> std::result::Result<Image, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!("line {}: ragged kernel row", lineno + 1));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("empty kernel".into());
    }
    let (h, w) = (rows.len(), rows[0].len());
    Image::new(h, w, rows.into_iter().flatten().collect()).map_err(|e| e.to_string())
}

/// Loads an inpainting mask: every nonzero pixel is observed.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = load_image(path)?;
    let mask = img.data().iter().map(|&v| v > 0.0).collect();
    Ok((img.height(), img.width(), mask))
}

pub fn save_mask(height: usize, width: usize, mask: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let img = Image::new(height, width, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?;
    save_image(&img, path, BitDepth::Eight)
}
