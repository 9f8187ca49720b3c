//! Netpbm gray and color maps (P2, P3, P5, P6), plus PNG behind the `png` feature.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded raster with samples scaled to [0, 1], interleaved by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub samples: Vec<f64>,
}

impl RawImage {
    /// Single-channel view, converting color with Rec. 601 luma weights.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.samples.clone(),
            _ => self
                .samples
                .chunks_exact(self.channels)
                .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                .collect(),
        }
    }
}

struct Tokens<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("expected a number at byte {start}")))
    }
}

pub fn decode_pnm(buf: &[u8]) -> Result<RawImage> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(Error::Format("not a netpbm file".into()));
    }
    let (channels, binary) = match buf[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        other => return Err(Error::Format(format!("unsupported netpbm kind P{}", other as char))),
    };
    let mut tok = Tokens { buf, pos: 2 };
    let width = tok.number()?;
    let height = tok.number()?;
    let maxval = tok.number()?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad netpbm header {width}x{height} max {maxval}")));
    }
    let count = width * height * channels;
    let scale = maxval as f64;
    let mut samples = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tok.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let raster = buf
            .get(start..start + need)
            .ok_or_else(|| Error::Format("netpbm raster truncated".into()))?;
        if wide {
            samples.extend(raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale));
        } else {
            samples.extend(raster.iter().map(|&b| b as f64 / scale));
        }
    } else {
        for _ in 0..count {
            samples.push(tok.number()?.min(maxval) as f64 / scale);
        }
    }
    Ok(RawImage {
        width,
        height,
        channels,
        samples,
    })
}

/// Binary 8-bit encoding (P5 for gray, P6 for RGB). Samples are clamped to [0, 1].
pub fn encode_pnm(img: &RawImage) -> Vec<u8> {
    let kind = if img.channels == 1 { 5 } else { 6 };
    let mut out = format!("P{kind}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.samples.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(feature = "png")]
pub fn decode_png(buf: &[u8]) -> Result<RawImage> {
    let bad = |e: png::DecodingError| Error::Format(format!("png: {e}"));
    let mut decoder = png::Decoder::new(std::io::Cursor::new(buf));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut data = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut data).map_err(bad)?;
    let data = &data[..info.buffer_size()];
    let raw: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        _ => data.iter().map(|&b| b as f64 / 255.0).collect(),
    };
    let (in_ch, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Format("png: unexpanded palette".into())),
    };
    let samples = raw.chunks_exact(in_ch).flat_map(|px| px[..channels].to_vec()).collect();
    Ok(RawImage {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        samples,
    })
}

/// Reads a netpbm file, or a PNG when built with the `png` feature.
pub fn read_image(path: &Path) -> Result<RawImage> {
    let buf = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let with_path = |e: Error| Error::Format(format!("{}: {e}", path.display()));
    if buf.starts_with(b"\x89PNG") {
        #[cfg(feature = "png")]
        return decode_png(&buf).map_err(with_path);
        #[cfg(not(feature = "png"))]
        return Err(with_path(Error::Format("PNG support not compiled in (enable feature `png`)".into())));
    }
    decode_pnm(&buf).map_err(with_path)
}

pub fn write_image(path: &Path, img: &RawImage) -> Result<()> {
    fs::write(path, encode_pnm(img))?;
    Ok(())
}
