//! Binary portable pixmaps: P6 (RGB) and P5 (gray), 8-bit, maxval 255.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{FdpError, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FdpError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FdpError::MalformedHeader(format!("bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(FdpError::MalformedHeader("missing P magic".into()));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        b'1'..=b'4' | b'7' | b'f' | b'F' => {
            return Err(FdpError::UnsupportedFormat(format!(
                "P{} (only binary P5/P6 are supported)",
                bytes[1] as char
            )))
        }
        _ => return Err(FdpError::MalformedHeader("unknown magic".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(FdpError::MalformedHeader(format!("zero extent {width}x{height}")));
    }
    if maxval != 255 {
        return Err(FdpError::UnsupportedFormat(format!("maxval {maxval} (only 255)")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(FdpError::MalformedHeader("no separator before payload".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(FdpError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let plane = width * height;
    let mut data = vec![0.0f32; expected];
    for (i, &b) in payload[..expected].iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * plane + pixel] = b as f32 / 255.0;
    }
    Image::new(channels, height, width, data)
}

/// `round(255·v)` per sample, clamped to `[0, 255]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(FdpError::UnsupportedFormat(format!("{c}-channel image"))),
    };
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let header = format!("{magic}\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + h * w * c);
    out.extend_from_slice(header.as_bytes());
    let plane = h * w;
    for pixel in 0..plane {
        for ch in 0..c {
            out.push(quantize(image.data()[ch * plane + pixel]));
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FdpError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        FdpError::MalformedHeader(m) => FdpError::MalformedHeader(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(image)?;
    fs::write(path, bytes).map_err(|e| FdpError::io(path, e))
}
