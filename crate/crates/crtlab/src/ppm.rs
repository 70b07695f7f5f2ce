//! Binary NetPBM (P6, 8-bit) image files. Pixels are `[-1, 1]` in memory and
//! bytes on disk.

use std::path::Path;

use crtlab_core::Tensor;

use crate::error::{Error, Result};

pub fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round()) as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

/// Encodes a `[3, h, w]` image.
pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[3, h, w] = img.shape() else {
        return Err(Error::format("ppm", format!("expected a [3, h, w] image, got {:?}", img.shape())));
    };
    let plane = h * w;
    let d = img.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("ppm", format!("malformed header: bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::format("ppm", "malformed header: missing P6 magic"));
    }
    let mut c = Cursor { bytes, pos: 2 };
    let w = c.number("width")?;
    let h = c.number("height")?;
    let max = c.number("maxval")?;
    if max != 255 {
        return Err(Error::format("ppm", format!("unsupported maxval {max}, only 8-bit (255) files are accepted")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format("ppm", "malformed header: zero dimension"));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("ppm", "malformed header: no separator before pixel data"));
    }
    let payload = &bytes[c.pos + 1..];
    let plane = w * h;
    if payload.len() < 3 * plane {
        return Err(Error::format("ppm", format!("truncated payload: {} of {} bytes", payload.len(), 3 * plane)));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in payload[..3 * plane].chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = from_byte(px[ch]);
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

pub fn write(path: &Path, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(Error::io(path))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let bytes: Vec<u8> = (0..3 * 32 * 32).map(|i| (i * 7 % 256) as u8).collect();
        let mut file = b"P6\n32 32\n255\n".to_vec();
        file.extend_from_slice(&bytes);
        let img = decode(&file).unwrap();
        assert_eq!(img.shape(), &[3, 32, 32]);
        assert_eq!(encode(&img).unwrap(), file);
        assert!(String::from_utf8_lossy(&file).starts_with("P6\n32 32\n255\n"));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode(b"P6\n2 2\n65535\n").is_err());
        assert!(decode(b"P5\n2 2\n255\n....").is_err());
        assert!(decode(b"P6\n2 2\n255\n12345").is_err());
        assert!(decode(b"P6 2 # c\n 1 255\n123456").is_ok());
    }
}
