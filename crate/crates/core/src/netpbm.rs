//! Binary NetPBM I/O: P6 colour images, P5 grayscale, P4 bitmaps.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_ppm(path: &Path, img: &Rgb8) -> Result<()> {
    write(path, &encode_ppm(img))
}

pub fn encode_pgm(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(path: &Path, img: &Gray8) -> Result<()> {
    write(path, &encode_pgm(img))
}

/// P4 bitmap; `true` pixels are written as 1 (black).
pub fn encode_pbm(width: usize, height: usize, bits: &[bool]) -> Vec<u8> {
    let mut out = format!("P4\n{width} {height}\n").into_bytes();
    let row_bytes = width.div_ceil(8);
    for y in 0..height {
        let mut row = vec![0u8; row_bytes];
        for x in 0..width {
            if bits[y * width + x] {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

pub fn write_pbm(path: &Path, width: usize, height: usize, bits: &[bool]) -> Result<()> {
    write(path, &encode_pbm(width, height, bits))
}

struct Header<'a> {
    magic: &'a [u8],
    width: usize,
    height: usize,
    maxval: usize,
    body: &'a [u8],
}

fn parse_header<'a>(bytes: &'a [u8], with_maxval: bool, path: &Path) -> Result<Header<'a>> {
    let bad = |d: &str| Error::Image {
        path: path.to_path_buf(),
        detail: d.to_string(),
    };
    if bytes.len() < 2 {
        return Err(bad("file too short"));
    }
    let magic = &bytes[..2];
    let mut pos = 2;
    let mut fields = Vec::new();
    let wanted = if with_maxval { 3 } else { 2 };
    while fields.len() < wanted {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
        fields.push(v);
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if pos > bytes.len() {
        return Err(bad("missing raster"));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: if with_maxval { fields[2] } else { 1 },
        body: &bytes[pos..],
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Rgb8> {
    let h = parse_header(bytes, true, path)?;
    let n = h.width * h.height * 3;
    if h.magic != b"P6" || h.maxval != 255 || h.body.len() < n {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: "expected P6 with maxval 255".into(),
        });
    }
    Ok(Rgb8 {
        width: h.width,
        height: h.height,
        data: h.body[..n].to_vec(),
    })
}

pub fn read_ppm(path: &Path) -> Result<Rgb8> {
    decode_ppm(&read(path)?, path)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Gray8> {
    let h = parse_header(bytes, true, path)?;
    let n = h.width * h.height;
    if h.magic != b"P5" || h.maxval != 255 || h.body.len() < n {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: "expected P5 with maxval 255".into(),
        });
    }
    Ok(Gray8 {
        width: h.width,
        height: h.height,
        data: h.body[..n].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<Gray8> {
    decode_pgm(&read(path)?, path)
}

/// Returns `(width, height, bits)`.
pub fn read_pbm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = read(path)?;
    let h = parse_header(&bytes, false, path)?;
    let row_bytes = h.width.div_ceil(8);
    if h.magic != b"P4" || h.body.len() < row_bytes * h.height {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: "expected P4 bitmap".into(),
        });
    }
    let mut bits = Vec::with_capacity(h.width * h.height);
    for y in 0..h.height {
        let row = &h.body[y * row_bytes..(y + 1) * row_bytes];
        for x in 0..h.width {
            bits.push(row[x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok((h.width, h.height, bits))
}

/// Min-max scales `values` into 0..=255. A constant input maps to 0.
pub fn minmax_to_gray(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let data = values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - min) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    (data, min, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = Rgb8 {
            width: 3,
            height: 2,
            data: (0..18).map(|v| v * 13).collect(),
        };
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode_ppm(&bytes, Path::new("x")).unwrap(), img);
    }

    #[test]
    fn pbm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pbm");
        let bits: Vec<bool> = (0..33).map(|i| i % 3 == 0).collect();
        write_pbm(&p, 11, 3, &bits).unwrap();
        assert_eq!(read_pbm(&p).unwrap(), (11, 3, bits));
    }

    #[test]
    fn header_comments_skipped() {
        let bytes = b"P5\n# note\n2 1\n255\n\x01\x02";
        let g = decode_pgm(bytes, Path::new("x")).unwrap();
        assert_eq!(g.data, vec![1, 2]);
    }
}
