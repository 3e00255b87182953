//! Binary portable pixmap (P6), 8-bit RGB.

use std::path::Path;

use crate::error::{io_err, DataError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height * 3, "pixel buffer size");
        Self { width, height, pixels }
    }
}

pub fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses a P6 stream; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<RgbImage> {
    let bad = |detail: String| DataError::Pixmap {
        path: origin.to_path_buf(),
        detail,
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(bad(format!("magic {:?}, expected P6", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad {what} {s:?}")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(bad(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero dimension".into()));
    }
    // single whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 3;
    let have = bytes.len().saturating_sub(pos);
    if have < need {
        return Err(bad(format!("truncated raster: {have} of {need} bytes")));
    }
    Ok(RgbImage::new(width, height, bytes[pos..pos + need].to_vec()))
}

pub fn write(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = RgbImage::new(3, 2, (0..18).map(|i| (i * 13) as u8).collect());
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode(&bytes, Path::new("x.ppm")).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n2 1 255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&bytes, Path::new("c.ppm")).unwrap();
        assert_eq!(img.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn errors_name_the_file() {
        let img = RgbImage::new(4, 4, vec![7; 48]);
        let mut bytes = encode(&img);
        bytes.truncate(bytes.len() - 5);
        let err = decode(&bytes, Path::new("cut.ppm")).unwrap_err().to_string();
        assert!(err.contains("cut.ppm") && err.contains("truncated"), "{err}");
        let err = decode(b"P3\n1 1\n255\n000", Path::new("p3.ppm")).unwrap_err().to_string();
        assert!(err.contains("p3.ppm") && err.contains("magic"));
        assert!(decode(b"P6\n1", Path::new("h.ppm")).is_err());
        assert!(decode(b"P6\n1 1\n65535\n000000", Path::new("m.ppm")).is_err());
    }
}
