//! Binary greymap (P5) with maxval 255.

use std::path::Path;

use crate::error::DataError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parse a P5 file; `path` only labels errors.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage, DataError> {
    let bad = |reason: &str| DataError::MalformedPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Result<&[u8], DataError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut number = |what: &str| -> Result<usize, DataError> {
        std::str::from_utf8(token()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(&format!("invalid {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero image extent"));
    }
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster"));
    }
    let raster = &bytes[pos + 1..];
    if raster.len() != width * height {
        return Err(bad(&format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), DataError> {
    std::fs::write(path, encode_pgm(img)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
