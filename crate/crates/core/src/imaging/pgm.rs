//! Binary PGM (P5, maxval 255).

use std::fs;
use std::path::Path;

use super::{Image, ImagingError};

fn bad(msg: impl Into<String>) -> ImagingError {
    ImagingError::Pgm(msg.into())
}

/// Encodes as P5 with `round(v * 255)` samples.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.to_gray8());
    out
}

/// Decodes P5 with maxval 255; comments in the header are skipped.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image, ImagingError> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |t: &[u8], what: &str| -> Result<usize, ImagingError> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad {what}")))
    };
    let width = parse(tokens[1], "width")?;
    let height = parse(tokens[2], "height")?;
    let maxval = parse(tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| bad("truncated raster"))?;
    Image::from_gray8(width, height, raster)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image, ImagingError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| ImagingError::Io(e.to_string()))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<(), ImagingError> {
    fs::write(path.as_ref(), encode_pgm(img)).map_err(|e| ImagingError::Io(e.to_string()))
}
