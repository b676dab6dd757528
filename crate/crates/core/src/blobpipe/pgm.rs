//! 8-bit binary PGM (P5) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, LabelMap};

pub fn encode(grid: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend_from_slice(grid.as_slice());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Grid<u8>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, got {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    Grid::from_vec(height, width, bytes[pos..pos + need].to_vec())
}

pub fn read(path: impl AsRef<Path>) -> Result<Grid<u8>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write(path: impl AsRef<Path>, grid: &Grid<u8>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

/// Masks are stored as 0 / 255.
pub fn mask_to_gray(m: &BinaryMask) -> Grid<u8> {
    m.map(|&b| if b { 255 } else { 0 })
}

/// Any non-zero byte reads as a one.
pub fn gray_to_mask(g: &Grid<u8>) -> BinaryMask {
    g.map(|&v| v != 0)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    read(path).map(|g| gray_to_mask(&g))
}

pub fn write_mask(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    write(path, &mask_to_gray(m))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    read(path)
}

pub fn write_labels(path: impl AsRef<Path>, y: &LabelMap) -> Result<()> {
    write(path, y)
}
