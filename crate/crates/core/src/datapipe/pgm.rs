//! Binary PGM (P5) reader and writer for 8-bit grayscale frames.

use std::path::Path;

use crate::error::{Error, Result};

/// One grayscale frame, row-major 8-bit pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        // skip whitespace and `#` comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Data("pgm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(Error::Data("pgm: not a binary PGM (P5) file".into()));
    }
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad width".into()))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad height".into()))?;
    let maxval: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::Data("pgm: bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Data(format!("pgm: unsupported maxval {}", maxval)));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Data("pgm: truncated pixel data".into()));
    }
    Ok(Image {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}
