//! Minimal binary PGM (P5) and PPM (P6) reading and writing.
//!
//! Pixels are stored as 8-bit samples with maxval 255 and mapped to `[0,1]` by
//! dividing by 255. Segmentation masks are grayscale files thresholded at
//! 128 on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::img_attacks::{Image, SegMask};

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a single-channel image as binary PGM.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!("PGM requires 1 channel, image has {}", img.channels())));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())?;
    for i in 0..img.height() {
        for j in 0..img.width() {
            out.write_all(&[quantize(img.get(i, j, 0))])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a three-channel image as binary PPM.
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!("PPM requires 3 channels, image has {}", img.channels())));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    for i in 0..img.height() {
        for j in 0..img.width() {
            out.write_all(&[
                quantize(img.get(i, j, 0)),
                quantize(img.get(i, j, 1)),
                quantize(img.get(i, j, 2)),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Header fields of a raw PNM file.
struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

/// Parses the ASCII header (magic, width, height, maxval), skipping
/// whitespace and `#` comments.
fn parse_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Parse("file too short for a PNM header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("missing numeric field in PNM header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text.parse().map_err(|_| Error::Parse("bad PNM header field".into()))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse("PNM header not terminated by whitespace".into()));
    }
    pos += 1;
    Ok(PnmHeader { magic, width: fields[0], height: fields[1], maxval: fields[2], data_offset: pos })
}

fn read_raw(path: &Path, magic: &[u8; 2], channels: usize) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let header = parse_header(&bytes)?;
    if &header.magic != magic {
        return Err(Error::Parse(format!(
            "expected {} file, found magic {:?}",
            std::str::from_utf8(magic).unwrap(),
            header.magic
        )));
    }
    if header.maxval != 255 {
        return Err(Error::Parse(format!("only maxval 255 is supported, got {}", header.maxval)));
    }
    let (h, w) = (header.height, header.width);
    let need = h * w * channels;
    let data = &bytes[header.data_offset..];
    if data.len() < need {
        return Err(Error::Parse(format!("expected {need} pixel bytes, found {}", data.len())));
    }
    let mut img = Image::zeros(h, w, channels)?;
    let mut k = 0;
    for i in 0..h {
        for j in 0..w {
            for c in 0..channels {
                img.set(i, j, c, data[k] as f64 / 255.0);
                k += 1;
            }
        }
    }
    Ok(img)
}

/// Reads a binary PGM into a single-channel image.
pub fn read_pgm(path: &Path) -> Result<Image> {
    read_raw(path, b"P5", 1)
}

/// Reads a binary PPM into a three-channel image.
pub fn read_ppm(path: &Path) -> Result<Image> {
    read_raw(path, b"P6", 3)
}

/// Reads a binary PGM as a segmentation mask: samples >= 128 map to 1.
pub fn read_seg_pgm(path: &Path) -> Result<SegMask> {
    let img = read_pgm(path)?;
    let mut mask = SegMask::zeros(img.height(), img.width());
    for i in 0..img.height() {
        for j in 0..img.width() {
            if img.get(i, j, 0) * 255.0 >= 128.0 {
                mask.set(i, j, true);
            }
        }
    }
    Ok(mask)
}

/// Writes a segmentation mask as binary PGM (0 or 255).
pub fn write_seg_pgm(mask: &SegMask, path: &Path) -> Result<()> {
    let mut img = Image::zeros(mask.height(), mask.width(), 1)?;
    for i in 0..mask.height() {
        for j in 0..mask.width() {
            if mask.get(i, j) {
                img.set(i, j, 0, 1.0);
            }
        }
    }
    write_pgm(&img, path)
}
