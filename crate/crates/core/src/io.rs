//! Netpbm (PPM / PGM) and PFM readers and writers.
//!
//! Colour images are 8-bit binary PPM mapped to `[0, 1]`. Masks are 8-bit PGM
//! (0 or 255). Instance id maps are 16-bit big-endian PGM where a pixel holds
//! `1000 * class + id` and 0 is background; generated data always uses class 1.
//! Depth maps are little-endian greyscale PFM (scale −1) with rows stored
//! bottom to top.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{DepthMap, GeometryError, Image};
use crate::labels::InstanceLabelMap;

pub const CLASS_ID: u32 = 1;
pub const CLASS_STRIDE: u32 = 1000;
/// KITTI's "ignore" value, decoded as background.
pub const IGNORE_VALUE: u32 = 10000;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected}")]
    Magic { found: String, expected: &'static str },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported maxval {0}")]
    MaxVal(u32),
    #[error("file ends early: expected {expected} bytes of pixel data, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after pixel data")]
    Trailing(usize),
    #[error("image needs 1 or 3 channels to be written, got {0}")]
    Channels(usize),
    #[error("instance id {0} does not fit the id-map encoding")]
    IdRange(u32),
    #[error("depth map: {0}")]
    Depth(#[from] GeometryError),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path).map(BufReader::new).map_err(|source| FormatError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    File::create(path).map(BufWriter::new).map_err(|source| FormatError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token<R: BufRead>(input: &mut R) -> Result<String, FormatError> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b == b'#' && tok.is_empty() {
            let mut rest = Vec::new();
            input.read_until(b'\n', &mut rest)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b);
    }
    if tok.is_empty() {
        return Err(FormatError::Header("unexpected end of header".into()));
    }
    String::from_utf8(tok).map_err(|_| FormatError::Header("non-ascii header".into()))
}

fn number<T: std::str::FromStr, R: BufRead>(input: &mut R, what: &str) -> Result<T, FormatError> {
    let tok = token(input)?;
    tok.parse()
        .map_err(|_| FormatError::Header(format!("bad {what}: {tok:?}")))
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
}

fn netpbm_header<R: BufRead>(input: &mut R, magic: &'static str) -> Result<Header, FormatError> {
    let found = token(input)?;
    if found != magic {
        return Err(FormatError::Magic { found, expected: magic });
    }
    let width: usize = number(input, "width")?;
    let height: usize = number(input, "height")?;
    let maxval: u32 = number(input, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::MaxVal(maxval));
    }
    if width == 0 || height == 0 {
        return Err(FormatError::Header(format!("empty image {width}x{height}")));
    }
    Ok(Header { width, height, maxval })
}

fn payload<R: Read>(input: &mut R, expected: usize) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::with_capacity(expected);
    input.read_to_end(&mut buf)?;
    if buf.len() < expected {
        return Err(FormatError::Truncated { expected, got: buf.len() });
    }
    if buf.len() > expected {
        return Err(FormatError::Trailing(buf.len() - expected));
    }
    Ok(buf)
}

fn quantise(v: f64, maxval: f64) -> u8 {
    (v.clamp(0.0, 1.0) * maxval).round() as u8
}

pub fn write_ppm<W: Write>(mut out: W, img: &Image) -> Result<(), FormatError> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if c != 1 && c != 3 {
        return Err(FormatError::Channels(c));
    }
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut bytes = Vec::with_capacity(h * w * 3);
    for px in img.data().chunks(c) {
        for ch in 0..3 {
            bytes.push(quantise(px[if c == 1 { 0 } else { ch }], 255.0));
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads an 8-bit P6 image into a 3-channel image scaled to `[0, 1]`.
pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Image, FormatError> {
    let hdr = netpbm_header(&mut input, "P6")?;
    if hdr.maxval > 255 {
        return Err(FormatError::MaxVal(hdr.maxval));
    }
    let bytes = payload(&mut input, hdr.width * hdr.height * 3)?;
    let scale = hdr.maxval as f64;
    let data = bytes.iter().map(|&b| b as f64 / scale).collect();
    Ok(Image::new(hdr.height, hdr.width, 3, data)?)
}

/// Binary mask as an 8-bit PGM with 255 for set pixels.
pub fn write_mask_pgm<W: Write>(mut out: W, height: usize, width: usize, mask: &[bool]) -> Result<(), FormatError> {
    assert_eq!(mask.len(), height * width, "mask size");
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Any non-zero sample is foreground. 16-bit masks are accepted too.
pub fn read_mask_pgm<R: BufRead>(mut input: R) -> Result<(usize, usize, Vec<bool>), FormatError> {
    let hdr = netpbm_header(&mut input, "P5")?;
    let n = hdr.width * hdr.height;
    let mask = if hdr.maxval > 255 {
        payload(&mut input, 2 * n)?
            .chunks(2)
            .map(|b| b[0] != 0 || b[1] != 0)
            .collect()
    } else {
        payload(&mut input, n)?.iter().map(|&b| b != 0).collect()
    };
    Ok((hdr.height, hdr.width, mask))
}

pub fn write_id_map<W: Write>(mut out: W, map: &InstanceLabelMap) -> Result<(), FormatError> {
    let mut bytes = Vec::with_capacity(map.ids().len() * 2);
    for &id in map.ids() {
        if id >= CLASS_STRIDE {
            return Err(FormatError::IdRange(id));
        }
        let value = if id == 0 { 0 } else { CLASS_ID * CLASS_STRIDE + id } as u16;
        bytes.extend_from_slice(&value.to_be_bytes());
    }
    write!(out, "P5\n{} {}\n65535\n", map.width(), map.height())?;
    out.write_all(&bytes)?;
    Ok(())
}

/// Decodes `value % 1000` as the instance id, regardless of class. The
/// ignore value and bare class codes decode to background.
pub fn read_id_map<R: BufRead>(mut input: R) -> Result<InstanceLabelMap, FormatError> {
    let hdr = netpbm_header(&mut input, "P5")?;
    let n = hdr.width * hdr.height;
    let ids = if hdr.maxval > 255 {
        payload(&mut input, 2 * n)?
            .chunks(2)
            .map(|b| decode_id(u16::from_be_bytes([b[0], b[1]]) as u32))
            .collect()
    } else {
        payload(&mut input, n)?.iter().map(|&b| b as u32).collect()
    };
    Ok(InstanceLabelMap::new(hdr.height, hdr.width, ids))
}

fn decode_id(value: u32) -> u32 {
    if value == IGNORE_VALUE {
        0
    } else {
        value % CLASS_STRIDE
    }
}

pub fn write_pfm<W: Write>(mut out: W, depth: &DepthMap) -> Result<(), FormatError> {
    let (h, w) = (depth.height(), depth.width());
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    let mut bytes = Vec::with_capacity(h * w * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            bytes.extend_from_slice(&(depth.get(row, col) as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads a greyscale PFM. A positive scale means big-endian samples.
pub fn read_pfm<R: BufRead>(mut input: R) -> Result<DepthMap, FormatError> {
    let found = token(&mut input)?;
    if found != "Pf" {
        return Err(FormatError::Magic { found, expected: "Pf" });
    }
    let width: usize = number(&mut input, "width")?;
    let height: usize = number(&mut input, "height")?;
    let scale: f64 = number(&mut input, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::Header(format!("bad scale {scale}")));
    }
    let bytes = payload(&mut input, width * height * 4)?;
    let mut values = vec![0.0; width * height];
    for (i, b) in bytes.chunks(4).enumerate() {
        let raw = [b[0], b[1], b[2], b[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, col) = (i / width, i % width);
        values[(height - 1 - file_row) * width + col] = v as f64;
    }
    Ok(DepthMap::new(height, width, values)?)
}

pub fn save_ppm(path: &Path, img: &Image) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_ppm(&mut out, img)?;
    out.flush()?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<Image, FormatError> {
    read_ppm(open(path)?)
}

pub fn save_mask(path: &Path, height: usize, width: usize, mask: &[bool]) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_mask_pgm(&mut out, height, width, mask)?;
    out.flush()?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<bool>), FormatError> {
    read_mask_pgm(open(path)?)
}

pub fn save_id_map(path: &Path, map: &InstanceLabelMap) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_id_map(&mut out, map)?;
    out.flush()?;
    Ok(())
}

pub fn load_id_map(path: &Path) -> Result<InstanceLabelMap, FormatError> {
    read_id_map(open(path)?)
}

pub fn save_pfm(path: &Path, depth: &DepthMap) -> Result<(), FormatError> {
    let mut out = create(path)?;
    write_pfm(&mut out, depth)?;
    out.flush()?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<DepthMap, FormatError> {
    read_pfm(open(path)?)
}
