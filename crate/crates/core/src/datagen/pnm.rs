//! Binary netpbm IO: P6 PPM for RGB images, P5 PGM for label maps, plus a
//! small raw f32 raster for confidence maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::common::LabelMap;
use crate::imgproc::RgbImage;
use crate::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(format!("open {path:?}"), e))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(format!("create {path:?}"), e))?,
    ))
}

fn write_io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("write {path:?}"), e)
}

/// Read one whitespace-delimited token, skipping `#` comment lines.
fn read_token(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        if r.read(&mut byte).map_err(|e| Error::io(format!("read {path:?}"), e))? == 0 {
            if token.is_empty() {
                return Err(Error::format(path, "unexpected end of header"));
            }
            return Ok(token);
        }
        let c = byte[0];
        if in_comment {
            if c == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match c {
            b'#' => in_comment = true,
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !token.is_empty() {
                    return Ok(token);
                }
            }
            _ => token.push(c as char),
        }
    }
}

fn parse_dim(tok: &str, path: &Path) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::format(path, format!("bad header token {tok:?}")))
}

fn read_header(r: &mut impl Read, path: &Path, magic: &str) -> Result<(usize, usize)> {
    let found = read_token(r, path)?;
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic: expected {magic}, found {found}"),
        ));
    }
    let width = parse_dim(&read_token(r, path)?, path)?;
    let height = parse_dim(&read_token(r, path)?, path)?;
    let maxval = parse_dim(&read_token(r, path)?, path)?;
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval} (only 255)"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, format!("degenerate size {width}x{height}")));
    }
    Ok((width, height))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut w = create(path)?;
    let e = write_io(path);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(&e)?;
    w.write_all(&img.data).map_err(&e)?;
    w.flush().map_err(&e)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let mut r = open(path)?;
    let (width, height) = read_header(&mut r, path, "P6")?;
    let mut data = vec![0u8; width * height * 3];
    r.read_exact(&mut data)
        .map_err(|_| Error::format(path, "truncated pixel data"))?;
    RgbImage::new(width, height, data)
}

/// Label maps are stored as P5 with the category index as the gray level.
pub fn write_label_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut w = create(path)?;
    let e = write_io(path);
    write!(w, "P5\n{} {}\n255\n", labels.width, labels.height).map_err(&e)?;
    w.write_all(&labels.data).map_err(&e)?;
    w.flush().map_err(&e)?;
    Ok(())
}

pub fn read_label_pgm(path: &Path) -> Result<LabelMap> {
    let mut r = open(path)?;
    let (width, height) = read_header(&mut r, path, "P5")?;
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data)
        .map_err(|_| Error::format(path, "truncated pixel data"))?;
    LabelMap::new(width, height, data)
}

/// Raw little-endian f32 raster with a width/height header.
pub fn write_f32_raster(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::InvalidDimensions(format!(
            "raster length {} != {width}x{height}",
            values.len()
        )));
    }
    let mut w = create(path)?;
    let e = write_io(path);
    w.write_all(&(width as u32).to_le_bytes()).map_err(&e)?;
    w.write_all(&(height as u32).to_le_bytes()).map_err(&e)?;
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes()).map_err(&e)?;
    }
    w.flush().map_err(&e)?;
    Ok(())
}

pub fn read_f32_raster(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = open(path)?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| Error::format(path, "unexpected end of file"))?;
    let width = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)
        .map_err(|_| Error::format(path, "unexpected end of file"))?;
    let height = u32::from_le_bytes(b4) as usize;
    let mut values = vec![0.0f64; width * height];
    for v in &mut values {
        r.read_exact(&mut b4)
            .map_err(|_| Error::format(path, "truncated raster data"))?;
        *v = f32::from_le_bytes(b4) as f64;
    }
    Ok((width, height, values))
}
