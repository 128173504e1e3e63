//! PGM (P5) and PFM readers and writers.
//!
//! PGM samples are 8-bit when `maxval < 256` and big-endian 16-bit
//! otherwise. PFM files are written little-endian (negative scale) with
//! rows stored bottom to top, as the format requires; both byte orders are
//! read.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::image::{NormalMap, RadianceImage};
use crate::{Error, Result, Vec3};

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Writes integer codes (rounded, clamped to `[0, maxval]`) as binary PGM.
pub fn write_pgm(path: &Path, image: &RadianceImage, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::InvalidParameter("PGM maxval must be > 0".into()));
    }
    let (w, h) = image.dims();
    let wide = maxval > 255;
    let mut buf = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    buf.reserve(w * h * if wide { 2 } else { 1 });
    for &x in image.data() {
        let code = if x.is_nan() {
            0.0
        } else {
            x.round().clamp(0.0, maxval as f64)
        } as u16;
        if wide {
            buf.extend_from_slice(&code.to_be_bytes());
        } else {
            buf.push(code as u8);
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM; returns the codes and `maxval`.
pub fn read_pgm(path: &Path) -> Result<(RadianceImage, u16)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let bad = |why: &str| Error::format(path, why);
    if next_token(&bytes, &mut pos).as_deref() != Some("P5") {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        next_token(&bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("header values out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| bad("truncated raster"))?;
    let data = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64).collect()
    };
    Ok((RadianceImage::new(w, h, data)?, maxval as u16))
}

/// Float image with 1 or 3 interleaved channels, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn from_image(image: &RadianceImage) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            channels: 1,
            data: image.data().iter().map(|&x| x as f32).collect(),
        }
    }

    /// Three-channel normals; invalid pixels are written as NaN.
    pub fn from_normals(normals: &NormalMap) -> Self {
        let data = normals
            .normals()
            .iter()
            .zip(normals.valid_mask())
            .flat_map(|(n, &ok)| {
                if ok {
                    [n.x as f32, n.y as f32, n.z as f32]
                } else {
                    [f32::NAN; 3]
                }
            })
            .collect();
        Self {
            width: normals.width(),
            height: normals.height(),
            channels: 3,
            data,
        }
    }

    pub fn to_image(&self) -> Result<RadianceImage> {
        if self.channels != 1 {
            return Err(Error::InvalidParameter(format!(
                "expected 1 channel, found {}",
                self.channels
            )));
        }
        RadianceImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&x| x as f64).collect(),
        )
    }

    /// Inverse of [`Pfm::from_normals`]: NaN pixels become invalid.
    pub fn to_normals(&self) -> Result<NormalMap> {
        if self.channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "expected 3 channels, found {}",
                self.channels
            )));
        }
        let mut normals = Vec::with_capacity(self.width * self.height);
        let mut valid = Vec::with_capacity(self.width * self.height);
        for c in self.data.chunks_exact(3) {
            let ok = c.iter().all(|x| x.is_finite());
            valid.push(ok);
            normals.push(if ok {
                Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)
            } else {
                Vec3::zeros()
            });
        }
        NormalMap::new(self.width, self.height, normals, valid)
    }
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    let tag = match pfm.channels {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::InvalidParameter(format!(
                "PFM supports 1 or 3 channels, not {c}"
            )))
        }
    };
    let row_len = pfm.width * pfm.channels;
    if pfm.data.len() != row_len * pfm.height {
        return Err(Error::InvalidParameter(
            "PFM buffer does not match its dimensions".into(),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "{tag}\n{} {}\n-1.0\n", pfm.width, pfm.height).map_err(io)?;
    for row in pfm.data.chunks_exact(row_len).rev() {
        for x in row {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = BufReader::new(file);
    let bad = |why: &str| Error::format(path, why);
    let line = |rd: &mut BufReader<fs::File>| -> Result<String> {
        let mut s = String::new();
        rd.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        Ok(s.trim().to_owned())
    };
    let channels = match line(&mut rd)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("not a PFM file")),
    };
    let dims = line(&mut rd)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) if w > 0 && h > 0 => (w, h),
        _ => return Err(bad("bad dimensions")),
    };
    let scale: f64 = line(&mut rd)?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("bad scale"));
    }
    let little = scale < 0.0;
    let row_len = width * channels;
    let mut raw = vec![0u8; row_len * height * 4];
    rd.read_exact(&mut raw)
        .map_err(|_| bad("truncated raster"))?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let data = values
        .chunks_exact(row_len)
        .rev()
        .flatten()
        .copied()
        .collect();
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm_image(path: &Path, image: &RadianceImage) -> Result<()> {
    write_pfm(path, &Pfm::from_image(image))
}

pub fn read_pfm_image(path: &Path) -> Result<RadianceImage> {
    read_pfm(path)?.to_image()
}
