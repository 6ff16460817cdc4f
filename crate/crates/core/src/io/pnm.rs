//! Binary PPM (P6) and PGM (P5) images, 8- and 16-bit.

use std::path::Path;

use crate::crf::RegionPartition;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Grid3;

/// Raw decoded PNM raster, samples interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.origin, format!("missing {field} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(self.origin, format!("{field} out of range")))
    }
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Pnm> {
    if bytes.len() < 2 {
        return Err(Error::Truncated {
            path: origin.to_path_buf(),
            what: "header",
            expected: 2,
            found: bytes.len(),
        });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        m => return Err(Error::format(origin, format!("unsupported magic {m:?}"))),
    };
    let mut cur = Cursor {
        bytes,
        pos: 2,
        origin,
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(origin, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(origin, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::format(origin, "missing whitespace after maxval")),
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n as u64 <= 1 << 32)
        .ok_or_else(|| Error::format(origin, "image dimensions too large"))?;
    let expected = cur.pos + count * bps;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: origin.to_path_buf(),
            what: "raster",
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after raster", bytes.len() - expected),
        ));
    }
    let raster = &bytes[cur.pos..expected];
    let samples: Vec<u16> = if bps == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s as usize > maxval) {
        return Err(Error::format(origin, format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(img: &Pnm) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

fn read_file(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn write_file(path: &Path, img: &Pnm) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Color image as a 3×H×W grid with values in 0..=255.
pub fn read_color(path: &Path) -> Result<Grid3> {
    let img = read_file(path)?;
    if img.channels != 3 {
        return Err(Error::format(path, "expected a color (P6) image"));
    }
    let scale = 255.0 / img.maxval as f64;
    let (h, w) = (img.height, img.width);
    Grid3::from_fn(3, h, w, |c, y, x| {
        img.samples[(y * w + x) * 3 + c] as f64 * scale
    })
}

/// Writes channels 0..3 rounded and clamped to 8 bits.
pub fn write_color(path: &Path, image: &Grid3) -> Result<()> {
    write_file(path, &color_to_pnm(image)?)
}

pub fn color_to_pnm(image: &Grid3) -> Result<Pnm> {
    let (c, h, w) = image.dims();
    if c != 3 {
        return Err(Error::dim(format!("color image needs 3 channels, got {c}")));
    }
    let mut samples = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            samples.push(image.channel(ch)[p].round().clamp(0.0, 255.0) as u16);
        }
    }
    Ok(Pnm {
        width: w,
        height: h,
        channels: 3,
        maxval: 255,
        samples,
    })
}

fn read_gray(path: &Path) -> Result<Pnm> {
    let img = read_file(path)?;
    if img.channels != 1 {
        return Err(Error::format(path, "expected a grayscale (P5) image"));
    }
    Ok(img)
}

/// Label maps are stored 8-bit when every label fits, 16-bit otherwise.
pub fn label_map_to_pnm(labels: &LabelMap) -> Pnm {
    let maxval = if labels.max_label() > 255 { 65535 } else { 255 };
    Pnm {
        width: labels.width(),
        height: labels.height(),
        channels: 1,
        maxval,
        samples: labels.labels().to_vec(),
    }
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let img = read_gray(path)?;
    LabelMap::new(img.height, img.width, img.samples)
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    write_file(path, &label_map_to_pnm(labels))
}

/// Region ids are always written 16-bit.
pub fn read_regions(path: &Path) -> Result<RegionPartition> {
    let img = read_gray(path)?;
    let raw: Vec<u32> = img.samples.iter().map(|&s| s as u32).collect();
    RegionPartition::from_raw_ids(img.height, img.width, &raw)
}

pub fn write_regions(path: &Path, regions: &RegionPartition) -> Result<()> {
    let (h, w) = regions.dims();
    if regions.region_count() > 65536 {
        return Err(Error::arg(format!(
            "{} regions do not fit a 16-bit image",
            regions.region_count()
        )));
    }
    write_file(
        path,
        &Pnm {
            width: w,
            height: h,
            channels: 1,
            maxval: 65535,
            samples: regions.ids().iter().map(|&i| i as u16).collect(),
        },
    )
}

/// Binary masks: nonzero pixels are inside.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = read_gray(path)?;
    Ok((img.height, img.width, img.samples.iter().map(|&s| s != 0).collect()))
}

pub fn write_mask(path: &Path, h: usize, w: usize, bits: &[bool]) -> Result<()> {
    if bits.len() != h * w {
        return Err(Error::dim(format!("mask has {} bits for {h}x{w}", bits.len())));
    }
    write_file(
        path,
        &Pnm {
            width: w,
            height: h,
            channels: 1,
            maxval: 255,
            samples: bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        },
    )
}
