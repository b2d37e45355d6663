//! Score grids, binary masks, their file formats, and synthetic fixtures.
//!
//! Supported inputs:
//!
//! * gray images: binary PGM (`P5`, 8 or 16 bit) and single-channel PNG (8 or 16 bit);
//! * raw-f32: a one-line JSON header `{"h":H,"w":W}` (optionally `"c":C` for
//!   multi-channel feature grids) terminated by `\n`, followed by `H*W*C`
//!   little-endian IEEE-754 `f32` values, row-major, channels interleaved per pixel;
//! * csv: one grid row per line, comma separated.
//!
//! Every loader min-max rescales to `[0, 1]`; constant inputs become all zeros.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Dense `height × width` grid of anomaly scores in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ScoreGrid {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Structural(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Structural(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Validation(format!(
                "value {} at index {i} is outside [0,1]",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Min-max rescale arbitrary finite data into a valid grid.
    pub fn from_unscaled(height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::Structural(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                raw.len()
            )));
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at index {i}")));
        }
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let values = if hi > lo {
            let span = hi - lo;
            raw.iter().map(|&v| ((v - lo) / span) as f32).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col] as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            })
    }

    /// Same min-max rescale the loaders apply.
    pub fn rescaled(&self) -> Self {
        let raw: Vec<f64> = self.values.iter().map(|&v| v as f64).collect();
        Self::from_unscaled(self.height, self.width, &raw).expect("valid grid rescales")
    }

    /// Superlevel set `{A >= level}`.
    pub fn superlevel(&self, level: f64) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.values.iter().map(|&v| v as f64 >= level).collect(),
        }
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::Structural(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!((self.height, self.width), (other.height, other.width));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridFormat {
    GrayImage,
    RawF32,
    Csv,
}

impl GridFormat {
    /// Guess from the file extension: `.f32`/`.raw` → raw-f32, `.csv` → csv, else gray image.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("f32") | Some("raw") => GridFormat::RawF32,
            Some("csv") => GridFormat::Csv,
            _ => GridFormat::GrayImage,
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path, format: GridFormat) -> Result<ScoreGrid> {
    let bytes = read_bytes(path)?;
    decode_grid(&bytes, format)
}

pub fn decode_grid(bytes: &[u8], format: GridFormat) -> Result<ScoreGrid> {
    let (h, w, raw) = match format {
        GridFormat::GrayImage => {
            let img = decode_gray(bytes)?;
            let raw = img.samples.iter().map(|&v| v as f64).collect();
            (img.height, img.width, raw)
        }
        GridFormat::RawF32 => {
            let raw = decode_raw_f32(bytes)?;
            if raw.channels != 1 {
                return Err(Error::Structural(format!(
                    "score grid must have one channel, file has {}",
                    raw.channels
                )));
            }
            let vals = raw.values.iter().map(|&v| v as f64).collect();
            (raw.height, raw.width, vals)
        }
        GridFormat::Csv => decode_csv(bytes)?,
    };
    ScoreGrid::from_unscaled(h, w, &raw)
}

/// Multi-channel raw-f32 payload, not rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    h: usize,
    w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<usize>,
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<RawGrid> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(bytes.len(), "raw-f32 header is not newline terminated"))?;
    let header: RawHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format(e.column().saturating_sub(1), format!("bad header: {e}")))?;
    let channels = header.c.unwrap_or(1);
    if header.h == 0 || header.w == 0 || channels == 0 {
        return Err(Error::Structural(format!(
            "header dimensions must be positive: {}x{}x{channels}",
            header.h, header.w
        )));
    }
    let payload = &bytes[nl + 1..];
    let expected = header.h * header.w * channels * 4;
    if payload.len() != expected {
        return Err(Error::Structural(format!(
            "payload has {} bytes, header {}x{}x{channels} needs {expected}",
            payload.len(),
            header.h,
            header.w
        )));
    }
    let mut values = Vec::with_capacity(expected / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::format(nl + 1 + 4 * i, "non-finite f32 value"));
        }
        values.push(v);
    }
    Ok(RawGrid {
        height: header.h,
        width: header.w,
        channels,
        values,
    })
}

pub fn encode_raw_f32(height: usize, width: usize, channels: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), height * width * channels);
    let header = RawHeader {
        h: height,
        w: width,
        c: (channels != 1).then_some(channels),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Write a grid in raw-f32 format. Loading it back reproduces a loader-normalized grid bit-exactly.
pub fn save_grid_raw(grid: &ScoreGrid, path: &Path) -> Result<()> {
    let bytes = encode_raw_f32(grid.height, grid.width, 1, &grid.values);
    write_file(path, &bytes)
}

fn decode_csv(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(e.valid_up_to(), "csv is not valid UTF-8"))?;
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut height = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            continue;
        }
        let mut field_start = line_start;
        let mut n = 0;
        for field in content.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(field_start, format!("cannot parse {:?} as a number", field.trim()))
            })?;
            if !v.is_finite() {
                return Err(Error::format(field_start, "non-finite value"));
            }
            values.push(v);
            field_start += field.len() + 1;
            n += 1;
        }
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::Structural(format!(
                    "row {height} has {n} columns, expected {w}"
                )))
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Structural("csv has no rows".into()))?;
    Ok((height, width, values))
}

struct GrayImage {
    height: usize,
    width: usize,
    samples: Vec<u16>,
}

fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(Error::format(0, "not a PGM (P5) or PNG file"))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(pos, "truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "expected a decimal number in PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, "PGM header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(pos, "missing whitespace after PGM maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Structural("PGM dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(pos - 1, format!("invalid PGM maxval {maxval}")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    let needed = width * height * bps;
    if payload.len() < needed {
        return Err(Error::Structural(format!(
            "PGM payload has {} bytes, {width}x{height} needs {needed}",
            payload.len()
        )));
    }
    let samples = if bps == 1 {
        payload[..needed].iter().map(|&b| b as u16).collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(GrayImage {
        height,
        width,
        samples,
    })
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(0, format!("PNG decode failed: {e}")))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let samples = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => {
            return Err(Error::Structural(format!(
                "expected a single-channel PNG, got {:?}",
                other.color()
            )))
        }
    };
    Ok(GrayImage {
        height,
        width,
        samples,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// 8-bit single-channel image, foreground 255. `.pgm` writes P5, anything else PNG.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_gray8(mask.height, mask.width, &pixels, path)
}

pub fn save_gray8(height: usize, width: usize, pixels: &[u8], path: &Path) -> Result<()> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
        bytes.extend_from_slice(pixels);
        write_file(path, &bytes)
    } else {
        let buf = image::GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
            .expect("pixel buffer matches dimensions");
        let mut out = Vec::new();
        buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        write_file(path, &out)
    }
}

/// Load a mask image; any nonzero pixel is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode_gray(&read_bytes(path)?)?;
    BinaryMask::new(
        img.height,
        img.width,
        img.samples.iter().map(|&v| v != 0).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DefectShape {
    /// Pixels with `(r-row)^2 + (c-col)^2 <= radius^2`.
    Disk {
        row: usize,
        col: usize,
        radius: usize,
        peak: f64,
    },
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        peak: f64,
    },
}

impl DefectShape {
    fn peak(&self) -> f64 {
        match *self {
            DefectShape::Disk { peak, .. } | DefectShape::Rect { peak, .. } => peak,
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            DefectShape::Disk {
                row, col, radius, ..
            } => {
                let dr = r as i64 - row as i64;
                let dc = c as i64 - col as i64;
                dr * dr + dc * dc <= (radius * radius) as i64
            }
            DefectShape::Rect {
                top,
                left,
                height,
                width,
                ..
            } => r >= top && r < top + height && c >= left && c < left + width,
        }
    }

    fn fits(&self, h: usize, w: usize) -> bool {
        match *self {
            DefectShape::Disk {
                row, col, radius, ..
            } => row >= radius && col >= radius && row + radius < h && col + radius < w,
            DefectShape::Rect {
                top,
                left,
                height,
                width,
                ..
            } => height > 0 && width > 0 && top + height <= h && left + width <= w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub defects: Vec<DefectShape>,
    pub background: f64,
    /// Uniform noise in `[-noise, +noise]`, one SplitMix64 draw per pixel in row-major order.
    pub noise: f64,
    /// Background rises linearly by `drift` from the first to the last column.
    #[serde(default)]
    pub drift: f64,
    pub seed: u64,
}

/// Render a synthetic anomaly map and its exact ground-truth mask.
pub fn synth(spec: &SyntheticSpec) -> Result<(ScoreGrid, BinaryMask)> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::Validation("synthetic grid must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&spec.background) || spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(Error::Validation(
            "background must lie in [0,1] and noise must be nonnegative".into(),
        ));
    }
    for (i, d) in spec.defects.iter().enumerate() {
        if !d.fits(h, w) {
            return Err(Error::Validation(format!("defect {i} does not fit in {h}x{w}")));
        }
        if d.peak() <= spec.background || d.peak() > 1.0 {
            return Err(Error::Validation(format!(
                "defect {i} peak {} must exceed background {} and be at most 1",
                d.peak(),
                spec.background
            )));
        }
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut values = Vec::with_capacity(h * w);
    let mut bits = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let noise = rng.symmetric(spec.noise);
            let peak = spec
                .defects
                .iter()
                .filter(|d| d.contains(r, c))
                .map(DefectShape::peak)
                .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
            let base = match peak {
                Some(p) => p,
                None => {
                    let ramp = if w > 1 { c as f64 / (w - 1) as f64 } else { 0.0 };
                    spec.background + spec.drift * ramp
                }
            };
            values.push((base + noise).clamp(0.0, 1.0) as f32);
            bits.push(peak.is_some());
        }
    }
    Ok((ScoreGrid::new(h, w, values)?, BinaryMask::new(h, w, bits)?))
}

/// Blob corpus: `count` single- or double-disk samples of size `size × size`
/// with noise 0.05 and a background drift up to 0.25.
pub fn blob_corpus(count: usize, size: usize, seed: u64) -> Vec<SyntheticSpec> {
    let mut rng = SplitMix64::new(seed);
    let mut pick = |lo: usize, hi: usize| lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize;
    let mut specs = Vec::with_capacity(count);
    for i in 0..count {
        let max_r = (size / 4).max(3);
        let radius = pick(3, max_r);
        let row = pick(radius, size - 1 - radius);
        let col = pick(radius, size - 1 - radius);
        let peak = 0.75 + 0.2 * (pick(0, 100) as f64 / 100.0);
        let mut defects = vec![DefectShape::Disk {
            row,
            col,
            radius,
            peak,
        }];
        if pick(0, 3) == 0 {
            let r2 = pick(2, 4);
            let row2 = pick(r2, size - 1 - r2);
            let col2 = pick(r2, size - 1 - r2);
            defects.push(DefectShape::Disk {
                row: row2,
                col: col2,
                radius: r2,
                peak,
            });
        }
        let background = 0.05 + 0.1 * (pick(0, 100) as f64 / 100.0);
        let drift = 0.25 * (pick(0, 100) as f64 / 100.0);
        specs.push(SyntheticSpec {
            height: size,
            width: size,
            defects,
            background,
            noise: 0.05,
            drift,
            seed: crate::rng::sample_seed(seed, i as u64),
        });
    }
    specs
}
