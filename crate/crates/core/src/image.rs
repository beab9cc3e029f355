//! Grayscale images and their decomposition into non-overlapping blocks.
//!
//! An image is a row-major array of luminance values in `[0, 1]`. Partitioning
//! tiles it into `block_side × block_side` squares, reshapes each tile
//! row-major into a vector of length `q = block_side²`, and removes the tile
//! mean. Reassembly is the exact inverse (up to the final clamp). Both the
//! in-block reshape order and the block traversal order are row-major; models
//! are only interchangeable between implementations that share this
//! convention.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rec. 601 luma weights used when collapsing color inputs.
const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A grayscale image with luminance values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    /// Builds an image from row-major data, validating length and value range.
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "data length {} does not equal {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| **v < T::zero() || **v > T::one() || !v.is_finite())
        {
            return Err(Error::InvariantViolation(format!(
                "luminance value {} outside [0, 1]",
                v.as_f64()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` per pixel, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Uniform image of the given value.
    pub fn constant(width: usize, height: usize, value: T) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel data.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Applies `f` per pixel and clamps the result back into `[0, 1]`.
    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| clamp_unit(f(*v))).collect(),
        }
    }
}

pub(crate) fn clamp_unit<T: Real>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else if v > T::one() {
        T::one()
    } else {
        v
    }
}

/// An image decomposed into centered block vectors plus the removed means.
///
/// Blocks are ordered row-major over the block grid; each block is the
/// row-major reshape of its tile with the tile mean subtracted.
#[derive(Debug, Clone)]
pub struct BlockSet<T> {
    blocks: Vec<DVector<T>>,
    means: Vec<T>,
    block_side: usize,
    grid: (usize, usize),
    source_dims: (usize, usize),
}

impl<T: Real> BlockSet<T> {
    /// Number of blocks `b`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block vector length `q = block_side²`.
    pub fn block_len(&self) -> usize {
        self.block_side * self.block_side
    }

    pub fn block_side(&self) -> usize {
        self.block_side
    }

    /// Block grid as `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Source image dimensions as `(width, height)`.
    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    /// Centered block vectors.
    pub fn blocks(&self) -> &[DVector<T>] {
        &self.blocks
    }

    /// Per-block means removed during partitioning.
    pub fn means(&self) -> &[T] {
        &self.means
    }

    /// The uncentered block: centered vector plus its stored mean.
    pub fn raw_block(&self, i: usize) -> DVector<T> {
        let m = self.means[i];
        self.blocks[i].map(|v| v + m)
    }

    /// A copy of this set with the block vectors replaced (e.g. by their
    /// reconstructions), keeping means and geometry.
    pub fn with_blocks(&self, blocks: Vec<DVector<T>>) -> Result<Self> {
        if blocks.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "expected {} blocks, got {}",
                self.blocks.len(),
                blocks.len()
            )));
        }
        let q = self.block_len();
        if let Some(bad) = blocks.iter().find(|b| b.len() != q) {
            return Err(Error::Shape(format!(
                "block length {} does not match q = {}",
                bad.len(),
                q
            )));
        }
        Ok(Self {
            blocks,
            means: self.means.clone(),
            block_side: self.block_side,
            grid: self.grid,
            source_dims: self.source_dims,
        })
    }
}

/// Partitions an image into centered, non-overlapping `block_side²`-vectors.
///
/// The image dimensions must be divisible by `block_side`; images that do not
/// tile evenly are rejected rather than padded.
pub fn partition<T: Real>(img: &GrayImage<T>, block_side: usize) -> Result<BlockSet<T>> {
    if block_side < 2 {
        return Err(Error::Dimension(format!(
            "block_side must be at least 2, got {block_side}"
        )));
    }
    if img.width() % block_side != 0 || img.height() % block_side != 0 {
        return Err(Error::Dimension(format!(
            "image {}x{} not divisible by block_side {}",
            img.width(),
            img.height(),
            block_side
        )));
    }
    let rows = img.height() / block_side;
    let cols = img.width() / block_side;
    let q = block_side * block_side;
    let qt = T::of(q as f64);

    let mut blocks = Vec::with_capacity(rows * cols);
    let mut means = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let mut block = Vec::with_capacity(q);
            for dy in 0..block_side {
                for dx in 0..block_side {
                    block.push(img.get(bc * block_side + dx, br * block_side + dy));
                }
            }
            let mean = block.iter().fold(T::zero(), |a, v| a + *v) / qt;
            let centered = DVector::from_iterator(q, block.into_iter().map(|v| v - mean));
            blocks.push(centered);
            means.push(mean);
        }
    }
    Ok(BlockSet {
        blocks,
        means,
        block_side,
        grid: (rows, cols),
        source_dims: (img.width(), img.height()),
    })
}

/// Tiles a block set back into an image, re-adding the stored per-block means
/// and clamping into `[0, 1]`.
pub fn reassemble<T: Real>(bs: &BlockSet<T>) -> GrayImage<T> {
    let (width, height) = bs.source_dims;
    let s = bs.block_side;
    let (_, cols) = bs.grid;
    let mut data = vec![T::zero(); width * height];
    for (i, block) in bs.blocks.iter().enumerate() {
        let br = i / cols;
        let bc = i % cols;
        let mean = bs.means[i];
        for dy in 0..s {
            for dx in 0..s {
                let v = block[dy * s + dx] + mean;
                data[(br * s + dy) * width + bc * s + dx] = clamp_unit(v);
            }
        }
    }
    GrayImage {
        width,
        height,
        data,
    }
}

/// Reads a grayscale image from a file, dispatching on extension.
///
/// Binary PGM (`P5`, 8- or 16-bit) is the native format; PNG is supported for
/// reading. Color PNG inputs are collapsed to luminance with Rec. 601 weights.
pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<GrayImage<T>> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") | Some("pnm") => load_pgm(path),
        Some("png") => load_png(path),
        other => Err(Error::Format(format!(
            "unsupported image extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

/// Writes an image as 8-bit binary PGM. Values are mapped to `0..=255` with
/// round-to-nearest.
pub fn save_image<T: Real>(img: &GrayImage<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") | Some("pnm") => save_pgm(img, path),
        other => Err(Error::Format(format!(
            "unsupported output extension {:?} (write PGM)",
            other
        ))),
    }
}

/// Reads a binary PGM (`P5`) file. 8-bit and 16-bit samples are mapped
/// linearly onto `[0, 1]` by dividing by the stated maxval.
pub fn load_pgm<T: Real>(path: impl AsRef<Path>) -> Result<GrayImage<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

pub(crate) fn parse_pgm<T: Real>(bytes: &[u8]) -> Result<GrayImage<T>> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let width = parse_usize(&next_token(bytes, &mut pos)?)?;
    let height = parse_usize(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_usize(&next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let maxt = T::of(maxval as f64);
    let data: Vec<T> = if maxval < 256 {
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
        raster.iter().map(|b| T::of(*b as f64) / maxt).collect()
    } else {
        let raster = bytes
            .get(pos..pos + 2 * n)
            .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
        raster
            .chunks_exact(2)
            .map(|c| T::of(u16::from_be_bytes([c[0], c[1]]) as f64) / maxt)
            .collect()
    };
    GrayImage::new(width, height, data)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    // Skip whitespace and '#' comments that run to end of line.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::Format("truncated PGM header".into())),
        }
    }
    let start = *pos;
    while let Some(b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() {
            break;
        }
        *pos += 1;
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_usize(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("invalid integer in PGM header".into()))
}

/// Writes an 8-bit binary PGM with a canonical header, so that
/// `save(load(p))` is byte-identical for files this library wrote.
pub fn save_pgm<T: Real>(img: &GrayImage<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize_u8(*v)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn quantize_u8<T: Real>(v: T) -> u8 {
    let scaled = (clamp_unit(v) * T::of(255.0)).round();
    scaled.as_f64() as u8
}

fn load_png<T: Real>(path: &Path) -> Result<GrayImage<T>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match img {
        image::DynamicImage::ImageLuma8(m) => m
            .into_raw()
            .into_iter()
            .map(|v| T::of(v as f64 / 255.0))
            .collect(),
        image::DynamicImage::ImageLuma16(m) => m
            .into_raw()
            .into_iter()
            .map(|v| T::of(v as f64 / 65535.0))
            .collect(),
        other => {
            let rgb = other.into_rgb16();
            rgb.pixels()
                .map(|p| {
                    let y = LUMA_WEIGHTS[0] * p.0[0] as f64
                        + LUMA_WEIGHTS[1] * p.0[1] as f64
                        + LUMA_WEIGHTS[2] * p.0[2] as f64;
                    T::of((y / 65535.0).clamp(0.0, 1.0))
                })
                .collect()
        }
    };
    GrayImage::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(width: usize, height: usize) -> GrayImage<f64> {
        GrayImage::from_fn(width, height, |x, y| {
            (x + y * width) as f64 / (width * height) as f64
        })
    }

    #[test]
    fn partition_shapes_512() {
        let img = ramp(512, 512);
        let bs = partition(&img, 8).unwrap();
        assert_eq!(bs.len(), 4096);
        assert_eq!(bs.block_len(), 64);
        assert_eq!(bs.grid(), (64, 64));
    }

    #[test]
    fn partition_rejects_uneven() {
        let img = ramp(10, 16);
        assert!(matches!(partition(&img, 8), Err(Error::Dimension(_))));
    }

    #[test]
    fn partition_rejects_tiny_block() {
        let img = ramp(16, 16);
        assert!(partition(&img, 1).is_err());
    }

    #[test]
    fn constant_image_blocks_are_zero() {
        let img = GrayImage::constant(16, 16, 0.5);
        let bs = partition(&img, 8).unwrap();
        for block in bs.blocks() {
            assert!(block.iter().all(|v: &f64| v.abs() <= 1e-12));
        }
        for m in bs.means() {
            assert!((*m - 0.5f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn blocks_are_centered() {
        let img = ramp(32, 24);
        let bs = partition(&img, 8).unwrap();
        for block in bs.blocks() {
            let mean: f64 = block.iter().sum::<f64>() / block.len() as f64;
            assert!(mean.abs() <= 1e-12);
        }
    }

    #[test]
    fn round_trip_identity() {
        let img = ramp(16, 16);
        let back = reassemble(&partition(&img, 8).unwrap());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn reassemble_zero_blocks_gives_means() {
        let img = GrayImage::constant(16, 16, 0.5);
        let bs = partition(&img, 8).unwrap();
        let back = reassemble(&bs);
        assert!(back.data().iter().all(|v| (*v - 0.5f64).abs() <= 1e-12));
    }

    #[test]
    fn block_order_is_row_major() {
        // 16x16 ramp, block (row 1, col 0) starts at pixel (0, 8).
        let img = ramp(16, 16);
        let bs = partition(&img, 8).unwrap();
        let raw = bs.raw_block(2);
        assert!((raw[0] - img.get(0, 8)).abs() <= 1e-12);
        assert!((raw[1] - img.get(1, 8)).abs() <= 1e-12);
        assert!((raw[8] - img.get(0, 9)).abs() <= 1e-12);
    }

    #[test]
    fn pgm_endpoint_mapping() {
        let bytes = b"P5\n2 1\n255\n\x00\xff".to_vec();
        let img: GrayImage<f64> = parse_pgm(&bytes).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(1, 0), 1.0);
    }

    #[test]
    fn pgm_mid_value_mapping() {
        let bytes = b"P5\n1 1\n255\n\x80".to_vec();
        let img: GrayImage<f64> = parse_pgm(&bytes).unwrap();
        assert!((img.get(0, 0) - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn pgm_round_trip_bytes() {
        let dir = std::env::temp_dir().join("isca_core_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.pgm");
        let img = ramp(24, 16);
        save_pgm(&img, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let reloaded: GrayImage<f64> = load_pgm(&path).unwrap();
        save_pgm(&reloaded, &path).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn pgm_header_comments() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20".to_vec();
        let img: GrayImage<f64> = parse_pgm(&bytes).unwrap();
        assert_eq!(img.width(), 2);
    }

    #[test]
    fn new_rejects_out_of_range() {
        assert!(GrayImage::new(1, 1, vec![1.5f64]).is_err());
        assert!(GrayImage::new(1, 1, vec![-0.1f64]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5f64]).is_err());
    }

    #[test]
    fn f32_round_trip() {
        let img: GrayImage<f32> = GrayImage::from_fn(16, 16, |x, y| (x * y) as f32 / 256.0);
        let back = reassemble(&partition(&img, 8).unwrap());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
}
