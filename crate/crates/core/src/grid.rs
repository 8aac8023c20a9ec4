//! Fixed-geometry image and latent grids plus boolean masks.
//!
//! The canvas is 64×64 RGB and the latent grid is 16×16×3 (4× average
//! pooling). Pixel data is stored row-major, channel-last, as `f64` so that
//! guidance gradients check out against finite differences.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const CANVAS: usize = 64;
pub const LATENT: usize = 16;
pub const POOL: usize = CANVAS / LATENT;
pub const CANVAS_PIXELS: usize = CANVAS * CANVAS;
/// Number of latent pixels (`P` in attention maps).
pub const LATENT_PIXELS: usize = LATENT * LATENT;

pub type Rgb = [f64; 3];
pub const WHITE: Rgb = [1.0, 1.0, 1.0];
pub const NEUTRAL: Rgb = [0.5, 0.5, 0.5];

/// 64×64 RGB raster. Values are nominally in [0,1] but may leave that range
/// for decoded latents; clamping happens only at emission.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f64>,
}

impl Image {
    pub fn filled(color: Rgb) -> Self {
        let mut data = vec![0.0; CANVAS_PIXELS * 3];
        for p in 0..CANVAS_PIXELS {
            data[p * 3] = color[0];
            data[p * 3 + 1] = color[1];
            data[p * 3 + 2] = color[2];
        }
        Self { data }
    }

    pub fn white() -> Self {
        Self::filled(WHITE)
    }

    pub fn from_raw(data: Vec<f64>) -> Result<Self> {
        if data.len() != CANVAS_PIXELS * 3 {
            return Err(Error::BadShape { context: "image raw buffer" });
        }
        Ok(Self { data })
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Rgb {
        let i = (y * CANVAS + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, color: Rgb) {
        let i = (y * CANVAS + x) * 3;
        self.data[i] = color[0];
        self.data[i + 1] = color[1];
        self.data[i + 2] = color[2];
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with every channel clamped to [0,1]; used at image emission.
    pub fn clamped(&self) -> Image {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image { data }
    }
}

/// 16×16×3 latent values without a timestep attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; LATENT_PIXELS * 3] }
    }

    pub fn from_raw(data: Vec<f64>) -> Result<Self> {
        if data.len() != LATENT_PIXELS * 3 {
            return Err(Error::BadShape { context: "latent raw buffer" });
        }
        Ok(Self { data })
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Rgb {
        let i = (y * LATENT + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, color: Rgb) {
        let i = (y * LATENT + x) * 3;
        self.data[i] = color[0];
        self.data[i + 1] = color[1];
        self.data[i + 2] = color[2];
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self + scale · other, entrywise.
    pub fn axpy(&self, scale: f64, other: &LatentGrid) -> LatentGrid {
        let data =
            self.data.iter().zip(&other.data).map(|(a, b)| a + scale * b).collect();
        LatentGrid { data }
    }

    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.data.iter().map(|v| v * v).sum())
    }
}

/// 4×4 average pooling, 64×64 → 16×16 per channel.
///
/// The block sum reduces pairwise: sums of equal values then stay exact
/// powers-of-two multiples, so `pool(unpool(z)) == z` bit-for-bit.
pub fn pool(image: &Image) -> LatentGrid {
    let mut out = LatentGrid::zeros();
    let inv = 1.0 / (POOL * POOL) as f64;
    for ly in 0..LATENT {
        for lx in 0..LATENT {
            let mut acc = [0.0; 3];
            for (ch, slot) in acc.iter_mut().enumerate() {
                let mut rows = [0.0; POOL];
                for (dy, row) in rows.iter_mut().enumerate() {
                    let y = ly * POOL + dy;
                    let a = image.get(y, lx * POOL)[ch] + image.get(y, lx * POOL + 1)[ch];
                    let b = image.get(y, lx * POOL + 2)[ch] + image.get(y, lx * POOL + 3)[ch];
                    *row = a + b;
                }
                *slot = ((rows[0] + rows[1]) + (rows[2] + rows[3])) * inv;
            }
            out.set(ly, lx, acc);
        }
    }
    out
}

/// 4× upsampling by block replication, 16×16 → 64×64.
///
/// Replication is the exact right inverse of [`pool`] (`pool ∘ unpool = id`),
/// and its adjoint is 4×4 sum pooling, which is what the guidance chain rule
/// uses. No clamping here.
pub fn unpool(latent: &LatentGrid) -> Image {
    let mut out = Image::white();
    for ly in 0..LATENT {
        for lx in 0..LATENT {
            let v = latent.get(ly, lx);
            for dy in 0..POOL {
                for dx in 0..POOL {
                    out.set(ly * POOL + dy, lx * POOL + dx, v);
                }
            }
        }
    }
    out
}

/// Adjoint of [`unpool`]: folds a canvas-resolution gradient back onto the
/// latent grid by summing each 4×4 block.
pub fn fold_gradient(image_grad: &Image) -> LatentGrid {
    let mut out = LatentGrid::zeros();
    for ly in 0..LATENT {
        for lx in 0..LATENT {
            let mut acc = [0.0; 3];
            for dy in 0..POOL {
                for dx in 0..POOL {
                    let g = image_grad.get(ly * POOL + dy, lx * POOL + dx);
                    acc[0] += g[0];
                    acc[1] += g[1];
                    acc[2] += g[2];
                }
            }
            out.set(ly, lx, acc);
        }
    }
    out
}

/// Boolean mask at canvas resolution (64×64).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanvasMask {
    bits: Vec<bool>,
}

impl CanvasMask {
    pub fn empty() -> Self {
        Self { bits: vec![false; CANVAS_PIXELS] }
    }

    pub fn full() -> Self {
        Self { bits: vec![true; CANVAS_PIXELS] }
    }

    /// Mark the half-open rectangle rows `y0..y1`, cols `x0..x1`.
    pub fn set_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize) {
        for y in y0..y1.min(CANVAS) {
            for x in x0..x1.min(CANVAS) {
                self.bits[y * CANVAS + x] = true;
            }
        }
    }

    pub fn clear_rect(&mut self, y0: usize, y1: usize, x0: usize, x1: usize) {
        for y in y0..y1.min(CANVAS) {
            for x in x0..x1.min(CANVAS) {
                self.bits[y * CANVAS + x] = false;
            }
        }
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.bits[y * CANVAS + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersects(&self, other: &CanvasMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Iterate set pixels as (y, x).
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / CANVAS, i % CANVAS))
    }

    /// Centroid of set pixels in normalized [0,1]² coordinates, (x, y).
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for (y, x) in self.pixels() {
            sx += (x as f64 + 0.5) / CANVAS as f64;
            sy += (y as f64 + 0.5) / CANVAS as f64;
            n += 1;
        }
        if n == 0 {
            None
        } else {
            Some((sx / n as f64, sy / n as f64))
        }
    }

    /// Row extent (min_y, max_y inclusive) of set pixels.
    pub fn row_extent(&self) -> Option<(usize, usize)> {
        let mut lo = None;
        let mut hi = None;
        for (y, _) in self.pixels() {
            if lo.is_none() {
                lo = Some(y);
            }
            hi = Some(y);
        }
        lo.zip(hi)
    }

    /// Keep only rows strictly below `y_cut`.
    pub fn restricted_above(&self, y_cut: usize) -> CanvasMask {
        let mut out = self.clone();
        out.clear_rect(y_cut, CANVAS, 0, CANVAS);
        out
    }

    /// Run-length encoding: alternating counts of cleared and set pixels in
    /// row-major order, starting with cleared.
    pub fn to_runs(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(runs: &[usize]) -> Result<Self> {
        let total: usize = runs.iter().sum();
        if total != CANVAS_PIXELS {
            return Err(Error::BadShape { context: "mask run-length data" });
        }
        let mut bits = Vec::with_capacity(CANVAS_PIXELS);
        let mut value = false;
        for &len in runs {
            bits.extend(core::iter::repeat(value).take(len));
            value = !value;
        }
        Ok(Self { bits })
    }

    /// Downsample onto the latent grid: a block belongs to the mask when at
    /// least half of its 16 canvas pixels are set. Block-aligned templates
    /// map exactly.
    pub fn to_latent_blocks(&self) -> BinaryMask {
        let mut out = BinaryMask::empty();
        for ly in 0..LATENT {
            for lx in 0..LATENT {
                let mut n = 0;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        if self.contains(ly * POOL + dy, lx * POOL + dx) {
                            n += 1;
                        }
                    }
                }
                if n * 2 >= POOL * POOL {
                    out.set(ly * LATENT + lx, true);
                }
            }
        }
        out
    }
}

/// Boolean mask over the 256 latent pixels (`B` masks of the editing stage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty() -> Self {
        Self { bits: vec![false; LATENT_PIXELS] }
    }

    pub fn full() -> Self {
        Self { bits: vec![true; LATENT_PIXELS] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != LATENT_PIXELS {
            return Err(Error::BadShape { context: "binary mask bits" });
        }
        Ok(Self { bits })
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.bits.len() != other.bits.len() {
            return Err(Error::LengthMismatch { left: self.bits.len(), right: other.bits.len() });
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        Ok(BinaryMask { bits })
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask { bits: self.bits.iter().map(|&b| !b).collect() }
    }

    /// Nearest-neighbour upsample to canvas resolution (each latent pixel
    /// expands to its 4×4 block).
    pub fn upsample_to_canvas(&self) -> CanvasMask {
        let mut out = CanvasMask::empty();
        for ly in 0..LATENT {
            for lx in 0..LATENT {
                if self.bits[ly * LATENT + lx] {
                    out.set_rect(ly * POOL, (ly + 1) * POOL, lx * POOL, (lx + 1) * POOL);
                }
            }
        }
        out
    }
}
