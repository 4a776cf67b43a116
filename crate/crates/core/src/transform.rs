//! Orthonormal 8x8 DCT-II, JPEG quantization tables and blockwise tiling.
//!
//! Blocks are stored row-major: index `row * 8 + col`, where `row` is the
//! vertical (frequency) index.

use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::imageio::Image;

pub const BLOCK: usize = 8;
pub const BLOCK_LEN: usize = BLOCK * BLOCK;

pub type Block = [f64; BLOCK_LEN];
pub type CoeffBlock = [f64; BLOCK_LEN];
pub type LevelBlock = [i16; BLOCK_LEN];

/// `DCT_MATRIX[k][n] = alpha(k) cos((n + 1/2) k pi / 8)`.
static DCT_MATRIX: LazyLock<[[f64; BLOCK]; BLOCK]> = LazyLock::new(|| {
    let mut c = [[0.0; BLOCK]; BLOCK];
    for (k, row) in c.iter_mut().enumerate() {
        let alpha = if k == 0 {
            (1.0 / BLOCK as f64).sqrt()
        } else {
            (2.0 / BLOCK as f64).sqrt()
        };
        for (n, v) in row.iter_mut().enumerate() {
            *v = alpha
                * ((n as f64 + 0.5) * k as f64 * std::f64::consts::PI / BLOCK as f64).cos();
        }
    }
    c
});

/// JPEG zigzag scan: `ZIGZAG[i]` is the raster index of the i-th coefficient.
pub const ZIGZAG: [usize; BLOCK_LEN] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

// Y = C X C^T, computed as two passes of 8-point transforms.
fn separable(input: &[f64; BLOCK_LEN], inverse: bool) -> [f64; BLOCK_LEN] {
    let c = &*DCT_MATRIX;
    let mut tmp = [0.0; BLOCK_LEN];
    // rows
    for r in 0..BLOCK {
        let src = &input[r * BLOCK..(r + 1) * BLOCK];
        for k in 0..BLOCK {
            let mut acc = 0.0;
            for n in 0..BLOCK {
                acc += if inverse { c[n][k] } else { c[k][n] } * src[n];
            }
            tmp[r * BLOCK + k] = acc;
        }
    }
    // columns
    let mut out = [0.0; BLOCK_LEN];
    for col in 0..BLOCK {
        for k in 0..BLOCK {
            let mut acc = 0.0;
            for n in 0..BLOCK {
                acc += if inverse { c[n][k] } else { c[k][n] } * tmp[n * BLOCK + col];
            }
            out[k * BLOCK + col] = acc;
        }
    }
    out
}

/// Forward orthonormal 2-D DCT-II of one block.
pub fn dct2(block: &Block) -> CoeffBlock {
    separable(block, false)
}

/// Inverse of [`dct2`] (its transpose).
pub fn idct2(coeffs: &CoeffBlock) -> Block {
    separable(coeffs, true)
}

/// Quantization steps on the JPEG (0..255 pixel) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable([u16; BLOCK_LEN]);

/// Standard JPEG luminance table (quality 50).
const JPEG_LUMA: [u16; BLOCK_LEN] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

impl QuantTable {
    pub fn new(entries: [u16; BLOCK_LEN]) -> Result<Self> {
        if entries.iter().any(|&e| !(1..=255).contains(&e)) {
            return Err(Error::Config("quantization entries must lie in 1..=255".into()));
        }
        Ok(QuantTable(entries))
    }

    pub fn jpeg_luma() -> Self {
        QuantTable(JPEG_LUMA)
    }

    /// The JPEG luminance table scaled to quality `qf`.
    pub fn for_quality(qf: u8) -> Result<Self> {
        scale_quant_table(&Self::jpeg_luma(), qf)
    }

    pub fn entries(&self) -> &[u16; BLOCK_LEN] {
        &self.0
    }

    /// Step size in the internal sample domain.
    #[inline]
    pub fn step(&self, index: usize) -> f64 {
        f64::from(self.0[index]) / 128.0
    }
}

/// IJG libjpeg quality scaling.
pub fn scale_quant_table(base: &QuantTable, qf: u8) -> Result<QuantTable> {
    if !(1..=100).contains(&qf) {
        return Err(Error::Config(format!("quality factor {qf} outside 1..=100")));
    }
    let qf = u32::from(qf);
    let s = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
    let mut out = [0u16; BLOCK_LEN];
    for (o, &e) in out.iter_mut().zip(base.0.iter()) {
        *o = ((u32::from(e) * s + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(QuantTable(out))
}

/// Uniform quantization with round-half-away-from-zero.
pub fn quantize(coeffs: &CoeffBlock, table: &QuantTable) -> Result<LevelBlock> {
    let mut levels = [0i16; BLOCK_LEN];
    for (i, (l, &c)) in levels.iter_mut().zip(coeffs.iter()).enumerate() {
        // f64::round rounds half away from zero
        let q = (c / table.step(i)).round();
        if !(q.abs() <= f64::from(i16::MAX)) {
            return Err(Error::Overflow(format!(
                "level {q} at coefficient {i} does not fit in 16 bits"
            )));
        }
        *l = q as i16;
    }
    Ok(levels)
}

pub fn dequantize(levels: &LevelBlock, table: &QuantTable) -> CoeffBlock {
    let mut coeffs = [0.0; BLOCK_LEN];
    for (i, (c, &l)) in coeffs.iter_mut().zip(levels.iter()).enumerate() {
        *c = f64::from(l) * table.step(i);
    }
    coeffs
}

/// Quantized levels for every block of an image, block-row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffGrid {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub levels: Vec<LevelBlock>,
}

impl CoeffGrid {
    pub fn zeros(blocks_x: usize, blocks_y: usize) -> Self {
        CoeffGrid {
            blocks_x,
            blocks_y,
            levels: vec![[0; BLOCK_LEN]; blocks_x * blocks_y],
        }
    }

    pub fn width(&self) -> usize {
        self.blocks_x * BLOCK
    }

    pub fn height(&self) -> usize {
        self.blocks_y * BLOCK
    }

    /// Number of nonzero AC levels, i.e. the number of coded signs.
    pub fn nonzero_ac(&self) -> usize {
        self.levels
            .iter()
            .map(|b| b[1..].iter().filter(|&&l| l != 0).count())
            .sum()
    }
}

fn check_aligned(width: usize, height: usize) -> Result<()> {
    if width % BLOCK != 0 || height % BLOCK != 0 {
        return Err(Error::Shape(format!(
            "{width}x{height} is not a multiple of {BLOCK}"
        )));
    }
    Ok(())
}

/// Non-overlapping 8x8 tiling, block-row-major.
pub fn split_blocks(image: &Image) -> Result<Vec<Block>> {
    let (w, h) = (image.width(), image.height());
    check_aligned(w, h)?;
    let s = image.samples();
    let mut blocks = Vec::with_capacity(w * h / BLOCK_LEN);
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let mut b = [0.0; BLOCK_LEN];
            for r in 0..BLOCK {
                let src = (by * BLOCK + r) * w + bx * BLOCK;
                b[r * BLOCK..(r + 1) * BLOCK].copy_from_slice(&s[src..src + BLOCK]);
            }
            blocks.push(b);
        }
    }
    Ok(blocks)
}

/// Inverse of [`split_blocks`].
pub fn merge_blocks(blocks: &[Block], width: usize, height: usize) -> Result<Image> {
    check_aligned(width, height)?;
    if blocks.len() * BLOCK_LEN != width * height {
        return Err(Error::Shape(format!(
            "{} blocks cannot tile {width}x{height}",
            blocks.len()
        )));
    }
    let mut samples = vec![0.0; width * height];
    let bw = width / BLOCK;
    for (i, b) in blocks.iter().enumerate() {
        let (by, bx) = (i / bw, i % bw);
        for r in 0..BLOCK {
            let dst = (by * BLOCK + r) * width + bx * BLOCK;
            samples[dst..dst + BLOCK].copy_from_slice(&b[r * BLOCK..(r + 1) * BLOCK]);
        }
    }
    Image::new(width, height, samples)
}

/// Block DCT and quantization of a block-aligned image.
pub fn forward_quantize(image: &Image, table: &QuantTable) -> Result<CoeffGrid> {
    let levels = split_blocks(image)?
        .iter()
        .map(|b| quantize(&dct2(b), table))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoeffGrid {
        blocks_x: image.width() / BLOCK,
        blocks_y: image.height() / BLOCK,
        levels,
    })
}

/// Dequantization and inverse DCT of every block (the baseline decoder).
pub fn reconstruct(grid: &CoeffGrid, table: &QuantTable) -> Image {
    let blocks: Vec<Block> = grid
        .levels
        .iter()
        .map(|l| idct2(&dequantize(l, table)))
        .collect();
    merge_blocks(&blocks, grid.width(), grid.height()).expect("grid dimensions are aligned")
}
