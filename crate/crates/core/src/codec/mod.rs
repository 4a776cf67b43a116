//! DSR1 encoder and decoder.
//!
//! Pipeline: pad, tile, DCT, quantize; then write DC levels (DPCM, signed
//! Exp-Golomb), AC magnitudes (zigzag run/level pairs, unsigned
//! Exp-Golomb, one end-of-block code per block) and finally the signs of
//! the nonzero AC levels. In retrieval mode the signs are replaced by the
//! XOR residual against the signs restored from the magnitudes, range
//! coded with one adaptive context. Baseline mode stores raw sign bits.
//!
//! Signs are always listed in canonical order: blocks row-major, zigzag
//! within a block, DC and zero levels skipped. Bit 1 means negative.

mod bits;
mod container;
mod rangecoder;

pub use bits::{BitReader, BitWriter};
pub use container::{Container, Header, SignMode};
pub use rangecoder::{rc_decode_bits, rc_encode_bits, BitModel, RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};
use crate::imageio::{pad_to_blocks, Image, PaddedImage};
use crate::neuralnet::{psi_forward, ModelParams};
use crate::pocs::MagnitudeField;
use crate::transform::{
    dct2, dequantize, idct2, merge_blocks, reconstruct, split_blocks, CoeffGrid, LevelBlock,
    QuantTable, BLOCK, BLOCK_LEN, ZIGZAG,
};

macro_rules! bit_field {
    ($name:ident) => {
        #[derive(Debug, Clone, Default, PartialEq, Eq)]
        pub struct $name(Vec<bool>);

        impl $name {
            pub fn from_bits(bits: Vec<bool>) -> Self {
                $name(bits)
            }

            pub fn bits(&self) -> &[bool] {
                &self.0
            }

            pub fn into_bits(self) -> Vec<bool> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn count_ones(&self) -> usize {
                self.0.iter().filter(|&&b| b).count()
            }
        }
    };
}

bit_field!(SignField);
bit_field!(ResidualField);

fn xor(a: &[bool], b: &[bool]) -> Result<Vec<bool>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} bits against {} bits",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x ^ y).collect())
}

pub fn sign_residual(truth: &SignField, restored: &SignField) -> Result<ResidualField> {
    xor(&truth.0, &restored.0).map(ResidualField)
}

pub fn apply_residual(restored: &SignField, residual: &ResidualField) -> Result<SignField> {
    xor(&restored.0, &residual.0).map(SignField)
}

/// Raster indices of the nonzero AC levels of a block, in zigzag order.
fn coded_positions(levels: &LevelBlock) -> impl Iterator<Item = usize> + '_ {
    ZIGZAG[1..].iter().copied().filter(move |&i| levels[i] != 0)
}

/// True signs of the nonzero AC levels and the dequantized magnitudes of
/// every coefficient.
pub fn extract_signs(grid: &CoeffGrid, table: &QuantTable) -> (SignField, MagnitudeField) {
    let signs = grid
        .levels
        .iter()
        .flat_map(|l| coded_positions(l).map(move |i| l[i] < 0))
        .collect();
    (SignField(signs), MagnitudeField::from_levels(grid, table))
}

/// Blockwise-constant image from the dequantized DC levels alone.
pub fn initial_image(grid: &CoeffGrid, table: &QuantTable) -> PaddedImage {
    let blocks: Vec<_> = grid
        .levels
        .iter()
        .map(|l| {
            let mut dc_only = [0i16; BLOCK_LEN];
            dc_only[0] = l[0];
            idct2(&dequantize(&dc_only, table))
        })
        .collect();
    let image = merge_blocks(&blocks, grid.width(), grid.height()).expect("aligned grid");
    PaddedImage::aligned(image).expect("aligned grid")
}

/// The network output for a grid: `psi(x0, lambda)`.
pub fn restore_image(grid: &CoeffGrid, table: &QuantTable, params: &ModelParams) -> Result<Image> {
    let x0 = initial_image(grid, table);
    let lambda = MagnitudeField::from_levels(grid, table);
    psi_forward(&x0.image, params, &lambda, None)
}

/// Signs of `dct2(image)` at the coded positions of `grid`; zero and
/// positive values read as 0.
pub fn signs_at_coded_positions(image: &Image, grid: &CoeffGrid) -> Result<SignField> {
    if image.width() != grid.width() || image.height() != grid.height() {
        return Err(Error::Shape(format!(
            "{}x{} image against a {}x{} grid",
            image.width(),
            image.height(),
            grid.width(),
            grid.height()
        )));
    }
    let blocks = split_blocks(image)?;
    let mut out = Vec::with_capacity(grid.nonzero_ac());
    for (b, l) in blocks.iter().zip(&grid.levels) {
        let coeffs = dct2(b);
        out.extend(coded_positions(l).map(|i| coeffs[i] < 0.0));
    }
    Ok(SignField(out))
}

/// Signs restored from the magnitudes of `grid`. Depends only on the
/// magnitudes, so encoder and decoder obtain the same field.
pub fn retrieve_signs(grid: &CoeffGrid, table: &QuantTable, params: &ModelParams) -> Result<SignField> {
    if grid.nonzero_ac() == 0 {
        return Ok(SignField::default());
    }
    signs_at_coded_positions(&restore_image(grid, table, params)?, grid)
}

#[cfg(test)]
fn magnitudes_only(grid: &CoeffGrid) -> CoeffGrid {
    let mut g = grid.clone();
    for l in &mut g.levels {
        for (i, v) in l.iter_mut().enumerate() {
            if i != 0 {
                *v = v.abs();
            }
        }
    }
    g
}

fn apply_signs(grid: &mut CoeffGrid, signs: &SignField) -> Result<()> {
    let n = grid.nonzero_ac();
    if n != signs.len() {
        return Err(Error::Shape(format!("{} signs for {n} coded levels", signs.len())));
    }
    let mut it = signs.0.iter();
    for l in &mut grid.levels {
        for &i in &ZIGZAG[1..] {
            if l[i] != 0 && *it.next().expect("counted above") {
                l[i] = -l[i];
            }
        }
    }
    Ok(())
}

fn write_dc(grid: &CoeffGrid) -> Vec<u8> {
    let mut w = BitWriter::new();
    let mut prev = 0i32;
    for l in &grid.levels {
        let dc = i32::from(l[0]);
        w.put_se(dc - prev);
        prev = dc;
    }
    w.finish()
}

fn write_magnitudes(grid: &CoeffGrid) -> Vec<u8> {
    let mut w = BitWriter::new();
    for l in &grid.levels {
        let mut run = 0u32;
        for &i in &ZIGZAG[1..] {
            if l[i] == 0 {
                run += 1;
            } else {
                w.put_ue(run + 1);
                w.put_ue(u32::from(l[i].unsigned_abs()) - 1);
                run = 0;
            }
        }
        w.put_ue(0);
    }
    w.finish()
}

fn check_consumed(r: &BitReader, len: usize, what: &str) -> Result<()> {
    let used = r.bits_read().div_ceil(8);
    if used != len {
        return Err(Error::Format(format!(
            "{what} section has {} unused bytes",
            len - used
        )));
    }
    Ok(())
}

fn read_dc(bytes: &[u8], grid: &mut CoeffGrid) -> Result<()> {
    let mut r = BitReader::new(bytes);
    let mut prev = 0i64;
    for l in &mut grid.levels {
        let dc = prev + i64::from(r.get_se()?);
        l[0] = i16::try_from(dc).map_err(|_| Error::Format(format!("DC level {dc}")))?;
        prev = dc;
    }
    check_consumed(&r, bytes.len(), "DC")
}

fn read_magnitudes(bytes: &[u8], grid: &mut CoeffGrid) -> Result<()> {
    let mut r = BitReader::new(bytes);
    for l in &mut grid.levels {
        let mut zz = 1u64;
        loop {
            let code = u64::from(r.get_ue()?);
            if code == 0 {
                break;
            }
            zz += code - 1;
            if zz >= BLOCK_LEN as u64 {
                return Err(Error::Format("AC run leaves the block".into()));
            }
            let mag = u64::from(r.get_ue()?) + 1;
            l[ZIGZAG[zz as usize]] = i16::try_from(mag)
                .map_err(|_| Error::Format(format!("AC magnitude {mag}")))?;
            zz += 1;
        }
    }
    check_consumed(&r, bytes.len(), "magnitude")
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut w = BitWriter::new();
    for &b in bits {
        w.put_bit(b);
    }
    w.finish()
}

fn unpack_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>> {
    if bytes.len() != count.div_ceil(8) {
        return Err(Error::Format(format!(
            "{} raw sign bytes for {count} signs",
            bytes.len()
        )));
    }
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| r.get_bit()).collect()
}

/// Byte sizes of the three payload sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SectionSizes {
    pub dc: usize,
    pub magnitudes: usize,
    pub signs: usize,
}

/// Everything the encoder computed on the way to the bitstream.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub table: QuantTable,
    pub grid: CoeffGrid,
    pub original_width: usize,
    pub original_height: usize,
    pub signs: SignField,
    /// Restored signs and residual; `None` in baseline mode.
    pub restored: Option<SignField>,
    pub residual: Option<ResidualField>,
    /// Network output cropped to the original size; `None` in baseline mode.
    pub restored_image: Option<Image>,
    pub sizes: SectionSizes,
}

impl Encoded {
    /// The image any JPEG-style decoder reconstructs from the levels.
    pub fn baseline_reconstruction(&self) -> Image {
        crop_to(
            &reconstruct(&self.grid, &self.table),
            self.original_width,
            self.original_height,
        )
    }
}

fn crop_to(image: &Image, w: usize, h: usize) -> Image {
    image.crop(0, 0, w, h).expect("original extent lies inside the padded image")
}

fn dims_u32(image: &Image) -> Result<(u32, u32)> {
    let conv = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Overflow(format!("image dimension {v}")))
    };
    if image.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    Ok((conv(image.width())?, conv(image.height())?))
}

/// Encodes with the given model, or in baseline mode when `params` is `None`.
pub fn encode_detailed(image: &Image, qf: u8, params: Option<&ModelParams>) -> Result<Encoded> {
    let table = QuantTable::for_quality(qf)?;
    let (width, height) = dims_u32(image)?;
    let padded = pad_to_blocks(image);
    let grid = crate::transform::forward_quantize(&padded.image, &table)?;
    let (signs, _) = extract_signs(&grid, &table);

    let dc = write_dc(&grid);
    let magnitudes = write_magnitudes(&grid);
    let (mode, sign_bytes, restored, residual, restored_image) = match params {
        None => (SignMode::Baseline, pack_bits(signs.bits()), None, None, None),
        Some(p) => {
            p.validate()?;
            let mode = SignMode::Retrieval {
                variant: p.variant,
                k: p.k,
                pocs: p.pocs,
            };
            let x = restore_image(&grid, &table, p)?;
            let restored = signs_at_coded_positions(&x, &grid)?;
            let residual = sign_residual(&signs, &restored)?;
            let coded = rc_encode_bits(residual.bits());
            let x = crop_to(&x, image.width(), image.height());
            (mode, coded, Some(restored), Some(residual), Some(x))
        }
    };
    let sizes = SectionSizes {
        dc: dc.len(),
        magnitudes: magnitudes.len(),
        signs: sign_bytes.len(),
    };
    let bytes = Container {
        header: Header {
            mode,
            qf,
            width,
            height,
        },
        dc,
        magnitudes,
        signs: sign_bytes,
    }
    .to_bytes()?;
    Ok(Encoded {
        bytes,
        table,
        grid,
        original_width: image.width(),
        original_height: image.height(),
        signs,
        restored,
        residual,
        restored_image,
        sizes,
    })
}

pub fn encode(image: &Image, qf: u8, params: Option<&ModelParams>) -> Result<Vec<u8>> {
    encode_detailed(image, qf, params).map(|e| e.bytes)
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub header: Header,
    /// Signed quantized levels, identical to the encoder's.
    pub grid: CoeffGrid,
    /// Reconstruction cropped to the original size.
    pub image: Image,
}

/// Decodes a stream. Retrieval streams need the model they were encoded
/// with; baseline streams ignore `params`.
pub fn decode_detailed(bytes: &[u8], params: Option<&ModelParams>) -> Result<Decoded> {
    let c = Container::parse(bytes)?;
    let h = c.header;
    let params = match (h.mode, params) {
        (SignMode::Baseline, _) => None,
        (SignMode::Retrieval { .. }, None) => {
            return Err(Error::Config("stream needs a model checkpoint".into()))
        }
        (SignMode::Retrieval { variant, k, pocs }, Some(p)) => {
            if (p.variant, p.k, p.pocs) != (variant, k, pocs) {
                return Err(Error::Config(format!(
                    "stream was coded with {} K={k}{}, checkpoint is {} K={}{}",
                    variant.name(),
                    if pocs { "" } else { " without POCS" },
                    p.variant.name(),
                    p.k,
                    if p.pocs { "" } else { " without POCS" },
                )));
            }
            Some(p)
        }
    };

    let (w, h_px) = (h.width as usize, h.height as usize);
    let bx = w.div_ceil(BLOCK);
    let by = h_px.div_ceil(BLOCK);
    // every block costs at least one bit in each of the first two sections
    let budget = 8 * c.dc.len().min(c.magnitudes.len());
    if bx.checked_mul(by).is_none_or(|n| n > budget) {
        return Err(Error::Format(format!(
            "{w}x{h_px} image does not fit the coded sections"
        )));
    }
    let table = QuantTable::for_quality(h.qf)?;
    let mut grid = CoeffGrid::zeros(bx, by);
    read_dc(&c.dc, &mut grid)?;
    read_magnitudes(&c.magnitudes, &mut grid)?;

    let n = grid.nonzero_ac();
    let signs = match params {
        None => SignField(unpack_bits(&c.signs, n)?),
        Some(p) => {
            let restored = retrieve_signs(&grid, &table, p)?;
            if n == 0 && !c.signs.is_empty() {
                return Err(Error::Format("residual present without coded signs".into()));
            }
            let residual = ResidualField(rc_decode_bits(&c.signs, n)?);
            apply_residual(&restored, &residual)?
        }
    };
    apply_signs(&mut grid, &signs)?;
    let image = crop_to(&reconstruct(&grid, &table), w, h_px);
    Ok(Decoded {
        header: h,
        grid,
        image,
    })
}

pub fn decode(bytes: &[u8], params: Option<&ModelParams>) -> Result<Image> {
    decode_detailed(bytes, params).map(|d| d.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::pixel_to_sample;
    use crate::neuralnet::{init_params, Variant};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let px: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let v = 128.0
                    + 60.0 * (x * 0.11 * (1.0 + a)).sin() * (y * 0.07 * (1.0 + b)).cos()
                    + 30.0 * ((x + y) * 0.3 * c).sin()
                    + rng.gen_range(-8.0..8.0);
                v.clamp(0.0, 255.0) as u8
            })
            .collect();
        Image::from_pixels(w, h, &px).unwrap()
    }

    fn grid_of(blocks: Vec<LevelBlock>, bx: usize, by: usize) -> CoeffGrid {
        CoeffGrid {
            blocks_x: bx,
            blocks_y: by,
            levels: blocks,
        }
    }

    #[test]
    fn extract_examples() {
        let table = QuantTable::for_quality(50).unwrap();
        let (s, m) = extract_signs(&CoeffGrid::zeros(2, 3), &table);
        assert!(s.is_empty());
        assert_eq!(m.values.len(), 6);

        let mut l = [0i16; 64];
        l[ZIGZAG[1]] = -3;
        let (s, m) = extract_signs(&grid_of(vec![l], 1, 1), &table);
        assert_eq!(s.bits(), &[true]);
        assert_eq!(m.values[0][1], 3.0 * table.step(1));

        // DC sign is never part of the field
        let mut l = [0i16; 64];
        l[0] = -7;
        l[ZIGZAG[5]] = 2;
        l[ZIGZAG[2]] = -1;
        let (s, _) = extract_signs(&grid_of(vec![l], 1, 1), &table);
        assert_eq!(s.bits(), &[true, false]);
    }

    #[test]
    fn initial_image_examples() {
        let table = QuantTable::new([16; 64]).unwrap();
        let x0 = initial_image(&CoeffGrid::zeros(2, 1), &table);
        assert!(x0.image.samples().iter().all(|&v| v == 0.0));

        let mut l = [0i16; 64];
        l[0] = 8;
        l[3] = 5;
        let x0 = initial_image(&grid_of(vec![l, [0; 64]], 2, 1), &table);
        // DC value 8 * 16/128 = 1.0; constant block value DC / 8
        for y in 0..8 {
            for x in 0..8 {
                assert!((x0.image.get(x, y) - 0.125).abs() < 1e-14);
                assert!(x0.image.get(x + 8, y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn residual_algebra() {
        let t = SignField::from_bits(vec![true, false, true]);
        let o = SignField::from_bits(vec![false, true, false]);
        assert_eq!(sign_residual(&t, &t).unwrap().count_ones(), 0);
        assert_eq!(sign_residual(&t, &o).unwrap().count_ones(), 3);
        let zero = ResidualField::from_bits(vec![false; 3]);
        assert_eq!(apply_residual(&t, &zero).unwrap(), t);
        let ones = ResidualField::from_bits(vec![true; 3]);
        assert_eq!(apply_residual(&t, &ones).unwrap(), o);
        assert!(matches!(
            sign_residual(&t, &SignField::default()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            apply_residual(&t, &ResidualField::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn restored_zero_reads_positive() {
        let mut l = [0i16; 64];
        l[ZIGZAG[1]] = -1;
        let grid = grid_of(vec![l], 1, 1);
        let s = signs_at_coded_positions(&Image::zeros(8, 8), &grid).unwrap();
        assert_eq!(s.bits(), &[false]);
        let neg_zero = Image::filled(8, 8, -0.0);
        assert_eq!(signs_at_coded_positions(&neg_zero, &grid).unwrap().bits(), &[false]);
    }

    #[test]
    fn retrieval_is_deterministic() {
        let params = init_params(Variant::Rdsr, 2, 3).unwrap();
        let table = QuantTable::for_quality(50).unwrap();
        let img = pad_to_blocks(&smooth_image(40, 24, 1)).image;
        let grid = crate::transform::forward_quantize(&img, &table).unwrap();
        let a = retrieve_signs(&grid, &table, &params).unwrap();
        let b = retrieve_signs(&magnitudes_only(&grid), &table, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), grid.nonzero_ac());
        assert!(retrieve_signs(&CoeffGrid::zeros(2, 2), &table, &params)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn constant_image_has_empty_sign_section() {
        let img = Image::filled(30, 20, pixel_to_sample(77));
        for params in [None, Some(init_params(Variant::Pdsr, 1, 0).unwrap())] {
            let e = encode_detailed(&img, 50, params.as_ref()).unwrap();
            assert_eq!(e.sizes.signs, 0);
            assert!(e.signs.is_empty());
            let d = decode(&e.bytes, params.as_ref()).unwrap().to_pixels();
            assert_eq!(d, e.baseline_reconstruction().to_pixels());
            assert!(d.iter().all(|&p| p == d[0]));
        }
    }

    #[test]
    fn round_trip_matches_baseline_reconstruction() {
        let params = init_params(Variant::Rdsr, 2, 11).unwrap();
        for (i, qf) in [5u8, 25, 50, 75, 95].into_iter().enumerate() {
            let img = smooth_image(37 + i, 29, i as u64);
            for p in [None, Some(&params)] {
                let e = encode_detailed(&img, qf, p).unwrap();
                let d = decode_detailed(&e.bytes, p).unwrap();
                assert_eq!(d.grid, e.grid);
                assert_eq!(d.image.width(), img.width());
                assert_eq!(d.image.to_pixels(), e.baseline_reconstruction().to_pixels());
            }
        }
    }

    #[test]
    fn section_sizes_match_container() {
        let params = init_params(Variant::Fdsr, 2, 1).unwrap();
        let e = encode_detailed(&smooth_image(32, 32, 5), 50, Some(&params)).unwrap();
        let c = Container::parse(&e.bytes).unwrap();
        assert_eq!(c.dc.len(), e.sizes.dc);
        assert_eq!(c.magnitudes.len(), e.sizes.magnitudes);
        assert_eq!(c.signs.len(), e.sizes.signs);
        assert_eq!(
            c.header.mode,
            SignMode::Retrieval {
                variant: Variant::Fdsr,
                k: 2,
                pocs: true
            }
        );
        assert_eq!((c.header.width, c.header.height, c.header.qf), (32, 32, 50));
    }

    #[test]
    fn decode_errors() {
        let img = smooth_image(16, 16, 2);
        let rdsr = init_params(Variant::Rdsr, 2, 0).unwrap();
        let bytes = encode(&img, 50, Some(&rdsr)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, Some(&rdsr)), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes, None), Err(Error::Config(_))));
        let other = init_params(Variant::Rdsr, 3, 0).unwrap();
        assert!(matches!(decode(&bytes, Some(&other)), Err(Error::Config(_))));
        let mut nopocs = rdsr.clone();
        nopocs.pocs = false;
        assert!(matches!(decode(&bytes, Some(&nopocs)), Err(Error::Config(_))));
        assert!(matches!(decode(&bytes[..20], Some(&rdsr)), Err(Error::Io(_))));

        // baseline streams decode with or without a model
        let base = encode(&img, 50, None).unwrap();
        assert_eq!(decode(&base, None).unwrap(), decode(&base, Some(&other)).unwrap());

        // claimed size larger than the sections can describe
        let mut huge = base.clone();
        huge[8..12].copy_from_slice(&100_000u32.to_le_bytes());
        assert!(matches!(decode(&huge, None), Err(Error::Format(_))));
    }

    #[test]
    fn magnitude_stream_rejects_runaway_runs() {
        let mut w = BitWriter::new();
        w.put_ue(70);
        w.put_ue(0);
        let mut g = CoeffGrid::zeros(1, 1);
        assert!(matches!(read_magnitudes(&w.finish(), &mut g), Err(Error::Format(_))));
    }

    #[test]
    fn extreme_levels_round_trip() {
        let mut l = [0i16; 64];
        l[0] = -2048;
        l[ZIGZAG[63]] = -32767;
        l[ZIGZAG[1]] = 1;
        let grid = grid_of(vec![l, [0; 64], l], 3, 1);
        let mut g = CoeffGrid::zeros(3, 1);
        read_dc(&write_dc(&grid), &mut g).unwrap();
        read_magnitudes(&write_magnitudes(&grid), &mut g).unwrap();
        assert_eq!(g, magnitudes_only(&grid));
        let (signs, _) = extract_signs(&grid, &QuantTable::jpeg_luma());
        apply_signs(&mut g, &signs).unwrap();
        assert_eq!(g, grid);
    }

    proptest! {
        #[test]
        fn level_streams_round_trip(
            raw in prop::collection::vec(
                prop::collection::vec(prop_oneof![4 => Just(0i16), 1 => -300i16..300], 64),
                1..12,
            )
        ) {
            let n = raw.len();
            let levels: Vec<LevelBlock> = raw.into_iter().map(|v| v.try_into().unwrap()).collect();
            let grid = grid_of(levels, n, 1);
            let (signs, _) = extract_signs(&grid, &QuantTable::jpeg_luma());
            prop_assert_eq!(signs.len(), grid.nonzero_ac());

            let mut g = CoeffGrid::zeros(n, 1);
            read_dc(&write_dc(&grid), &mut g).unwrap();
            read_magnitudes(&write_magnitudes(&grid), &mut g).unwrap();
            let packed = pack_bits(signs.bits());
            apply_signs(&mut g, &SignField::from_bits(unpack_bits(&packed, signs.len()).unwrap())).unwrap();
            prop_assert_eq!(g, grid);
        }

        #[test]
        fn residual_involution(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let t = SignField::from_bits(pairs.iter().map(|p| p.0).collect());
            let r = SignField::from_bits(pairs.iter().map(|p| p.1).collect());
            let e = sign_residual(&t, &r).unwrap();
            prop_assert_eq!(apply_residual(&r, &e).unwrap(), t);
        }
    }
}
