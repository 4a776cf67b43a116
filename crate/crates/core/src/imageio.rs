//! Grayscale image container, binary PGM I/O, block padding and training
//! patch extraction.
//!
//! Samples are held in the internal domain `(p - 128) / 128`, so an 8-bit
//! pixel `p` in `[0, 255]` maps into `[-1, 1)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{truncated, Error, Result};
use crate::transform::BLOCK;

/// Row-major grid of real-valued luma samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} image",
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            samples,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            samples: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    /// Builds an image from 8-bit pixels, applying the level shift.
    pub fn from_pixels(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            pixels.iter().map(|&p| pixel_to_sample(p)).collect(),
        )
    }

    /// Quantizes every sample to the nearest 8-bit pixel, clamping to `[0, 255]`.
    pub fn to_pixels(&self) -> Vec<u8> {
        self.samples.iter().map(|&s| sample_to_pixel(s)).collect()
    }

    /// Round trip through the 8-bit pixel domain.
    pub fn quantize_to_8bit(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            samples: self
                .samples
                .iter()
                .map(|&s| pixel_to_sample(sample_to_pixel(s)))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.samples[y * self.width + x] = value;
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "window {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            samples.extend_from_slice(&self.samples[row + x0..row + x0 + w]);
        }
        Image::new(w, h, samples)
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[inline]
pub fn pixel_to_sample(p: u8) -> f64 {
    (f64::from(p) - 128.0) / 128.0
}

#[inline]
pub fn sample_to_pixel(s: f64) -> u8 {
    (s * 128.0 + 128.0).round().clamp(0.0, 255.0) as u8
}

/// An image whose dimensions are multiples of the block size, together with
/// the extent of the source it was padded from.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedImage {
    pub image: Image,
    pub original_width: usize,
    pub original_height: usize,
}

impl PaddedImage {
    /// Wraps an already aligned image.
    pub fn aligned(image: Image) -> Result<Self> {
        if image.width % BLOCK != 0 || image.height % BLOCK != 0 || image.is_empty() {
            return Err(Error::Shape(format!(
                "{}x{} is not a nonempty multiple of {BLOCK}",
                image.width, image.height
            )));
        }
        Ok(PaddedImage {
            original_width: image.width,
            original_height: image.height,
            image,
        })
    }

    /// The original extent, dropping the replicated border.
    pub fn unpadded(&self) -> Image {
        self.image
            .crop(0, 0, self.original_width, self.original_height)
            .expect("original extent lies inside the padded image")
    }
}

/// Rounds both dimensions up to a multiple of 8, replicating the nearest
/// edge sample into the new area.
pub fn pad_to_blocks(image: &Image) -> PaddedImage {
    let w = image.width.div_ceil(BLOCK).max(1) * BLOCK;
    let h = image.height.div_ceil(BLOCK).max(1) * BLOCK;
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = y.min(image.height - 1);
        let row = &image.samples[sy * image.width..(sy + 1) * image.width];
        samples.extend_from_slice(row);
        let last = row[image.width - 1];
        samples.extend(std::iter::repeat_n(last, w - image.width));
    }
    PaddedImage {
        image: Image {
            width: w,
            height: h,
            samples,
        },
        original_width: image.width,
        original_height: image.height,
    }
}

/// Parses a binary (P5) PGM with maxval 255.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("missing P5 magic".into()));
    }
    pos += 2;

    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("expected a decimal header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("header field out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("no whitespace after maxval".into())),
    }
    if maxval != 255 {
        return Err(Error::Unsupported(format!("maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = bytes.get(pos..pos + n).ok_or_else(|| truncated("PGM payload"))?;
    Image::from_pixels(width, height, payload)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    parse_pgm(&fs::read(path)?)
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.to_pixels());
    out
}

pub fn save_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}

/// Sorted list of `*.pgm` files in a directory.
pub fn list_pgm(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every PGM in a directory, in file-name order.
pub fn load_pgm_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let paths = list_pgm(dir)?;
    if paths.is_empty() {
        return Err(Error::Config(format!("no PGM images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            load_pgm(&p).map(|img| (name, img))
        })
        .collect()
}

/// Draws `count` square patches uniformly over source images and positions.
///
/// Deterministic in `(images, patch_size, count, seed)`. Sources smaller
/// than the patch are skipped.
pub fn crop_patches(
    images: &[Image],
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Image>> {
    if patch_size == 0 || patch_size % BLOCK != 0 {
        return Err(Error::Config(format!(
            "patch size {patch_size} is not a positive multiple of {BLOCK}"
        )));
    }
    let usable: Vec<&Image> = images
        .iter()
        .enumerate()
        .filter_map(|(i, img)| {
            if img.width >= patch_size && img.height >= patch_size {
                Some(img)
            } else {
                log::warn!(
                    "skipping source {i}: {}x{} is smaller than patch {patch_size}",
                    img.width,
                    img.height
                );
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no source image is at least {patch_size}x{patch_size}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let src = usable[rng.gen_range(0..usable.len())];
        let x0 = rng.gen_range(0..=src.width - patch_size);
        let y0 = rng.gen_range(0..=src.height - patch_size);
        patches.push(src.crop(x0, y0, patch_size, patch_size)?);
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(w: usize, h: usize, px: &[u8]) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n255\n").into_bytes();
        v.extend_from_slice(px);
        v
    }

    #[test]
    fn load_level_shift() {
        assert_eq!(parse_pgm(&pgm(1, 1, &[128])).unwrap().samples(), &[0.0]);
        assert_eq!(parse_pgm(&pgm(1, 1, &[0])).unwrap().samples(), &[-1.0]);
        let img = parse_pgm(&pgm(2, 1, &[128, 192])).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.samples(), &[0.0, 0.5]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 # width\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.to_pixels(), vec![0, 255]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_pgm(b"P2\n1 1\n255\n\x00"), Err(Error::Format(_))));
        assert!(matches!(parse_pgm(b"P5\n1 x\n255\n\x00"), Err(Error::Format(_))));
        assert!(matches!(
            parse_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(parse_pgm(&pgm(2, 2, &[1, 2, 3])), Err(Error::Io(_))));
    }

    #[test]
    fn save_mapping() {
        let img = Image::new(3, 1, vec![0.0, 0.999, -1.0]).unwrap();
        assert_eq!(img.to_pixels(), vec![128, 255, 0]);
        let bytes = encode_pgm(&img);
        assert_eq!(parse_pgm(&bytes).unwrap(), img.quantize_to_8bit());
    }

    #[test]
    fn save_to_unwritable_path_fails() {
        let img = Image::zeros(1, 1);
        assert!(matches!(
            save_pgm(&img, "/nonexistent-dir/x.pgm"),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn padding() {
        let img = Image::new(256, 256, (0..65536).map(|i| i as f64).collect()).unwrap();
        let p = pad_to_blocks(&img);
        assert_eq!(p.image, img);

        let img = Image::new(9, 8, (0..72).map(|i| i as f64).collect()).unwrap();
        let p = pad_to_blocks(&img);
        assert_eq!((p.image.width(), p.image.height()), (16, 8));
        assert_eq!((p.original_width, p.original_height), (9, 8));
        for y in 0..8 {
            for x in 9..16 {
                assert_eq!(p.image.get(x, y), img.get(8, y));
            }
        }
        assert_eq!(p.unpadded(), img);

        let p = pad_to_blocks(&Image::filled(1, 1, 0.25));
        assert_eq!(p.image, Image::filled(8, 8, 0.25));
    }

    #[test]
    fn patches() {
        let src = Image::new(256, 256, (0..65536).map(|i| i as f64).collect()).unwrap();
        let one = crop_patches(std::slice::from_ref(&src), 256, 1, 3).unwrap();
        assert_eq!(one, vec![src.clone()]);

        let a = crop_patches(std::slice::from_ref(&src), 64, 20, 7).unwrap();
        let b = crop_patches(std::slice::from_ref(&src), 64, 20, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.width() == 64 && p.height() == 64));
    }

    #[test]
    fn patch_errors() {
        let small = Image::zeros(16, 16);
        assert!(matches!(
            crop_patches(std::slice::from_ref(&small), 32, 1, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            crop_patches(std::slice::from_ref(&small), 12, 1, 0),
            Err(Error::Config(_))
        ));
        // a too-small source next to a usable one is just skipped
        let big = Image::zeros(32, 32);
        let out = crop_patches(&[small, big], 32, 3, 0).unwrap();
        assert_eq!(out.len(), 3);
    }
}
