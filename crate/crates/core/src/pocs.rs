//! Projection onto the set of images whose block-DCT coefficients satisfy
//! `|coeff| <= lambda`, and the sub-gradient of that projection.
//!
//! Because the DCT is orthonormal the squared distance is the same in both
//! domains, so the closest feasible point is obtained by clamping every
//! coefficient into `[-lambda, lambda]` and transforming back.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::transform::{dct2, dequantize, idct2, CoeffGrid, QuantTable, BLOCK, BLOCK_LEN};

/// Per-coefficient thresholds: the dequantized magnitudes `|level| * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeField {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub values: Vec<[f64; BLOCK_LEN]>,
}

impl MagnitudeField {
    pub fn new(blocks_x: usize, blocks_y: usize, values: Vec<[f64; BLOCK_LEN]>) -> Result<Self> {
        if values.len() != blocks_x * blocks_y {
            return Err(Error::Shape(format!(
                "{} blocks for a {blocks_x}x{blocks_y} grid",
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("magnitudes must be non-negative".into()));
        }
        Ok(MagnitudeField {
            blocks_x,
            blocks_y,
            values,
        })
    }

    pub fn zeros(blocks_x: usize, blocks_y: usize) -> Self {
        MagnitudeField {
            blocks_x,
            blocks_y,
            values: vec![[0.0; BLOCK_LEN]; blocks_x * blocks_y],
        }
    }

    /// Dequantized magnitudes of every coefficient, DC included.
    pub fn from_levels(grid: &CoeffGrid, table: &QuantTable) -> Self {
        let values = grid
            .levels
            .iter()
            .map(|l| dequantize(l, table).map(f64::abs))
            .collect();
        MagnitudeField {
            blocks_x: grid.blocks_x,
            blocks_y: grid.blocks_y,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.blocks_x * BLOCK
    }

    pub fn height(&self) -> usize {
        self.blocks_y * BLOCK
    }

    fn check(&self, image_w: usize, image_h: usize) -> Result<()> {
        if image_w != self.width() || image_h != self.height() {
            return Err(Error::Shape(format!(
                "image {image_w}x{image_h} against a {}x{} magnitude field",
                self.width(),
                self.height()
            )));
        }
        Ok(())
    }
}

/// Which coefficients passed through the clamp unchanged (`|t| <= lambda`).
/// The sub-gradient is 1 there and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectionTape {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub pass: Vec<[bool; BLOCK_LEN]>,
}

impl ProjectionTape {
    pub fn all(blocks_x: usize, blocks_y: usize, value: bool) -> Self {
        ProjectionTape {
            blocks_x,
            blocks_y,
            pass: vec![[value; BLOCK_LEN]; blocks_x * blocks_y],
        }
    }

    pub fn clamped_count(&self) -> usize {
        self.pass.iter().flatten().filter(|&&p| !p).count()
    }
}

#[inline]
fn load_block(src: &[f64], width: usize, bx: usize) -> [f64; BLOCK_LEN] {
    let mut b = [0.0; BLOCK_LEN];
    for r in 0..BLOCK {
        let s = r * width + bx * BLOCK;
        b[r * BLOCK..(r + 1) * BLOCK].copy_from_slice(&src[s..s + BLOCK]);
    }
    b
}

#[inline]
fn store_block(dst: &mut [f64], width: usize, bx: usize, b: &[f64; BLOCK_LEN]) {
    for r in 0..BLOCK {
        let d = r * width + bx * BLOCK;
        dst[d..d + BLOCK].copy_from_slice(&b[r * BLOCK..(r + 1) * BLOCK]);
    }
}

/// Clamps in place; returns the pass-through mask when requested.
fn project_rows(
    samples: &mut [f64],
    width: usize,
    lambda: &MagnitudeField,
    mut pass: Option<&mut [[bool; BLOCK_LEN]]>,
) {
    let bw = width / BLOCK;
    let body = |(by, rows): (usize, &mut [f64]), pass_row: Option<&mut [[bool; BLOCK_LEN]]>| {
        let mut pass_row = pass_row;
        for bx in 0..bw {
            let lam = &lambda.values[by * bw + bx];
            let mut t = dct2(&load_block(rows, width, bx));
            for i in 0..BLOCK_LEN {
                let inside = t[i].abs() <= lam[i];
                if !inside {
                    t[i] = t[i].clamp(-lam[i], lam[i]);
                }
                if let Some(p) = pass_row.as_deref_mut() {
                    p[bx][i] = inside;
                }
            }
            store_block(rows, width, bx, &idct2(&t));
        }
    };
    match pass.as_deref_mut() {
        Some(p) => samples
            .par_chunks_mut(width * BLOCK)
            .enumerate()
            .zip(p.par_chunks_mut(bw))
            .for_each(|(rows, pr)| body(rows, Some(pr))),
        None => samples
            .par_chunks_mut(width * BLOCK)
            .enumerate()
            .for_each(|rows| body(rows, None)),
    }
}

/// Closest point (in L2) to `z` inside the magnitude-constraint set.
pub fn project(z: &Image, lambda: &MagnitudeField) -> Result<(Image, ProjectionTape)> {
    lambda.check(z.width(), z.height())?;
    let mut out = z.clone();
    let mut tape = ProjectionTape::all(lambda.blocks_x, lambda.blocks_y, true);
    project_rows(out.samples_mut(), z.width(), lambda, Some(&mut tape.pass));
    Ok((out, tape))
}

/// [`project`] without recording the tape, in place.
pub fn project_in_place(z: &mut Image, lambda: &MagnitudeField) -> Result<()> {
    lambda.check(z.width(), z.height())?;
    let w = z.width();
    project_rows(z.samples_mut(), w, lambda, None);
    Ok(())
}

/// Vector-Jacobian product of [`project`]: `idct2(mask * dct2(grad))` per block.
pub fn project_backward(grad_out: &Image, tape: &ProjectionTape) -> Result<Image> {
    let (w, h) = (grad_out.width(), grad_out.height());
    if w != tape.blocks_x * BLOCK || h != tape.blocks_y * BLOCK {
        return Err(Error::Shape(format!(
            "gradient {w}x{h} against a {}x{} tape",
            tape.blocks_x * BLOCK,
            tape.blocks_y * BLOCK
        )));
    }
    let mut out = grad_out.clone();
    let bw = tape.blocks_x;
    out.samples_mut()
        .par_chunks_mut(w * BLOCK)
        .zip(tape.pass.par_chunks(bw))
        .for_each(|(rows, pass)| {
            for (bx, mask) in pass.iter().enumerate() {
                if mask.iter().all(|&p| p) {
                    continue;
                }
                let mut t = dct2(&load_block(rows, w, bx));
                for (v, &p) in t.iter_mut().zip(mask) {
                    if !p {
                        *v = 0.0;
                    }
                }
                store_block(rows, w, bx, &idct2(&t));
            }
        });
    Ok(out)
}

/// Largest constraint violation `max(|dct2| - lambda, 0)` over all coefficients.
pub fn max_violation(x: &Image, lambda: &MagnitudeField) -> Result<f64> {
    lambda.check(x.width(), x.height())?;
    let w = x.width();
    let bw = w / BLOCK;
    let mut worst = 0.0f64;
    for (by, rows) in x.samples().chunks(w * BLOCK).enumerate() {
        for bx in 0..bw {
            let t = dct2(&load_block(rows, w, bx));
            let lam = &lambda.values[by * bw + bx];
            for i in 0..BLOCK_LEN {
                worst = worst.max(t[i].abs() - lam[i]);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_lambda(rng: &mut impl Rng, bx: usize, by: usize) -> MagnitudeField {
        let values = (0..bx * by)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..0.8)))
            .collect();
        MagnitudeField::new(bx, by, values).unwrap()
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn diff(a: &Image, b: &Image) -> Vec<f64> {
        a.samples().iter().zip(b.samples()).map(|(x, y)| x - y).collect()
    }

    #[test]
    fn scalar_clamp_view() {
        // a single block whose only nonzero coefficient is at (0, 1)
        for (t, expect, inside) in [(5.0, 3.0, false), (-5.0, -3.0, false), (2.0, 2.0, true)] {
            let mut coeffs = [0.0; 64];
            coeffs[1] = t;
            let z = Image::new(8, 8, idct2(&coeffs).to_vec()).unwrap();
            let mut lam = [0.0; 64];
            lam[1] = 3.0;
            let lambda = MagnitudeField::new(1, 1, vec![lam]).unwrap();
            let (out, tape) = project(&z, &lambda).unwrap();
            let got = dct2(&out.samples().try_into().unwrap());
            assert!((got[1] - expect).abs() < 1e-12);
            assert_eq!(tape.pass[0][1], inside);
        }
    }

    #[test]
    fn feasible_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_image(&mut rng, 16, 8);
        let lambda = MagnitudeField::new(2, 1, vec![[100.0; 64]; 2]).unwrap();
        let (out, tape) = project(&z, &lambda).unwrap();
        assert!(out.samples().iter().zip(z.samples()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(tape.clamped_count(), 0);
    }

    #[test]
    fn zero_lambda_gives_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_image(&mut rng, 16, 16);
        let (out, _) = project(&z, &MagnitudeField::zeros(2, 2)).unwrap();
        assert!(out.samples().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn shape_mismatch() {
        let z = Image::zeros(16, 8);
        assert!(matches!(project(&z, &MagnitudeField::zeros(1, 1)), Err(Error::Shape(_))));
        let tape = ProjectionTape::all(1, 1, true);
        assert!(matches!(project_backward(&z, &tape), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_image(&mut rng, 16, 8);
        let id = project_backward(&g, &ProjectionTape::all(2, 1, true)).unwrap();
        assert_eq!(id, g);
        let zero = project_backward(&g, &ProjectionTape::all(2, 1, false)).unwrap();
        assert!(zero.samples().iter().all(|v| v.abs() < 1e-15));

        for _ in 0..20 {
            let g = random_image(&mut rng, 16, 8);
            let mut tape = ProjectionTape::all(2, 1, true);
            tape.pass.iter_mut().flatten().for_each(|p| *p = rng.gen_bool(0.5));
            let gi = project_backward(&g, &tape).unwrap();
            assert!(norm(gi.samples()) <= norm(g.samples()) + 1e-12);
        }
    }

    #[test]
    fn idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let lambda = random_lambda(&mut rng, 2, 2);
            let a = random_image(&mut rng, 16, 16);
            let b = random_image(&mut rng, 16, 16);
            let (pa, _) = project(&a, &lambda).unwrap();
            let (pb, _) = project(&b, &lambda).unwrap();
            let (ppa, _) = project(&pa, &lambda).unwrap();
            assert!(norm(&diff(&ppa, &pa)) < 1e-10);
            assert!(norm(&diff(&pa, &pb)) <= norm(&diff(&a, &b)) + 1e-12);
            assert!(max_violation(&pa, &lambda).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_the_closest_feasible_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let lambda = random_lambda(&mut rng, 1, 1);
            let z = random_image(&mut rng, 8, 8);
            let (p, _) = project(&z, &lambda).unwrap();
            let best = norm(&diff(&z, &p));
            for _ in 0..20 {
                // feasible point: any coefficient vector inside the box
                let c: [f64; 64] =
                    std::array::from_fn(|i| rng.gen_range(-1.0..=1.0) * lambda.values[0][i]);
                let w = Image::new(8, 8, idct2(&c).to_vec()).unwrap();
                assert!(best <= norm(&diff(&z, &w)) + 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lambda = random_lambda(&mut rng, 2, 1);
        let z = random_image(&mut rng, 16, 8);
        let w = random_image(&mut rng, 16, 8);
        // scalar objective f(z) = <w, project(z)>
        let f = |z: &Image| -> f64 {
            let (p, _) = project(z, &lambda).unwrap();
            p.samples().iter().zip(w.samples()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = project(&z, &lambda).unwrap();
        let grad = project_backward(&w, &tape).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp.samples_mut()[i] += h;
            let mut zm = z.clone();
            zm.samples_mut()[i] -= h;
            if project(&zp, &lambda).unwrap().1 != tape || project(&zm, &lambda).unwrap().1 != tape
            {
                continue;
            }
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            let an = grad.samples()[i];
            assert!((fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3));
            checked += 1;
        }
        assert!(checked > 100);
    }
}
