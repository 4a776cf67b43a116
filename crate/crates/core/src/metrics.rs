//! Evaluation metrics: residual entropy, bits per sign / pixel, sign
//! accuracy and PSNR.

use crate::codec::{ResidualField, SignField};
use crate::error::{Error, Result};
use crate::imageio::Image;

/// `H(p)` in bits for `p = ones / total`; zero for an empty sequence.
pub fn binary_entropy(ones: usize, total: usize) -> Result<f64> {
    if ones > total {
        return Err(Error::Domain(format!("{ones} ones out of {total} symbols")));
    }
    if ones == 0 || ones == total {
        return Ok(0.0);
    }
    let p = ones as f64 / total as f64;
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Zeroth-order entropy of the residual, per sign and per pixel.
pub fn bps_bpp(residual: &ResidualField, n_pixels: usize) -> Result<(f64, f64)> {
    if n_pixels == 0 {
        return Err(Error::Domain("no pixels".into()));
    }
    let n = residual.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let bits = n as f64 * binary_entropy(residual.count_ones(), n)?;
    Ok((bits / n as f64, bits / n_pixels as f64))
}

/// Fraction of restored signs equal to the true signs; 1 when empty.
pub fn aos(truth: &SignField, restored: &SignField) -> Result<f64> {
    if truth.len() != restored.len() {
        return Err(Error::Shape(format!(
            "{} true signs against {} restored",
            truth.len(),
            restored.len()
        )));
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let same = truth
        .bits()
        .iter()
        .zip(restored.bits())
        .filter(|(a, b)| a == b)
        .count();
    Ok(same as f64 / truth.len() as f64)
}

/// PSNR in dB with peak 255, after mapping both images to 8-bit pixels.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{} against {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let pa = a.to_pixels();
    let pb = b.to_pixels();
    let sse: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / pa.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// One evaluation of one image at one quality factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub image: String,
    pub qf: u8,
    pub n_signs: usize,
    pub n_pixels: usize,
    pub bps: f64,
    pub bpp: f64,
    pub aos: f64,
    pub psnr_restored: f64,
    pub wall_time: f64,
    /// Entropy of the raw signs, bits per sign.
    pub baseline_bps: f64,
    /// Range-coded residual section size in bytes.
    pub residual_bytes: usize,
    /// Raw packed sign section size in bytes.
    pub raw_sign_bytes: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "image,qf,n_signs,n_pixels,bps,bpp,aos,psnr_restored,\
wall_time,baseline_bps,residual_bytes,raw_sign_bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.4},{:.6},{:.6},{},{}",
            self.image,
            self.qf,
            self.n_signs,
            self.n_pixels,
            self.bps,
            self.bpp,
            self.aos,
            self.psnr_restored,
            self.wall_time,
            self.baseline_bps,
            self.residual_bytes,
            self.raw_sign_bytes
        )
    }

    /// Arithmetic mean over reports (counts and sizes averaged and rounded).
    /// Infinite PSNR values are left out of the PSNR mean.
    pub fn mean(label: &str, reports: &[EvalReport]) -> Option<EvalReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let finite: Vec<f64> = reports
            .iter()
            .map(|r| r.psnr_restored)
            .filter(|v| v.is_finite())
            .collect();
        Some(EvalReport {
            image: label.to_string(),
            qf: first.qf,
            n_signs: avg(&|r| r.n_signs as f64).round() as usize,
            n_pixels: avg(&|r| r.n_pixels as f64).round() as usize,
            bps: avg(&|r| r.bps),
            bpp: avg(&|r| r.bpp),
            aos: avg(&|r| r.aos),
            psnr_restored: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            wall_time: avg(&|r| r.wall_time),
            baseline_bps: avg(&|r| r.baseline_bps),
            residual_bytes: avg(&|r| r.residual_bytes as f64).round() as usize,
            raw_sign_bytes: avg(&|r| r.raw_sign_bytes as f64).round() as usize,
        })
    }
}
