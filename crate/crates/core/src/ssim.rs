//! Structural similarity between image blocks and derived distances.
//!
//! The block SSIM uses the `c2 = 2·c3` simplification, reducing the index to
//! the product of a luminance term and a contrast/structure term. For
//! zero-mean blocks the index collapses further to
//! `(2·x1ᵀx2 + c) / (‖x1‖² + ‖x2‖² + c)` with `c = (q−1)·c2`, and the SSIM
//! distance `1 − SSIM` becomes `‖x1 − x2‖² / (‖x1‖² + ‖x2‖² + c)`.
//!
//! MSE between whole images is reported in 8-bit units (pixel differences
//! scaled by 255) so that error levels like 45…900 are meaningful on `[0, 1]`
//! images; SSIM itself uses the unit dynamic range.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::scalar::Real;

/// Stabilization constants for a given block length and dynamic range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConstants<T> {
    /// Dynamic range of the luminance values (1 here).
    pub l: T,
    /// Luminance stabilizer `(0.01·l)²`.
    pub c1: T,
    /// Contrast stabilizer `(0.03·l)²`.
    pub c2: T,
    /// Structure stabilizer `c2 / 2`.
    pub c3: T,
    /// Zero-mean form constant `(q−1)·c2`.
    pub c: T,
    /// Block vector length.
    pub q: usize,
}

impl<T: Real> SsimConstants<T> {
    /// Constants for blocks of length `q` on the unit dynamic range.
    pub fn new(q: usize) -> Self {
        Self::with_range(q, T::one())
    }

    /// Constants for an arbitrary dynamic range `l`.
    pub fn with_range(q: usize, l: T) -> Self {
        assert!(q >= 2, "block length must be at least 2");
        let c1 = (T::of(0.01) * l) * (T::of(0.01) * l);
        let c2 = (T::of(0.03) * l) * (T::of(0.03) * l);
        let c3 = c2 / T::of(2.0);
        let c = T::of((q - 1) as f64) * c2;
        Self {
            l,
            c1,
            c2,
            c3,
            c,
            q,
        }
    }
}

fn check_lengths<T>(x1: &DVector<T>, x2: &DVector<T>) -> Result<()> {
    if x1.len() != x2.len() {
        return Err(Error::LengthMismatch {
            left: x1.len(),
            right: x2.len(),
        });
    }
    Ok(())
}

/// SSIM between two blocks of equal length `q ≥ 2`, as the product `s1·s2`.
///
/// Variance and covariance use the `q−1` divisor. Identical inputs score 1.
pub fn ssim<T: Real>(x1: &DVector<T>, x2: &DVector<T>, consts: &SsimConstants<T>) -> Result<T> {
    check_lengths(x1, x2)?;
    let q = x1.len();
    if q < 2 {
        return Err(Error::Dimension(format!("block length {q} below 2")));
    }
    let qt = T::of(q as f64);
    let qm1 = T::of((q - 1) as f64);
    let mu1 = x1.iter().fold(T::zero(), |a, v| a + *v) / qt;
    let mu2 = x2.iter().fold(T::zero(), |a, v| a + *v) / qt;
    let mut var1 = T::zero();
    let mut var2 = T::zero();
    let mut cov = T::zero();
    for (a, b) in x1.iter().zip(x2.iter()) {
        let da = *a - mu1;
        let db = *b - mu2;
        var1 += da * da;
        var2 += db * db;
        cov += da * db;
    }
    var1 /= qm1;
    var2 /= qm1;
    cov /= qm1;
    let two = T::of(2.0);
    let s1 = (two * mu1 * mu2 + consts.c1) / (mu1 * mu1 + mu2 * mu2 + consts.c1);
    let s2 = (two * cov + consts.c2) / (var1 + var2 + consts.c2);
    Ok(s1 * s2)
}

/// The zero-mean SSIM distance formula, without the centering check.
pub(crate) fn ssim_distance_formula<T: Real>(
    x1: &DVector<T>,
    x2: &DVector<T>,
    consts: &SsimConstants<T>,
) -> T {
    let diff = x1 - x2;
    diff.norm_squared() / (x1.norm_squared() + x2.norm_squared() + consts.c)
}

/// Squared SSIM distance `‖x1 − x2‖² / (‖x1‖² + ‖x2‖² + c)` for centered
/// blocks.
///
/// Both inputs must be zero-mean; the check tolerance is `1e-9` (scaled up
/// for `f32`) so that floating-point residue from block centering never trips
/// it. The value is nonnegative and can exceed 1 for anti-correlated blocks.
pub fn ssim_distance<T: Real>(
    x1: &DVector<T>,
    x2: &DVector<T>,
    consts: &SsimConstants<T>,
) -> Result<T> {
    check_lengths(x1, x2)?;
    let tol = {
        let base = T::of(1e-9);
        let eps_scaled = T::of(512.0) * T::eps();
        if eps_scaled > base {
            eps_scaled
        } else {
            base
        }
    };
    for x in [x1, x2] {
        let mean = x.iter().fold(T::zero(), |a, v| a + *v) / T::of(x.len() as f64);
        if mean.abs() > tol {
            return Err(Error::NotCentered {
                mean: mean.abs().as_f64(),
                tol: tol.as_f64(),
            });
        }
    }
    Ok(ssim_distance_formula(x1, x2, consts))
}

/// Mean squared error between two images in 8-bit units (differences scaled
/// by 255 before squaring).
pub fn mse<T: Real>(img1: &GrayImage<T>, img2: &GrayImage<T>) -> Result<T> {
    if img1.width() != img2.width() || img1.height() != img2.height() {
        return Err(Error::Dimension(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            img1.width(),
            img1.height(),
            img2.width(),
            img2.height()
        )));
    }
    let scale = T::of(255.0);
    let mut acc = T::zero();
    for (a, b) in img1.data().iter().zip(img2.data()) {
        let d = (*a - *b) * scale;
        acc += d * d;
    }
    Ok(acc / T::of(img1.data().len() as f64))
}

/// Mean SSIM over aligned `block_side` tiles of two images (uncentered
/// blocks, full index per tile).
pub fn mean_block_ssim<T: Real>(
    img1: &GrayImage<T>,
    img2: &GrayImage<T>,
    block_side: usize,
) -> Result<T> {
    let bs1 = crate::image::partition(img1, block_side)?;
    let bs2 = crate::image::partition(img2, block_side)?;
    if bs1.len() != bs2.len() {
        return Err(Error::Dimension("block grids differ".into()));
    }
    let consts = SsimConstants::new(bs1.block_len());
    let mut acc = T::zero();
    for i in 0..bs1.len() {
        acc += ssim(&bs1.raw_block(i), &bs2.raw_block(i), &consts)?;
    }
    Ok(acc / T::of(bs1.len() as f64))
}
