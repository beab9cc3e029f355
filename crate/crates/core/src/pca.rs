//! PCA and kernel PCA baselines over the same block decomposition.
//!
//! PCA here is per block position: stack the centered blocks of all training
//! images, remove the cross-image mean, eigendecompose the scatter matrix
//! `S = XXᵀ`, and keep the top `p` eigenvectors. Kernel PCA runs on the same
//! normalized, double-centered Gram matrices as kernel ISCA, with
//! projections given by eigenvector coordinates scaled by `1/√λ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BlockSet, GrayImage};
use crate::isca::{max_identity_deviation, partition_all, TrainConfig};
use crate::kernel::{Kernel, KernelBlockStats};
use crate::scalar::Real;

/// Eigenvalues below this cannot support a kernel PCA component.
const KPCA_EIG_FLOOR: f64 = 1e-10;

/// Per-block PCA bases: top eigenvectors of the blockwise scatter matrix.
#[derive(Debug, Clone)]
pub struct PcaModel<T> {
    /// One `q×p` orthonormal basis per block position.
    pub bases: Vec<DMatrix<T>>,
    /// Nonincreasing eigenvalues per block position, `p` each.
    pub eigenvalues: Vec<DVector<T>>,
    /// Cross-image mean block per position, subtracted before projecting.
    pub means: Vec<DVector<T>>,
    pub block_side: usize,
    pub grid: (usize, usize),
    pub source_dims: (usize, usize),
    pub p: usize,
    pub n_images: usize,
}

impl<T: Real> PcaModel<T> {
    pub fn q(&self) -> usize {
        self.block_side * self.block_side
    }

    pub fn b(&self) -> usize {
        self.bases.len()
    }

    /// Largest deviation of `UᵀU` from the identity over all blocks.
    pub fn orthonormality_residual(&self) -> T {
        self.bases
            .iter()
            .map(|u| max_identity_deviation(&u.tr_mul(u)))
            .fold(T::zero(), |a, v| if v > a { v } else { a })
    }

    fn check_blockset(&self, bs: &BlockSet<T>) -> Result<()> {
        if bs.len() != self.b() || bs.block_len() != self.q() {
            return Err(Error::Shape(format!(
                "block set ({} blocks of length {}) does not match model ({} of {})",
                bs.len(),
                bs.block_len(),
                self.b(),
                self.q()
            )));
        }
        Ok(())
    }

    /// Projects every centered block: `U_iᵀ(x̆_i − μ_i)`.
    pub fn project(&self, bs: &BlockSet<T>) -> Result<Vec<DVector<T>>> {
        self.check_blockset(bs)?;
        Ok(self
            .bases
            .iter()
            .zip(&self.means)
            .zip(bs.blocks())
            .map(|((u, mu), x)| u.tr_mul(&(x - mu)))
            .collect())
    }

    /// Reconstructs the image from `μ_i + U_iU_iᵀ(x̆_i − μ_i)` plus the
    /// stored block means.
    pub fn reconstruct(&self, bs: &BlockSet<T>) -> Result<GrayImage<T>> {
        self.check_blockset(bs)?;
        let rec: Vec<DVector<T>> = self
            .bases
            .iter()
            .zip(&self.means)
            .zip(bs.blocks())
            .map(|((u, mu), x)| mu + u * u.tr_mul(&(x - mu)))
            .collect();
        Ok(crate::image::reassemble(&bs.with_blocks(rec)?))
    }
}

/// Eigendecomposition of a symmetric matrix with eigenpairs sorted by
/// nonincreasing eigenvalue and sign-normalized eigenvectors.
pub(crate) fn sorted_symmetric_eigen<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| {
        eig.eigenvalues[*b]
            .partial_cmp(&eig.eigenvalues[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, src) in order.iter().enumerate() {
        let mut pivot = T::zero();
        let mut pivot_abs = T::zero();
        for r in 0..n {
            let v = eig.eigenvectors[(r, *src)];
            if v.abs() > pivot_abs {
                pivot_abs = v.abs();
                pivot = v;
            }
        }
        let flip = pivot < T::zero();
        for r in 0..n {
            let v = eig.eigenvectors[(r, *src)];
            vectors[(r, dst)] = if flip { -v } else { v };
        }
    }
    (values, vectors)
}

/// PCA for one block position given its centered blocks across images.
pub fn fit_pca_position<T: Real>(
    blocks: &[DVector<T>],
    p: usize,
) -> Result<(DMatrix<T>, DVector<T>, DVector<T>)> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::EmptyDataset);
    }
    let q = blocks[0].len();
    if p == 0 || p > q {
        return Err(Error::Dimension(format!("p = {p} must satisfy 1 <= p <= q = {q}")));
    }
    let nt = T::of(n as f64);
    let mut mean = DVector::zeros(q);
    for x in blocks {
        mean += x;
    }
    mean /= nt;
    let mut scatter = DMatrix::zeros(q, q);
    for x in blocks {
        let d = x - &mean;
        scatter += &d * d.transpose();
    }
    let (values, vectors) = sorted_symmetric_eigen(&scatter);
    let basis = vectors.columns(0, p).clone_owned();
    let top = DVector::from_fn(p, |i, _| values[i]);
    Ok((basis, top, mean))
}

/// Fits per-block PCA over an image set (the same block decomposition as
/// ISCA, so comparisons share a pipeline). Blocks at each position are
/// additionally centered across the n images before the eigendecomposition.
pub fn fit_pca<T: Real>(images: &[GrayImage<T>], block_side: usize, p: usize) -> Result<PcaModel<T>> {
    let blocksets = partition_all(images, block_side)?;
    if images.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let b = blocksets[0].len();
    let fitted: Vec<(DMatrix<T>, DVector<T>, DVector<T>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let blocks: Vec<DVector<T>> = blocksets.iter().map(|bs| bs.blocks()[i].clone()).collect();
            fit_pca_position(&blocks, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bases = Vec::with_capacity(b);
    let mut eigenvalues = Vec::with_capacity(b);
    let mut means = Vec::with_capacity(b);
    for (u, l, m) in fitted {
        bases.push(u);
        eigenvalues.push(l);
        means.push(m);
    }
    Ok(PcaModel {
        bases,
        eigenvalues,
        means,
        block_side,
        grid: blocksets[0].grid(),
        source_dims: blocksets[0].source_dims(),
        p,
        n_images: images.len(),
    })
}

/// Per-block kernel PCA: scaled eigenvector coordinates of the processed
/// Gram matrix, plus the statistics for out-of-sample kernel vectors.
#[derive(Debug, Clone)]
pub struct KernelPcaModel<T> {
    /// One `n×p` matrix per block position: eigenvectors scaled by `1/√λ`.
    pub alphas: Vec<DMatrix<T>>,
    /// Top `p` eigenvalues per block position, nonincreasing.
    pub eigenvalues: Vec<DVector<T>>,
    /// Out-of-sample statistics per block position.
    pub stats: Vec<KernelBlockStats<T>>,
    pub kernel: Kernel<T>,
    pub block_side: usize,
    pub grid: (usize, usize),
    pub source_dims: (usize, usize),
    pub p: usize,
    pub n_images: usize,
}

impl<T: Real> KernelPcaModel<T> {
    pub fn q(&self) -> usize {
        self.block_side * self.block_side
    }

    pub fn b(&self) -> usize {
        self.alphas.len()
    }

    /// Projects every block through its out-of-sample kernel vector:
    /// `αᵀ k_c`.
    pub fn project(&self, bs: &BlockSet<T>) -> Result<Vec<DVector<T>>> {
        if bs.len() != self.b() || bs.block_len() != self.q() {
            return Err(Error::Shape(format!(
                "block set ({} blocks of length {}) does not match model ({} of {})",
                bs.len(),
                bs.block_len(),
                self.b(),
                self.q()
            )));
        }
        Ok((0..bs.len())
            .map(|i| {
                let raw = bs.raw_block(i);
                let (k_c, _) = self.stats[i].oos_vector(&self.kernel, &raw);
                self.alphas[i].tr_mul(&k_c)
            })
            .collect())
    }
}

/// Kernel PCA components from an already processed (normalized,
/// double-centered) Gram matrix: top-`p` eigenvectors scaled by `1/√λ`.
pub fn kernel_pca_from_gram<T: Real>(gram: &DMatrix<T>, p: usize) -> Result<(DMatrix<T>, DVector<T>)> {
    let n = gram.nrows();
    if p == 0 || p > n {
        return Err(Error::Dimension(format!("p = {p} must satisfy 1 <= p <= n = {n}")));
    }
    let (values, vectors) = sorted_symmetric_eigen(gram);
    if values.iter().any(|v| *v < T::of(-1e-6)) {
        return Err(Error::IndefiniteKernel {
            eigenvalue: values[values.len() - 1].as_f64(),
        });
    }
    let mut alphas = DMatrix::zeros(n, p);
    let mut top = DVector::zeros(p);
    for k in 0..p {
        let lambda = values[k];
        if lambda <= T::of(KPCA_EIG_FLOOR) {
            return Err(Error::RankDeficient {
                sigma_min: lambda.as_f64(),
            });
        }
        top[k] = lambda;
        let scale = T::one() / lambda.sqrt();
        for r in 0..n {
            alphas[(r, k)] = vectors[(r, k)] * scale;
        }
    }
    Ok((alphas, top))
}

/// Fits per-block kernel PCA over an image set, on the same normalized,
/// double-centered kernels as kernel ISCA.
pub fn fit_kernel_pca<T: Real>(
    images: &[GrayImage<T>],
    block_side: usize,
    p: usize,
    kernel: &Kernel<T>,
) -> Result<KernelPcaModel<T>> {
    let blocksets = partition_all(images, block_side)?;
    let n = images.len();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "kernel PCA requires at least 2 images (double-centering annihilates n = {n})"
        )));
    }
    if p > n {
        return Err(Error::Dimension(format!(
            "p = {p} exceeds the number of training images {n}"
        )));
    }
    let b = blocksets[0].len();
    let fitted: Vec<(DMatrix<T>, DVector<T>, KernelBlockStats<T>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let raw: Vec<DVector<T>> = blocksets.iter().map(|bs| bs.raw_block(i)).collect();
            let (stats, gram) = KernelBlockStats::build(raw, kernel);
            let (alphas, values) = kernel_pca_from_gram(&gram, p)?;
            Ok((alphas, values, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut alphas = Vec::with_capacity(b);
    let mut eigenvalues = Vec::with_capacity(b);
    let mut stats = Vec::with_capacity(b);
    for (a, v, s) in fitted {
        alphas.push(a);
        eigenvalues.push(v);
        stats.push(s);
    }
    Ok(KernelPcaModel {
        alphas,
        eigenvalues,
        stats,
        kernel: *kernel,
        block_side,
        grid: blocksets[0].grid(),
        source_dims: blocksets[0].source_dims(),
        p,
        n_images: n,
    })
}

/// Training hyperparameters are not used by the closed-form baselines; this
/// snapshot type keeps the persistence manifest uniform across model kinds.
pub fn baseline_hyper<T: Real>(p: usize) -> TrainConfig<T> {
    TrainConfig {
        p,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::kernel::{double_center, kernel_matrix, normalize_kernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_data_gives_line_direction() {
        // Points on a 1-D line through the origin: first eigenvector is the
        // line, first eigenvalue the total scatter.
        let dir = DVector::from_vec(vec![0.6, 0.8, 0.0, 0.0]);
        let blocks: Vec<DVector<f64>> = [-2.0, -1.0, 1.0, 2.0]
            .iter()
            .map(|t| &dir * *t)
            .collect();
        let (u, l, mean) = fit_pca_position(&blocks, 1).unwrap();
        assert!(mean.norm() <= 1e-12);
        let cosine = u.column(0).dot(&dir).abs();
        assert!((cosine - 1.0).abs() <= 1e-12);
        assert!((l[0] - 10.0).abs() <= 1e-10);
    }

    #[test]
    fn isotropic_data_has_flat_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let n = 4000;
        let blocks: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                DVector::from_fn(3, |_, _| {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                })
            })
            .collect();
        let (_, l, _) = fit_pca_position(&blocks, 3).unwrap();
        let spread = (l[0] - l[2]) / l[0];
        assert!(spread < 0.15, "eigenvalue spread {spread} too large");
        assert!(l[0] >= l[1] && l[1] >= l[2]);
    }

    /// Brute-force covariance eigendecomposition through a separate path
    /// (power iteration with deflation) as an oracle.
    fn power_iteration_top(s: &DMatrix<f64>, iters: usize) -> (f64, DVector<f64>) {
        let mut v = DVector::from_element(s.nrows(), 1.0).normalize();
        for _ in 0..iters {
            v = (s * &v).normalize();
        }
        let lambda = v.dot(&(s * &v));
        (lambda, v)
    }

    #[test]
    fn matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let blocks: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let (u, l, mean) = fit_pca_position(&blocks, 2).unwrap();
        let mut scatter = DMatrix::<f64>::zeros(4, 4);
        for x in &blocks {
            let d = x - &mean;
            scatter += &d * d.transpose();
        }
        let (l0, v0) = power_iteration_top(&scatter, 10_000);
        assert!((l[0] - l0).abs() <= 1e-10 * l0.max(1.0));
        assert!((u.column(0).dot(&v0).abs() - 1.0).abs() <= 1e-8);
        // Eigen residual for every retained pair.
        for k in 0..2 {
            let uk = u.column(k).clone_owned();
            let resid = (&scatter * &uk - &uk * l[k]).norm();
            assert!(resid <= 1e-8 * uk.norm().max(1.0));
        }
    }

    #[test]
    fn reconstruction_error_nonincreasing_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let blocks: Vec<DVector<f64>> = (0..12)
            .map(|_| DVector::from_fn(6, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let mut prev = f64::INFINITY;
        for p in 1..=6 {
            let (u, _, mean) = fit_pca_position(&blocks, p).unwrap();
            let err: f64 = blocks
                .iter()
                .map(|x| {
                    let d = x - &mean;
                    (&d - &u * u.tr_mul(&d)).norm_squared()
                })
                .sum();
            assert!(err <= prev + 1e-10, "error rose at p = {p}");
            prev = err;
        }
    }

    #[test]
    fn fit_pca_over_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let images: Vec<GrayImage<f64>> = (0..6)
            .map(|_| GrayImage::from_fn(16, 16, |_, _| rng.random::<f64>()))
            .collect();
        let model = fit_pca(&images, 8, 3).unwrap();
        assert_eq!(model.b(), 4);
        assert!(model.orthonormality_residual() <= 1e-10);
        for l in &model.eigenvalues {
            for k in 1..l.len() {
                assert!(l[k - 1] >= l[k] - 1e-12);
            }
        }
        let bs = crate::image::partition(&images[0], 8).unwrap();
        let projections = model.project(&bs).unwrap();
        assert_eq!(projections.len(), 4);
        assert_eq!(projections[0].len(), 3);
    }

    #[test]
    fn kpca_identity_gram_has_unit_eigenvalues() {
        let gram = DMatrix::<f64>::identity(6, 6);
        let (_, values) = kernel_pca_from_gram(&gram, 3).unwrap();
        for v in values.iter() {
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn kpca_training_projection_is_scaled_eigenvector_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let blocks: Vec<DVector<f64>> = (0..7)
            .map(|_| DVector::from_fn(9, |_, _| rng.random::<f64>()))
            .collect();
        let (stats, gram) = KernelBlockStats::build(blocks, &Kernel::rbf_default(9));
        let (alphas, values) = kernel_pca_from_gram(&gram, 2).unwrap();
        let (_, vectors) = sorted_symmetric_eigen(&gram);
        for j in 0..7 {
            let (k_c, _) = stats.oos_vector(&Kernel::rbf_default(9), &stats.raw_blocks[j]);
            let proj = alphas.tr_mul(&k_c);
            for k in 0..2 {
                let expected = values[k].sqrt() * vectors[(j, k)];
                assert!(
                    (proj[k] - expected).abs() <= 1e-8,
                    "training projection {j},{k}: {} vs {}",
                    proj[k],
                    expected
                );
            }
        }
    }

    #[test]
    fn linear_kpca_matches_pca_distances_on_unit_norm_data() {
        // Classical equivalence: with unit-norm vectors the cosine
        // normalization is a no-op and linear-kernel PCA reproduces PCA
        // geometry up to an orthogonal transform. Compare pairwise distance
        // matrices of the projections.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 10;
        let blocks: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let v = DVector::from_fn(8, |_, _| rng.random::<f64>() - 0.5);
                let mean = v.mean();
                v.map(|x| x - mean).normalize()
            })
            .collect();
        let p = 3;
        let (u, _, mean) = fit_pca_position(&blocks, p).unwrap();
        let pca_proj: Vec<DVector<f64>> = blocks.iter().map(|x| u.tr_mul(&(x - &mean))).collect();

        let gram = double_center(&normalize_kernel(&kernel_matrix(&blocks, &Kernel::Linear)).unwrap());
        let (alphas, _) = kernel_pca_from_gram(&gram, p).unwrap();
        let kpca_proj: Vec<DVector<f64>> = (0..n)
            .map(|j| alphas.tr_mul(&gram.column(j).clone_owned()))
            .collect();

        for a in 0..n {
            for b in 0..n {
                let d1 = (&pca_proj[a] - &pca_proj[b]).norm();
                let d2 = (&kpca_proj[a] - &kpca_proj[b]).norm();
                assert!(
                    (d1 - d2).abs() <= 1e-6,
                    "pairwise distance mismatch at ({a},{b}): {d1} vs {d2}"
                );
            }
        }
    }

    #[test]
    fn fit_kernel_pca_over_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let base = GrayImage::from_fn(8, 8, |x, y| 0.4 + 0.1 * ((x + 2 * y) as f64).sin());
        let images: Vec<GrayImage<f64>> = (0..6)
            .map(|_| base.map(|v| v + 0.1 * (rng.random::<f64>() - 0.5)))
            .collect();
        let model = fit_kernel_pca(&images, 4, 2, &Kernel::rbf_default(16)).unwrap();
        assert_eq!(model.b(), 4);
        let bs = crate::image::partition(&images[0], 4).unwrap();
        let proj = model.project(&bs).unwrap();
        assert_eq!(proj.len(), 4);
        assert_eq!(proj[0].len(), 2);
    }

    #[test]
    fn fit_kernel_pca_rejects_degenerate() {
        let images: Vec<GrayImage<f64>> = vec![GrayImage::constant(8, 8, 0.5)];
        assert!(fit_kernel_pca(&images, 4, 2, &Kernel::Linear).is_err());
    }
}
