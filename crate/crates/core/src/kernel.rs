//! Kernelized subspace learning over per-block Gram matrices.
//!
//! Blocks enter the kernel *uncentered*: centering happens in feature space
//! by double-centering the Gram matrix, which is why these models can react
//! to luminance shifts that per-block centering erases. Per block position
//! the pipeline is: raw kernel → cosine normalization
//! `K(a,b)/√(K(a,a)K(b,b))` → double-centering `HKH` → factorization
//! `K = ΔᵀΔ` through a symmetric eigendecomposition. The factor turns the
//! constraint `ΘᵀKΘ = I` into plain orthonormality of `ΔΘ`, so the same
//! singular-value projection used for ISCA applies to the split variable
//! `W = ΔΘ`.
//!
//! Reconstruction is not available here: `ΘΘᵀk` lives in coefficient space
//! `R^n`, not block space `R^q`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{BlockSet, GrayImage};
use crate::isca::{max_identity_deviation, partition_all, prox_orthonormal, seeded_gaussian, TrainConfig};
use crate::scalar::Real;
use crate::ssim::SsimConstants;

/// Eigenvalues below this are treated as zero when factoring a kernel.
const EIG_CLAMP: f64 = 1e-10;
/// Eigenvalues below this negative threshold mean the kernel is invalid.
const EIG_INDEFINITE: f64 = -1e-6;

/// Kernel function choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel<T> {
    /// `κ(a, b) = aᵀb`
    Linear,
    /// `κ(a, b) = exp(−γ‖a − b‖²)`
    Rbf { gamma: T },
    /// `κ(a, b) = tanh(s·aᵀb + o)`
    Sigmoid { scale: T, offset: T },
}

impl<T: Real> Kernel<T> {
    /// RBF kernel with the default bandwidth `γ = 1/q`.
    pub fn rbf_default(q: usize) -> Self {
        Kernel::Rbf {
            gamma: T::one() / T::of(q as f64),
        }
    }

    /// Sigmoid kernel with the default `scale = 1/q`, `offset = 0`.
    pub fn sigmoid_default(q: usize) -> Self {
        Kernel::Sigmoid {
            scale: T::one() / T::of(q as f64),
            offset: T::zero(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf { .. } => "rbf",
            Kernel::Sigmoid { .. } => "sigmoid",
        }
    }

    /// Evaluates the kernel on two equal-length vectors.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => {
                let mut d2 = T::zero();
                for (x, y) in a.iter().zip(b) {
                    let d = *x - *y;
                    d2 += d * d;
                }
                (-*gamma * d2).exp()
            }
            Kernel::Sigmoid { scale, offset } => (*scale * dot(a, b) + *offset).tanh(),
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Gram matrix of a stack of blocks under the chosen kernel. Symmetric by
/// construction (the upper triangle is mirrored).
pub fn kernel_matrix<T: Real>(blocks: &[DVector<T>], kernel: &Kernel<T>) -> DMatrix<T> {
    let n = blocks.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = kernel.eval(blocks[a].as_slice(), blocks[b].as_slice());
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// Cosine normalization `K'(a,b) = K(a,b) / (√K(a,a)·√K(b,b))`.
///
/// Fails with `ZeroDiagonal` on any non-positive diagonal entry, which under
/// the linear kernel signals an all-zero block.
pub fn normalize_kernel<T: Real>(k: &DMatrix<T>) -> Result<DMatrix<T>> {
    if let Some(index) = (0..k.nrows()).find(|i| k[(*i, *i)] <= T::zero()) {
        return Err(Error::ZeroDiagonal { index });
    }
    Ok(normalize_with_sqrt_diag(k, &sqrt_diag(k)))
}

/// Like [`normalize_kernel`] but rows and columns of zero-norm blocks are
/// replaced by zero instead of failing; returns the affected indices.
/// Constant blocks carry no structure, so dropping them keeps the rest of
/// the kernel usable.
pub fn normalize_kernel_lenient<T: Real>(k: &DMatrix<T>) -> (DMatrix<T>, Vec<usize>) {
    let sd = sqrt_diag(k);
    let zeroed: Vec<usize> = (0..k.nrows()).filter(|i| sd[*i] <= T::zero()).collect();
    if !zeroed.is_empty() {
        log::warn!(
            "kernel normalization zeroed {} degenerate row(s)/column(s)",
            zeroed.len()
        );
    }
    (normalize_with_sqrt_diag(k, &sd), zeroed)
}

fn sqrt_diag<T: Real>(k: &DMatrix<T>) -> DVector<T> {
    DVector::from_fn(k.nrows(), |i, _| {
        let d = k[(i, i)];
        if d > T::zero() {
            d.sqrt()
        } else {
            T::zero()
        }
    })
}

fn normalize_with_sqrt_diag<T: Real>(k: &DMatrix<T>, sd: &DVector<T>) -> DMatrix<T> {
    let n = k.nrows();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = if sd[a] > T::zero() && sd[b] > T::zero() {
                k[(a, b)] / (sd[a] * sd[b])
            } else {
                T::zero()
            };
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Double-centering `K'' = H K' H` with `H = I − (1/n)𝟙𝟙ᵀ`, computed through
/// row means so every row and column of the result sums to zero.
pub fn double_center<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let n = k.nrows();
    let nt = T::of(n as f64);
    let row_means = DVector::from_fn(n, |i, _| k.row(i).iter().fold(T::zero(), |a, v| a + *v) / nt);
    let total_mean = row_means.iter().fold(T::zero(), |a, v| a + *v) / nt;
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = ((k[(a, b)] - row_means[a]) - row_means[b]) + total_mean;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Factors a symmetric PSD kernel as `K = ΔᵀΔ` with `Δ = Υ^{1/2}Ψᵀ` from the
/// eigendecomposition `K = ΨΥΨᵀ`.
///
/// Eigenvalues below `1e-10` are clamped to zero before the square root;
/// anything below `−1e-6` fails with `IndefiniteKernel` (a sigmoid kernel
/// with bad parameters can produce this).
pub fn delta_factor<T: Real>(k: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = k.clone().symmetric_eigen();
    let mut lambda = eig.eigenvalues;
    for v in lambda.iter_mut() {
        if *v < T::of(EIG_INDEFINITE) {
            return Err(Error::IndefiniteKernel {
                eigenvalue: v.as_f64(),
            });
        }
        *v = if *v < T::of(EIG_CLAMP) { T::zero() } else { *v };
    }
    let sqrt_lambda = DMatrix::from_diagonal(&lambda.map(|v| v.sqrt()));
    Ok(sqrt_lambda * eig.eigenvectors.transpose())
}

/// Kernel objective `f(Θ) = (k_self − ‖Θᵀk‖²) / (k_self + ‖Θᵀk‖² + c)`.
pub fn objective_f_kernel<T: Real>(
    theta: &DMatrix<T>,
    kvec: &DVector<T>,
    k_self: T,
    consts: &SsimConstants<T>,
) -> Result<T> {
    check_kernel_shapes(theta, kvec)?;
    let t = theta.tr_mul(kvec).norm_squared();
    Ok((k_self - t) / (k_self + t + consts.c))
}

/// Gradient of [`objective_f_kernel`]:
/// `G = −2(1 + f) / (k_self + kᵀΘΘᵀk + c) · k kᵀ Θ`.
pub fn gradient_f_kernel<T: Real>(
    theta: &DMatrix<T>,
    kvec: &DVector<T>,
    k_self: T,
    consts: &SsimConstants<T>,
) -> Result<DMatrix<T>> {
    check_kernel_shapes(theta, kvec)?;
    let s = theta.tr_mul(kvec);
    let t = s.norm_squared();
    let beta = k_self + t + consts.c;
    let f = (k_self - t) / beta;
    let coeff = -T::of(2.0) * (T::one() + f) / beta;
    Ok(kvec * s.transpose() * coeff)
}

fn check_kernel_shapes<T: Real>(theta: &DMatrix<T>, kvec: &DVector<T>) -> Result<()> {
    if theta.nrows() != kvec.len() {
        return Err(Error::Shape(format!(
            "theta is {}x{} but kernel vector has length {}",
            theta.nrows(),
            theta.ncols(),
            kvec.len()
        )));
    }
    Ok(())
}

/// Per-block statistics required to build out-of-sample kernel vectors that
/// are normalized and centered consistently with the training kernel.
#[derive(Debug, Clone)]
pub struct KernelBlockStats<T> {
    /// Raw (uncentered) training blocks for this position, one per image.
    pub raw_blocks: Vec<DVector<T>>,
    /// Diagonal of the raw kernel.
    pub raw_diag: DVector<T>,
    /// Row/column means of the normalized kernel `K'`.
    pub col_means: DVector<T>,
    /// Grand mean of `K'`.
    pub total_mean: T,
}

impl<T: Real> KernelBlockStats<T> {
    /// Builds the statistics and the processed (normalized, double-centered)
    /// Gram matrix for one block position.
    pub fn build(raw_blocks: Vec<DVector<T>>, kernel: &Kernel<T>) -> (Self, DMatrix<T>) {
        let raw = kernel_matrix(&raw_blocks, kernel);
        let raw_diag = DVector::from_fn(raw.nrows(), |i, _| raw[(i, i)]);
        let (normalized, _zeroed) = normalize_kernel_lenient(&raw);
        let n = normalized.nrows();
        let nt = T::of(n as f64);
        let col_means = DVector::from_fn(n, |i, _| {
            normalized.row(i).iter().fold(T::zero(), |a, v| a + *v) / nt
        });
        let total_mean = col_means.iter().fold(T::zero(), |a, v| a + *v) / nt;
        let centered = double_center(&normalized);
        (
            Self {
                raw_blocks,
                raw_diag,
                col_means,
                total_mean,
            },
            centered,
        )
    }

    /// Recomputes the processed Gram matrix from the stored blocks.
    pub fn processed_gram(&self, kernel: &Kernel<T>) -> DMatrix<T> {
        let raw = kernel_matrix(&self.raw_blocks, kernel);
        let (normalized, _) = normalize_kernel_lenient(&raw);
        double_center(&normalized)
    }

    /// Normalized, centered kernel vector and self-kernel for a raw query
    /// block. Zero-norm queries follow the zero-diagonal policy: their
    /// normalized kernel vector is zero before centering.
    pub fn oos_vector(&self, kernel: &Kernel<T>, raw_query: &DVector<T>) -> (DVector<T>, T) {
        let n = self.raw_blocks.len();
        let self_raw = kernel.eval(raw_query.as_slice(), raw_query.as_slice());
        let (k_n, self_n) = if self_raw > T::zero() {
            let sq = self_raw.sqrt();
            let k_n = DVector::from_fn(n, |j, _| {
                let dj = self.raw_diag[j];
                if dj > T::zero() {
                    kernel.eval(self.raw_blocks[j].as_slice(), raw_query.as_slice())
                        / (dj.sqrt() * sq)
                } else {
                    T::zero()
                }
            });
            (k_n, self_raw / (sq * sq))
        } else {
            log::warn!("zero-norm query block; its normalized kernel vector is zero");
            (DVector::zeros(n), T::zero())
        };
        let nt = T::of(n as f64);
        let mu = k_n.iter().fold(T::zero(), |a, v| a + *v) / nt;
        let k_c = DVector::from_fn(n, |a, _| ((k_n[a] - self.col_means[a]) - mu) + self.total_mean);
        let k_self_c = ((self_n - mu) - mu) + self.total_mean;
        (k_c, k_self_c)
    }
}

/// ADMM variables for one block position in coefficient space.
#[derive(Debug, Clone)]
pub struct KernelBlockVars<T> {
    pub theta: DMatrix<T>,
    pub w: DMatrix<T>,
    pub j: DMatrix<T>,
}

/// ADMM state over all block positions.
#[derive(Debug, Clone)]
pub struct KernelAdmmState<T> {
    pub blocks: Vec<KernelBlockVars<T>>,
}

impl<T: Real> KernelAdmmState<T> {
    /// Seeded Gaussian coefficients orthogonalized in the kernel metric so
    /// that `ΘᵀKΘ = I` already holds at the start (the analog of ISCA's
    /// orthonormalized Gaussian init), with `W = prox(ΔΘ)` and `J = 0`.
    pub fn init(deltas: &[DMatrix<T>], p: usize, seed: u64) -> Result<Self> {
        deltas
            .iter()
            .enumerate()
            .map(|(i, delta)| {
                let n = delta.nrows();
                let gaussian: DMatrix<T> = seeded_gaussian(n, p, seed, i as u64);
                let m = {
                    let dt = delta * &gaussian;
                    dt.tr_mul(&dt)
                };
                let theta = metric_orthogonalize(&gaussian, &m)?;
                let w = prox_orthonormal(&(delta * &theta))?;
                Ok(KernelBlockVars {
                    j: DMatrix::zeros(n, p),
                    theta,
                    w,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(|blocks| Self { blocks })
    }
}

fn step_kernel_block<T: Real>(
    vars: &mut KernelBlockVars<T>,
    kvec: &DVector<T>,
    k_self: T,
    delta: &DMatrix<T>,
    cfg: &TrainConfig<T>,
    consts: &SsimConstants<T>,
) -> Result<()> {
    for _ in 0..cfg.gd_steps_per_admm {
        let g = gradient_f_kernel(&vars.theta, kvec, k_self, consts)?;
        let residual = delta * &vars.theta - &vars.w + &vars.j;
        vars.theta -= g * cfg.eta + delta.tr_mul(&residual) * (cfg.eta * cfg.rho);
    }
    let dt = delta * &vars.theta;
    let w_new = prox_orthonormal(&(&dt + &vars.j))?;
    vars.j += &dt - &w_new;
    vars.w = w_new;
    Ok(())
}

/// One ADMM iteration over all blocks of one image: gradient step on `Θ`,
/// singular-value projection of `ΔΘ + J`, then the dual update
/// `J ← J + ΔΘ − W`.
pub fn admm_step_kernel<T: Real>(
    state: &mut KernelAdmmState<T>,
    kvecs: &[DVector<T>],
    kselfs: &[T],
    deltas: &[DMatrix<T>],
    cfg: &TrainConfig<T>,
    consts: &SsimConstants<T>,
) -> Result<()> {
    if state.blocks.len() != kvecs.len() || kvecs.len() != deltas.len() || kselfs.len() != kvecs.len() {
        return Err(Error::Shape(format!(
            "state/kvec/delta counts disagree: {}/{}/{}",
            state.blocks.len(),
            kvecs.len(),
            deltas.len()
        )));
    }
    state
        .blocks
        .par_iter_mut()
        .zip(kvecs.par_iter().zip(kselfs.par_iter().zip(deltas.par_iter())))
        .try_for_each(|(vars, (kvec, (k_self, delta)))| {
            step_kernel_block(vars, kvec, *k_self, delta, cfg, consts)
        })
}

/// Trained kernel subspaces: coefficient matrices plus everything needed to
/// normalize and center out-of-sample kernel vectors.
#[derive(Debug, Clone)]
pub struct KernelIscaModel<T> {
    /// One `n×p` coefficient matrix per block position.
    pub thetas: Vec<DMatrix<T>>,
    /// One `n×n` kernel factor per block position (`ΔᵀΔ` = processed Gram).
    pub deltas: Vec<DMatrix<T>>,
    /// Out-of-sample statistics per block position.
    pub stats: Vec<KernelBlockStats<T>>,
    pub kernel: Kernel<T>,
    pub block_side: usize,
    pub grid: (usize, usize),
    pub source_dims: (usize, usize),
    pub p: usize,
    /// Number of training images.
    pub n_images: usize,
    pub hyper: TrainConfig<T>,
    /// Entry 0 is the pre-training mean objective, then one entry per epoch.
    pub convergence_log: Vec<T>,
}

impl<T: Real> KernelIscaModel<T> {
    pub fn q(&self) -> usize {
        self.block_side * self.block_side
    }

    pub fn b(&self) -> usize {
        self.thetas.len()
    }

    /// Largest deviation of `ΘᵀKΘ` from the identity over all blocks,
    /// with `K = ΔᵀΔ`.
    pub fn constraint_residual(&self) -> T {
        self.thetas
            .iter()
            .zip(&self.deltas)
            .map(|(theta, delta)| {
                let dt = delta * theta;
                max_identity_deviation(&dt.tr_mul(&dt))
            })
            .fold(T::zero(), |a, v| if v > a { v } else { a })
    }

    /// Projects every block of an image: `Θᵀ k`, with the kernel vector
    /// built from the raw (uncentered) block, normalized and centered
    /// against the training statistics.
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
                self.thetas[i].tr_mul(&k_c)
            })
            .collect())
    }
}

/// Trains kernel subspaces over an image set with the same epoch scheme as
/// plain ISCA: one ADMM iteration per image, epochs until the mean kernel
/// objective drops below `cfg.epsilon`. The stored coefficients are
/// symmetrically orthogonalized in the kernel metric
/// (`Θ ← Θ·(ΘᵀKΘ)^{−1/2}`) so the constraint holds exactly on the returned
/// model.
pub fn train_kernel<T: Real>(
    images: &[GrayImage<T>],
    block_side: usize,
    kernel: &Kernel<T>,
    cfg: &TrainConfig<T>,
) -> Result<KernelIscaModel<T>> {
    let blocksets = partition_all(images, block_side)?;
    let n = images.len();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "kernel training requires at least 2 images (double-centering annihilates n = {n})"
        )));
    }
    let q = blocksets[0].block_len();
    cfg.validate(q)?;
    if cfg.p > n {
        return Err(Error::Dimension(format!(
            "p = {} exceeds the number of training images {}",
            cfg.p, n
        )));
    }
    let b = blocksets[0].len();
    let consts = SsimConstants::new(q);

    struct BlockData<T> {
        stats: KernelBlockStats<T>,
        gram: DMatrix<T>,
        delta: DMatrix<T>,
    }

    let data: Vec<BlockData<T>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let raw: Vec<DVector<T>> = blocksets.iter().map(|bs| bs.raw_block(i)).collect();
            let (stats, gram) = KernelBlockStats::build(raw, kernel);
            let delta = delta_factor(&gram)?;
            Ok(BlockData { stats, gram, delta })
        })
        .collect::<Result<Vec<_>>>()?;

    let deltas: Vec<DMatrix<T>> = data.iter().map(|d| d.delta.clone()).collect();
    let mut state = KernelAdmmState::init(&deltas, cfg.p, cfg.seed)?;

    let mean_objective = |state: &KernelAdmmState<T>| -> Result<T> {
        let per_block: Vec<T> = state
            .blocks
            .par_iter()
            .zip(data.par_iter())
            .map(|(vars, d)| {
                let mut acc = T::zero();
                for j in 0..n {
                    let kvec = d.gram.column(j).clone_owned();
                    acc += objective_f_kernel(&vars.theta, &kvec, d.gram[(j, j)], &consts)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let total = per_block.iter().fold(T::zero(), |a, v| a + *v);
        Ok(total / T::of((b * n) as f64))
    };

    let mut log = vec![mean_objective(&state)?];
    for _epoch in 0..cfg.max_epochs {
        for j in 0..n {
            let kvecs: Vec<DVector<T>> = data.iter().map(|d| d.gram.column(j).clone_owned()).collect();
            let kselfs: Vec<T> = data.iter().map(|d| d.gram[(j, j)]).collect();
            admm_step_kernel(&mut state, &kvecs, &kselfs, &deltas, cfg, &consts)?;
        }
        let err = mean_objective(&state)?;
        log.push(err);
        if err < cfg.epsilon {
            break;
        }
    }

    let thetas: Vec<DMatrix<T>> = state
        .blocks
        .par_iter()
        .zip(data.par_iter())
        .map(|(vars, d)| {
            let m = vars.theta.tr_mul(&(&d.gram * &vars.theta));
            metric_orthogonalize(&vars.theta, &m)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(KernelIscaModel {
        thetas,
        deltas,
        stats: data.into_iter().map(|d| d.stats).collect(),
        kernel: *kernel,
        block_side,
        grid: blocksets[0].grid(),
        source_dims: blocksets[0].source_dims(),
        p: cfg.p,
        n_images: n,
        hyper: cfg.clone(),
        convergence_log: log,
    })
}

/// `Θ·M^{−1/2}` for `M = ΘᵀKΘ`: the symmetric correction that makes
/// `ΘᵀKΘ = I` hold exactly. Near convergence `M` is close to the identity,
/// so this is a small, well-conditioned adjustment.
fn metric_orthogonalize<T: Real>(theta: &DMatrix<T>, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = m.clone().symmetric_eigen();
    let mut inv_sqrt = eig.eigenvalues.clone();
    for v in inv_sqrt.iter_mut() {
        if *v <= T::of(1e-12) {
            return Err(Error::RankDeficient {
                sigma_min: v.as_f64(),
            });
        }
        *v = T::one() / v.sqrt();
    }
    let correction =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    Ok(theta * correction)
}
