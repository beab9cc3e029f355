//! Per-block orthonormal bases minimizing SSIM reconstruction distance.
//!
//! Each block position gets its own subspace basis `U ∈ R^{q×p}` with
//! orthonormal columns, found by minimizing
//! `f(U) = xᵀ(I − UUᵀ)x / (xᵀ(I + UUᵀ)x + c)` over the training blocks at
//! that position. The orthonormality constraint is handled by ADMM: a single
//! gradient step on `U`, a projection of `U + J` onto the orthonormal set
//! (all singular values set to one), and the scaled dual update
//! `J ← J + U − V`. Training sweeps the images one at a time, one ADMM
//! iteration per image, for as many epochs as it takes the mean
//! reconstruction distance to drop below the configured threshold.
//!
//! The closed form above assumes nothing about `U`; the denominator is
//! evaluated as `‖x‖² + ‖Uᵀx‖² + c`, which makes the gradient below exact for
//! off-constraint `U` as well (the constrained and unconstrained forms agree
//! once `UᵀU = I`).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{partition, reassemble, BlockSet, GrayImage};
use crate::scalar::Real;
use crate::ssim::SsimConstants;

/// Hyperparameters for ADMM training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    /// ADMM penalty parameter `ρ > 0`.
    pub rho: T,
    /// Gradient step size `η > 0`.
    pub eta: T,
    /// Subspace dimension `p`, `1 ≤ p ≤ q`.
    pub p: usize,
    /// Convergence threshold on the mean SSIM reconstruction error.
    pub epsilon: T,
    /// Epoch cap.
    pub max_epochs: usize,
    /// Seed for basis initialization.
    pub seed: u64,
    /// Inner gradient-descent iterations per ADMM step. One suffices in
    /// practice because ADMM itself iterates.
    pub gd_steps_per_admm: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            rho: T::one(),
            eta: T::of(0.1),
            p: 4,
            epsilon: T::of(1e-3),
            max_epochs: 50,
            seed: 0,
            gd_steps_per_admm: 1,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    /// Validates the configuration against a block length `q`.
    pub fn validate(&self, q: usize) -> Result<()> {
        if self.rho <= T::zero() {
            return Err(Error::Dimension("rho must be positive".into()));
        }
        if self.eta <= T::zero() {
            return Err(Error::Dimension("eta must be positive".into()));
        }
        if self.p == 0 || self.p > q {
            return Err(Error::Dimension(format!(
                "p = {} must satisfy 1 <= p <= q = {}",
                self.p, q
            )));
        }
        if self.epsilon <= T::zero() {
            return Err(Error::Dimension("epsilon must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Dimension("max_epochs must be at least 1".into()));
        }
        if self.gd_steps_per_admm == 0 {
            return Err(Error::Dimension("gd_steps_per_admm must be at least 1".into()));
        }
        Ok(())
    }
}

/// ADMM variables for one block position: primal `U`, split variable `V`,
/// and scaled dual `J = (1/ρ)Λ`, all `q×p`.
#[derive(Debug, Clone)]
pub struct BlockVars<T> {
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
    pub j: DMatrix<T>,
}

/// Per-block ADMM state over all `b` block positions.
#[derive(Debug, Clone)]
pub struct AdmmState<T> {
    pub blocks: Vec<BlockVars<T>>,
}

impl<T: Real> AdmmState<T> {
    /// Initializes every block with `U = V =` orthonormalized seeded Gaussian
    /// and `J = 0`. Block `i` draws from stream `i` of the seeded generator,
    /// so per-block state is independent of `b` and of processing order.
    pub fn init(b: usize, q: usize, p: usize, seed: u64) -> Result<Self> {
        let blocks = (0..b)
            .map(|i| {
                let g = seeded_gaussian(q, p, seed, i as u64);
                let u = prox_orthonormal(&g)?;
                Ok(BlockVars {
                    v: u.clone(),
                    j: DMatrix::zeros(q, p),
                    u,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }
}

pub(crate) fn seeded_gaussian<T: Real>(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    DMatrix::from_fn(rows, cols, |_, _| {
        T::of(StandardNormal.sample(&mut rng))
    })
}

/// Trained per-block bases plus the hyperparameters that produced them.
#[derive(Debug, Clone)]
pub struct IscaModel<T> {
    /// One `q×p` orthonormal basis per block position, row-major block order.
    pub bases: Vec<DMatrix<T>>,
    /// Side length of the square blocks.
    pub block_side: usize,
    /// Block grid `(rows, cols)`.
    pub grid: (usize, usize),
    /// Source image dimensions `(width, height)`.
    pub source_dims: (usize, usize),
    /// Subspace dimension.
    pub p: usize,
    /// Number of training images.
    pub n_images: usize,
    /// Training hyperparameters.
    pub hyper: TrainConfig<T>,
    /// Entry 0 is the mean SSIM reconstruction error of the initial bases;
    /// each following entry is the error after one epoch.
    pub convergence_log: Vec<T>,
}

impl<T: Real> IscaModel<T> {
    /// Block vector length `q`.
    pub fn q(&self) -> usize {
        self.block_side * self.block_side
    }

    /// Number of block positions `b`.
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

    /// Projects every (already centered) block: `U_iᵀ x̆_i`.
    pub fn project(&self, bs: &BlockSet<T>) -> Result<Vec<DVector<T>>> {
        self.check_blockset(bs)?;
        Ok(self
            .bases
            .iter()
            .zip(bs.blocks())
            .map(|(u, x)| u.tr_mul(x))
            .collect())
    }

    /// Reconstructs the image from `U_i U_iᵀ x̆_i` plus the stored block
    /// means, clamped into `[0, 1]`.
    pub fn reconstruct(&self, bs: &BlockSet<T>) -> Result<GrayImage<T>> {
        self.check_blockset(bs)?;
        let rec: Vec<DVector<T>> = self
            .bases
            .iter()
            .zip(bs.blocks())
            .map(|(u, x)| u * u.tr_mul(x))
            .collect();
        Ok(reassemble(&bs.with_blocks(rec)?))
    }
}

pub(crate) fn max_identity_deviation<T: Real>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let target = if r == c { T::one() } else { T::zero() };
            let dev = (m[(r, c)] - target).abs();
            if dev > worst {
                worst = dev;
            }
        }
    }
    worst
}

fn check_shapes<T: Real>(u: &DMatrix<T>, x: &DVector<T>) -> Result<()> {
    if u.nrows() != x.len() {
        return Err(Error::Shape(format!(
            "basis is {}x{} but block has length {}",
            u.nrows(),
            u.ncols(),
            x.len()
        )));
    }
    Ok(())
}

/// SSIM reconstruction distance `f(U) = (‖x‖² − ‖Uᵀx‖²) / (‖x‖² + ‖Uᵀx‖² + c)`.
///
/// Evaluated as written for any `U`, orthonormal or not; for a zero block the
/// value is 0.
pub fn objective_f<T: Real>(
    u: &DMatrix<T>,
    x: &DVector<T>,
    consts: &SsimConstants<T>,
) -> Result<T> {
    check_shapes(u, x)?;
    let xx = x.norm_squared();
    let t = u.tr_mul(x).norm_squared();
    Ok((xx - t) / (xx + t + consts.c))
}

/// Gradient of [`objective_f`]:
/// `G = −2(1 + f) / (xᵀ(I + UUᵀ)x + c) · x xᵀ U`.
pub fn gradient_f<T: Real>(
    u: &DMatrix<T>,
    x: &DVector<T>,
    consts: &SsimConstants<T>,
) -> Result<DMatrix<T>> {
    check_shapes(u, x)?;
    let xx = x.norm_squared();
    let s = u.tr_mul(x);
    let t = s.norm_squared();
    let beta = xx + t + consts.c;
    let f = (xx - t) / beta;
    let coeff = -T::of(2.0) * (T::one() + f) / beta;
    // x xᵀ U = x (Uᵀx)ᵀ, a rank-one q×p matrix.
    Ok(x * s.transpose() * coeff)
}

/// Projects onto the set of matrices with orthonormal columns by setting all
/// singular values of `A = QΣΩᵀ` to one and returning `QΩᵀ`.
///
/// Fails with `RankDeficient` when the smallest singular value is at most
/// `1e-12`, which signals a degenerate block or dual state. Each left
/// singular vector is sign-normalized (largest-magnitude entry nonnegative,
/// with the matching right vector flipped) so the factors are deterministic
/// across platforms.
pub fn prox_orthonormal<T: Real>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let svd = a.clone().svd(true, true);
    let sigma_min = svd
        .singular_values
        .iter()
        .fold(None, |acc: Option<T>, v| match acc {
            Some(m) if m < *v => Some(m),
            _ => Some(*v),
        })
        .unwrap_or_else(T::zero);
    if sigma_min <= T::of(1e-12) {
        return Err(Error::RankDeficient {
            sigma_min: sigma_min.as_f64(),
        });
    }
    let mut q = svd.u.expect("svd requested u");
    let mut omega_t = svd.v_t.expect("svd requested v_t");
    for k in 0..q.ncols() {
        let mut pivot = T::zero();
        let mut pivot_abs = T::zero();
        for r in 0..q.nrows() {
            let v = q[(r, k)];
            if v.abs() > pivot_abs {
                pivot_abs = v.abs();
                pivot = v;
            }
        }
        if pivot < T::zero() {
            for r in 0..q.nrows() {
                q[(r, k)] = -q[(r, k)];
            }
            for c in 0..omega_t.ncols() {
                omega_t[(k, c)] = -omega_t[(k, c)];
            }
        }
    }
    Ok(q * omega_t)
}

fn step_block<T: Real>(
    vars: &mut BlockVars<T>,
    x: &DVector<T>,
    cfg: &TrainConfig<T>,
    consts: &SsimConstants<T>,
) -> Result<()> {
    // U-update: gradient step(s) on f(U) + (ρ/2)‖U − V + J‖² with V, J fixed.
    for _ in 0..cfg.gd_steps_per_admm {
        let g = gradient_f(&vars.u, x, consts)?;
        let penalty = (&vars.u - &vars.v + &vars.j) * (cfg.eta * cfg.rho);
        vars.u -= g * cfg.eta + penalty;
    }
    // V-update: projection of U + J onto the orthonormal set.
    let v_new = prox_orthonormal(&(&vars.u + &vars.j))?;
    // Dual update with the fresh U and V.
    vars.j += &vars.u - &v_new;
    vars.v = v_new;
    Ok(())
}

/// One ADMM iteration over all blocks of one image, in the fixed order
/// U-update (old V, J) → V-update (new U, old J) → dual update (new U, V).
///
/// Blocks never interact, so they are processed in parallel.
pub fn admm_step<T: Real>(
    state: &mut AdmmState<T>,
    blocks: &BlockSet<T>,
    cfg: &TrainConfig<T>,
    consts: &SsimConstants<T>,
) -> Result<()> {
    if state.blocks.len() != blocks.len() {
        return Err(Error::Shape(format!(
            "state has {} blocks, image has {}",
            state.blocks.len(),
            blocks.len()
        )));
    }
    state
        .blocks
        .par_iter_mut()
        .zip(blocks.blocks().par_iter())
        .try_for_each(|(vars, x)| step_block(vars, x, cfg, consts))
}

/// Mean SSIM reconstruction error of the state's `U` variables over all
/// blocks of all images. The reduction order is fixed (blocks, then images)
/// regardless of thread count.
fn mean_error<T: Real>(
    bases: &[DMatrix<T>],
    blocksets: &[BlockSet<T>],
    consts: &SsimConstants<T>,
) -> Result<T> {
    let per_block: Vec<T> = bases
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut acc = T::zero();
            for bs in blocksets {
                acc += objective_f(u, &bs.blocks()[i], consts)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_block.iter().fold(T::zero(), |a, v| a + *v);
    Ok(total / T::of((bases.len() * blocksets.len()) as f64))
}

/// Partitions the images and checks that they share dimensions.
pub(crate) fn partition_all<T: Real>(
    images: &[GrayImage<T>],
    block_side: usize,
) -> Result<Vec<BlockSet<T>>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = (images[0].width(), images[0].height());
    if let Some(bad) = images
        .iter()
        .find(|i| (i.width(), i.height()) != dims)
    {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{}, found {}x{}",
            dims.0,
            dims.1,
            bad.width(),
            bad.height()
        )));
    }
    images.iter().map(|img| partition(img, block_side)).collect()
}

/// Learns per-block bases over an image set.
///
/// Every epoch sweeps the images in order, applying exactly one ADMM
/// iteration per image, and stops once the mean SSIM reconstruction error
/// drops below `cfg.epsilon` or the epoch cap is reached. The stored bases
/// are the final `U` variables passed once more through the orthonormal
/// projection, so the returned model satisfies `U_iᵀU_i = I` even if ADMM
/// stopped before primal/dual agreement.
pub fn train<T: Real>(
    images: &[GrayImage<T>],
    block_side: usize,
    cfg: &TrainConfig<T>,
) -> Result<IscaModel<T>> {
    let blocksets = partition_all(images, block_side)?;
    let q = blocksets[0].block_len();
    cfg.validate(q)?;
    let b = blocksets[0].len();
    let consts = SsimConstants::new(q);

    let mut state = AdmmState::init(b, q, cfg.p, cfg.seed)?;
    let init_bases: Vec<DMatrix<T>> = state.blocks.iter().map(|v| v.u.clone()).collect();
    let mut log = vec![mean_error(&init_bases, &blocksets, &consts)?];

    for _epoch in 0..cfg.max_epochs {
        for bs in &blocksets {
            admm_step(&mut state, bs, cfg, &consts)?;
        }
        let bases: Vec<DMatrix<T>> = state.blocks.iter().map(|v| v.u.clone()).collect();
        let err = mean_error(&bases, &blocksets, &consts)?;
        log.push(err);
        if err < cfg.epsilon {
            break;
        }
    }

    let bases = state
        .blocks
        .par_iter()
        .map(|vars| prox_orthonormal(&vars.u))
        .collect::<Result<Vec<_>>>()?;

    Ok(IscaModel {
        bases,
        block_side,
        grid: blocksets[0].grid(),
        source_dims: blocksets[0].source_dims(),
        p: cfg.p,
        n_images: images.len(),
        hyper: cfg.clone(),
        convergence_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::partition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn consts(q: usize) -> SsimConstants<f64> {
        SsimConstants::new(q)
    }

    fn random_centered(rng: &mut ChaCha8Rng, q: usize) -> DVector<f64> {
        let v = DVector::from_fn(q, |_, _| rng.random::<f64>() - 0.5);
        let mean = v.mean();
        v.map(|x| x - mean)
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, q: usize, p: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(q, p, |_, _| rng.random::<f64>() - 0.5);
        prox_orthonormal(&g).unwrap()
    }

    /// Orthonormal basis whose columns are zero-mean, so projections of
    /// centered blocks stay centered.
    fn random_orthonormal_zero_mean(rng: &mut ChaCha8Rng, q: usize, p: usize) -> DMatrix<f64> {
        let mut g = DMatrix::from_fn(q, p, |_, _| rng.random::<f64>() - 0.5);
        for mut col in g.column_iter_mut() {
            let mean = col.mean();
            col.iter_mut().for_each(|v| *v -= mean);
        }
        prox_orthonormal(&g).unwrap()
    }

    #[test]
    fn objective_zero_when_x_in_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = random_orthonormal(&mut rng, 8, 3);
        let coeffs = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
        let x = &u * coeffs;
        let f = objective_f(&u, &x, &consts(8)).unwrap();
        assert!(f.abs() <= 1e-12);
    }

    #[test]
    fn objective_orthogonal_case() {
        // Uᵀx = 0 leaves ‖x‖² / (‖x‖² + c).
        let u = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let x = DVector::from_vec(vec![0.0, 1.0, -1.0, 0.0]);
        let c = consts(4);
        let f = objective_f(&u, &x, &c).unwrap();
        let expected = 2.0 / (2.0 + c.c);
        assert!((f - expected).abs() <= 1e-12);
    }

    #[test]
    fn objective_matches_ssim_distance_for_orthonormal_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = consts(16);
        for _ in 0..100 {
            let u = random_orthonormal_zero_mean(&mut rng, 16, 4);
            let x = random_centered(&mut rng, 16);
            let f = objective_f(&u, &x, &c).unwrap();
            let rec = &u * u.tr_mul(&x);
            let d = crate::ssim::ssim_distance(&x, &rec, &c).unwrap();
            assert!((f - d).abs() <= 1e-12, "f = {f}, distance = {d}");
        }
    }

    #[test]
    fn objective_range_for_orthonormal_u() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = consts(12);
        for _ in 0..100 {
            let u = random_orthonormal(&mut rng, 12, 3);
            let x = random_centered(&mut rng, 12);
            let f = objective_f(&u, &x, &c).unwrap();
            let upper = x.norm_squared() / (x.norm_squared() + c.c);
            assert!(f >= -1e-12 && f <= upper + 1e-12);
        }
    }

    /// Central finite differences of the objective, entry by entry.
    fn fd_gradient(u: &DMatrix<f64>, x: &DVector<f64>, c: &SsimConstants<f64>, h: f64) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(u.nrows(), u.ncols());
        for r in 0..u.nrows() {
            for col in 0..u.ncols() {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[(r, col)] += h;
                dn[(r, col)] -= h;
                let fp = objective_f(&up, x, c).unwrap();
                let fm = objective_f(&dn, x, c).unwrap();
                g[(r, col)] = (fp - fm) / (2.0 * h);
            }
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = consts(8);
        for _ in 0..100 {
            let u = DMatrix::from_fn(8, 2, |_, _| rng.random::<f64>() - 0.5);
            let x = random_centered(&mut rng, 8);
            let g = gradient_f(&u, &x, &c).unwrap();
            let fd = fd_gradient(&u, &x, &c, 1e-6);
            let rel = (&g - &fd).norm() / fd.norm();
            assert!(rel <= 1e-5, "norm-wise rel error {rel}");
            for r in 0..8 {
                for col in 0..2 {
                    let a = g[(r, col)];
                    let b = fd[(r, col)];
                    // The absolute floor covers central-difference roundoff
                    // (~eps/h) on near-zero entries.
                    assert!(
                        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) + 1e-9,
                        "entry ({r},{col}): analytic {a}, fd {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_zero_when_projection_zero() {
        let u = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let x = DVector::from_vec(vec![0.0, 1.0, -1.0, 0.0]);
        let g = gradient_f(&u, &x, &consts(4)).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-15));
    }

    #[test]
    fn gradient_in_span_case() {
        // f = 0, so G = −2/(2‖x‖² + c)·x xᵀ U.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = consts(8);
        let u = random_orthonormal(&mut rng, 8, 2);
        let coeffs = DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5);
        let x = &u * coeffs;
        let g = gradient_f(&u, &x, &c).unwrap();
        let expected = &x * (x.transpose() * &u) * (-2.0 / (2.0 * x.norm_squared() + c.c));
        assert!((g - expected).abs().max() <= 1e-12);
    }

    #[test]
    fn prox_identity_on_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_orthonormal(&mut rng, 6, 3);
        let again = prox_orthonormal(&q).unwrap();
        assert!((&q - &again).abs().max() <= 1e-10);
    }

    #[test]
    fn prox_single_column() {
        let a = DMatrix::<f64>::from_column_slice(2, 1, &[3.0, 4.0]);
        let p = prox_orthonormal(&a).unwrap();
        assert!((p[(0, 0)] - 0.6f64).abs() <= 1e-12);
        assert!((p[(1, 0)] - 0.8f64).abs() <= 1e-12);
    }

    #[test]
    fn prox_removes_uniform_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = random_orthonormal(&mut rng, 7, 2);
        let p = prox_orthonormal(&(q.clone() * 3.25)).unwrap();
        assert!((&q - &p).abs().max() <= 1e-10);
    }

    #[test]
    fn prox_output_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = DMatrix::from_fn(9, 3, |_, _| rng.random::<f64>() - 0.5);
            let p = prox_orthonormal(&a).unwrap();
            assert!(max_identity_deviation(&p.tr_mul(&p)) <= 1e-10);
            let sv = p.svd(false, false).singular_values;
            assert!(sv.iter().all(|s| (s - 1.0).abs() <= 1e-9));
        }
    }

    #[test]
    fn prox_rank_deficient() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            prox_orthonormal(&a),
            Err(Error::RankDeficient { .. })
        ));
    }

    fn tiny_blockset(seed: u64) -> BlockSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = GrayImage::from_fn(8, 8, |_, _| rng.random::<f64>());
        partition(&img, 4).unwrap()
    }

    #[test]
    fn admm_fixed_point() {
        // Orthonormal U = V, J = 0, and blocks orthogonal to the span keep
        // the state unchanged.
        let bs = tiny_blockset(20);
        let q = bs.block_len();
        let cfg = TrainConfig::<f64> {
            p: 2,
            ..TrainConfig::default()
        };
        let c = consts(q);
        let mut state = AdmmState::init(bs.len(), q, 2, 3).unwrap();
        // Make every block orthogonal to its own basis span.
        let blocks: Vec<DVector<f64>> = state
            .blocks
            .iter()
            .zip(bs.blocks())
            .map(|(vars, x)| {
                let proj = &vars.u * vars.u.tr_mul(x);
                let y = x - proj;
                let mean = y.mean();
                y.map(|v| v - mean) * 0.0 // zero block: G = 0 as well
            })
            .collect();
        let bs0 = bs.with_blocks(blocks).unwrap();
        let before = state.clone();
        admm_step(&mut state, &bs0, &cfg, &c).unwrap();
        for (a, b) in before.blocks.iter().zip(&state.blocks) {
            assert!((&a.u - &b.u).abs().max() <= 1e-10);
            assert!((&a.v - &b.v).abs().max() <= 1e-10);
            assert!((&a.j - &b.j).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn admm_v_is_orthonormal_after_step() {
        let bs = tiny_blockset(21);
        let q = bs.block_len();
        let cfg = TrainConfig::<f64> {
            p: 3,
            ..TrainConfig::default()
        };
        let c = consts(q);
        let mut state = AdmmState::init(bs.len(), q, 3, 4).unwrap();
        for _ in 0..5 {
            admm_step(&mut state, &bs, &cfg, &c).unwrap();
            for vars in &state.blocks {
                assert!(max_identity_deviation(&vars.v.tr_mul(&vars.v)) <= 1e-10);
            }
        }
    }

    #[test]
    fn admm_dual_update_identity() {
        // J is updated exactly as J + (U − V); recomputing the same
        // expression must reproduce it bitwise.
        let bs = tiny_blockset(22);
        let q = bs.block_len();
        let cfg = TrainConfig::<f64> {
            p: 2,
            ..TrainConfig::default()
        };
        let c = consts(q);
        let mut state = AdmmState::init(bs.len(), q, 2, 5).unwrap();
        let before = state.clone();
        admm_step(&mut state, &bs, &cfg, &c).unwrap();
        for (old, new) in before.blocks.iter().zip(&state.blocks) {
            let mut expected = old.j.clone();
            expected += &new.u - &new.v;
            assert_eq!(expected, new.j);
        }
    }

    #[test]
    fn admm_objective_trend_on_single_block() {
        // On one 8x8 block with p = 1, the objective should trend downward
        // over the final stretch of a long run (ADMM is not strictly
        // monotone, so assert a non-positive linear-fit slope).
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let img = GrayImage::from_fn(8, 8, |_, _| rng.random::<f64>());
        let bs = partition(&img, 8).unwrap();
        let q = bs.block_len();
        let cfg = TrainConfig::<f64> {
            p: 1,
            ..TrainConfig::default()
        };
        let c = consts(q);
        let mut state = AdmmState::init(1, q, 1, 6).unwrap();
        let mut trace = Vec::new();
        for _ in 0..500 {
            admm_step(&mut state, &bs, &cfg, &c).unwrap();
            trace.push(objective_f(&state.blocks[0].u, &bs.blocks()[0], &c).unwrap());
        }
        let tail = &trace[450..];
        let n = tail.len() as f64;
        let mean_i = (n - 1.0) / 2.0;
        let mean_f = tail.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, f) in tail.iter().enumerate() {
            num += (i as f64 - mean_i) * (f - mean_f);
            den += (i as f64 - mean_i).powi(2);
        }
        let slope = num / den;
        assert!(slope <= 1e-9, "trend slope {slope} is positive");
        assert!(trace[499] < trace[0], "objective did not decrease");
    }

    #[test]
    fn blocks_do_not_interact() {
        let bs = tiny_blockset(24);
        let q = bs.block_len();
        let cfg = TrainConfig::<f64> {
            p: 2,
            ..TrainConfig::default()
        };
        let c = consts(q);
        let mut joint = AdmmState::init(bs.len(), q, 2, 7).unwrap();
        let mut isolated = joint.clone();
        admm_step(&mut joint, &bs, &cfg, &c).unwrap();
        for (i, vars) in isolated.blocks.iter_mut().enumerate() {
            step_block(vars, &bs.blocks()[i], &cfg, &c).unwrap();
        }
        for (a, b) in joint.blocks.iter().zip(&isolated.blocks) {
            assert_eq!(a.u, b.u);
            assert_eq!(a.v, b.v);
            assert_eq!(a.j, b.j);
        }
    }

    #[test]
    fn train_constant_image_terminates_immediately() {
        let img = GrayImage::constant(16, 16, 0.5);
        let cfg = TrainConfig::<f64> {
            p: 2,
            ..TrainConfig::default()
        };
        let model = train(&[img], 8, &cfg).unwrap();
        // All blocks are zero, so the error is 0 from the start and exactly
        // one epoch runs.
        assert_eq!(model.convergence_log.len(), 2);
        assert!(model.convergence_log[1].abs() <= 1e-15);
        assert!(model.orthonormality_residual() <= 1e-6);
    }

    #[test]
    fn train_desk_scale_error_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let base = GrayImage::from_fn(16, 16, |x, y| {
            0.5 + 0.3 * ((x as f64 * 0.8).sin() * (y as f64 * 0.6).cos())
        });
        let images: Vec<GrayImage<f64>> = (0..7)
            .map(|_| base.map(|v| v + 0.05 * (rng.random::<f64>() - 0.5)))
            .collect();
        let cfg = TrainConfig::<f64> {
            p: 2,
            max_epochs: 60,
            ..TrainConfig::default()
        };
        let model = train(&images, 8, &cfg).unwrap();
        let initial = model.convergence_log[0];
        let last = *model.convergence_log.last().unwrap();
        assert!(
            last <= 0.5 * initial,
            "error only went {initial} -> {last}"
        );
        assert!(model.orthonormality_residual() <= 1e-6);
    }

    #[test]
    fn train_rejects_empty_and_mismatched() {
        let cfg = TrainConfig::<f64>::default();
        assert!(matches!(
            train::<f64>(&[], 8, &cfg),
            Err(Error::EmptyDataset)
        ));
        let a: GrayImage<f64> = GrayImage::constant(16, 16, 0.4);
        let b: GrayImage<f64> = GrayImage::constant(24, 16, 0.4);
        assert!(matches!(
            train(&[a, b], 8, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn project_zero_block_is_zero() {
        let img = GrayImage::constant(16, 16, 0.3);
        let cfg = TrainConfig::<f64> {
            p: 2,
            ..TrainConfig::default()
        };
        let model = train(&[img.clone()], 8, &cfg).unwrap();
        let bs = partition(&img, 8).unwrap();
        for proj in model.project(&bs).unwrap() {
            assert!(proj.norm() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let c = 16;
        let u = random_orthonormal(&mut rng, c, 4);
        for _ in 0..100 {
            let x = random_centered(&mut rng, c);
            let proj = u.tr_mul(&x);
            assert!(proj.norm() <= x.norm() + 1e-9);
        }
    }

    #[test]
    fn projection_isometric_on_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let u = random_orthonormal(&mut rng, 10, 3);
        let coeffs = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
        let x = &u * coeffs;
        let proj = u.tr_mul(&x);
        assert!((proj.norm() - x.norm()).abs() <= 1e-12);
    }

    #[test]
    fn reconstruct_identity_when_p_equals_q() {
        // A full orthonormal basis reconstructs exactly.
        let img = GrayImage::from_fn(8, 8, |x, y| ((x * 5 + y * 3) % 8) as f64 / 8.0);
        let bs = partition(&img, 8).unwrap();
        let q = bs.block_len();
        let model = IscaModel {
            bases: vec![DMatrix::identity(q, q)],
            block_side: 8,
            grid: bs.grid(),
            source_dims: bs.source_dims(),
            p: q,
            n_images: 1,
            hyper: TrainConfig {
                p: q,
                ..TrainConfig::default()
            },
            convergence_log: vec![],
        };
        let rec = model.reconstruct(&bs).unwrap();
        for (a, b) in img.data().iter().zip(rec.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn reconstruct_constant_image_exact() {
        let img = GrayImage::constant(16, 16, 0.77);
        let cfg = TrainConfig::<f64> {
            p: 1,
            ..TrainConfig::default()
        };
        let model = train(&[img.clone()], 8, &cfg).unwrap();
        let rec = model.reconstruct(&partition(&img, 8).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(rec.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn trained_model_reconstructs_single_image_well() {
        // Mirrors the figure-style check: train to convergence on one image,
        // reconstruction should be structurally close to the original.
        let img = GrayImage::from_fn(16, 16, |x, y| {
            0.5 + 0.35 * ((x as f64 * 0.9).sin() + (y as f64 * 0.7).cos()) / 2.0
        });
        let cfg = TrainConfig::<f64> {
            p: 4,
            max_epochs: 300,
            epsilon: 1e-4,
            ..TrainConfig::default()
        };
        let model = train(&[img.clone()], 8, &cfg).unwrap();
        let rec = model.reconstruct(&partition(&img, 8).unwrap()).unwrap();
        let s = crate::ssim::mean_block_ssim(&img, &rec, 8).unwrap();
        assert!(s >= 0.8, "mean block SSIM {s} below 0.8");
    }
}
