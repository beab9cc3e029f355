//! Model persistence with integrity validation.
//!
//! A `.iscm` file is a `u32` little-endian manifest length, a JSON manifest,
//! and a raw payload of little-endian `f64` values (column-major per matrix,
//! in block order). The manifest carries the model kind, dimensions,
//! hyperparameters and a SHA-256 checksum of the payload. Loading verifies
//! the version, the checksum, and the structural invariants of the model
//! kind (orthonormality for ISCA/PCA bases, `ΔᵀΔ ≈ K` and the kernel-metric
//! constraint for kernel models). Convergence logs are reporting artifacts
//! and are not persisted.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::isca::{max_identity_deviation, IscaModel, TrainConfig};
use crate::kernel::{Kernel, KernelBlockStats, KernelIscaModel};
use crate::pca::{KernelPcaModel, PcaModel};
use crate::scalar::Real;

/// Supported file format version.
pub const FORMAT_VERSION: u32 = 1;

/// Any trained model kind.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Isca(IscaModel<T>),
    KernelIsca(KernelIscaModel<T>),
    Pca(PcaModel<T>),
    KernelPca(KernelPcaModel<T>),
}

impl<T: Real> Model<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Isca(_) => "isca",
            Model::KernelIsca(_) => "kernel_isca",
            Model::Pca(_) => "pca",
            Model::KernelPca(_) => "kernel_pca",
        }
    }

    pub fn block_side(&self) -> usize {
        match self {
            Model::Isca(m) => m.block_side,
            Model::KernelIsca(m) => m.block_side,
            Model::Pca(m) => m.block_side,
            Model::KernelPca(m) => m.block_side,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Model::Isca(m) => m.p,
            Model::KernelIsca(m) => m.p,
            Model::Pca(m) => m.p,
            Model::KernelPca(m) => m.p,
        }
    }

    pub fn b(&self) -> usize {
        match self {
            Model::Isca(m) => m.b(),
            Model::KernelIsca(m) => m.b(),
            Model::Pca(m) => m.b(),
            Model::KernelPca(m) => m.b(),
        }
    }

    /// Projects all blocks of an image through whichever model this is.
    pub fn project(&self, bs: &crate::image::BlockSet<T>) -> Result<Vec<DVector<T>>> {
        match self {
            Model::Isca(m) => m.project(bs),
            Model::KernelIsca(m) => m.project(bs),
            Model::Pca(m) => m.project(bs),
            Model::KernelPca(m) => m.project(bs),
        }
    }

    /// Reconstructs an image; only direct-space models support this.
    pub fn reconstruct(&self, bs: &crate::image::BlockSet<T>) -> Result<crate::image::GrayImage<T>> {
        match self {
            Model::Isca(m) => m.reconstruct(bs),
            Model::Pca(m) => m.reconstruct(bs),
            Model::KernelIsca(_) | Model::KernelPca(_) => Err(Error::Dimension(
                "kernel models cannot reconstruct: coefficients live in R^n, not block space".into(),
            )),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HyperJson {
    rho: f64,
    eta: f64,
    epsilon: f64,
    max_epochs: usize,
    gd_steps_per_admm: usize,
    seed: u64,
}

impl HyperJson {
    fn from_config<T: Real>(cfg: &TrainConfig<T>) -> Self {
        Self {
            rho: cfg.rho.as_f64(),
            eta: cfg.eta.as_f64(),
            epsilon: cfg.epsilon.as_f64(),
            max_epochs: cfg.max_epochs,
            gd_steps_per_admm: cfg.gd_steps_per_admm,
            seed: cfg.seed,
        }
    }

    fn to_config<T: Real>(&self, p: usize) -> TrainConfig<T> {
        TrainConfig {
            rho: T::of(self.rho),
            eta: T::of(self.eta),
            p,
            epsilon: T::of(self.epsilon),
            max_epochs: self.max_epochs,
            seed: self.seed,
            gd_steps_per_admm: self.gd_steps_per_admm,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelJson {
    kind: String,
    gamma: f64,
    scale: f64,
    offset: f64,
}

impl KernelJson {
    fn from_kernel<T: Real>(k: &Kernel<T>) -> Self {
        match k {
            Kernel::Linear => Self {
                kind: "linear".into(),
                gamma: 0.0,
                scale: 0.0,
                offset: 0.0,
            },
            Kernel::Rbf { gamma } => Self {
                kind: "rbf".into(),
                gamma: gamma.as_f64(),
                scale: 0.0,
                offset: 0.0,
            },
            Kernel::Sigmoid { scale, offset } => Self {
                kind: "sigmoid".into(),
                gamma: 0.0,
                scale: scale.as_f64(),
                offset: offset.as_f64(),
            },
        }
    }

    fn to_kernel<T: Real>(&self) -> Result<Kernel<T>> {
        match self.kind.as_str() {
            "linear" => Ok(Kernel::Linear),
            "rbf" => Ok(Kernel::Rbf {
                gamma: T::of(self.gamma),
            }),
            "sigmoid" => Ok(Kernel::Sigmoid {
                scale: T::of(self.scale),
                offset: T::of(self.offset),
            }),
            other => Err(Error::Format(format!("unknown kernel kind {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_kind: String,
    q: usize,
    p: usize,
    b: usize,
    n: usize,
    block_side: usize,
    grid: [usize; 2],
    source_dims: [usize; 2],
    hyper: HyperJson,
    kernel: Option<KernelJson>,
    checksum: String,
    payload_len: u64,
}

struct PayloadWriter {
    values: Vec<f64>,
}

impl PayloadWriter {
    fn new() -> Self {
        Self { values: Vec::new() }
    }

    fn matrix<T: Real>(&mut self, m: &DMatrix<T>) {
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                self.values.push(m[(r, c)].as_f64());
            }
        }
    }

    fn vector<T: Real>(&mut self, v: &DVector<T>) {
        for x in v.iter() {
            self.values.push(x.as_f64());
        }
    }

    fn scalar<T: Real>(&mut self, v: T) {
        self.values.push(v.as_f64());
    }

    fn into_bytes(self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }
}

struct PayloadReader {
    values: Vec<f64>,
    pos: usize,
}

impl PayloadReader {
    fn new(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("payload length is not a multiple of 8".into()));
        }
        Ok(Self {
            values: bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&[f64]> {
        if self.pos + n > self.values.len() {
            return Err(Error::Format("payload shorter than manifest dims imply".into()));
        }
        let slice = &self.values[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Result<DMatrix<T>> {
        let flat = self.take(rows * cols)?;
        Ok(DMatrix::from_fn(rows, cols, |r, c| T::of(flat[c * rows + r])))
    }

    fn vector<T: Real>(&mut self, n: usize) -> Result<DVector<T>> {
        let flat = self.take(n)?;
        Ok(DVector::from_fn(n, |i, _| T::of(flat[i])))
    }

    fn scalar<T: Real>(&mut self) -> Result<T> {
        Ok(T::of(self.take(1)?[0]))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.values.len() {
            return Err(Error::Format(format!(
                "payload has {} trailing values",
                self.values.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn kernel_stats_payload<T: Real>(w: &mut PayloadWriter, stats: &KernelBlockStats<T>) {
    for block in &stats.raw_blocks {
        w.vector(block);
    }
    w.vector(&stats.raw_diag);
    w.vector(&stats.col_means);
    w.scalar(stats.total_mean);
}

fn read_kernel_stats<T: Real>(r: &mut PayloadReader, q: usize, n: usize) -> Result<KernelBlockStats<T>> {
    let mut raw_blocks = Vec::with_capacity(n);
    for _ in 0..n {
        raw_blocks.push(r.vector(q)?);
    }
    Ok(KernelBlockStats {
        raw_blocks,
        raw_diag: r.vector(n)?,
        col_means: r.vector(n)?,
        total_mean: r.scalar()?,
    })
}

fn build_payload<T: Real>(model: &Model<T>) -> Vec<u8> {
    let mut w = PayloadWriter::new();
    match model {
        Model::Isca(m) => {
            for u in &m.bases {
                w.matrix(u);
            }
        }
        Model::Pca(m) => {
            for i in 0..m.b() {
                w.matrix(&m.bases[i]);
                w.vector(&m.eigenvalues[i]);
                w.vector(&m.means[i]);
            }
        }
        Model::KernelIsca(m) => {
            for i in 0..m.b() {
                w.matrix(&m.thetas[i]);
                w.matrix(&m.deltas[i]);
                kernel_stats_payload(&mut w, &m.stats[i]);
            }
        }
        Model::KernelPca(m) => {
            for i in 0..m.b() {
                w.matrix(&m.alphas[i]);
                w.vector(&m.eigenvalues[i]);
                kernel_stats_payload(&mut w, &m.stats[i]);
            }
        }
    }
    w.into_bytes()
}

fn build_manifest<T: Real>(model: &Model<T>, payload: &[u8]) -> Manifest {
    let (q, p, b, n, block_side, grid, source_dims, hyper, kernel) = match model {
        Model::Isca(m) => (
            m.q(),
            m.p,
            m.b(),
            m.n_images,
            m.block_side,
            m.grid,
            m.source_dims,
            HyperJson::from_config(&m.hyper),
            None,
        ),
        Model::KernelIsca(m) => (
            m.q(),
            m.p,
            m.b(),
            m.n_images,
            m.block_side,
            m.grid,
            m.source_dims,
            HyperJson::from_config(&m.hyper),
            Some(KernelJson::from_kernel(&m.kernel)),
        ),
        Model::Pca(m) => (
            m.q(),
            m.p,
            m.b(),
            m.n_images,
            m.block_side,
            m.grid,
            m.source_dims,
            HyperJson::from_config(&crate::pca::baseline_hyper::<T>(m.p)),
            None,
        ),
        Model::KernelPca(m) => (
            m.q(),
            m.p,
            m.b(),
            m.n_images,
            m.block_side,
            m.grid,
            m.source_dims,
            HyperJson::from_config(&crate::pca::baseline_hyper::<T>(m.p)),
            Some(KernelJson::from_kernel(&m.kernel)),
        ),
    };
    Manifest {
        format_version: FORMAT_VERSION,
        model_kind: model.kind_name().into(),
        q,
        p,
        b,
        n,
        block_side,
        grid: [grid.0, grid.1],
        source_dims: [source_dims.0, source_dims.1],
        hyper,
        kernel,
        checksum: sha256_hex(payload),
        payload_len: payload.len() as u64,
    }
}

/// Serializes a model to a writer.
pub fn save_to_writer<T: Real>(model: &Model<T>, out: &mut impl Write) -> Result<()> {
    let payload = build_payload(model);
    let manifest = build_manifest(model, &payload);
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    out.write_all(&(manifest_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&manifest_bytes)?;
    out.write_all(&payload)?;
    Ok(())
}

/// Writes a model file.
pub fn save_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_to_writer(model, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Reads a model from a reader, verifying checksum and invariants.
pub fn load_from_reader<T: Real>(input: &mut impl Read) -> Result<Model<T>> {
    let mut len_bytes = [0u8; 4];
    input.read_exact(&mut len_bytes)?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    input.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() as u64 != manifest.payload_len {
        return Err(Error::Format(format!(
            "payload length {} does not match manifest {}",
            payload.len(),
            manifest.payload_len
        )));
    }
    let computed = sha256_hex(&payload);
    if computed != manifest.checksum {
        return Err(Error::ChecksumMismatch {
            stored: manifest.checksum,
            computed,
        });
    }
    decode_model(&manifest, &payload)
}

/// Loads a model file.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    load_from_reader(&mut file)
}

fn decode_model<T: Real>(manifest: &Manifest, payload: &[u8]) -> Result<Model<T>> {
    let q = manifest.q;
    let p = manifest.p;
    let b = manifest.b;
    let n = manifest.n;
    if q == 0 || p == 0 || b == 0 || manifest.block_side * manifest.block_side != q {
        return Err(Error::Format("manifest dimensions are invalid".into()));
    }
    let grid = (manifest.grid[0], manifest.grid[1]);
    let source_dims = (manifest.source_dims[0], manifest.source_dims[1]);
    let mut r = PayloadReader::new(payload)?;
    let model = match manifest.model_kind.as_str() {
        "isca" => {
            let mut bases = Vec::with_capacity(b);
            for _ in 0..b {
                bases.push(r.matrix::<T>(q, p)?);
            }
            r.finish()?;
            Model::Isca(IscaModel {
                bases,
                block_side: manifest.block_side,
                grid,
                source_dims,
                p,
                n_images: n,
                hyper: manifest.hyper.to_config(p),
                convergence_log: Vec::new(),
            })
        }
        "pca" => {
            let mut bases = Vec::with_capacity(b);
            let mut eigenvalues = Vec::with_capacity(b);
            let mut means = Vec::with_capacity(b);
            for _ in 0..b {
                bases.push(r.matrix::<T>(q, p)?);
                eigenvalues.push(r.vector::<T>(p)?);
                means.push(r.vector::<T>(q)?);
            }
            r.finish()?;
            Model::Pca(PcaModel {
                bases,
                eigenvalues,
                means,
                block_side: manifest.block_side,
                grid,
                source_dims,
                p,
                n_images: n,
            })
        }
        "kernel_isca" => {
            let kernel = manifest
                .kernel
                .as_ref()
                .ok_or_else(|| Error::Format("kernel model without kernel config".into()))?
                .to_kernel::<T>()?;
            let mut thetas = Vec::with_capacity(b);
            let mut deltas = Vec::with_capacity(b);
            let mut stats = Vec::with_capacity(b);
            for _ in 0..b {
                thetas.push(r.matrix::<T>(n, p)?);
                deltas.push(r.matrix::<T>(n, n)?);
                stats.push(read_kernel_stats::<T>(&mut r, q, n)?);
            }
            r.finish()?;
            Model::KernelIsca(KernelIscaModel {
                thetas,
                deltas,
                stats,
                kernel,
                block_side: manifest.block_side,
                grid,
                source_dims,
                p,
                n_images: n,
                hyper: manifest.hyper.to_config(p),
                convergence_log: Vec::new(),
            })
        }
        "kernel_pca" => {
            let kernel = manifest
                .kernel
                .as_ref()
                .ok_or_else(|| Error::Format("kernel model without kernel config".into()))?
                .to_kernel::<T>()?;
            let mut alphas = Vec::with_capacity(b);
            let mut eigenvalues = Vec::with_capacity(b);
            let mut stats = Vec::with_capacity(b);
            for _ in 0..b {
                alphas.push(r.matrix::<T>(n, p)?);
                eigenvalues.push(r.vector::<T>(p)?);
                stats.push(read_kernel_stats::<T>(&mut r, q, n)?);
            }
            r.finish()?;
            Model::KernelPca(KernelPcaModel {
                alphas,
                eigenvalues,
                stats,
                kernel,
                block_side: manifest.block_side,
                grid,
                source_dims,
                p,
                n_images: n,
            })
        }
        other => return Err(Error::Format(format!("unknown model kind {other:?}"))),
    };
    validate_model(&model)?;
    Ok(model)
}

/// Structural invariants checked on load.
fn validate_model<T: Real>(model: &Model<T>) -> Result<()> {
    match model {
        Model::Isca(m) => {
            let dev = m.orthonormality_residual();
            if dev > T::of(1e-6) {
                return Err(Error::InvariantViolation(format!(
                    "ISCA basis orthonormality: max deviation {:.3e} exceeds 1e-6",
                    dev.as_f64()
                )));
            }
        }
        Model::Pca(m) => {
            let dev = m.orthonormality_residual();
            if dev > T::of(1e-10) {
                return Err(Error::InvariantViolation(format!(
                    "PCA basis orthonormality: max deviation {:.3e} exceeds 1e-10",
                    dev.as_f64()
                )));
            }
        }
        Model::KernelIsca(m) => {
            for i in 0..m.b() {
                let gram = m.stats[i].processed_gram(&m.kernel);
                let rec = (m.deltas[i].tr_mul(&m.deltas[i]) - &gram).abs().max();
                if rec > T::of(1e-8) {
                    return Err(Error::InvariantViolation(format!(
                        "block {i}: ΔᵀΔ deviates from the processed kernel by {:.3e}",
                        rec.as_f64()
                    )));
                }
                let m_dev = max_identity_deviation(
                    &m.thetas[i].tr_mul(&(&gram * &m.thetas[i])),
                );
                if m_dev > T::of(1e-3) {
                    return Err(Error::InvariantViolation(format!(
                        "block {i}: ΘᵀKΘ deviates from identity by {:.3e}",
                        m_dev.as_f64()
                    )));
                }
            }
        }
        Model::KernelPca(m) => {
            for i in 0..m.b() {
                let gram = m.stats[i].processed_gram(&m.kernel);
                for k in 0..m.p {
                    let a = m.alphas[i].column(k).clone_owned();
                    let resid = (&gram * &a - &a * m.eigenvalues[i][k]).norm() / a.norm();
                    if resid > T::of(1e-6) {
                        return Err(Error::InvariantViolation(format!(
                            "block {i} component {k}: eigen residual {:.3e}",
                            resid.as_f64()
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
