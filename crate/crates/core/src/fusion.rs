//! Orthogonal fusion of pooled SSL embeddings with physics vectors.
//!
//! The batch matrix `X = [Z_ssl | Z_phys]` is centered, `X_cᵀ` is factored
//! with Householder QR, and rows are projected onto the span of the first
//! `k = min(B, dims)` columns of `Q`: `X_ortho = X_c Q_k Q_kᵀ`.
//!
//! Every column of `X_cᵀ` lies in the span of `Q_k` (R is upper
//! triangular), so on the fitting batch the projection is the identity:
//! `X_ortho = X_c` up to rounding. The fitted `(mu, Q_k)` pair is what
//! carries information forward: applied to unseen rows it removes the
//! training mean and, when `B < dims`, discards directions the training
//! batch never spanned.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_f32_le, read_u32_le};
use crate::qr::householder_qr;

pub const PHYSICS_DIM: usize = 6;
const MAGIC: &[u8; 4] = b"QRF1";

/// Per-segment SSL and physics rows for one batch.
#[derive(Debug, Clone)]
pub struct FusionBatch {
    pub z_ssl: Array2<f64>,
    pub z_phys: Array2<f64>,
}

impl FusionBatch {
    pub fn new(z_ssl: Array2<f64>, z_phys: Array2<f64>) -> Result<Self> {
        if z_ssl.nrows() != z_phys.nrows() {
            return Err(Error::shape(
                format!("{} physics rows", z_ssl.nrows()),
                z_phys.nrows(),
            ));
        }
        if z_phys.ncols() != PHYSICS_DIM {
            return Err(Error::shape(
                format!("{PHYSICS_DIM} physics columns"),
                z_phys.ncols(),
            ));
        }
        if z_ssl.nrows() == 0 {
            return Err(Error::invalid("batch", "must contain at least one row"));
        }
        if z_ssl.iter().chain(z_phys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fusion batch"));
        }
        Ok(Self { z_ssl, z_phys })
    }

    /// `[Z_ssl | Z_phys]`, B×(D_ssl + 6).
    pub fn combined(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.z_ssl.view(), self.z_phys.view()])
            .expect("row counts checked at construction")
    }
}

/// Subtract the column means. Returns the centered matrix and the means.
pub fn center(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let mu = x
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()));
    let xc = &x - &mu;
    (xc, mu)
}

/// First `min(B, dims)` columns of the orthogonal factor of `X_cᵀ`.
pub fn qr_basis(xc: ArrayView2<'_, f64>) -> Array2<f64> {
    householder_qr(xc.t()).q
}

/// Frozen `(mu, Q_k)` pair fitted on a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTransform {
    pub mu: Array1<f64>,
    pub q_k: Array2<f64>,
}

impl FusionTransform {
    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    pub fn k(&self) -> usize {
        self.q_k.ncols()
    }

    /// `(x − mu) Q_k Q_kᵀ` for one row.
    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dims() {
            return Err(Error::shape(self.dims(), x.len()));
        }
        let centered = &x - &self.mu;
        Ok(self.project(centered.view()))
    }

    pub fn apply_rows(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::shape(self.dims(), x.ncols()));
        }
        let centered = &x - &self.mu;
        Ok(centered.dot(&self.q_k).dot(&self.q_k.t()))
    }

    /// Orthogonal projection onto span(Q_k) without centering.
    pub fn project(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.q_k.dot(&v.dot(&self.q_k))
    }

    /// Round every stored value through f32, matching what `write` persists.
    pub fn quantized(&self) -> Self {
        Self {
            mu: self.mu.mapv(|v| f64::from(v as f32)),
            q_k: self.q_k.mapv(|v| f64::from(v as f32)),
        }
    }

    /// QRF1 layout: magic, u32 dims, u32 k, then mu and Q_k (row-major) as
    /// little-endian f32.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims() as u32).to_le_bytes())?;
        w.write_all(&(self.k() as u32).to_le_bytes())?;
        for v in self.mu.iter().chain(self.q_k.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Malformed {
            kind: "fusion transform",
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let dims = read_u32_le(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let k = read_u32_le(&mut r).map_err(|_| bad("truncated header"))? as usize;
        if k > dims {
            return Err(bad("k exceeds dims"));
        }
        let mu = read_f32_le(&mut r, dims).map_err(|_| bad("truncated mean"))?;
        let q = read_f32_le(&mut r, dims * k).map_err(|_| bad("truncated basis"))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            mu: Array1::from(mu),
            q_k: Array2::from_shape_vec((dims, k), q).expect("length checked"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(bytes.as_slice(), path)
    }
}

/// Output of fitting the fusion on a batch.
#[derive(Debug, Clone)]
pub struct FusedBatch {
    pub x_ortho: Array2<f64>,
    pub transform: FusionTransform,
}

pub fn fuse(batch: &FusionBatch) -> FusedBatch {
    fuse_matrix(batch.combined().view())
}

/// Fit and apply the fusion to an already concatenated B×dims matrix.
pub fn fuse_matrix(x: ArrayView2<'_, f64>) -> FusedBatch {
    let (xc, mu) = center(x);
    let q_k = qr_basis(xc.view());
    let x_ortho = xc.dot(&q_k).dot(&q_k.t());
    FusedBatch {
        x_ortho,
        transform: FusionTransform { mu, q_k },
    }
}

/// Per-column z-scoring fitted on the training rows. Applied before fusion
/// so that physics columns (dB, embedding units per second) and pooled SSL
/// columns share a scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            scale: vec![1.0; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dims() {
            return Err(Error::shape(self.dims(), x.ncols()));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::orthonormality_error;
    use ndarray::array;

    #[test]
    fn centering_two_points() {
        let x = array![[1.0, 3.0], [3.0, 5.0]];
        let (xc, mu) = center(x.view());
        assert_eq!(xc, array![[-1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(mu, array![2.0, 4.0]);
    }

    #[test]
    fn single_row_centers_to_zero() {
        let x = array![[1.5, -2.0, 7.0]];
        let (xc, _) = center(x.view());
        assert!(xc.iter().all(|&v| v == 0.0));
        let fused = fuse_matrix(x.view());
        assert!(fused.x_ortho.iter().all(|&v| v == 0.0));
        assert_eq!(fused.transform.k(), 1);
    }

    #[test]
    fn zero_batch_projects_to_zero() {
        let x = Array2::<f64>::from_elem((4, 8), 3.0);
        let fused = fuse_matrix(x.view());
        assert!(fused.x_ortho.iter().all(|&v| v == 0.0));
        assert!(orthonormality_error(fused.transform.q_k.view()) < 1e-12);
    }

    #[test]
    fn duplicate_rows_keep_orthonormal_basis() {
        let x = array![
            [1.0, 2.0, 0.0, 1.0],
            [1.0, 2.0, 0.0, 1.0],
            [0.0, 1.0, 5.0, 2.0]
        ];
        let fused = fuse_matrix(x.view());
        assert_eq!(fused.transform.k(), 3);
        assert!(orthonormality_error(fused.transform.q_k.view()) < 1e-12);
        let (xc, _) = center(x.view());
        let err = (&fused.x_ortho - &xc)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12);
    }

    #[test]
    fn apply_to_mean_is_zero_and_rejects_bad_dims() {
        let x = array![[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [2.0, 2.0, 0.0]];
        let t = fuse_matrix(x.view()).transform;
        let out = t.apply(t.mu.view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(matches!(
            t.apply(array![1.0, 2.0].view()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn batch_shape_checks() {
        assert!(FusionBatch::new(Array2::zeros((3, 4)), Array2::zeros((2, 6))).is_err());
        assert!(FusionBatch::new(Array2::zeros((3, 4)), Array2::zeros((3, 5))).is_err());
        let b = FusionBatch::new(Array2::zeros((3, 4)), Array2::ones((3, 6))).unwrap();
        assert_eq!(b.combined().dim(), (3, 10));
    }

    #[test]
    fn qrf1_round_trip() {
        let x = array![[1.0, 0.0, 2.0, 4.0], [0.0, 1.0, 1.0, -1.0]];
        let t = fuse_matrix(x.view()).transform.quantized();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"QRF1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 12 + 4 * (4 + 8));
        let back = FusionTransform::read(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, t);

        buf.push(0);
        assert!(FusionTransform::read(buf.as_slice(), Path::new("mem")).is_err());
        assert!(FusionTransform::read(&b"QRF2"[..], Path::new("mem")).is_err());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view());
        let z = s.apply(x.view()).unwrap();
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
