//! Mahalanobis metric primitives.
//!
//! A metric is a symmetric positive-definite matrix `A` defining the squared
//! distance `h(w1, w2) = (w1 - w2)ᵀ A (w1 - w2)`. Two storage modes exist:
//! a full `d x d` matrix and a diagonal that keeps only `d` weights but
//! answers the same queries.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::{cholesky, CholeskyFactor};

/// Maximum tolerated `|A_ij - A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Pivot floor for the positive-definiteness check.
pub const PIVOT_FLOOR: f64 = 1e-12;
/// Negative quadratic forms down to this value are treated as round-off.
pub const NEGATIVE_CLAMP: f64 = 1e-9;
/// Matrices closer than this (max-norm) have zero divergence.
pub const KL_ZERO_TOL: f64 = 1e-10;

pub(crate) const METRIC_MAGIC: &[u8; 4] = b"SCDA";
pub(crate) const FORMAT_VERSION: u32 = 1;

/// A single occurrence embedding. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("embedding must have at least one dimension".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding coordinate {i} is {}",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricMode {
    Full,
    Diagonal,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Full => "full",
            MetricMode::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MetricMode::Full),
            "diagonal" | "diag" => Ok(MetricMode::Diagonal),
            other => Err(Error::Input(format!("unknown metric mode '{other}'"))),
        }
    }
}

/// Symmetric positive-definite matrix defining a squared Mahalanobis distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMatrix {
    dim: usize,
    mode: MetricMode,
    // Full: row-major d*d. Diagonal: the d diagonal entries.
    data: Vec<f64>,
}

/// Result of a positive-definiteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdReport {
    pub positive_definite: bool,
    /// Smallest Cholesky pivot; on failure, the pivot that failed.
    pub min_pivot: f64,
}

impl MahalanobisMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self {
            dim,
            mode: MetricMode::Full,
            data,
        }
    }

    /// Builds a full-mode metric, validating symmetry and positive definiteness.
    pub fn from_full(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("metric dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::Shape {
                expected: dim * dim,
                got: data.len(),
            });
        }
        let m = Self {
            dim,
            mode: MetricMode::Full,
            data,
        };
        let report = m.check_positive_definite()?;
        if !report.positive_definite {
            return Err(Error::NotPositiveDefinite {
                pivot: report.min_pivot,
            });
        }
        Ok(m)
    }

    /// Builds a diagonal-mode metric; every weight must be positive.
    pub fn from_diagonal(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Input("metric dimension must be positive".into()));
        }
        check_finite(&weights)?;
        if let Some(&w) = weights.iter().find(|&&w| !(w > PIVOT_FLOOR)) {
            return Err(Error::NotPositiveDefinite { pivot: w });
        }
        Ok(Self {
            dim: weights.len(),
            mode: MetricMode::Diagonal,
            data: weights,
        })
    }

    /// Full-mode constructor without the PD check, for callers that already
    /// hold a certificate (e.g. a PD-preserving update).
    pub(crate) fn from_full_unchecked(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        Self {
            dim,
            mode: MetricMode::Full,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> MetricMode {
        self.mode
    }

    /// Raw storage: `d*d` row-major values in full mode, `d` in diagonal mode.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.mode {
            MetricMode::Full => self.data[i * self.dim + j],
            MetricMode::Diagonal if i == j => self.data[i],
            MetricMode::Diagonal => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Row-major dense copy regardless of mode.
    pub fn to_dense(&self) -> Vec<f64> {
        match self.mode {
            MetricMode::Full => self.data.clone(),
            MetricMode::Diagonal => {
                let d = self.dim;
                let mut out = vec![0.0; d * d];
                for (i, &w) in self.data.iter().enumerate() {
                    out[i * d + i] = w;
                }
                out
            }
        }
    }

    /// Returns `c * A`. `c` must be positive.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Input(format!("scale factor must be positive, got {c}")));
        }
        Ok(Self {
            dim: self.dim,
            mode: self.mode,
            data: self.data.iter().map(|v| v * c).collect(),
        })
    }

    pub fn is_identity(&self) -> bool {
        (0..self.dim).all(|i| {
            (0..self.dim).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 })
        })
    }

    /// Largest asymmetry `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        if self.mode == MetricMode::Diagonal {
            return 0.0;
        }
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i]).abs());
            }
        }
        worst
    }

    /// Cholesky-based positive-definiteness check.
    ///
    /// Fails with a validation error when the matrix holds non-finite
    /// values or is asymmetric beyond [`SYMMETRY_TOL`].
    pub fn check_positive_definite(&self) -> Result<PdReport> {
        check_finite(&self.data)?;
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::Validation(format!(
                "matrix is asymmetric (max |A_ij - A_ji| = {asym:e})"
            )));
        }
        match self.mode {
            MetricMode::Diagonal => {
                let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
                Ok(PdReport {
                    positive_definite: min > PIVOT_FLOOR,
                    min_pivot: min,
                })
            }
            MetricMode::Full => Ok(match cholesky(&self.data, self.dim, PIVOT_FLOOR) {
                Ok(f) => PdReport {
                    positive_definite: true,
                    min_pivot: f.min_pivot,
                },
                Err(pivot) => PdReport {
                    positive_definite: false,
                    min_pivot: pivot,
                },
            }),
        }
    }

    /// Cholesky factor of the dense form; errors when not PD.
    pub(crate) fn factor(&self) -> Result<CholeskyFactor> {
        cholesky(&self.to_dense(), self.dim, PIVOT_FLOOR)
            .map_err(|pivot| Error::NotPositiveDefinite { pivot })
    }

    /// `zᵀ A z` for a difference vector `z`, without clamping.
    pub(crate) fn quadratic_form(&self, z: &[f64]) -> f64 {
        match self.mode {
            MetricMode::Diagonal => self.data.iter().zip(z).map(|(w, v)| w * v * v).sum(),
            MetricMode::Full => {
                let d = self.dim;
                let mut total = 0.0;
                for (i, &zi) in z.iter().enumerate() {
                    let row = &self.data[i * d..(i + 1) * d];
                    let s: f64 = row.iter().zip(z).map(|(a, v)| a * v).sum();
                    total += zi * s;
                }
                total
            }
        }
    }

    /// Squared distance between two raw vectors.
    pub fn distance(&self, w1: &[f64], w2: &[f64]) -> Result<f64> {
        if w1.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: w1.len(),
            });
        }
        if w2.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: w2.len(),
            });
        }
        check_finite(w1)?;
        check_finite(w2)?;
        let z: Vec<f64> = w1.iter().zip(w2).map(|(a, b)| a - b).collect();
        clamp_distance(self.quadratic_form(&z))
    }

    /// Post-hoc diagonal view: keeps the diagonal, drops every cross term.
    pub fn to_diagonal(&self) -> Result<Self> {
        Self::from_diagonal(self.diagonal())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mode = match self.mode {
            MetricMode::Full => 0u8,
            MetricMode::Diagonal => 1u8,
        };
        encode_matrix(METRIC_MAGIC, mode, &[self.dim as u32], &self.data)
    }

    /// Decodes an `SCDA` payload. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (mode, dims, values) = decode_matrix(bytes, METRIC_MAGIC, 1, origin)?;
        let dim = dims[0] as usize;
        if dim == 0 {
            return Err(Error::format(origin, "metric dimension is zero"));
        }
        let expected = match mode {
            0 => dim * dim,
            1 => dim,
            m => return Err(Error::format(origin, format!("unknown mode flag {m}"))),
        };
        if values.len() != expected {
            return Err(Error::format(
                origin,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        match mode {
            0 => Self::from_full(dim, values),
            _ => Self::from_diagonal(values),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Squared Mahalanobis distance `(w1 - w2)ᵀ A (w1 - w2)`.
pub fn mahalanobis_distance(a: &MahalanobisMatrix, w1: &Embedding, w2: &Embedding) -> Result<f64> {
    a.distance(w1.as_slice(), w2.as_slice())
}

/// See [`MahalanobisMatrix::check_positive_definite`].
pub fn check_positive_definite(a: &MahalanobisMatrix) -> Result<PdReport> {
    a.check_positive_definite()
}

/// Euclidean norm of each row of `A`.
pub fn row_importance(a: &MahalanobisMatrix) -> Vec<f64> {
    let d = a.dim();
    match a.mode() {
        MetricMode::Diagonal => a.raw().iter().map(|w| w.abs()).collect(),
        MetricMode::Full => (0..d)
            .map(|i| {
                a.raw()[i * d..(i + 1) * d]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    }
}

/// Two equal-mean Gaussians whose precision matrices are metrics.
#[derive(Debug, Clone)]
pub struct GaussianPair {
    pub reference: MahalanobisMatrix,
    pub target: MahalanobisMatrix,
    pub mean: Vec<f64>,
}

impl GaussianPair {
    pub fn new(reference: MahalanobisMatrix, target: MahalanobisMatrix, mean: Vec<f64>) -> Result<Self> {
        if target.dim() != reference.dim() {
            return Err(Error::Shape {
                expected: reference.dim(),
                got: target.dim(),
            });
        }
        if mean.len() != reference.dim() {
            return Err(Error::Shape {
                expected: reference.dim(),
                got: mean.len(),
            });
        }
        Ok(Self {
            reference,
            target,
            mean,
        })
    }

    /// Zero-mean pair.
    pub fn centered(reference: MahalanobisMatrix, target: MahalanobisMatrix) -> Result<Self> {
        let d = reference.dim();
        Self::new(reference, target, vec![0.0; d])
    }
}

/// `KL(N(μ, A0⁻¹) ‖ N(μ, A⁻¹)) = ½[tr(A A0⁻¹) − d − ln det(A A0⁻¹)]`.
///
/// The shared mean cancels. When the reference is the identity no inverse
/// or reference factorization is formed.
pub fn gaussian_kl(pair: &GaussianPair) -> Result<f64> {
    let a0 = &pair.reference;
    let a = &pair.target;
    if a0.dim() != a.dim() {
        return Err(Error::Shape {
            expected: a0.dim(),
            got: a.dim(),
        });
    }
    let d = a.dim();
    if a0.max_abs_diff(a) <= KL_ZERO_TOL {
        return Ok(0.0);
    }
    let fa = a.factor()?;
    let (trace, log_det_ratio) = if a0.is_identity() {
        let trace: f64 = (0..d).map(|i| a.get(i, i)).sum();
        (trace, fa.log_det())
    } else {
        let f0 = a0
            .factor()
            .map_err(|_| Error::Numeric("reference matrix is singular or not PD".into()))?;
        // tr(A0⁻¹ A) = ‖L0⁻¹ La‖_F² with A0 = L0 L0ᵀ, A = La Laᵀ.
        let mut trace = 0.0;
        let mut col = vec![0.0; d];
        for j in 0..d {
            for (i, c) in col.iter_mut().enumerate() {
                *c = fa.lower[i * d + j];
            }
            f0.forward_solve(&mut col);
            trace += col.iter().map(|v| v * v).sum::<f64>();
        }
        (trace, fa.log_det() - f0.log_det())
    };
    let kl = 0.5 * (trace - d as f64 - log_det_ratio);
    if kl < 0.0 {
        if kl >= -NEGATIVE_CLAMP {
            return Ok(0.0);
        }
        return Err(Error::Numeric(format!("negative divergence {kl:e}")));
    }
    Ok(kl)
}

impl MahalanobisMatrix {
    /// `max |A_ij - B_ij|` over equally sized matrices.
    fn max_abs_diff(&self, other: &Self) -> f64 {
        (0..self.dim)
            .flat_map(|i| (0..self.dim).map(move |j| (i, j)))
            .map(|(i, j)| (self.get(i, j) - other.get(i, j)).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn clamp_distance(q: f64) -> Result<f64> {
    if q >= 0.0 {
        Ok(q)
    } else if q >= -NEGATIVE_CLAMP {
        Ok(0.0)
    } else if q.is_nan() {
        Err(Error::NonFinite("distance evaluated to NaN".into()))
    } else {
        Err(Error::PdViolation(q))
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("value at index {i} is {}", values[i]))),
    }
}

/// `magic | version u32 | mode u8 | dims u32... | f64 values`, little-endian.
pub(crate) fn encode_matrix(magic: &[u8; 4], mode: u8, dims: &[u32], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * dims.len() + 8 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(mode);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_matrix(
    bytes: &[u8],
    magic: &[u8; 4],
    n_dims: usize,
    origin: &Path,
) -> Result<(u8, Vec<u32>, Vec<f64>)> {
    let header = 9 + 4 * n_dims;
    if bytes.len() < header {
        return Err(Error::format(origin, "truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            origin,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(origin, format!("unsupported version {version}")));
    }
    let mode = bytes[8];
    let dims: Vec<u32> = (0..n_dims)
        .map(|k| u32::from_le_bytes(bytes[9 + 4 * k..13 + 4 * k].try_into().unwrap()))
        .collect();
    let payload = &bytes[header..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::format(origin, "payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((mode, dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_squared_euclidean() {
        let a = MahalanobisMatrix::identity(2);
        assert_eq!(mahalanobis_distance(&a, &emb(&[1.0, 0.0]), &emb(&[0.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn zero_difference_is_zero() {
        let a = MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let w = emb(&[0.3, -7.0]);
        assert_eq!(mahalanobis_distance(&a, &w, &w).unwrap(), 0.0);
    }

    #[test]
    fn full_expansion() {
        let a = MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(a.distance(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 6.0);
    }

    #[test]
    fn diagonal_weighted_sum() {
        let a = MahalanobisMatrix::from_diagonal(vec![2.0, 3.0]).unwrap();
        assert_eq!(a.distance(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn distance_rejects_bad_shapes_and_values() {
        let a = MahalanobisMatrix::identity(2);
        assert!(matches!(a.distance(&[1.0], &[0.0, 0.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            a.distance(&[f64::NAN, 0.0], &[0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(Embedding::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn clamp_behaviour() {
        assert_eq!(clamp_distance(-5e-10).unwrap(), 0.0);
        assert!(matches!(clamp_distance(-1e-6), Err(Error::PdViolation(_))));
    }

    #[test]
    fn pd_checks() {
        let r = MahalanobisMatrix::identity(3).check_positive_definite().unwrap();
        assert!(r.positive_definite);
        assert_eq!(r.min_pivot, 1.0);

        let indefinite = MahalanobisMatrix::from_full_unchecked(2, vec![1.0, 0.0, 0.0, -1.0]);
        assert!(!indefinite.check_positive_definite().unwrap().positive_definite);

        let m = MahalanobisMatrix::from_full_unchecked(2, vec![2.0, 1.0, 1.0, 2.0]);
        assert!(m.check_positive_definite().unwrap().positive_definite);

        let asym = MahalanobisMatrix::from_full_unchecked(2, vec![2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(asym.check_positive_definite(), Err(Error::Validation(_))));
        assert!(MahalanobisMatrix::from_full(2, vec![1.0, 0.0, 0.0, -1.0]).is_err());
        assert!(MahalanobisMatrix::from_diagonal(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn kl_closed_form() {
        let i = MahalanobisMatrix::identity(2);
        let two_i = i.scaled(2.0).unwrap();
        let kl = gaussian_kl(&GaussianPair::centered(i.clone(), two_i).unwrap()).unwrap();
        let expected = 0.5 * (4.0 - 2.0 - 4f64.ln());
        assert!((kl - expected).abs() < 1e-14);
        assert!((kl - 0.306_852_819_440_054_3).abs() < 1e-12);
        assert_eq!(gaussian_kl(&GaussianPair::centered(i.clone(), i).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn kl_general_reference_matches_identity_path() {
        // KL(A0 || A) is invariant under congruence: KL(B A0 Bᵀ || B A Bᵀ) = KL(A0 || A).
        let a = MahalanobisMatrix::from_full(2, vec![3.0, 0.5, 0.5, 1.5]).unwrap();
        let base = gaussian_kl(&GaussianPair::centered(MahalanobisMatrix::identity(2), a.clone()).unwrap()).unwrap();
        // B = diag(2, 0.5): B I B = diag(4, 0.25), B A B elementwise.
        let b = [2.0, 0.5];
        let mut bab = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                bab[i * 2 + j] = b[i] * a.get(i, j) * b[j];
            }
        }
        let a0 = MahalanobisMatrix::from_full(2, vec![4.0, 0.0, 0.0, 0.25]).unwrap();
        let other = gaussian_kl(&GaussianPair::centered(a0, MahalanobisMatrix::from_full(2, bab).unwrap()).unwrap()).unwrap();
        assert!((base - other).abs() < 1e-12, "{base} vs {other}");
    }

    #[test]
    fn row_importance_examples() {
        assert_eq!(row_importance(&MahalanobisMatrix::identity(3)), vec![1.0; 3]);
        let a = MahalanobisMatrix::from_full(2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let r = row_importance(&a);
        assert!((r[0] - 20f64.sqrt()).abs() < 1e-15 && (r[1] - 13f64.sqrt()).abs() < 1e-15);
        let d = MahalanobisMatrix::from_diagonal(vec![2.0, 5.0]).unwrap();
        assert_eq!(row_importance(&d), vec![2.0, 5.0]);
    }

    #[test]
    fn bytes_round_trip_and_reject_bad_magic() {
        let a = MahalanobisMatrix::from_full(2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"SCDA");
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 4 * 8);
        assert_eq!(MahalanobisMatrix::from_bytes(&bytes, Path::new("m")).unwrap(), a);

        let d = a.to_diagonal().unwrap();
        let db = d.to_bytes();
        assert_eq!(db[8], 1);
        assert_eq!(MahalanobisMatrix::from_bytes(&db, Path::new("m")).unwrap(), d);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(MahalanobisMatrix::from_bytes(&bad, Path::new("m")), Err(Error::Format { .. })));
        assert!(MahalanobisMatrix::from_bytes(&bytes[..bytes.len() - 8], Path::new("m")).is_err());
    }
}
