//! Dense symmetric matrices and the spectral / thresholding primitives the
//! estimator is built from.
//!
//! Every operation that maps symmetric input to symmetric output returns a
//! matrix that is symmetric *bitwise*: spectral reconstructions are folded
//! back through `(M + Mᵀ) / 2`, which is exact in floating point because
//! addition commutes.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Index, Mul, Sub};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LorecError, Result};

/// Relative cutoff below which an eigenvalue counts as zero for inversion.
pub const SINGULAR_CUTOFF: f64 = 1e-12;

/// A dense `p × p` real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Wraps a matrix that is already exactly symmetric.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                if m[(i, j)].to_bits() != m[(j, i)].to_bits() {
                    return Err(LorecError::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SymmetricMatrix(m))
    }

    /// Projects a square matrix onto the symmetric matrices via `(M + Mᵀ) / 2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        Ok(Self::symmetrize_unchecked(m))
    }

    fn symmetrize_unchecked(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymmetricMatrix((m + t) * 0.5)
    }

    /// Builds a matrix from the upper triangle `f(i, j)` with `i <= j`.
    pub fn from_upper_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(p >= 1, "dimension must be positive");
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymmetricMatrix(m)
    }

    pub fn zeros(p: usize) -> Self {
        assert!(p >= 1, "dimension must be positive");
        SymmetricMatrix(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        assert!(p >= 1, "dimension must be positive");
        SymmetricMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "dimension must be positive");
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Rank-one matrix `c · v vᵀ`.
    pub fn outer(v: &DVector<f64>, c: f64) -> Self {
        Self::from_upper_fn(v.len(), |i, j| c * v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Keeps the diagonal, zeroes everything else.
    pub fn diagonal_part(&self) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&self.0.diagonal()))
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute off-diagonal entry (zero for `p = 1`).
    pub fn max_abs_offdiagonal(&self) -> f64 {
        let p = self.dim();
        let mut best = 0.0_f64;
        for j in 0..p {
            for i in 0..j {
                best = best.max(self.0[(i, j)].abs());
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Applies `f` entrywise. `f` receives `(i, j, value)` and must not
    /// distinguish `(i, j)` from `(j, i)`; the upper triangle is mirrored.
    pub fn map_entries(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        Self::from_upper_fn(self.dim(), |i, j| f(i, j, self.0[(i, j)]))
    }

    /// Simultaneous row/column permutation: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let p = self.dim();
        if perm.len() != p {
            return Err(LorecError::invalid("permutation length differs from dimension"));
        }
        let mut seen = vec![false; p];
        for &k in perm {
            if k >= p || seen[k] {
                return Err(LorecError::invalid("not a permutation"));
            }
            seen[k] = true;
        }
        Ok(Self::from_upper_fn(p, |i, j| self.0[(perm[i], perm[j])]))
    }

    pub fn norms(&self) -> MatrixNorms {
        let eig = self.0.clone().symmetric_eigenvalues();
        let singular: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
        MatrixNorms::from_parts(&self.0, &singular)
    }

    /// Spectral norm, i.e. the largest absolute eigenvalue.
    pub fn operator_norm(&self) -> f64 {
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(spectral_factorize(self)?.eigenvalues)
    }

    fn check_same_dim(&self, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
    }
}

impl Index<(usize, usize)> for SymmetricMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl Add for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn add(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        self.check_same_dim(rhs);
        SymmetricMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn sub(self, rhs: &SymmetricMatrix) -> SymmetricMatrix {
        self.check_same_dim(rhs);
        SymmetricMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn mul(self, rhs: f64) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 * rhs)
    }
}

impl fmt::Display for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Err(LorecError::invalid("matrix must have dimension at least 1"));
    }
    if m.nrows() != m.ncols() {
        return Err(LorecError::invalid(format!(
            "matrix is not square: {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// The norms used throughout the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    /// Largest singular value.
    pub operator: f64,
    pub frobenius: f64,
    /// Largest absolute entry.
    pub max: f64,
    /// Sum of absolute entries.
    pub elementwise_l1: f64,
    /// Sum of singular values.
    pub nuclear: f64,
    /// Largest absolute column sum.
    pub matrix_l1: f64,
}

impl MatrixNorms {
    fn from_parts(m: &DMatrix<f64>, singular: &[f64]) -> Self {
        let matrix_l1 = m
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        MatrixNorms {
            operator: singular.iter().cloned().fold(0.0_f64, f64::max),
            frobenius: m.norm(),
            max: m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())),
            elementwise_l1: m.iter().map(|v| v.abs()).sum(),
            nuclear: singular.iter().sum(),
            matrix_l1,
        }
    }
}

/// Norms of an arbitrary (not necessarily square or symmetric) matrix.
pub fn norms(m: &DMatrix<f64>) -> MatrixNorms {
    if m.is_empty() {
        return MatrixNorms {
            operator: 0.0,
            frobenius: 0.0,
            max: 0.0,
            elementwise_l1: 0.0,
            nuclear: 0.0,
            matrix_l1: 0.0,
        };
    }
    let singular = m.clone().singular_values();
    MatrixNorms::from_parts(m, singular.as_slice())
}

/// `M = V diag(Λ) Vᵀ` with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralFactorization {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// `V f(Λ) Vᵀ`, restricted to the components where `f` is nonzero.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let values: Vec<f64> = self.eigenvalues.iter().map(|&v| f(v)).collect();
        reconstruct(&self.eigenvectors, &values)
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.reconstruct_with(|v| v)
    }
}

fn eigen_raw(m: &SymmetricMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_finite() {
        return Err(LorecError::NumericFailure(
            "non-finite entry in matrix passed to eigensolver".into(),
        ));
    }
    let p = m.dim();
    SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, 1000 * p.max(10)).ok_or_else(|| {
        LorecError::NumericFailure(format!(
            "symmetric eigensolver did not converge for p = {p}"
        ))
    })
}

/// `V diag(values) Vᵀ` summed only over nonzero `values`.
fn reconstruct(vectors: &DMatrix<f64>, values: &[f64]) -> SymmetricMatrix {
    let p = vectors.nrows();
    let active: Vec<usize> = (0..values.len()).filter(|&k| values[k] != 0.0).collect();
    if active.is_empty() {
        return SymmetricMatrix::zeros(p);
    }
    let basis = vectors.select_columns(active.iter());
    let mut scaled = basis.clone();
    for (c, &k) in active.iter().enumerate() {
        scaled.column_mut(c).scale_mut(values[k]);
    }
    SymmetricMatrix::symmetrize_unchecked(scaled * basis.transpose())
}

/// Full symmetric eigendecomposition with deterministic ordering.
///
/// Eigenvalues are sorted descending. Each eigenvector is sign-normalized so
/// its first nonzero coordinate is positive, and exact ties in eigenvalue
/// are ordered by comparing the normalized eigenvectors lexicographically.
pub fn spectral_factorize(m: &SymmetricMatrix) -> Result<SpectralFactorization> {
    let eig = eigen_raw(m)?;
    let p = m.dim();
    let mut vectors = eig.eigenvectors;
    for k in 0..p {
        let mut col = vectors.column_mut(k);
        let scale = col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then_with(|| {
                let (ca, cb) = (vectors.column(a), vectors.column(b));
                for i in 0..p {
                    match cb[i].total_cmp(&ca[i]) {
                        std::cmp::Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = vectors.select_columns(order.iter());
    Ok(SpectralFactorization {
        eigenvalues,
        eigenvectors,
    })
}

/// Unbiased sample covariance of an `n × p` observation matrix (rows are observations).
pub fn sample_covariance(data: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(LorecError::invalid(format!(
            "sample covariance needs at least 2 observations, got {n}"
        )));
    }
    if p == 0 {
        return Err(LorecError::invalid("observation matrix has no columns"));
    }
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let gram = centered.tr_mul(&centered) / (n as f64 - 1.0);
    Ok(SymmetricMatrix::symmetrize_unchecked(gram))
}

/// Scalar soft-thresholding `sign(x) · max(|x| − τ, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

fn check_threshold(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(LorecError::invalid(format!(
            "threshold must be nonnegative, got {tau}"
        )));
    }
    Ok(())
}

/// Entrywise soft-thresholding; the proximal map of `τ |·|₁`.
pub fn soft_threshold_entrywise(m: &SymmetricMatrix, tau: f64) -> Result<SymmetricMatrix> {
    soft_threshold_masked(m, tau, true)
}

/// Entrywise soft-thresholding that leaves the diagonal untouched when
/// `threshold_diagonal` is false (prox of the off-diagonal ℓ1 norm).
pub fn soft_threshold_masked(
    m: &SymmetricMatrix,
    tau: f64,
    threshold_diagonal: bool,
) -> Result<SymmetricMatrix> {
    check_threshold(tau)?;
    Ok(m.map_entries(|i, j, v| {
        if i == j && !threshold_diagonal {
            v
        } else {
            soft_threshold(v, tau)
        }
    }))
}

/// Result of singular-value soft-thresholding of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SpectralShrinkage {
    pub matrix: SymmetricMatrix,
    /// Number of singular values that survive the threshold.
    pub rank: usize,
    /// Sum of the surviving (shrunken) singular values.
    pub nuclear_norm: f64,
}

/// Soft-thresholds the singular values of `m` by `tau`.
///
/// For a symmetric matrix the singular values are the absolute eigenvalues,
/// so each eigenvalue `d` is replaced by `sign(d) · max(|d| − τ, 0)`.
pub fn svd_soft_threshold(m: &SymmetricMatrix, tau: f64) -> Result<(SymmetricMatrix, usize)> {
    let out = shrink_spectrum(m, tau)?;
    Ok((out.matrix, out.rank))
}

pub fn shrink_spectrum(m: &SymmetricMatrix, tau: f64) -> Result<SpectralShrinkage> {
    check_threshold(tau)?;
    let eig = eigen_raw(m)?;
    let shrunk: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&d| soft_threshold(d, tau))
        .collect();
    let rank = shrunk.iter().filter(|v| **v != 0.0).count();
    let nuclear_norm = shrunk.iter().map(|v| v.abs()).sum();
    Ok(SpectralShrinkage {
        matrix: reconstruct(&eig.eigenvectors, &shrunk),
        rank,
        nuclear_norm,
    })
}

/// Hard thresholding `M_ij · 1{|M_ij| ≥ τ}`; the boundary value is kept.
pub fn hard_threshold(m: &SymmetricMatrix, tau: f64) -> Result<SymmetricMatrix> {
    check_threshold(tau)?;
    Ok(m.map_entries(|_, _, v| if v.abs() >= tau { v } else { 0.0 }))
}

/// Inverse of a symmetric positive definite matrix.
pub fn invert_spd(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let spec = spectral_factorize(m)?;
    let largest = spec.eigenvalues[0];
    let cutoff = SINGULAR_CUTOFF * largest.max(0.0);
    if let Some((index, &eigenvalue)) = spec
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= cutoff || largest <= 0.0)
    {
        return Err(LorecError::Singular {
            eigenvalue,
            index,
            cutoff,
        });
    }
    Ok(spec.reconstruct_with(|v| 1.0 / v))
}

/// Inverse of a nonsingular symmetric matrix, definite or not.
pub fn invert_symmetric(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let spec = spectral_factorize(m)?;
    let largest = spec.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = SINGULAR_CUTOFF * largest;
    if let Some((index, &eigenvalue)) = spec
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &v)| v.abs() <= cutoff || largest == 0.0)
    {
        return Err(LorecError::Singular {
            eigenvalue,
            index,
            cutoff,
        });
    }
    Ok(spec.reconstruct_with(|v| 1.0 / v))
}

/// Reads a header-less numeric CSV into a matrix.
pub fn parse_matrix_csv(reader: impl Read) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    LorecError::invalid(format!("line {}: not a number: {field:?}", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(LorecError::invalid(format!(
                    "line {}: expected {} columns, found {}",
                    line + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LorecError::invalid("empty matrix file"));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix_csv(std::fs::File::open(path)?)
}

/// Reads a square matrix file. Entries must be symmetric up to a relative
/// `1e-9`; the stored matrix is then symmetrized exactly.
pub fn read_symmetric_csv(path: impl AsRef<Path>) -> Result<SymmetricMatrix> {
    parse_symmetric(read_matrix_csv(path)?)
}

pub fn parse_symmetric(m: DMatrix<f64>) -> Result<SymmetricMatrix> {
    check_square(&m)?;
    let scale = m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(LorecError::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(SymmetricMatrix::symmetrize_unchecked(m))
}

/// Writes a matrix as header-less CSV using round-trip exact decimals.
pub fn write_matrix_csv(mut writer: impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(writer, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_csv(&mut file, m)?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut ChaCha8Rng, p: usize) -> SymmetricMatrix {
        SymmetricMatrix::from_upper_fn(p, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Cyclic Jacobi eigenvalue sweep, kept deliberately naive.
    fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let mut a = m.clone();
        let p = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..p)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-26 {
                break;
            }
            for q in 0..p {
                for r in (q + 1)..p {
                    if a[(q, r)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(r, r)] - a[(q, q)]) / (2.0 * a[(q, r)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..p {
                        let (akq, akr) = (a[(k, q)], a[(k, r)]);
                        a[(k, q)] = c * akq - s * akr;
                        a[(k, r)] = s * akq + c * akr;
                    }
                    for k in 0..p {
                        let (aqk, ark) = (a[(q, k)], a[(r, k)]);
                        a[(q, k)] = c * aqk - s * ark;
                        a[(r, k)] = s * aqk + c * ark;
                    }
                }
            }
        }
        (0..p).map(|i| a[(i, i)]).collect()
    }

    #[test]
    fn sample_covariance_two_rows() {
        let data = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let cov = sample_covariance(&data).unwrap();
        assert_eq!(cov.as_matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn sample_covariance_identical_rows_is_zero() {
        let data = DMatrix::from_row_slice(3, 2, &[0.5, -2.0, 0.5, -2.0, 0.5, -2.0]);
        let cov = sample_covariance(&data).unwrap();
        assert_eq!(cov.max_abs(), 0.0);
    }

    #[test]
    fn sample_covariance_needs_two_rows() {
        let data = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(sample_covariance(&data), Err(LorecError::InvalidInput(_))));
    }

    #[test]
    fn sample_covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p) = (5, 3);
        let data = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let cov = sample_covariance(&data).unwrap();
        let mut mean = vec![0.0; p];
        for j in 0..p {
            for i in 0..n {
                mean[j] += data[(i, j)];
            }
            mean[j] /= n as f64;
        }
        for a in 0..p {
            for b in 0..p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += (data[(i, a)] - mean[a]) * (data[(i, b)] - mean[b]);
                }
                acc /= (n - 1) as f64;
                assert!((cov[(a, b)] - acc).abs() < 1e-12);
            }
        }
        assert!(cov.eigenvalues().unwrap().iter().all(|v| *v > -1e-12));
    }

    #[test]
    fn soft_threshold_example() {
        let m = SymmetricMatrix::from_matrix(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, -0.3, -0.3, 2.0],
        ))
        .unwrap();
        let out = soft_threshold_entrywise(&m, 0.5).unwrap();
        assert_eq!(out.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.5]));
        assert_eq!(soft_threshold_entrywise(&m, 0.0).unwrap(), m);
        assert!(soft_threshold_entrywise(&m, -0.1).is_err());
    }

    #[test]
    fn soft_threshold_minimizes_scalar_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z: f64 = rng.random_range(-3.0..3.0);
            let tau: f64 = rng.random_range(0.0..2.0);
            let obj = |x: f64| 0.5 * (x - z).powi(2) + tau * x.abs();
            // coarse scan then a fine scan around the best point
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=6000 {
                let x = -3.0 + 6.0 * k as f64 / 6000.0;
                if obj(x) < best.0 {
                    best = (obj(x), x);
                }
            }
            let centre = best.1;
            for k in 0..=4000 {
                let x = centre - 1e-3 + 2e-3 * k as f64 / 4000.0;
                if obj(x) < best.0 {
                    best = (obj(x), x);
                }
            }
            assert!((best.1 - soft_threshold(z, tau)).abs() < 1e-6, "z={z} tau={tau}");
        }
    }

    #[test]
    fn svd_soft_threshold_examples() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0]);
        let (out, rank) = svd_soft_threshold(&m, 2.0).unwrap();
        assert_eq!(rank, 1);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out.as_matrix() - expected).amax() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let rank2 = &SymmetricMatrix::outer(&v, 2.0) + &SymmetricMatrix::outer(&w, -1.5);
        let (out, rank) = svd_soft_threshold(&rank2, 0.0).unwrap();
        assert!((out.as_matrix() - rank2.as_matrix()).amax() < 1e-12);
        // eigenvalues at roundoff level survive a zero threshold, so count with the reporting cutoff
        let numeric_rank = out.eigenvalues().unwrap().iter().filter(|v| v.abs() > 1e-9).count();
        assert_eq!(numeric_rank, 2);
        assert!(rank >= 2);
    }

    #[test]
    fn svd_soft_threshold_handles_negative_eigenvalues() {
        let m = SymmetricMatrix::from_diagonal(&[-3.0, 0.5]);
        let (out, rank) = svd_soft_threshold(&m, 1.0).unwrap();
        assert_eq!(rank, 1);
        assert!((out[(0, 0)] + 2.0).abs() < 1e-14);
        assert!(out[(1, 1)].abs() < 1e-14);
    }

    #[test]
    fn svd_soft_threshold_is_symmetric_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_symmetric(&mut rng, 12);
        let (out, _) = svd_soft_threshold(&m, 0.4).unwrap();
        assert!(SymmetricMatrix::from_matrix(out.into_matrix()).is_ok());
    }

    #[test]
    fn hard_threshold_keeps_boundary() {
        let m = SymmetricMatrix::from_matrix(DMatrix::from_row_slice(
            2,
            2,
            &[0.5, 0.4, 0.4, 1.0],
        ))
        .unwrap();
        let out = hard_threshold(&m, 0.5).unwrap();
        assert_eq!(out.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));
        assert_eq!(hard_threshold(&m, 0.0).unwrap(), m);
        assert!(hard_threshold(&m, -1.0).is_err());
    }

    #[test]
    fn hard_threshold_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let m = random_symmetric(&mut rng, 7);
            let tau = rng.random_range(0.0..1.0);
            let out = hard_threshold(&m, tau).unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    let expected = if m[(i, j)].abs() >= tau { m[(i, j)] } else { 0.0 };
                    assert_eq!(out[(i, j)], expected);
                }
            }
        }
    }

    #[test]
    fn norms_of_identity_and_zero() {
        let n = SymmetricMatrix::identity(3).norms();
        assert!((n.operator - 1.0).abs() < 1e-14);
        assert!((n.frobenius - 3f64.sqrt()).abs() < 1e-14);
        assert!((n.nuclear - 3.0).abs() < 1e-14);
        assert_eq!(n.max, 1.0);
        assert_eq!(n.elementwise_l1, 3.0);
        assert_eq!(n.matrix_l1, 1.0);

        let z = norms(&DMatrix::zeros(3, 3));
        assert_eq!(
            [z.operator, z.frobenius, z.max, z.elementwise_l1, z.nuclear, z.matrix_l1],
            [0.0; 6]
        );
    }

    #[test]
    fn nuclear_norm_matches_jacobi_on_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let gram = m.transpose() * &m;
        let oracle: f64 = jacobi_eigenvalues(&gram).iter().map(|v| v.max(0.0).sqrt()).sum();
        let oracle_op = jacobi_eigenvalues(&gram).iter().cloned().fold(0.0, f64::max).sqrt();
        let n = norms(&m);
        assert!((n.nuclear - oracle).abs() < 1e-8);
        assert!((n.operator - oracle_op).abs() < 1e-8);

        let sym = random_symmetric(&mut rng, 5);
        let oracle: f64 = jacobi_eigenvalues(sym.as_matrix()).iter().map(|v| v.abs()).sum();
        assert!((sym.norms().nuclear - oracle).abs() < 1e-8);
    }

    #[test]
    fn spectral_factorization_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in [1, 2, 5, 20] {
            let m = random_symmetric(&mut rng, p);
            let f = spectral_factorize(&m).unwrap();
            assert!(f.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let err = (f.reconstruct().as_matrix() - m.as_matrix()).norm();
            assert!(err <= 1e-10 * m.frobenius_norm().max(1.0));
            let gram = f.eigenvectors.transpose() * &f.eigenvectors;
            assert!((gram - DMatrix::identity(p, p)).amax() < 1e-10);
            for k in 0..p {
                let col = f.eigenvectors.column(k);
                let first = col.iter().find(|v| v.abs() > 1e-12).unwrap();
                assert!(*first > 0.0);
            }
        }
    }

    #[test]
    fn spectral_factorize_rejects_nan() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 0)] = f64::NAN;
        let s = SymmetricMatrix::symmetrize(m).unwrap();
        assert!(matches!(spectral_factorize(&s), Err(LorecError::NumericFailure(_))));
    }

    #[test]
    fn invert_spd_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let spd = SymmetricMatrix::symmetrize(&a * a.transpose() + DMatrix::identity(6, 6) * 0.1)
            .unwrap();
        let inv = invert_spd(&spd).unwrap();
        let prod = spd.as_matrix() * inv.as_matrix();
        assert!((prod - DMatrix::identity(6, 6)).amax() <= 1e-8);
    }

    #[test]
    fn invert_spd_reports_offending_eigenvalue() {
        let m = SymmetricMatrix::from_diagonal(&[1.0, 1e-14]);
        match invert_spd(&m) {
            Err(LorecError::Singular { eigenvalue, index, .. }) => {
                assert_eq!(index, 1);
                assert!((eigenvalue - 1e-14).abs() < 1e-20);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let indefinite = SymmetricMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(invert_spd(&indefinite).is_err());
        assert!(invert_symmetric(&indefinite).is_ok());
    }

    #[test]
    fn csv_rejects_non_square_symmetric() {
        let text = "1,2,3\n4,5,6\n";
        let m = parse_matrix_csv(text.as_bytes()).unwrap();
        assert!(parse_symmetric(m).is_err());
        assert!(parse_matrix_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(parse_matrix_csv("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_symmetric(&mut rng, 4);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, m.as_matrix()).unwrap();
        let back = parse_symmetric(parse_matrix_csv(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn permutation_preserves_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_symmetric(&mut rng, 5);
        let pm = m.permuted(&[3, 0, 4, 1, 2]).unwrap();
        let (a, b) = (m.eigenvalues().unwrap(), pm.eigenvalues().unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(m.permuted(&[0, 0, 1, 2, 3]).is_err());
    }
}
