use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of random unit probes used by [`probe_spd`].
pub const SPD_PROBES: usize = 20;

/// Dense construction runs the SPD probe automatically up to this size.
pub const PROBE_LIMIT: usize = 1024;

/// A symmetric positive definite map `v ↦ Av`, known only through products.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).apply(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    /// Wraps a square symmetric matrix, probing positive definiteness when
    /// `n ≤ PROBE_LIMIT`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let op = Self::new_unprobed(matrix)?;
        if op.dim() <= PROBE_LIMIT {
            probe_spd(&op, 0)?;
        }
        Ok(op)
    }

    /// Checks shape, finiteness and symmetry but skips the SPD probe.
    pub fn new_unprobed(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let scale = matrix.amax();
        for j in 0..n {
            for i in 0..j {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "operator is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { matrix })
    }

    /// `M Mᵀ / n + I` with standard normal `M`; condition number below ~10.
    pub fn random_spd(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let mut a = &m * m.transpose() / n as f64;
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let a = (&a + a.transpose()) * 0.5;
        Self { matrix: a }
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Reads a square matrix from comma-separated rows without a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Io(e.to_string()))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        for r in &rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Reads `n` as a little-endian `u64` followed by `n²` little-endian
    /// `f64` entries in row-major order.
    pub fn from_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return Err(Error::InvalidArgument("binary matrix file is truncated".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let expected = n
            .checked_mul(n)
            .and_then(|m| m.checked_mul(8))
            .and_then(|m| m.checked_add(8))
            .ok_or_else(|| Error::InvalidArgument("matrix size overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let data: Vec<f64> = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(DMatrix::from_row_slice(n, n, &data))
    }

    /// Inverse of [`DenseOperator::from_binary`].
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let n = self.dim();
        let mut out = Vec::with_capacity(8 + 8 * n * n);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// Checks `⟨v, Av⟩ > 0` on 20 seeded random unit vectors.
pub fn probe_spd<O: LinearOperator + ?Sized>(op: &O, seed: u64) -> Result<()> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11);
    for _ in 0..SPD_PROBES {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let v = v.normalize();
        let q = v.dot(&op.apply(&v));
        if !(q > 0.0) {
            return Err(Error::NotPositiveDefinite { value: q });
        }
    }
    Ok(())
}
