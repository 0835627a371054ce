//! Dense symmetric-positive-definite linear algebra for the bandit math:
//! rank-1 accumulation, Cholesky factorization, solves, log-determinants and
//! Mahalanobis norms. Determinant comparisons are done in log-space because
//! determinants grow geometrically over long horizons.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Dense symmetric matrix with full row-major storage. Symmetry holds exactly
/// by construction: every mutation writes both mirrored entries from the same
/// computed value.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Result<Self, NumericsError> {
        if dim == 0 {
            return Err(NumericsError::InvalidParameter("dim must be >= 1".into()));
        }
        Ok(Self { dim, data: vec![0.0; dim * dim] })
    }

    /// `lambda * I`, the ridge prior. Rejects `lambda <= 0`.
    pub fn regularized(dim: usize, lambda: f64) -> Result<Self, NumericsError> {
        if !(lambda > 0.0) {
            return Err(NumericsError::InvalidParameter(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = lambda;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    fn check_dim(&self, len: usize) -> Result<(), NumericsError> {
        if len != self.dim {
            return Err(NumericsError::DimensionMismatch { expected: self.dim, got: len });
        }
        Ok(())
    }

    /// `self += weight * x * x^T`.
    pub fn rank1_update(&mut self, x: &[f64], weight: f64) -> Result<(), NumericsError> {
        self.check_dim(x.len())?;
        let d = self.dim;
        for i in 0..d {
            let wi = weight * x[i];
            self.data[i * d + i] += wi * x[i];
            for j in (i + 1)..d {
                let v = wi * x[j];
                self.data[i * d + j] += v;
                self.data[j * d + i] += v;
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &SymMatrix) -> Result<(), NumericsError> {
        self.check_dim(other.dim)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn added(&self, other: &SymMatrix) -> Result<SymMatrix, NumericsError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += v;
        }
    }

    pub fn mat_vec(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_dim(x.len())?;
        let d = self.dim;
        Ok((0..d)
            .map(|i| dot(&self.data[i * d..(i + 1) * d], x))
            .collect())
    }

    /// Cholesky factorization. Accumulated PSD sums plus a ridge term are
    /// positive definite in exact arithmetic; on a roundoff-induced failure a
    /// single jitter of `1e-10 * trace / dim` is added to the diagonal and the
    /// factorization retried before giving up.
    pub fn factorize(&self) -> Result<Cholesky, NumericsError> {
        match Cholesky::new(self) {
            Ok(c) => Ok(c),
            Err(_) => {
                let jitter = 1e-10 * self.trace() / self.dim as f64;
                let mut bumped = self.clone();
                bumped.add_diagonal(jitter);
                Cholesky::new(&bumped)
            }
        }
    }
}

/// Lower-triangular Cholesky factor of a positive-definite [`SymMatrix`],
/// with the log-determinant cached at construction.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
}

impl Cholesky {
    fn new(m: &SymMatrix) -> Result<Self, NumericsError> {
        let d = m.dim;
        let mut lower = vec![0.0; d * d];
        let mut log_det = 0.0;
        for j in 0..d {
            let mut diag = m.entry(j, j);
            for k in 0..j {
                diag -= lower[j * d + k] * lower[j * d + k];
            }
            if !(diag > 0.0) {
                return Err(NumericsError::NotPositiveDefinite);
            }
            let ljj = diag.sqrt();
            lower[j * d + j] = ljj;
            log_det += 2.0 * ljj.ln();
            for i in (j + 1)..d {
                let mut s = m.entry(i, j);
                for k in 0..j {
                    s -= lower[i * d + k] * lower[j * d + k];
                }
                lower[i * d + j] = s / ljj;
            }
        }
        Ok(Self { dim: d, lower, log_det })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log det(M)`, equal to twice the sum of log factor diagonals.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn check_dim(&self, len: usize) -> Result<(), NumericsError> {
        if len != self.dim {
            return Err(NumericsError::DimensionMismatch { expected: self.dim, got: len });
        }
        Ok(())
    }

    /// Solves `M y = rhs` by forward then backward substitution.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_dim(rhs.len())?;
        let d = self.dim;
        let mut y = rhs.to_vec();
        for i in 0..d {
            for k in 0..i {
                y[i] -= self.lower[i * d + k] * y[k];
            }
            y[i] /= self.lower[i * d + i];
        }
        for i in (0..d).rev() {
            for k in (i + 1)..d {
                y[i] -= self.lower[k * d + i] * y[k];
            }
            y[i] /= self.lower[i * d + i];
        }
        Ok(y)
    }

    /// `sqrt(x^T M^{-1} x)`: with `M = L L^T` this is the Euclidean norm of
    /// `L^{-1} x`.
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64, NumericsError> {
        self.check_dim(x.len())?;
        let d = self.dim;
        let mut y = x.to_vec();
        let mut acc = 0.0;
        for i in 0..d {
            for k in 0..i {
                y[i] -= self.lower[i * d + k] * y[k];
            }
            y[i] /= self.lower[i * d + i];
            acc += y[i] * y[i];
        }
        Ok(acc.sqrt())
    }
}

pub fn log_det(m: &SymMatrix) -> Result<f64, NumericsError> {
    Ok(m.factorize()?.log_det())
}

/// The communication trigger test: `det(current + local) > (1 + alpha_c) *
/// det(current)`, evaluated strictly in log-space.
pub fn det_condition(
    current: &SymMatrix,
    local: &SymMatrix,
    alpha_c: f64,
) -> Result<bool, NumericsError> {
    if !(alpha_c > 0.0) {
        return Err(NumericsError::InvalidParameter(format!(
            "alpha_c must be > 0, got {alpha_c}"
        )));
    }
    let lhs = log_det(&current.added(local)?)?;
    let rhs = (1.0 + alpha_c).ln() + log_det(current)?;
    Ok(lhs > rhs)
}
