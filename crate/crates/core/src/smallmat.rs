//! Dense d×d matrices with d ≤ 8, singular values and the singular value
//! function.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use thiserror::Error;

pub const MAX_DIM: usize = 8;

/// Relative slack used by the inequality checks.
pub const LEMMA_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatError {
    #[error("matrix dimension {0} outside 1..=8")]
    BadDimension(usize),
    #[error("expected {expected} entries, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("singular Jacobian")]
    Singular,
    #[error("matrix is not lower triangular: entry ({i}, {j}) = {value}")]
    NotLowerTriangular { i: usize, j: usize, value: f64 },
    #[error("diagonal moduli increase at index {0}")]
    DiagonalNotDominated(usize),
    #[error("precondition |a_ij| <= c|a_jj| fails at ({i}, {j}): |{a_ij}| > {c}*|{a_jj}|")]
    DominationViolated {
        i: usize,
        j: usize,
        a_ij: f64,
        a_jj: f64,
        c: f64,
    },
}

/// Row-major d×d matrix stored inline.
#[derive(Clone, Copy, PartialEq)]
pub struct Mat {
    dim: usize,
    data: [f64; MAX_DIM * MAX_DIM],
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.dim).map(|i| self.row(i).to_vec()).collect();
        f.debug_struct("Mat").field("dim", &self.dim).field("rows", &rows).finish()
    }
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "matrix dimension {dim} outside 1..=8");
        Mat {
            dim,
            data: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self, MatError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(MatError::BadDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(MatError::BadLength {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = entries[i * dim + j];
            }
        }
        Ok(m)
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.len();
        let flat: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.as_ref().len(), dim, "ragged matrix rows");
                r.as_ref().iter().copied()
            })
            .collect();
        Mat::from_row_major(dim, &flat).expect("valid matrix")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * MAX_DIM..i * MAX_DIM + self.dim]
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        (0..self.dim).flat_map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, k: f64) -> Mat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] *= k;
            }
        }
        m
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] -= other[(i, j)];
            }
        }
        m
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.dim)
            .flat_map(|i| self.row(i).iter().copied())
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        (0..self.dim)
            .flat_map(|i| self.row(i).iter().copied())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn det(&self) -> f64 {
        let n = self.dim;
        let mut a = *self;
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
                .unwrap_or(col);
            if a[(pivot, col)] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for j in 0..n {
                    let tmp = a[(col, j)];
                    a[(col, j)] = a[(pivot, j)];
                    a[(pivot, j)] = tmp;
                }
                det = -det;
            }
            let p = a[(col, col)];
            det *= p;
            for r in col + 1..n {
                let factor = a[(r, col)] / p;
                if factor != 0.0 {
                    for j in col..n {
                        a[(r, j)] -= factor * a[(col, j)];
                    }
                }
            }
        }
        det
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Mat, MatError> {
        let n = self.dim;
        let mut a = *self;
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
                .unwrap_or(col);
            if a[(pivot, col)] == 0.0 {
                return Err(MatError::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(col * MAX_DIM + j, pivot * MAX_DIM + j);
                    inv.data.swap(col * MAX_DIM + j, pivot * MAX_DIM + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor != 0.0 {
                    for j in 0..n {
                        a[(r, j)] -= factor * a[(col, j)];
                        inv[(r, j)] -= factor * inv[(col, j)];
                    }
                }
            }
        }
        Ok(inv)
    }

    /// Inverse of a non-singular lower-triangular matrix by forward
    /// substitution (exactly lower triangular output).
    pub fn lower_triangular_inverse(&self) -> Result<Mat, MatError> {
        let n = self.dim;
        let mut inv = Mat::zeros(n);
        for j in 0..n {
            if self[(j, j)] == 0.0 {
                return Err(MatError::Singular);
            }
            inv[(j, j)] = 1.0 / self[(j, j)];
            for i in j + 1..n {
                let mut acc = 0.0;
                for k in j..i {
                    acc += self[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -acc / self[(i, i)];
            }
        }
        Ok(inv)
    }

    pub fn is_lower_triangular(&self, tol: f64) -> bool {
        self.first_upper_violation(tol).is_none()
    }

    fn first_upper_violation(&self, tol: f64) -> Option<(usize, usize, f64)> {
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                if self[(i, j)].abs() > tol {
                    return Some((i, j, self[(i, j)]));
                }
            }
        }
        None
    }

    /// Operator 2-norm, the largest singular value.
    pub fn norm(&self) -> f64 {
        singular_values(self).values()[0]
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.dim && j < self.dim);
        &self.data[i * MAX_DIM + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.dim && j < self.dim);
        &mut self.data[i * MAX_DIM + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let n = self.dim;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        &self * &rhs
    }
}

/// Singular values α₁ ≥ … ≥ α_d ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    /// Builds a spectrum from arbitrary non-negative values (sorted here).
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(values.iter().all(|v| *v >= 0.0), "singular values must be non-negative");
        values.sort_by(|a, b| b.total_cmp(a));
        SingularSpectrum { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn product(&self) -> f64 {
        self.values.iter().product()
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    /// φˢ evaluated on this spectrum.
    pub fn svf(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "svf needs s >= 0");
        let d = self.values.len();
        if s >= d as f64 {
            return self.product().powf(s / d as f64);
        }
        let k = s.floor() as usize;
        let frac = s - k as f64;
        let head: f64 = self.values[..k].iter().product();
        if frac == 0.0 {
            head
        } else {
            head * self.values[k].powf(frac)
        }
    }
}

/// Singular values via one-sided (Hestenes) Jacobi rotations.
///
/// The rotations diagonalise mᵀm implicitly; the column norms of the
/// rotated matrix are the singular values. Deterministic for a given input.
pub fn singular_values(m: &Mat) -> SingularSpectrum {
    let n = m.dim;
    // columns of m as contiguous vectors
    let mut cols = [[0.0f64; MAX_DIM]; MAX_DIM];
    for (j, col) in cols.iter_mut().enumerate().take(n) {
        for (i, slot) in col.iter_mut().enumerate().take(n) {
            *slot = m[(i, j)];
        }
    }
    if n > 1 {
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for i in 0..n {
                        alpha += cols[p][i] * cols[p][i];
                        beta += cols[q][i] * cols[q][i];
                        gamma += cols[p][i] * cols[q][i];
                    }
                    if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..n {
                        let a = cols[p][i];
                        let b = cols[q][i];
                        cols[p][i] = c * a - s * b;
                        cols[q][i] = s * a + c * b;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let values = cols[..n]
        .iter()
        .map(|col| col[..n].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    SingularSpectrum::new(values)
}

/// Singular value function φˢ(m).
pub fn svf(m: &Mat, s: f64) -> f64 {
    singular_values(m).svf(s)
}

/// log φˢ from log singular values (non-increasing). Returns -inf when a
/// needed singular value vanishes.
pub fn log_svf(log_sv: &[f64], s: f64) -> f64 {
    let d = log_sv.len();
    if s >= d as f64 {
        return log_sv.iter().sum::<f64>() * (s / d as f64);
    }
    let k = s.floor() as usize;
    let frac = s - k as f64;
    let head: f64 = log_sv[..k].iter().sum();
    if frac == 0.0 {
        head
    } else {
        head + frac * log_sv[k]
    }
}

/// min over k = 0..d of rᵏ/φᵏ for the given spectrum.
pub fn z_min(spectrum: &SingularSpectrum, r: f64) -> Result<f64, MatError> {
    assert!(r > 0.0, "z_min needs r > 0");
    if spectrum.values().iter().any(|v| *v <= 0.0) {
        return Err(MatError::Singular);
    }
    let mut best: f64 = 1.0;
    let mut acc = 1.0;
    for alpha in spectrum.values() {
        acc *= r / alpha;
        best = best.min(acc);
    }
    Ok(best)
}

/// ∏ min(αᵢ, r)/αᵢ, the product form of [`z_min`].
pub fn z_min_product(spectrum: &SingularSpectrum, r: f64) -> Result<f64, MatError> {
    if spectrum.values().iter().any(|v| *v <= 0.0) {
        return Err(MatError::Singular);
    }
    Ok(spectrum.values().iter().map(|a| a.min(r) / a).product())
}

/// Outcome of an entry-ratio bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    /// Largest observed ratio over the checked entries.
    pub worst_ratio: f64,
    /// 1-based (row, column) attaining `worst_ratio`.
    pub worst_entry: (usize, usize),
    /// The bound the ratio was compared against at `worst_entry`.
    pub bound: f64,
}

fn check_class_precondition(a: &Mat, c: f64) -> Result<(), MatError> {
    let scale = a.max_abs();
    if let Some((i, j, value)) = a.first_upper_violation(1e-14 * scale) {
        return Err(MatError::NotLowerTriangular {
            i: i + 1,
            j: j + 1,
            value,
        });
    }
    let n = a.dim();
    for j in 0..n {
        if a[(j, j)] == 0.0 {
            return Err(MatError::Singular);
        }
        for i in 0..n {
            if a[(i, j)].abs() > c * a[(j, j)].abs() * (1.0 + LEMMA_SLACK) {
                return Err(MatError::DominationViolated {
                    i: i + 1,
                    j: j + 1,
                    a_ij: a[(i, j)],
                    a_jj: a[(j, j)],
                    c,
                });
            }
        }
    }
    Ok(())
}

/// Checks |(A⁻¹)ᵢⱼ| ≤ (c√d)^{d−1}|(A⁻¹)ᵢᵢ| for a lower-triangular A with
/// |aᵢⱼ| ≤ c|aⱼⱼ|. The witness is the largest ratio |(A⁻¹)ᵢⱼ|/|(A⁻¹)ᵢᵢ|.
pub fn triangular_inverse_bound_check(a: &Mat, c: f64) -> Result<BoundCheck, MatError> {
    assert!(c >= 1.0, "the class constant must be >= 1");
    check_class_precondition(a, c)?;
    let inv = a.lower_triangular_inverse()?;
    let n = a.dim();
    let bound = (c * (n as f64).sqrt()).powi(n as i32 - 1);
    let mut worst = (0.0f64, (1, 1));
    for i in 0..n {
        let diag = inv[(i, i)].abs();
        for j in 0..n {
            let ratio = inv[(i, j)].abs() / diag;
            if ratio > worst.0 {
                worst = (ratio, (i + 1, j + 1));
            }
        }
    }
    Ok(BoundCheck {
        holds: worst.0 <= bound * (1.0 + LEMMA_SLACK),
        worst_ratio: worst.0,
        worst_entry: worst.1,
        bound,
    })
}

/// Whether `a` lies in the class of lower-triangular matrices with
/// non-increasing diagonal moduli and |aᵢⱼ| ≤ c|aⱼⱼ|.
pub fn in_triangular_class(a: &Mat, c: f64) -> bool {
    if check_class_precondition(a, c).is_err() {
        return false;
    }
    (1..a.dim()).all(|i| a[(i - 1, i - 1)].abs() >= a[(i, i)].abs())
}

/// Checks |(A₁⋯Aₙ)ᵢⱼ| ≤ (cn)^{i−j}|(A₁⋯Aₙ)ⱼⱼ| for i ≥ j. The witness is
/// the entry with the largest ratio of observed value to bound.
pub fn product_entry_bound_check(mats: &[Mat], c: f64) -> Result<BoundCheck, MatError> {
    assert!(!mats.is_empty(), "need at least one matrix");
    for m in mats {
        check_class_precondition(m, c)?;
        if let Some(i) = (1..m.dim()).find(|&i| m[(i - 1, i - 1)].abs() < m[(i, i)].abs()) {
            return Err(MatError::DiagonalNotDominated(i + 1));
        }
    }
    let n = mats.len() as f64;
    let product = mats[1..].iter().fold(mats[0], |acc, m| &acc * m);
    let d = product.dim();
    let mut worst = BoundCheck {
        holds: true,
        worst_ratio: 0.0,
        worst_entry: (1, 1),
        bound: 1.0,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for j in 0..d {
        let diag = product[(j, j)].abs();
        for i in j..d {
            let bound = (c * n).powi((i - j) as i32);
            let ratio = product[(i, j)].abs() / diag;
            let excess = ratio / bound;
            if excess > worst_excess {
                worst_excess = excess;
                worst.worst_ratio = ratio;
                worst.worst_entry = (i + 1, j + 1);
                worst.bound = bound;
            }
        }
    }
    worst.holds = worst_excess <= 1.0 + LEMMA_SLACK;
    Ok(worst)
}
