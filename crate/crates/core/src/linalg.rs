//! Small dense linear algebra over `f64`.
//!
//! Everything here is sized for assignment matrices (at most a few dozen
//! rows/columns) with possibly many right-hand sides (one per parameter
//! coordinate). The two workhorses are a Householder-QR least-squares solver
//! and a one-sided Jacobi singular value routine used for numerical rank
//! decisions. Both are plain sequential loops: no blocking, no parallelism,
//! so results are bitwise reproducible.

use std::fmt;

/// Relative singular-value threshold: `sigma > RANK_RTOL * sigma_max`
/// counts toward the numerical rank.
///
/// Calibrated against the worst genuinely-nonsingular case this crate
/// produces (8-row subsets of a 15x8 Vandermonde assignment matrix, whose
/// smallest relative singular value measures ~1e-9) and the exactly
/// singular subsets of the integer-entry schemes (~1e-15 of noise). 1e-11
/// sits two orders below the former and four above the latter.
pub const RANK_RTOL: f64 = 1e-11;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is numerically rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transposed(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Singular values of `a`, descending. One-sided Jacobi: rotate column pairs
/// until all are mutually orthogonal, then read off the column norms.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    // Work on the orientation with rows >= cols; singular values are
    // invariant under transpose.
    let mut b = if a.rows >= a.cols {
        a.clone()
    } else {
        a.transposed()
    };
    let (n, m) = (b.rows, b.cols);
    if m == 0 || n == 0 {
        return vec![0.0; a.rows.min(a.cols)];
    }
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..m.saturating_sub(1) {
            for q in (p + 1)..m {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..n {
                    let x = b.get(r, p);
                    let y = b.get(r, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq == 0.0 || apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let x = b.get(r, p);
                    let y = b.get(r, q);
                    b.set(r, p, c * x - s * y);
                    b.set(r, q, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..m)
        .map(|c| (0..n).map(|r| b.get(r, c).powi(2)).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Numerical rank under the [`RANK_RTOL`] relative threshold.
pub fn numerical_rank(a: &Mat) -> usize {
    let sv = singular_values(a);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Spectral condition number `sigma_max / sigma_min` (infinite if singular).
pub fn condition_number(a: &Mat) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Least-squares solve of `a * x = b` for tall `a` (rows >= cols) via
/// Householder QR. `b` may hold many right-hand-side columns; the returned
/// `x` is `a.cols x b.cols`. Errors when `R` has a numerically zero pivot.
pub fn lstsq(a: &Mat, b: &Mat) -> Result<Mat, LinalgError> {
    let (n, m) = (a.rows, a.cols);
    if b.rows != n {
        return Err(LinalgError::DimMismatch(format!(
            "lhs has {n} rows, rhs has {}",
            b.rows
        )));
    }
    if n < m {
        return Err(LinalgError::DimMismatch(format!(
            "underdetermined system: {n} rows < {m} cols"
        )));
    }
    let mut r = a.clone();
    let mut y = b.clone();
    let scale = a.max_abs().max(1.0);

    // Householder sweep: annihilate below-diagonal entries of column k,
    // applying the same reflector to every right-hand side.
    for k in 0..m {
        let norm_x = (k..n).map(|i| r.get(i, k).powi(2)).sum::<f64>().sqrt();
        if norm_x <= f64::EPSILON * scale * (n as f64) {
            return Err(LinalgError::RankDeficient);
        }
        let alpha = if r.get(k, k) >= 0.0 { -norm_x } else { norm_x };
        let mut v: Vec<f64> = (k..n).map(|i| r.get(i, k)).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in k..m {
                let dot: f64 = (k..n).map(|i| v[i - k] * r.get(i, col)).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    let val = r.get(i, col) - f * v[i - k];
                    r.set(i, col, val);
                }
            }
            for col in 0..y.cols {
                let dot: f64 = (k..n).map(|i| v[i - k] * y.get(i, col)).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    let val = y.get(i, col) - f * v[i - k];
                    y.set(i, col, val);
                }
            }
        }
        r.set(k, k, alpha);
        for i in (k + 1)..n {
            r.set(i, k, 0.0);
        }
    }

    // Guard against a pivot that collapsed despite the column-norm check.
    let rmax = (0..m).map(|k| r.get(k, k).abs()).fold(0.0f64, f64::max);
    for k in 0..m {
        if r.get(k, k).abs() <= 1e-13 * rmax.max(1e-300) {
            return Err(LinalgError::RankDeficient);
        }
    }

    // Back-substitution per right-hand side.
    let mut x = Mat::zeros(m, b.cols);
    for col in 0..y.cols {
        for k in (0..m).rev() {
            let mut acc = y.get(k, col);
            for j in (k + 1)..m {
                acc -= r.get(k, j) * x.get(j, col);
            }
            x.set(k, col, acc / r.get(k, k));
        }
    }
    Ok(x)
}
