//! The five assignment-matrix constructions.

use super::{AssignmentMatrix, CodingError, Scheme};
use crate::linalg::{self, Mat};
use crate::rng::{stream, DetRng};
use crate::util::{log, LogLevel};

/// One-to-one assignment: learner `j < m` updates agent `j` alone, learners
/// `m..n` are idle (all-zero rows).
pub fn build_uncoded(n: usize, m: usize) -> Result<AssignmentMatrix, CodingError> {
    check_dims(n, m)?;
    let mut entries = vec![0.0; n * m];
    for j in 0..m {
        entries[j * m + j] = 1.0;
    }
    AssignmentMatrix::from_parts(n, m, entries, Scheme::Uncoded)
}

/// Round-robin replication: learner `j` updates agent `j mod m`, so each
/// agent is replicated on at least `floor(n / m)` learners.
pub fn build_replication(n: usize, m: usize) -> Result<AssignmentMatrix, CodingError> {
    check_dims(n, m)?;
    let mut entries = vec![0.0; n * m];
    for j in 0..n {
        entries[j * m + (j % m)] = 1.0;
    }
    AssignmentMatrix::from_parts(n, m, entries, Scheme::Replication)
}

/// Vandermonde MDS matrix: `c[j][i] = alphas[i]^j`. With distinct non-zero
/// evaluation points every `m`-row submatrix is nonsingular, so any `m`
/// responses recover all agents.
pub fn build_mds(n: usize, m: usize, alphas: &[f64]) -> Result<AssignmentMatrix, CodingError> {
    check_dims(n, m)?;
    if alphas.len() != m {
        return Err(CodingError::DimensionMismatch(format!(
            "expected {m} evaluation points, got {}",
            alphas.len()
        )));
    }
    if alphas.iter().any(|&a| a == 0.0 || !a.is_finite()) {
        return Err(CodingError::DegenerateAlphas);
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if alphas[i] == alphas[j] {
                return Err(CodingError::DegenerateAlphas);
            }
        }
    }
    let mut entries = vec![0.0; n * m];
    for i in 0..m {
        let mut pow = 1.0;
        for j in 0..n {
            entries[j * m + i] = pow;
            pow *= alphas[i];
        }
    }
    let built = AssignmentMatrix::from_parts(
        n,
        m,
        entries,
        Scheme::Mds {
            alphas: alphas.to_vec(),
        },
    )?;
    let cond = linalg::condition_number(&Mat::from_row_major(n, m, built.entries().to_vec()));
    log(
        LogLevel::Info,
        &format!("mds({n},{m}) assignment matrix condition number {cond:.3e}"),
    );
    Ok(built)
}

/// Default MDS evaluation points: equispaced on `[1/2, 3/2]`.
///
/// The points must all be positive: with mixed signs some row subsets of
/// the Vandermonde matrix become singular (even powers of `a` and `-a`
/// coincide), voiding the any-`m`-rows guarantee. Centering the spread on 1
/// keeps the powers `alpha^j` from exploding or vanishing up to `n = 20`
/// rows, which is what keeps every row subset decodable in double
/// precision.
pub fn default_alphas(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m).map(|i| 0.5 + i as f64 / (m - 1) as f64).collect()
}

const RANDOM_SPARSE_MAX_ATTEMPTS: usize = 100;

/// Bernoulli(p_m)-masked standard-normal entries. Regenerated from scratch
/// (fresh substream per attempt) until the matrix reaches rank `m`, so the
/// result is a pure function of `(n, m, p_m, seed)`.
pub fn build_random_sparse(
    n: usize,
    m: usize,
    p_m: f64,
    seed: u64,
) -> Result<AssignmentMatrix, CodingError> {
    check_dims(n, m)?;
    if !(p_m > 0.0 && p_m <= 1.0) {
        return Err(CodingError::DimensionMismatch(format!(
            "p_m must be in (0, 1], got {p_m}"
        )));
    }
    for attempt in 0..RANDOM_SPARSE_MAX_ATTEMPTS {
        let mut rng = DetRng::new(stream(seed, attempt as u64));
        let mut entries = vec![0.0; n * m];
        for e in entries.iter_mut() {
            // Draw the mask and the value unconditionally so the stream
            // layout does not depend on the mask outcomes.
            let keep = rng.uniform() < p_m;
            let value = rng.gaussian();
            if keep {
                *e = value;
            }
        }
        match AssignmentMatrix::from_parts(n, m, entries, Scheme::RandomSparse { p_m, seed }) {
            Ok(c) => return Ok(c),
            Err(CodingError::ConstructionRankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(CodingError::RankRetryExhausted {
        attempts: RANDOM_SPARSE_MAX_ATTEMPTS,
    })
}

/// Regular LDPC construction.
///
/// Builds the quasi-cyclic parity check matrix `H` whose `(b, c)` block is
/// `A^(b*c)` for a `w x w` cyclic shift `A`, row-reduces it over GF(2) to
/// the systematic form `[P | I]`, and returns the binary `n x m` matrix
/// `[I_m; P]`: the top `m` rows are one-to-one assignments, the bottom
/// `n - m` rows are parity combinations. Recovery arithmetic stays over the
/// reals (the entries are just 0/1 there).
pub fn build_ldpc(n: usize, m: usize, w: usize) -> Result<AssignmentMatrix, CodingError> {
    check_dims(n, m)?;
    if !is_prime(w) {
        return Err(CodingError::InvalidLdpcParams(format!(
            "w = {w} is not prime"
        )));
    }
    if !n.is_multiple_of(w) {
        return Err(CodingError::InvalidLdpcParams(format!(
            "w = {w} does not divide n = {n}"
        )));
    }
    let y = n - m;
    if y == 0 {
        return Err(CodingError::InvalidLdpcParams(
            "n - m must be positive (no parity rows otherwise)".into(),
        ));
    }
    if !y.is_multiple_of(w) {
        return Err(CodingError::InvalidLdpcParams(format!(
            "w = {w} does not divide n - m = {y}"
        )));
    }
    if y / w > w {
        return Err(CodingError::InvalidLdpcParams(format!(
            "(n - m) / w = {} exceeds w = {w} block rows",
            y / w
        )));
    }

    // H over GF(2): block (b, c) = A^(b*c), where A^e maps row r to column
    // (r + e) mod w.
    let block_rows = y / w;
    let block_cols = n / w;
    let mut h = vec![vec![0u8; n]; y];
    for b in 0..block_rows {
        for c in 0..block_cols {
            let e = (b * c) % w;
            for r in 0..w {
                h[b * w + r][c * w + (r + e) % w] = 1;
            }
        }
    }

    // Gauss-Jordan targeting the identity in the last n - m columns.
    for col in 0..y {
        let target = m + col;
        let pivot = (col..y).find(|&r| h[r][target] == 1).ok_or_else(|| {
            CodingError::InvalidLdpcParams(format!(
                "parity check matrix cannot be put in [P | I] form \
                 (no pivot for column {target}); choose n, m, w so that the \
                 right (n-m) x (n-m) block of H is invertible over GF(2)"
            ))
        })?;
        h.swap(col, pivot);
        for r in 0..y {
            if r != col && h[r][target] == 1 {
                let (pivot_row, other) = if r < col {
                    let (lo, hi) = h.split_at_mut(col);
                    (&hi[0], &mut lo[r])
                } else {
                    let (lo, hi) = h.split_at_mut(r);
                    (&lo[col], &mut hi[0])
                };
                for (cell, p) in other.iter_mut().zip(pivot_row.iter()) {
                    *cell ^= p;
                }
            }
        }
    }

    let mut entries = vec![0.0; n * m];
    for i in 0..m {
        entries[i * m + i] = 1.0;
    }
    for r in 0..y {
        for i in 0..m {
            entries[(m + r) * m + i] = h[r][i] as f64;
        }
    }
    AssignmentMatrix::from_parts(n, m, entries, Scheme::Ldpc { w })
}

fn check_dims(n: usize, m: usize) -> Result<(), CodingError> {
    if m == 0 || n == 0 || m > n {
        return Err(CodingError::InvalidDims { n, m });
    }
    Ok(())
}

fn is_prime(w: usize) -> bool {
    if w < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= w {
        if w.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}
