//! Assignment-matrix construction and recovery of coded learner responses.
//!
//! An [`AssignmentMatrix`] is an `N x M` real matrix `C` over `N` learners
//! and `M` agents: learner `j` updates agent `i` whenever `c[j][i] != 0` and
//! responds with `y_j = sum_i c[j][i] * theta_i'`. The controller can
//! recover all `M` updated parameter blocks from any response subset whose
//! rows have rank `M`, via least squares ([`decode`]) or, for binary
//! matrices, a linear-time peeling pass ([`peel_decode`]).
//!
//! Five constructions are provided: uncoded one-to-one assignment,
//! round-robin replication, Vandermonde MDS, Bernoulli-masked Gaussian
//! random sparse, and a regular LDPC code built from a quasi-cyclic parity
//! check matrix.

mod decode;
mod schemes;

pub use decode::{decode, peel_decode};
pub use schemes::{
    build_ldpc, build_mds, build_random_sparse, build_replication, build_uncoded, default_alphas,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat};

/// Largest `N` accepted by the brute-force subset analysis in
/// [`worst_case_tolerance`].
pub const TOLERANCE_BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodingError {
    #[error("invalid dimensions: n={n}, m={m} (need 1 <= m <= n)")]
    InvalidDims { n: usize, m: usize },
    #[error("MDS evaluation points must be distinct and non-zero")]
    DegenerateAlphas,
    #[error("random sparse construction failed to reach rank m after {attempts} attempts")]
    RankRetryExhausted { attempts: usize },
    #[error("invalid LDPC parameters: {0}")]
    InvalidLdpcParams(String),
    #[error("constructed matrix is rank deficient (rank {rank} < m = {m})")]
    ConstructionRankDeficient { rank: usize, m: usize },
    #[error("response set is not decodable (rank < m)")]
    NotDecodable,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("learner id {learner} out of range for n={n}")]
    UnknownLearner { learner: usize, n: usize },
    #[error("peeling stalled: no response with a single unknown block remains")]
    PeelingStuck,
    #[error("peeling requires a binary (0/1) assignment matrix")]
    NonBinaryMatrix,
    #[error("missing parameter block for agent {agent}")]
    MissingBlock { agent: usize },
    #[error("n={n} exceeds the brute-force tolerance limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("malformed assignment matrix JSON: {0}")]
    Json(String),
}

/// Which construction produced an assignment matrix, with the parameters
/// needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "params", rename_all = "snake_case")]
pub enum Scheme {
    Uncoded,
    Replication,
    Mds { alphas: Vec<f64> },
    RandomSparse { p_m: f64, seed: u64 },
    Ldpc { w: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Uncoded => "uncoded",
            Scheme::Replication => "replication",
            Scheme::Mds { .. } => "mds",
            Scheme::RandomSparse { .. } => "random_sparse",
            Scheme::Ldpc { .. } => "ldpc",
        }
    }
}

/// `N x M` agent-to-learner assignment matrix with full column rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    #[serde(flatten)]
    scheme: Scheme,
    n: usize,
    m: usize,
    /// Row-major `n * m` entries.
    entries: Vec<f64>,
}

impl AssignmentMatrix {
    /// Wraps raw entries after checking shape and numerical rank.
    pub fn from_parts(
        n: usize,
        m: usize,
        entries: Vec<f64>,
        scheme: Scheme,
    ) -> Result<Self, CodingError> {
        if m == 0 || n == 0 || m > n {
            return Err(CodingError::InvalidDims { n, m });
        }
        if entries.len() != n * m {
            return Err(CodingError::DimensionMismatch(format!(
                "expected {} entries, got {}",
                n * m,
                entries.len()
            )));
        }
        let mat = Mat::from_row_major(n, m, entries.clone());
        let rank = linalg::numerical_rank(&mat);
        if rank != m {
            return Err(CodingError::ConstructionRankDeficient { rank, m });
        }
        Ok(Self {
            scheme,
            n,
            m,
            entries,
        })
    }

    pub fn n_learners(&self) -> usize {
        self.n
    }

    pub fn n_agents(&self) -> usize {
        self.m
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    #[inline]
    pub fn get(&self, learner: usize, agent: usize) -> f64 {
        self.entries[learner * self.m + agent]
    }

    pub fn row(&self, learner: usize) -> &[f64] {
        &self.entries[learner * self.m..(learner + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Agents assigned to `learner` (non-zero columns of its row).
    pub fn assigned_agents(&self, learner: usize) -> Vec<usize> {
        self.row(learner)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Learners with at least one non-zero entry (those that do any work).
    pub fn active_learners(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| self.row(j).iter().any(|&v| v != 0.0))
            .collect()
    }

    /// True when every entry is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Submatrix of the rows in `indices` (ascending order).
    pub(crate) fn submatrix(&self, indices: &BTreeSet<usize>) -> Mat {
        let mut m = Mat::zeros(indices.len(), self.m);
        for (r, &j) in indices.iter().enumerate() {
            for c in 0..self.m {
                m.set(r, c, self.get(j, c));
            }
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment matrix serializes")
    }

    /// Parses and re-validates a matrix serialized by [`Self::to_json`].
    pub fn from_json(json: &str) -> Result<Self, CodingError> {
        let raw: AssignmentMatrix =
            serde_json::from_str(json).map_err(|e| CodingError::Json(e.to_string()))?;
        Self::from_parts(raw.n, raw.m, raw.entries, raw.scheme)
    }
}

/// Responses received from a subset of learners, keyed by learner id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseSet {
    payloads: BTreeMap<usize, Vec<f64>>,
}

impl ResponseSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, learner: usize, payload: Vec<f64>) {
        self.payloads.insert(learner, payload);
    }

    pub fn indices(&self) -> BTreeSet<usize> {
        self.payloads.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn get(&self, learner: usize) -> Option<&[f64]> {
        self.payloads.get(&learner).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.payloads.iter().map(|(&j, v)| (j, v.as_slice()))
    }

    /// Common payload dimension, or an error if payloads disagree.
    pub fn dim(&self) -> Result<usize, CodingError> {
        let mut it = self.payloads.values();
        let d = match it.next() {
            Some(v) => v.len(),
            None => return Ok(0),
        };
        for v in it {
            if v.len() != d {
                return Err(CodingError::DimensionMismatch(format!(
                    "payload dims differ: {d} vs {}",
                    v.len()
                )));
            }
        }
        Ok(d)
    }
}

impl FromIterator<(usize, Vec<f64>)> for ResponseSet {
    fn from_iter<T: IntoIterator<Item = (usize, Vec<f64>)>>(iter: T) -> Self {
        Self {
            payloads: iter.into_iter().collect(),
        }
    }
}

/// The `M` recovered parameter blocks, all of one common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedParams {
    blocks: Vec<Vec<f64>>,
}

impl StackedParams {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self, CodingError> {
        if let Some(first) = blocks.first() {
            let d = first.len();
            if blocks.iter().any(|b| b.len() != d) {
                return Err(CodingError::DimensionMismatch(
                    "parameter blocks have differing dimensions".into(),
                ));
            }
        }
        Ok(Self { blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.len())
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn to_block_map(&self) -> BlockMap {
        self.blocks.iter().cloned().enumerate().collect()
    }
}

/// Partial map from agent id to its updated parameter block.
pub type BlockMap = BTreeMap<usize, Vec<f64>>;

/// True iff the rows of `c` indexed by `indices` have numerical rank `M`.
/// The empty set is simply not decodable; out-of-range ids are an error.
pub fn is_decodable(c: &AssignmentMatrix, indices: &BTreeSet<usize>) -> Result<bool, CodingError> {
    for &j in indices {
        if j >= c.n_learners() {
            return Err(CodingError::UnknownLearner {
                learner: j,
                n: c.n_learners(),
            });
        }
    }
    if indices.len() < c.n_agents() {
        return Ok(false);
    }
    Ok(linalg::numerical_rank(&c.submatrix(indices)) == c.n_agents())
}

/// Largest `k` such that every subset of `N - k` rows is decodable, i.e. the
/// number of arbitrary response losses the code provably survives. Brute
/// force over row subsets; rejects `N` above [`TOLERANCE_BRUTE_FORCE_LIMIT`].
pub fn worst_case_tolerance(c: &AssignmentMatrix) -> Result<usize, CodingError> {
    let n = c.n_learners();
    let m = c.n_agents();
    if n > TOLERANCE_BRUTE_FORCE_LIMIT {
        return Err(CodingError::TooLarge {
            n,
            limit: TOLERANCE_BRUTE_FORCE_LIMIT,
        });
    }
    // Losing more than n - m rows leaves fewer than m responses, which can
    // never reach rank m, so k is capped at n - m.
    for k in 1..=(n - m) {
        if !every_subset_decodable(c, n - k)? {
            return Ok(k - 1);
        }
    }
    Ok(n - m)
}

fn every_subset_decodable(c: &AssignmentMatrix, size: usize) -> Result<bool, CodingError> {
    let n = c.n_learners();
    let mut subset: Vec<usize> = (0..size).collect();
    loop {
        let set: BTreeSet<usize> = subset.iter().copied().collect();
        if !is_decodable(c, &set)? {
            return Ok(false);
        }
        // Advance to the next size-`size` combination of {0..n-1}.
        let mut i = size;
        loop {
            if i == 0 {
                return Ok(true);
            }
            i -= 1;
            if subset[i] != i + n - size {
                subset[i] += 1;
                for j in (i + 1)..size {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Learner `j`'s coded response `y_j = sum_i c[j][i] * theta_i'` from the
/// blocks it was assigned. Blocks for unassigned agents may be absent.
pub fn encode_response(
    c: &AssignmentMatrix,
    learner: usize,
    blocks: &BlockMap,
) -> Result<Vec<f64>, CodingError> {
    if learner >= c.n_learners() {
        return Err(CodingError::UnknownLearner {
            learner,
            n: c.n_learners(),
        });
    }
    let mut dim: Option<usize> = None;
    for b in blocks.values() {
        match dim {
            None => dim = Some(b.len()),
            Some(d) if d != b.len() => {
                return Err(CodingError::DimensionMismatch(
                    "parameter blocks have differing dimensions".into(),
                ))
            }
            _ => {}
        }
    }
    let d = dim.unwrap_or(0);
    let mut y = vec![0.0; d];
    for agent in 0..c.n_agents() {
        let coeff = c.get(learner, agent);
        if coeff == 0.0 {
            continue;
        }
        let block = blocks
            .get(&agent)
            .ok_or(CodingError::MissingBlock { agent })?;
        for (acc, &v) in y.iter_mut().zip(block.iter()) {
            *acc += coeff * v;
        }
    }
    Ok(y)
}
