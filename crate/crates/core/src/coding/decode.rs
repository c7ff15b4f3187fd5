//! Recovery of the stacked parameter blocks from a partial response set.

use std::collections::BTreeSet;

use super::{is_decodable, AssignmentMatrix, CodingError, ResponseSet, StackedParams};
use crate::linalg::{self, Mat};

/// Least-squares recovery: solves `C_I * Theta = Y_I` column-wise over the
/// payload coordinates. Exact (up to roundoff) when the responses are
/// consistent linear combinations of some true blocks.
pub fn decode(c: &AssignmentMatrix, responses: &ResponseSet) -> Result<StackedParams, CodingError> {
    let indices = responses.indices();
    if !is_decodable(c, &indices)? {
        return Err(CodingError::NotDecodable);
    }
    let d = responses.dim()?;
    let sub = c.submatrix(&indices);
    let mut rhs = Mat::zeros(indices.len(), d);
    for (r, (_, payload)) in responses.iter().enumerate() {
        for (t, &v) in payload.iter().enumerate() {
            rhs.set(r, t, v);
        }
    }
    let theta = linalg::lstsq(&sub, &rhs).map_err(|e| match e {
        linalg::LinalgError::RankDeficient => CodingError::NotDecodable,
        linalg::LinalgError::DimMismatch(msg) => CodingError::DimensionMismatch(msg),
    })?;
    let blocks: Vec<Vec<f64>> = (0..c.n_agents())
        .map(|i| (0..d).map(|t| theta.get(i, t)).collect())
        .collect();
    StackedParams::new(blocks)
}

/// Iterative (peeling) recovery for binary assignment matrices.
///
/// Repeatedly finds a received row with exactly one unresolved agent, reads
/// that agent's block off the row's residual, and substitutes it into every
/// other row. Linear in the number of non-zero entries, and exact: when it
/// succeeds the result matches [`decode`] up to roundoff. Fails with
/// [`CodingError::PeelingStuck`] when unknowns remain but no degree-one row
/// exists; callers fall back to [`decode`].
pub fn peel_decode(
    c: &AssignmentMatrix,
    responses: &ResponseSet,
) -> Result<StackedParams, CodingError> {
    if !c.is_binary() {
        return Err(CodingError::NonBinaryMatrix);
    }
    for j in responses.indices() {
        if j >= c.n_learners() {
            return Err(CodingError::UnknownLearner {
                learner: j,
                n: c.n_learners(),
            });
        }
    }
    let d = responses.dim()?;
    let m = c.n_agents();

    struct Row {
        unknowns: BTreeSet<usize>,
        residual: Vec<f64>,
    }
    let mut rows: Vec<Row> = responses
        .iter()
        .map(|(j, payload)| Row {
            unknowns: c.assigned_agents(j).into_iter().collect(),
            residual: payload.to_vec(),
        })
        .collect();

    let mut resolved: Vec<Option<Vec<f64>>> = vec![None; m];
    let mut n_resolved = 0;
    while n_resolved < m {
        // Deterministic scan: the first degree-one row in response order.
        let pick = rows.iter().position(|r| r.unknowns.len() == 1);
        let Some(pick) = pick else {
            return Err(CodingError::PeelingStuck);
        };
        let agent = *rows[pick].unknowns.iter().next().expect("degree-one row");
        let value = std::mem::take(&mut rows[pick].residual);
        rows[pick].unknowns.clear();
        for row in rows.iter_mut() {
            if row.unknowns.remove(&agent) {
                for (acc, &v) in row.residual.iter_mut().zip(value.iter()) {
                    *acc -= v;
                }
            }
        }
        resolved[agent] = Some(value);
        n_resolved += 1;
    }

    let blocks: Vec<Vec<f64>> = resolved
        .into_iter()
        .map(|b| b.unwrap_or_else(|| vec![0.0; d]))
        .collect();
    StackedParams::new(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::{
        build_ldpc, build_mds, build_uncoded, encode_response, AssignmentMatrix, Scheme,
    };
    use crate::rng::DetRng;

    fn consistent_responses(
        c: &AssignmentMatrix,
        truth: &StackedParams,
        indices: &[usize],
    ) -> ResponseSet {
        let map = truth.to_block_map();
        indices
            .iter()
            .map(|&j| (j, encode_response(c, j, &map).unwrap()))
            .collect()
    }

    fn random_blocks(m: usize, d: usize, seed: u64) -> StackedParams {
        let mut rng = DetRng::new(seed);
        StackedParams::new(
            (0..m)
                .map(|_| (0..d).map(|_| rng.gaussian()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn max_rel_err(a: &StackedParams, b: &StackedParams) -> f64 {
        let scale = b
            .blocks()
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1.0);
        a.blocks()
            .iter()
            .flatten()
            .zip(b.blocks().iter().flatten())
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
            / scale
    }

    #[test]
    fn decode_uncoded_identity_read_off() {
        let c = build_uncoded(3, 3).unwrap();
        let truth = random_blocks(3, 4, 1);
        let rs = consistent_responses(&c, &truth, &[0, 1, 2]);
        let got = decode(&c, &rs).unwrap();
        assert!(max_rel_err(&got, &truth) < 1e-12);
    }

    #[test]
    fn decode_mds_hand_solved_example() {
        // theta_0 = [1,0], theta_1 = [0,1]; responses from rows 1 and 2 of
        // the (3,2) Vandermonde with alphas (1,2): y_1 = [1,2], y_2 = [1,4].
        let c = build_mds(3, 2, &[1.0, 2.0]).unwrap();
        let rs: ResponseSet = [(1usize, vec![1.0, 2.0]), (2usize, vec![1.0, 4.0])]
            .into_iter()
            .collect();
        let got = decode(&c, &rs).unwrap();
        assert!((got.block(0)[0] - 1.0).abs() < 1e-12);
        assert!(got.block(0)[1].abs() < 1e-12);
        assert!(got.block(1)[0].abs() < 1e-12);
        assert!((got.block(1)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_undersized_set() {
        let c = build_mds(3, 2, &[1.0, 2.0]).unwrap();
        let rs: ResponseSet = [(0usize, vec![1.0, 1.0])].into_iter().collect();
        assert_eq!(decode(&c, &rs).unwrap_err(), CodingError::NotDecodable);
    }

    #[test]
    fn decode_rejects_mismatched_payload_dims() {
        let c = build_mds(3, 2, &[1.0, 2.0]).unwrap();
        let rs: ResponseSet = [(0usize, vec![1.0, 1.0]), (1usize, vec![1.0])]
            .into_iter()
            .collect();
        assert!(matches!(
            decode(&c, &rs).unwrap_err(),
            CodingError::DimensionMismatch(_)
        ));
    }

    #[test]
    fn peel_uncoded_full_set() {
        let c = build_uncoded(4, 4).unwrap();
        let truth = random_blocks(4, 3, 2);
        let rs = consistent_responses(&c, &truth, &[0, 1, 2, 3]);
        let got = peel_decode(&c, &rs).unwrap();
        // Identity rows are read off verbatim: bitwise equality.
        assert_eq!(got, truth);
    }

    #[test]
    fn peel_ldpc_single_erasure_matches_lstsq() {
        let c = build_ldpc(6, 3, 3).unwrap();
        let truth = random_blocks(3, 5, 3);
        for dropped in 0..3 {
            let indices: Vec<usize> = (0..6).filter(|&j| j != dropped).collect();
            let rs = consistent_responses(&c, &truth, &indices);
            let peeled = peel_decode(&c, &rs).unwrap();
            let solved = decode(&c, &rs).unwrap();
            assert!(max_rel_err(&peeled, &solved) < 1e-9, "dropped {dropped}");
            assert!(max_rel_err(&peeled, &truth) < 1e-9);
        }
    }

    #[test]
    fn peel_stuck_when_unknowns_share_all_rows() {
        // Rows 0 and 3 of LDPC(6,3,3) both cover agent 0 only; agents 1 and
        // 2 have no coverage, so peeling must stall.
        let c = build_ldpc(6, 3, 3).unwrap();
        let truth = random_blocks(3, 2, 4);
        let rs = consistent_responses(&c, &truth, &[0, 3]);
        assert_eq!(peel_decode(&c, &rs).unwrap_err(), CodingError::PeelingStuck);
    }

    #[test]
    fn peel_stuck_on_degree_two_cycle_but_lstsq_recovers() {
        // Adversarial binary matrix: rows {a+b, b+c, a+c} have no degree-one
        // row, yet are full rank over the reals, so least squares succeeds
        // where peeling cannot.
        let entries = vec![
            1.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, //
            1.0, 0.0, 1.0, //
        ];
        let c = AssignmentMatrix::from_parts(3, 3, entries, Scheme::Replication).unwrap();
        let truth = random_blocks(3, 2, 5);
        let rs = consistent_responses(&c, &truth, &[0, 1, 2]);
        assert_eq!(peel_decode(&c, &rs).unwrap_err(), CodingError::PeelingStuck);
        let solved = decode(&c, &rs).unwrap();
        assert!(max_rel_err(&solved, &truth) < 1e-9);
    }

    #[test]
    fn peel_rejects_non_binary_scheme() {
        let c = build_mds(3, 2, &[1.0, 2.0]).unwrap();
        let truth = random_blocks(2, 2, 6);
        let rs = consistent_responses(&c, &truth, &[0, 1]);
        assert_eq!(
            peel_decode(&c, &rs).unwrap_err(),
            CodingError::NonBinaryMatrix
        );
    }

    #[test]
    fn round_trip_all_schemes_random_subsets() {
        use crate::coding::{build_random_sparse, build_replication, default_alphas};
        let cases: Vec<AssignmentMatrix> = vec![
            build_uncoded(6, 3).unwrap(),
            build_replication(6, 3).unwrap(),
            build_mds(6, 3, &default_alphas(3)).unwrap(),
            build_random_sparse(6, 3, 0.8, 21).unwrap(),
            build_ldpc(6, 3, 3).unwrap(),
        ];
        let mut rng = DetRng::new(77);
        for c in &cases {
            let truth = random_blocks(3, 6, 8);
            let all: Vec<usize> = (0..6).collect();
            for trial in 0..50 {
                let size = 3 + rng.below(4) as usize;
                let subset = rng.choose_k(&all, size);
                let set = subset.iter().copied().collect();
                if !is_decodable(c, &set).unwrap() {
                    continue;
                }
                let rs = consistent_responses(c, &truth, &subset);
                let got = decode(c, &rs).unwrap();
                assert!(
                    max_rel_err(&got, &truth) < 1e-6,
                    "{:?} trial {trial} subset {subset:?}",
                    c.scheme()
                );
            }
        }
    }
}
