//! Learnable soft assignment of entities to groups.
//!
//! The mapping matrix holds unconstrained logits; every forward pass
//! projects each row onto the probability simplex with sparsemax, so each
//! entity distributes one unit of mass over the groups and noisy
//! assignments are truncated to exactly zero. The same matrix is shared by
//! every timestep and every hierarchical layer.

use crate::error::Result;
use crate::model::Binder;
use crate::tensor::{sparsemax_rows, xavier_init, Tape, Tensor, Var};

/// Unconstrained entity-to-group logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    /// [n_entities, n_groups] logits; the effective mapping is their
    /// row-wise sparsemax.
    pub raw: Tensor,
}

impl MappingMatrix {
    pub fn init(n_entities: usize, n_groups: usize, seed: u64) -> Result<Self> {
        Ok(MappingMatrix {
            raw: xavier_init(n_entities, n_groups, seed)?,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.raw.rows()
    }

    pub fn n_groups(&self) -> usize {
        self.raw.cols()
    }

    /// The row-stochastic, sparse assignment matrix.
    pub fn effective_mapping(&self) -> Result<Tensor> {
        sparsemax_rows(&self.raw)
    }

    pub fn bind(&self, binder: &mut Binder<'_>) -> Var {
        binder.bind("mapper.raw", &self.raw)
    }
}

/// Sparsemax of the bound logits; the differentiable effective mapping.
pub fn effective_mapping_var(tape: &Tape, raw: Var) -> Result<Var> {
    tape.sparsemax_rows(raw)
}

/// Pool entity rows into group rows: `G = M^T E`.
pub fn entities_to_groups(tape: &Tape, mapping: Var, entities: Var) -> Result<Var> {
    let mt = tape.transpose(mapping)?;
    tape.matmul(mt, entities)
}

/// Distribute group rows back to entity rows: `E = M G`.
pub fn groups_to_entities(tape: &Tape, mapping: Var, groups: Var) -> Result<Var> {
    tape.matmul(mapping, groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(rows).unwrap()
    }

    #[test]
    fn zero_logits_give_uniform_rows() {
        let mapper = MappingMatrix {
            raw: Tensor::zeros(&[3, 4]),
        };
        let m = mapper.effective_mapping().unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((m.get2(i, j) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominant_logit_takes_all_mass() {
        let mut raw = Tensor::zeros(&[1, 16]);
        raw.data_mut()[0] = 2.0;
        let mapper = MappingMatrix { raw };
        let m = mapper.effective_mapping().unwrap();
        assert_eq!(m.get2(0, 0), 1.0);
        assert!(m.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_nonnegative_and_sum_to_one() {
        let mapper = MappingMatrix::init(10, 5, 3).unwrap();
        let m = mapper.effective_mapping().unwrap();
        for i in 0..10 {
            let row = m.row(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_mapping_passes_entities_through() {
        let tape = Tape::new();
        let m = tape.constant(&Tensor::eye(3));
        let e = tape.constant(&mat(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
        let g = entities_to_groups(&tape, m, e).unwrap();
        assert_eq!(tape.value_of(g).data(), tape.value_of(e).data());
        let back = groups_to_entities(&tape, m, g).unwrap();
        assert_eq!(tape.value_of(back).data(), tape.value_of(e).data());
    }

    #[test]
    fn zero_entities_give_zero_groups() {
        let tape = Tape::new();
        let m = tape.constant(&mat(&[vec![0.5, 0.5], vec![1.0, 0.0]]));
        let e = tape.constant(&Tensor::zeros(&[2, 3]));
        let g = entities_to_groups(&tape, m, e).unwrap();
        assert!(tape.value_of(g).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_pooling() {
        // M rows [1,0],[0,1],[0.5,0.5], E rows [2],[4],[6] -> G = [[5],[7]].
        let tape = Tape::new();
        let m = tape.constant(&mat(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]));
        let e = tape.constant(&mat(&[vec![2.0], vec![4.0], vec![6.0]]));
        let g = entities_to_groups(&tape, m, e).unwrap();
        assert_eq!(tape.value_of(g).data(), &[5.0, 7.0]);
    }

    #[test]
    fn hand_computed_backprojection() {
        // M row [0.5, 0.5], G' rows [2],[6] -> entity row [4].
        let tape = Tape::new();
        let m = tape.constant(&mat(&[vec![0.5, 0.5]]));
        let g = tape.constant(&mat(&[vec![2.0], vec![6.0]]));
        let e = groups_to_entities(&tape, m, g).unwrap();
        assert_eq!(tape.value_of(e).data(), &[4.0]);
    }

    #[test]
    fn identical_group_rows_collapse_to_that_row() {
        // Rows of M sum to 1, so each output row is a convex combination.
        let tape = Tape::new();
        let mapper = MappingMatrix::init(4, 3, 7).unwrap();
        let m_eff = tape.constant(&mapper.effective_mapping().unwrap());
        let v = vec![0.25, -1.5];
        let g = tape.constant(&mat(&[v.clone(), v.clone(), v.clone()]));
        let e = groups_to_entities(&tape, m_eff, g).unwrap();
        let out = tape.value_of(e);
        for i in 0..4 {
            for (j, &vj) in v.iter().enumerate() {
                assert!((out.get2(i, j) - vj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn convexity_of_backprojection() {
        let mapper = MappingMatrix::init(5, 3, 2).unwrap();
        let m_eff = mapper.effective_mapping().unwrap();
        let tape = Tape::new();
        let m = tape.constant(&m_eff);
        let groups = mat(&[vec![1.0], vec![2.0], vec![10.0]]);
        let g = tape.constant(&groups);
        let e = groups_to_entities(&tape, m, g).unwrap();
        let lo = groups.data().iter().cloned().fold(f64::MAX, f64::min);
        let hi = groups.data().iter().cloned().fold(f64::MIN, f64::max);
        for &v in tape.value_of(e).data() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn mass_is_conserved_columnwise() {
        // Column sums of G equal M^T applied to column sums of E.
        let mapper = MappingMatrix::init(6, 4, 5).unwrap();
        let m_eff = mapper.effective_mapping().unwrap();
        let tape = Tape::new();
        let m = tape.constant(&m_eff);
        let e_t = xavier_init(6, 3, 99).unwrap();
        let e = tape.constant(&e_t);
        let g = entities_to_groups(&tape, m, e).unwrap();
        let gv = tape.value_of(g);
        for j in 0..3 {
            let direct: f64 = (0..4).map(|k| gv.get2(k, j)).sum();
            let expected: f64 = (0..6)
                .map(|i| e_t.get2(i, j) * m_eff.row(i).iter().sum::<f64>())
                .sum();
            assert!((direct - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn group_relabeling_is_equivariant() {
        let mapper = MappingMatrix::init(5, 3, 8).unwrap();
        let m_eff = mapper.effective_mapping().unwrap();
        let e_t = xavier_init(5, 2, 21).unwrap();
        let perm = [2usize, 0, 1];

        let tape = Tape::new();
        let g = entities_to_groups(&tape, tape.constant(&m_eff), tape.constant(&e_t)).unwrap();
        let gv = tape.value_of(g);

        // Permute the columns of M, recompute, and check the rows of G moved
        // with the permutation.
        let mut permuted = Tensor::zeros(&[5, 3]);
        for i in 0..5 {
            for j in 0..3 {
                let v = m_eff.get2(i, j);
                permuted.data_mut()[i * 3 + perm[j]] = v;
            }
        }
        let g2 = entities_to_groups(&tape, tape.constant(&permuted), tape.constant(&e_t)).unwrap();
        let g2v = tape.value_of(g2);
        for j in 0..3 {
            assert_eq!(gv.row(j), g2v.row(perm[j]));
        }
    }

    #[test]
    fn gradients_flow_through_mapping_and_entities() {
        use crate::tensor::gradcheck;

        let params = vec![
            ("raw".to_string(), xavier_init(4, 3, 13).unwrap()),
            ("e".to_string(), xavier_init(4, 2, 14).unwrap()),
        ];
        let loss = |ps: &[(String, Tensor)]| -> Result<f64> {
            let tape = Tape::new();
            let raw = tape.param(&ps[0].1);
            let e = tape.param(&ps[1].1);
            let m = effective_mapping_var(&tape, raw)?;
            let g = entities_to_groups(&tape, m, e)?;
            let back = groups_to_entities(&tape, m, g)?;
            let sq = tape.mul(back, back)?;
            Ok(tape.value_of(tape.sum_all(sq)?).data()[0])
        };
        let tape = Tape::new();
        let raw = tape.param(&params[0].1);
        let e = tape.param(&params[1].1);
        let m = effective_mapping_var(&tape, raw).unwrap();
        let g = entities_to_groups(&tape, m, e).unwrap();
        let back = groups_to_entities(&tape, m, g).unwrap();
        let sq = tape.mul(back, back).unwrap();
        let l = tape.sum_all(sq).unwrap();
        let grads = tape.backward(l).unwrap();
        let report = gradcheck::compare(
            &loss,
            &params,
            &[grads.wrt(raw), grads.wrt(e)],
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passes(1e-4), "worst: {:?}", report.worst);
        assert!(!grads.is_zero(raw), "mapping logits must receive gradient");
    }
}
