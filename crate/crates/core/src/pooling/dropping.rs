use super::{select_topk, PoolOutcome, Selection};
use crate::error::{Error, Result};
use crate::layers::{gcn_forward, Activation};
use crate::tensor::{Tape, Tensor};

/// `adj[idx][idx]`, differentiable when `adj` is.
pub fn induced_adjacency(tape: &mut Tape, adj: Tensor, idx: &[usize]) -> Result<Tensor> {
    if !tape.requires_grad(adj) {
        let sub = tape.value(adj).submatrix(idx);
        return Ok(tape.constant(sub));
    }
    let rows = tape.slice_rows(adj, idx)?;
    let t = tape.transpose(rows)?;
    let both = tape.slice_rows(t, idx)?;
    tape.transpose(both)
}

/// Gates `h` by `gate` (an `n×1` column), then keeps the top-scoring rows.
fn keep_top(
    tape: &mut Tape,
    h: Tensor,
    adj: Tensor,
    gate: Tensor,
    ratio: f64,
) -> Result<PoolOutcome> {
    let idx = select_topk(tape.value(gate).as_slice(), ratio)?;
    let gated = tape.mul_col(h, gate)?;
    let hp = tape.slice_rows(gated, &idx)?;
    let ap = induced_adjacency(tape, adj, &idx)?;
    Ok(PoolOutcome {
        h: hp,
        adj: ap,
        selection: Selection::Indices(idx),
        aux: Vec::new(),
    })
}

/// TopK pooling: scores `y = Hp / ‖p‖`, keeps the top `⌈ratio·n⌉` nodes and
/// gates their features by `tanh(y)`.
pub fn topk_pool(
    tape: &mut Tape,
    h: Tensor,
    adj: Tensor,
    p: Tensor,
    ratio: f64,
) -> Result<PoolOutcome> {
    let sq = tape.hadamard(p, p)?;
    let norm_sq = tape.sum(sq)?;
    if tape.value(norm_sq).item() == 0.0 {
        return Err(Error::Numeric(
            "topk projection vector has zero norm".into(),
        ));
    }
    let norm = tape.sqrt(norm_sq)?;
    let raw = tape.matmul(h, p)?;
    let y = tape.div_scalar(raw, norm)?;
    // tanh is monotone, so selecting on the gate equals selecting on y.
    let gate = tape.tanh(y)?;
    let idx = select_topk(tape.value(y).as_slice(), ratio)?;
    let gated = tape.mul_col(h, gate)?;
    let hp = tape.slice_rows(gated, &idx)?;
    let ap = induced_adjacency(tape, adj, &idx)?;
    Ok(PoolOutcome {
        h: hp,
        adj: ap,
        selection: Selection::Indices(idx),
        aux: Vec::new(),
    })
}

/// Self-attention pooling: scores `tanh(GCN_θ(H, Â))` both select and gate.
pub fn sag_pool(
    tape: &mut Tape,
    h: Tensor,
    adj: Tensor,
    a_hat: Tensor,
    theta: Tensor,
    ratio: f64,
) -> Result<PoolOutcome> {
    let raw = gcn_forward(tape, h, a_hat, theta, Activation::None)?;
    let gate = tape.tanh(raw)?;
    keep_top(tape, h, adj, gate, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::layers::gcn_norm;
    use crate::tensor::{gradcheck_many, Matrix};

    #[test]
    fn topk_axis_projection_keeps_largest_feature() {
        let x = Matrix::from_rows(&[[0.1, 5.0], [0.9, -1.0], [0.4, 0.0], [0.7, 2.0]]).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(x.clone());
        let adj = tape.constant(cycle(4).dense_adjacency());
        let p = tape.constant(Matrix::column(&[2.0, 0.0]));
        let out = topk_pool(&mut tape, h, adj, p, 0.5).unwrap();
        assert_eq!(out.indices().unwrap(), &[1, 3]);
        // Kept rows are gated by tanh of the first feature.
        let hp = tape.value(out.h);
        assert!((hp[(0, 0)] - 0.9 * 0.9f64.tanh()).abs() < 1e-15);
        assert!((hp[(1, 1)] - 2.0 * 0.7f64.tanh()).abs() < 1e-15);
        // Nodes 1 and 3 are not adjacent on C4.
        assert_eq!(tape.value(out.adj), &Matrix::zeros(2, 2));
    }

    #[test]
    fn topk_full_ratio_keeps_adjacency_and_gates() {
        let x = Matrix::from_rows(&[[1.0], [-2.0], [0.5]]).unwrap();
        let a = path(3).dense_adjacency();
        let mut tape = Tape::new();
        let h = tape.constant(x.clone());
        let adj = tape.constant(a.clone());
        let p = tape.constant(Matrix::scalar(3.0));
        let out = topk_pool(&mut tape, h, adj, p, 1.0).unwrap();
        assert_eq!(tape.value(out.adj), &a);
        let expected = x.map(|v| v * v.tanh());
        assert!(tape.value(out.h).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn topk_zero_projection_is_numeric_error() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::zeros(2, 2));
        let adj = tape.constant(Matrix::zeros(2, 2));
        let p = tape.constant(Matrix::zeros(2, 1));
        assert!(matches!(
            topk_pool(&mut tape, h, adj, p, 0.5),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn topk_gradcheck_through_projection() {
        let x = Matrix::from_rows(&[[0.3, -1.0], [1.2, 0.4], [-0.5, 0.8], [0.9, 0.1]]).unwrap();
        let a = cycle(4).dense_adjacency();
        let p = Matrix::column(&[0.6, -0.4]);
        let readout = Matrix::from_rows(&[[0.7, -1.3], [0.2, 0.5]]).unwrap();
        let err = gradcheck_many(&[p, x], |t, xs| {
            let adj = t.constant(a.clone());
            let out = topk_pool(t, xs[1], adj, xs[0], 0.5)?;
            let r = t.constant(readout.clone());
            let z = t.hadamard(out.h, r)?;
            t.sum(z)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sag_on_edgeless_graph_is_structure_free() {
        let x = Matrix::from_rows(&[[0.3, -1.0], [1.2, 0.4], [-0.5, 0.8]]).unwrap();
        let theta = Matrix::column(&[1.0, 0.5]);
        let mut tape = Tape::new();
        let h = tape.constant(x.clone());
        let adj = tape.constant(Matrix::zeros(3, 3));
        let a_hat = tape.constant(gcn_norm(&Matrix::zeros(3, 3)));
        let th = tape.constant(theta.clone());
        let out = sag_pool(&mut tape, h, adj, a_hat, th, 0.5).unwrap();
        let scores: Vec<f64> = x
            .matmul(&theta)
            .unwrap()
            .as_slice()
            .iter()
            .map(|v| v.tanh())
            .collect();
        // scores: tanh(-0.2), tanh(1.4), tanh(-0.1) → keep 1 and 2
        assert_eq!(out.indices().unwrap(), &[1, 2]);
        assert!((tape.value(out.h)[(0, 0)] - 1.2 * scores[1]).abs() < 1e-15);
    }

    #[test]
    fn sag_vertex_transitive_ties_keep_lowest() {
        let g = cycle(4);
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::filled(4, 3, 1.0));
        let adj = tape.constant(g.dense_adjacency());
        let a_hat = tape.constant(gcn_norm(&g.dense_adjacency()));
        let th = tape.constant(Matrix::column(&[0.2, -0.1, 0.4]));
        let out = sag_pool(&mut tape, h, adj, a_hat, th, 0.5).unwrap();
        let gate = tape.value(out.h);
        assert_eq!(gate[(0, 0)], gate[(1, 0)]);
        assert_eq!(out.indices().unwrap(), &[0, 1]);
    }

    #[test]
    fn sag_full_ratio_keeps_all_nodes() {
        let g = path(5);
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_fn(5, 2, |i, j| (i + j) as f64 * 0.1));
        let adj = tape.constant(g.dense_adjacency());
        let a_hat = tape.constant(gcn_norm(&g.dense_adjacency()));
        let th = tape.constant(Matrix::column(&[0.5, 0.5]));
        let out = sag_pool(&mut tape, h, adj, a_hat, th, 1.0).unwrap();
        assert_eq!(tape.shape(out.h).0, 5);
    }

    #[test]
    fn induced_adjacency_differentiable_matches_submatrix() {
        let a = Matrix::from_fn(4, 4, |i, j| ((i + 1) * (j + 1)) as f64 * 0.1);
        let mut tape = Tape::new();
        let t = tape.variable(a.clone());
        let s = induced_adjacency(&mut tape, t, &[0, 2, 3]).unwrap();
        assert_eq!(tape.value(s), &a.submatrix(&[0, 2, 3]));
    }
}
