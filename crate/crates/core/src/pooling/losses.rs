use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Tensor};

/// Eigenvalue floor for the `Tr(√M)` gradient, which diverges at rank loss.
const EIGEN_FLOOR: f64 = 1e-10;
const LOG_EPS: f64 = 1e-12;

fn check_square(tape: &Tape, op: &'static str, a: Tensor, s: Tensor) -> Result<()> {
    let n = tape.shape(s).0;
    if tape.shape(a) != (n, n) {
        return Err(Error::dim(op, tape.shape(a), tape.shape(s)));
    }
    Ok(())
}

fn frobenius(tape: &mut Tape, x: Tensor) -> Result<Tensor> {
    let sq = tape.hadamard(x, x)?;
    let total = tape.sum(sq)?;
    tape.sqrt(total)
}

/// `Tr(SᵀDS)` with `D = diag(A·1)`, plus the degree column.
fn degree_trace(tape: &mut Tape, a: Tensor, s: Tensor) -> Result<(Tensor, Tensor)> {
    let d = tape.row_sums(a)?;
    let s2 = tape.hadamard(s, s)?;
    let weighted = tape.mul_col(s2, d)?;
    Ok((tape.sum(weighted)?, d))
}

fn assoc_trace(tape: &mut Tape, a: Tensor, s: Tensor) -> Result<Tensor> {
    let st = tape.transpose(s)?;
    let as_ = tape.matmul(a, s)?;
    let sas = tape.matmul(st, as_)?;
    tape.trace(sas)
}

/// DiffPool regularisers: link `‖A − SSᵀ‖_F / n²` and mean row entropy.
pub fn diffpool_losses(tape: &mut Tape, a: Tensor, s: Tensor) -> Result<(Tensor, Tensor)> {
    check_square(tape, "diffpool_losses", a, s)?;
    let n = tape.shape(s).0 as f64;
    let st = tape.transpose(s)?;
    let sst = tape.matmul(s, st)?;
    let diff = tape.sub(a, sst)?;
    let norm = frobenius(tape, diff)?;
    let link = tape.scale(norm, 1.0 / (n * n))?;

    let shifted = tape.add_const(s, LOG_EPS)?;
    let logs = tape.log(shifted)?;
    let plogp = tape.hadamard(s, logs)?;
    let total = tape.sum(plogp)?;
    let entropy = tape.scale(total, -1.0 / n)?;
    Ok((link, entropy))
}

/// MinCut regularisers: cut `−Tr(SᵀAS)/Tr(SᵀDS)` (0 without edges) and
/// orthogonality `‖SᵀS/‖SᵀS‖_F − I/√C‖_F`.
pub fn mincut_losses(tape: &mut Tape, a: Tensor, s: Tensor) -> Result<(Tensor, Tensor)> {
    check_square(tape, "mincut_losses", a, s)?;
    let c = tape.shape(s).1;
    let (vol, _) = degree_trace(tape, a, s)?;
    let cut = if tape.value(vol).item() == 0.0 {
        tape.constant(Matrix::scalar(0.0))
    } else {
        let num = assoc_trace(tape, a, s)?;
        let ratio = tape.div_scalar(num, vol)?;
        tape.scale(ratio, -1.0)?
    };

    let st = tape.transpose(s)?;
    let sts = tape.matmul(st, s)?;
    let norm = frobenius(tape, sts)?;
    let unit = tape.div_scalar(sts, norm)?;
    let target = tape.constant(Matrix::identity(c).scale(1.0 / (c as f64).sqrt()));
    let diff = tape.sub(unit, target)?;
    let ortho = frobenius(tape, diff)?;
    Ok((cut, ortho))
}

/// DMoN regularisers: negated modularity
/// `−(Tr(SᵀAS) − ‖Sᵀd‖²/2m) / 2m` (0 without edges) and collapse
/// `(√C/n)‖Σᵢ Sᵢ‖ − 1`.
pub fn dmon_losses(tape: &mut Tape, a: Tensor, s: Tensor) -> Result<(Tensor, Tensor)> {
    check_square(tape, "dmon_losses", a, s)?;
    let (n, c) = tape.shape(s);
    let d = tape.row_sums(a)?;
    let two_m = tape.sum(d)?;
    let modularity = if tape.value(two_m).item() == 0.0 {
        tape.constant(Matrix::scalar(0.0))
    } else {
        let assoc = assoc_trace(tape, a, s)?;
        let st = tape.transpose(s)?;
        let std = tape.matmul(st, d)?;
        let sq = tape.hadamard(std, std)?;
        let null = tape.sum(sq)?;
        let null = tape.div_scalar(null, two_m)?;
        let gap = tape.sub(assoc, null)?;
        let q = tape.div_scalar(gap, two_m)?;
        tape.scale(q, -1.0)?
    };

    let sizes = tape.col_sums(s)?;
    let norm = frobenius(tape, sizes)?;
    let scaled = tape.scale(norm, (c as f64).sqrt() / n as f64)?;
    let collapse = tape.add_const(scaled, -1.0)?;
    Ok((modularity, collapse))
}

/// `Tr(M^(1/2))` of a symmetric positive semidefinite `M`, with gradient
/// `½ M^(-1/2)` on the floored spectrum.
fn trace_sqrt(tape: &mut Tape, m: Tensor) -> Result<Tensor> {
    let mv = tape.value(m);
    let c = mv.rows();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(c, c, mv.as_slice()));
    let value: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let inv = eig.eigenvalues.map(|l| 0.5 / l.max(EIGEN_FLOOR).sqrt());
    let v = &eig.eigenvectors;
    let half_inv_sqrt = v * DMatrix::from_diagonal(&inv) * v.transpose();
    let grad = Matrix::from_fn(c, c, |i, j| {
        0.5 * (half_inv_sqrt[(i, j)] + half_inv_sqrt[(j, i)])
    });
    tape.custom(&[m], Matrix::scalar(value), move |up| {
        vec![grad.scale(up.item())]
    })
}

/// `−Tr(√(SᵀS)) / √(nC)`.
pub fn justbalance_loss(tape: &mut Tape, s: Tensor) -> Result<Tensor> {
    let (n, c) = tape.shape(s);
    if n == 0 || c == 0 {
        return Err(Error::Empty(
            "justbalance_loss needs a non-empty assignment",
        ));
    }
    let st = tape.transpose(s)?;
    let sts = tape.matmul(st, s)?;
    let tr = trace_sqrt(tape, sts)?;
    tape.scale(tr, -1.0 / ((n * c) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::{constant_features, Graph};
    use crate::tensor::{gradcheck, softmax_rows};

    fn one_hot(assign: &[usize], c: usize) -> Matrix {
        Matrix::from_fn(
            assign.len(),
            c,
            |i, j| if assign[i] == j { 1.0 } else { 0.0 },
        )
    }

    fn two_cliques(size: usize) -> Graph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for i in 0..size {
                for j in i + 1..size {
                    edges.push((base + i, base + j));
                }
            }
        }
        Graph::from_edges(2 * size, &edges, constant_features(2 * size)).unwrap()
    }

    fn eval2(
        f: fn(&mut Tape, Tensor, Tensor) -> Result<(Tensor, Tensor)>,
        a: &Matrix,
        s: &Matrix,
    ) -> (f64, f64) {
        let mut tape = Tape::new();
        let at = tape.constant(a.clone());
        let st = tape.constant(s.clone());
        let (x, y) = f(&mut tape, at, st).unwrap();
        (tape.value(x).item(), tape.value(y).item())
    }

    fn balance(s: &Matrix) -> f64 {
        let mut tape = Tape::new();
        let st = tape.constant(s.clone());
        let l = justbalance_loss(&mut tape, st).unwrap();
        tape.value(l).item()
    }

    fn interior_assignment(n: usize, c: usize) -> Matrix {
        softmax_rows(&Matrix::from_fn(n, c, |i, j| {
            ((i * 5 + j * 3) % 7) as f64 * 0.4 - 1.0
        }))
    }

    #[test]
    fn diffpool_perfect_reconstruction_and_entropy() {
        let s = one_hot(&[0, 0, 1, 1], 2);
        let a = s.matmul_t(&s);
        let (link, entropy) = eval2(diffpool_losses, &a, &s);
        assert_eq!(link, 0.0);
        assert!(entropy.abs() < 1e-10);
        let (_, h) = eval2(diffpool_losses, &a, &Matrix::filled(4, 2, 0.5));
        assert!((h - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn diffpool_link_dense_oracle() {
        let a = path(4).dense_adjacency();
        let s = interior_assignment(4, 3);
        let want = a.zip_map(&s.matmul_t(&s), |x, y| x - y).frobenius_norm() / 16.0;
        let (link, _) = eval2(diffpool_losses, &a, &s);
        assert!((link - want).abs() < 1e-14);
    }

    #[test]
    fn mincut_on_two_balanced_cliques() {
        let a = two_cliques(3).dense_adjacency();
        let s = one_hot(&[0, 0, 0, 1, 1, 1], 2);
        let (cut, ortho) = eval2(mincut_losses, &a, &s);
        assert!((cut + 1.0).abs() < 1e-14);
        assert!(ortho.abs() < 1e-7);
    }

    #[test]
    fn mincut_uniform_ortho_matches_dense_oracle() {
        let c = 3;
        let s = Matrix::filled(5, c, 1.0 / c as f64);
        let sts = s.t_matmul(&s);
        let unit = sts.scale(1.0 / sts.frobenius_norm());
        let target = Matrix::identity(c).scale(1.0 / (c as f64).sqrt());
        let want = unit.zip_map(&target, |x, y| x - y).frobenius_norm();
        let (_, ortho) = eval2(mincut_losses, &cycle(5).dense_adjacency(), &s);
        assert!((ortho - want).abs() < 1e-14);
    }

    #[test]
    fn mincut_edgeless_cut_is_zero() {
        let (cut, _) = eval2(
            mincut_losses,
            &Matrix::zeros(3, 3),
            &interior_assignment(3, 2),
        );
        assert_eq!(cut, 0.0);
    }

    /// `Σ_ij (A_ij − d_i d_j / 2m) δ(c_i, c_j) / 2m` by brute force.
    fn brute_modularity(g: &Graph, assign: &[usize]) -> f64 {
        let a = g.dense_adjacency();
        let d = a.row_sums();
        let two_m: f64 = d.iter().sum();
        let mut q = 0.0;
        for i in 0..g.n() {
            for j in 0..g.n() {
                if assign[i] == assign[j] {
                    q += a[(i, j)] - d[i] * d[j] / two_m;
                }
            }
        }
        q / two_m
    }

    #[test]
    fn dmon_two_disjoint_edges() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)], constant_features(4)).unwrap();
        let assign = [0, 0, 1, 1];
        let (m, collapse) = eval2(dmon_losses, &g.dense_adjacency(), &one_hot(&assign, 2));
        assert!((m + 0.5).abs() < 1e-14);
        assert!((m + brute_modularity(&g, &assign)).abs() < 1e-14);
        assert!(collapse.abs() < 1e-14);
    }

    #[test]
    fn dmon_single_cluster_has_zero_modularity() {
        let g = two_cliques(4);
        let (m, _) = eval2(
            dmon_losses,
            &g.dense_adjacency(),
            &Matrix::filled(8, 1, 1.0),
        );
        assert!(m.abs() < 1e-14);
    }

    #[test]
    fn dmon_edgeless_modularity_is_zero() {
        let (m, _) = eval2(
            dmon_losses,
            &Matrix::zeros(4, 4),
            &interior_assignment(4, 2),
        );
        assert_eq!(m, 0.0);
    }

    #[test]
    fn justbalance_closed_forms() {
        assert!((balance(&one_hot(&[0, 1, 2, 0, 1, 2], 3)) + 1.0).abs() < 1e-12);
        let lumped = one_hot(&[1, 1, 1, 1], 4);
        assert!((balance(&lumped) + 0.5).abs() < 1e-12);
        assert!((balance(&Matrix::filled(5, 1, 1.0)) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn losses_pass_gradcheck_at_interior_points() {
        let a = Graph::from_edges(
            5,
            &[(0, 1), (1, 2), (2, 0), (3, 4), (1, 3)],
            constant_features(5),
        )
        .unwrap()
        .dense_adjacency();
        let s0 = interior_assignment(5, 3);
        let fs: [fn(&mut Tape, Tensor, Tensor) -> Result<(Tensor, Tensor)>; 3] =
            [diffpool_losses, mincut_losses, dmon_losses];
        for f in fs {
            for pick in 0..2 {
                let a = a.clone();
                let err = gradcheck(&s0, move |t, s| {
                    let at = t.constant(a.clone());
                    let (x, y) = f(t, at, s)?;
                    Ok(if pick == 0 { x } else { y })
                })
                .unwrap();
                assert!(err < 1e-4, "{err}");
            }
        }
        let err = gradcheck(&s0, justbalance_loss).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn adjacency_gradient_reaches_weighted_input() {
        let s0 = interior_assignment(4, 2);
        let a0 = cycle(4).dense_adjacency();
        let err = gradcheck(&a0, move |t, a| {
            let s = t.constant(s0.clone());
            let (cut, _) = mincut_losses(t, a, s)?;
            let (m, _) = dmon_losses(t, a, s)?;
            t.add(cut, m)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
