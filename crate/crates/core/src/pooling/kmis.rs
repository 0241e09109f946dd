use std::collections::VecDeque;

use super::{PoolOutcome, Selection};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Tensor};

/// Result of the greedy k-MIS pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KmisSelection {
    /// Selected nodes, ascending.
    pub indices: Vec<usize>,
    /// `assignment[v]` is the position in `indices` of the cluster owning `v`.
    pub assignment: Vec<usize>,
}

impl KmisSelection {
    pub fn cluster_count(&self) -> usize {
        self.indices.len()
    }
}

/// Greedy maximal k-independent set. Nodes are visited by descending score
/// (ties to the lower index); each unclaimed visit becomes a centre and
/// claims every still-unclaimed node within `k` hops. Edges are the nonzero
/// off-diagonal entries of `adj`.
pub fn kmis_select(adj: &Matrix, scores: &[f64], k: usize) -> Result<KmisSelection> {
    let n = adj.rows();
    if adj.cols() != n || scores.len() != n {
        return Err(Error::dim("kmis_select", adj.shape(), (scores.len(), 1)));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("kmis k must be >= 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("kmis scores must be finite".into()));
    }
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && adj[(i, j)] != 0.0).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    const FREE: usize = usize::MAX;
    let mut owner = vec![FREE; n];
    let mut centres = Vec::new();
    let mut dist = vec![FREE; n];
    let mut queue = VecDeque::new();
    for &c in &order {
        if owner[c] != FREE {
            continue;
        }
        owner[c] = c;
        centres.push(c);
        // The closed ball is measured in the full graph; only free nodes are claimed.
        let mut touched = vec![c];
        dist[c] = 0;
        queue.push_back(c);
        while let Some(v) = queue.pop_front() {
            if dist[v] == k {
                continue;
            }
            for &u in &nbrs[v] {
                if dist[u] == FREE {
                    dist[u] = dist[v] + 1;
                    touched.push(u);
                    queue.push_back(u);
                    if owner[u] == FREE {
                        owner[u] = c;
                    }
                }
            }
        }
        for v in touched {
            dist[v] = FREE;
        }
    }
    centres.sort_unstable();
    let mut pos = vec![FREE; n];
    for (p, &c) in centres.iter().enumerate() {
        pos[c] = p;
    }
    Ok(KmisSelection {
        assignment: owner.iter().map(|&o| pos[o]).collect(),
        indices: centres,
    })
}

/// k-MIS pooling: pooled rows are cluster means of `h`; pooled edges join
/// clusters linked by at least one input edge. The pooled diagonal is zero.
pub fn kmis_pool(
    tape: &mut Tape,
    h: Tensor,
    adj: Tensor,
    scores: &[f64],
    k: usize,
) -> Result<PoolOutcome> {
    let (n, _) = tape.shape(h);
    if tape.shape(adj) != (n, n) {
        return Err(Error::dim("kmis_pool", tape.shape(h), tape.shape(adj)));
    }
    let sel = kmis_select(tape.value(adj), scores, k)?;
    let c = sel.cluster_count();
    let mut sizes = vec![0usize; c];
    for &a in &sel.assignment {
        sizes[a] += 1;
    }
    let mut mean = Matrix::zeros(c, n);
    for (v, &a) in sel.assignment.iter().enumerate() {
        mean[(a, v)] = 1.0 / sizes[a] as f64;
    }
    let a = tape.value(adj);
    let mut pooled = Matrix::zeros(c, c);
    for i in 0..n {
        for j in 0..n {
            let (ci, cj) = (sel.assignment[i], sel.assignment[j]);
            if i != j && ci != cj && a[(i, j)] != 0.0 {
                pooled[(ci, cj)] = 1.0;
            }
        }
    }
    let m = tape.constant(mean);
    let hp = tape.matmul(m, h)?;
    let ap = tape.constant(pooled);
    Ok(PoolOutcome {
        h: hp,
        adj: ap,
        selection: Selection::Indices(sel.indices),
        aux: Vec::new(),
    })
}
