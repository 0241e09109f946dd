use crate::error::{Error, Result};
use crate::layers::{gcn_forward, Activation};
use crate::tensor::{Tape, Tensor};

/// `S = row_softmax(Â H Φ)`, an `n×C` row-stochastic assignment.
pub fn cluster_assign(tape: &mut Tape, h: Tensor, a_hat: Tensor, phi: Tensor) -> Result<Tensor> {
    let logits = gcn_forward(tape, h, a_hat, phi, Activation::None)?;
    tape.row_softmax(logits)
}

/// `(SᵀH, SᵀAS)`.
pub fn coarsen_cluster(
    tape: &mut Tape,
    h: Tensor,
    a: Tensor,
    s: Tensor,
) -> Result<(Tensor, Tensor)> {
    let n = tape.shape(s).0;
    if tape.shape(h).0 != n || tape.shape(a) != (n, n) {
        return Err(Error::dim("coarsen_cluster", tape.shape(a), tape.shape(s)));
    }
    let st = tape.transpose(s)?;
    let hp = tape.matmul(st, h)?;
    let as_ = tape.matmul(a, s)?;
    let ap = tape.matmul(st, as_)?;
    Ok((hp, ap))
}
