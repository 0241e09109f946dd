//! GCN propagation, readout and prediction heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Binding, Matrix, ParamId, Params, Tape, Tensor};

/// `D̃^(-1/2) (A + I) D̃^(-1/2)` for a dense symmetric adjacency.
pub fn gcn_norm(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = tilde.row_sums().into_iter().map(|d| d.powf(-0.5)).collect();
    Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * tilde[(i, j)] * inv_sqrt[j])
}

/// Differentiable [`gcn_norm`]. Constant inputs are normalised eagerly.
pub fn gcn_norm_tensor(tape: &mut Tape, a: Tensor) -> Result<Tensor> {
    if !tape.requires_grad(a) {
        let v = gcn_norm(tape.value(a));
        return Ok(tape.constant(v));
    }
    let n = tape.shape(a).0;
    let eye = tape.constant(Matrix::identity(n));
    let tilde = tape.add(a, eye)?;
    let deg = tape.row_sums(tilde)?;
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let scale = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    tape.hadamard(tilde, scale)
}

/// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, t: Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => tape.relu(t),
            Activation::None => Ok(t),
        }
    }
}

/// One graph convolution, `σ(Â H W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayer {
    pub fn new(
        params: &mut Params,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_out == 0 || d_in == 0 {
            return Err(Error::InvalidArgument(format!(
                "gcn layer {name} has zero width"
            )));
        }
        let weight = params.add(format!("{name}.weight"), glorot(d_in, d_out, rng));
        Ok(Self {
            weight,
            activation,
            d_in,
            d_out,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        h: Tensor,
        a_hat: Tensor,
    ) -> Result<Tensor> {
        gcn_forward(tape, h, a_hat, bind.get(self.weight), self.activation)
    }
}

/// `σ(Â H W)` with explicit tensors.
pub fn gcn_forward(
    tape: &mut Tape,
    h: Tensor,
    a_hat: Tensor,
    w: Tensor,
    act: Activation,
) -> Result<Tensor> {
    let (n, _) = tape.shape(h);
    let (ra, ca) = tape.shape(a_hat);
    if ra != n || ca != n {
        return Err(Error::dim("gcn_forward", tape.shape(h), (ra, ca)));
    }
    let hw = tape.matmul(h, w)?;
    let out = tape.matmul(a_hat, hw)?;
    act.apply(tape, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: params.add(format!("{name}.weight"), glorot(d_in, d_out, rng)),
            bias: params.add(format!("{name}.bias"), Matrix::zeros(1, d_out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, h: Tensor) -> Result<Tensor> {
        let z = tape.matmul(h, bind.get(self.weight))?;
        tape.add_row(z, bind.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Classification { classes: usize },
    Regression,
}

/// Two-layer MLP head: `d → hidden` with ReLU, then `hidden → C` with
/// log-softmax (classification) or `hidden → 1` (regression).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
    pub kind: HeadKind,
}

impl Head {
    pub fn new(
        params: &mut Params,
        d_in: usize,
        hidden: usize,
        kind: HeadKind,
        rng: &mut impl Rng,
    ) -> Self {
        let d_out = match kind {
            HeadKind::Classification { classes } => classes,
            HeadKind::Regression => 1,
        };
        Self {
            hidden: Linear::new(params, "head.hidden", d_in, hidden, rng),
            out: Linear::new(params, "head.out", hidden, d_out, rng),
            kind,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, h: Tensor) -> Result<Tensor> {
        let z = self.hidden.forward(tape, bind, h)?;
        let z = tape.relu(z)?;
        let z = self.out.forward(tape, bind, z)?;
        match self.kind {
            HeadKind::Classification { .. } => tape.log_softmax(z),
            HeadKind::Regression => Ok(z),
        }
    }
}

/// Row `g` of the result is the mean of the rows of `h` whose indicator is `g`.
pub fn global_mean_readout(
    tape: &mut Tape,
    h: Tensor,
    indicator: &[usize],
    graphs: usize,
) -> Result<Tensor> {
    let n = tape.shape(h).0;
    if indicator.len() != n {
        return Err(Error::dim(
            "global_mean_readout",
            tape.shape(h),
            (indicator.len(), 1),
        ));
    }
    let mut counts = vec![0usize; graphs];
    for &g in indicator {
        if g >= graphs {
            return Err(Error::InvalidArgument(format!(
                "indicator value {g} >= {graphs}"
            )));
        }
        counts[g] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Empty(if g == 0 && graphs == 1 {
            "graph has no nodes left for readout"
        } else {
            "a graph in the batch has no nodes left for readout"
        }));
    }
    let mut pool = Matrix::zeros(graphs, n);
    for (v, &g) in indicator.iter().enumerate() {
        pool[(g, v)] = 1.0 / counts[g] as f64;
    }
    let pool = tape.constant(pool);
    tape.matmul(pool, h)
}

/// Mean negative log-likelihood of `targets` under row log-probabilities.
pub fn nll_loss(tape: &mut Tape, log_probs: Tensor, targets: &[usize]) -> Result<Tensor> {
    let (n, c) = tape.shape(log_probs);
    if targets.len() != n || n == 0 {
        return Err(Error::dim("nll_loss", (n, c), (targets.len(), 1)));
    }
    let mut mask = Matrix::zeros(n, c);
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::InvalidArgument(format!("target class {t} >= {c}")));
        }
        mask[(i, t)] = -1.0 / n as f64;
    }
    let mask = tape.constant(mask);
    let picked = tape.hadamard(log_probs, mask)?;
    tape.sum(picked)
}

/// Mean squared error between an `n×1` prediction and targets.
pub fn mse_loss(tape: &mut Tape, pred: Tensor, targets: &[f64]) -> Result<Tensor> {
    let (n, c) = tape.shape(pred);
    if c != 1 || targets.len() != n || n == 0 {
        return Err(Error::dim("mse_loss", (n, c), (targets.len(), 1)));
    }
    let t = tape.constant(Matrix::column(targets));
    let diff = tape.sub(pred, t)?;
    let sq = tape.hadamard(diff, diff)?;
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::rng::seeded;
    use crate::tensor::gradcheck_many;

    #[test]
    fn norm_of_single_node_is_one() {
        assert_eq!(gcn_norm(&Matrix::zeros(1, 1)), Matrix::scalar(1.0));
    }

    #[test]
    fn norm_of_single_edge() {
        let a = path(2).dense_adjacency();
        let n = gcn_norm(&a);
        assert!(n.max_abs_diff(&Matrix::filled(2, 2, 0.5)) < 1e-15);
    }

    #[test]
    fn norm_of_path_three() {
        let n = gcn_norm(&path(3).dense_adjacency());
        assert!((n[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((n[(0, 1)] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((n[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(n.is_symmetric(0.0));
    }

    #[test]
    fn norm_tensor_matches_dense_and_differentiates() {
        let a = Matrix::from_rows(&[[0.0, 0.7, 0.2], [0.7, 0.3, 1.1], [0.2, 1.1, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let t = tape.variable(a.clone());
        let n = gcn_norm_tensor(&mut tape, t).unwrap();
        assert!(tape.value(n).max_abs_diff(&gcn_norm(&a)) < 1e-14);
        let w = Matrix::from_fn(3, 3, |i, j| 0.3 + (i * 3 + j) as f64 * 0.1);
        let err = gradcheck_many(&[a, w], |t, xs| {
            let n = gcn_norm_tensor(t, xs[0])?;
            let p = t.hadamard(n, xs[1])?;
            t.sum(p)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn identity_weights_reproduce_normalised_adjacency() {
        let a_hat = gcn_norm(&cycle(4).dense_adjacency());
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::identity(4));
        let w = tape.constant(Matrix::identity(4));
        let ah = tape.constant(a_hat.clone());
        let out = gcn_forward(&mut tape, h, ah, w, Activation::None).unwrap();
        assert!(tape.value(out).max_abs_diff(&a_hat) < 1e-15);
    }

    #[test]
    fn edgeless_graph_is_plain_linear_map() {
        let mut rng = seeded(3);
        let x = glorot(3, 2, &mut rng);
        let w = glorot(2, 4, &mut rng);
        let mut tape = Tape::new();
        let h = tape.constant(x.clone());
        let wt = tape.constant(w.clone());
        let ah = tape.constant(gcn_norm(&Matrix::zeros(3, 3)));
        let out = gcn_forward(&mut tape, h, ah, wt, Activation::Relu).unwrap();
        let expected = x.matmul(&w).unwrap().map(|v| v.max(0.0));
        assert!(tape.value(out).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn gcn_forward_rejects_bad_adjacency() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::zeros(3, 2));
        let w = tape.constant(Matrix::zeros(2, 2));
        let ah = tape.constant(Matrix::identity(4));
        assert!(gcn_forward(&mut tape, h, ah, w, Activation::None).is_err());
    }

    #[test]
    fn readout_means() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[[1.0], [3.0]]).unwrap());
        let r = global_mean_readout(&mut tape, h, &[0, 0], 1).unwrap();
        assert_eq!(tape.value(r).item(), 2.0);

        let h = tape.constant(Matrix::from_rows(&[[4.0, 1.0], [1.0, 0.0], [2.0, 5.0]]).unwrap());
        let r = global_mean_readout(&mut tape, h, &[0, 1, 1], 2).unwrap();
        assert_eq!(
            tape.value(r),
            &Matrix::from_rows(&[[4.0, 1.0], [1.5, 2.5]]).unwrap()
        );
    }

    #[test]
    fn readout_rejects_empty_graph() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::zeros(2, 1));
        assert!(global_mean_readout(&mut tape, h, &[0, 0], 2).is_err());
    }

    #[test]
    fn nll_of_uniform_is_log_c() {
        let mut tape = Tape::new();
        let z = tape.constant(Matrix::zeros(2, 4));
        let lp = tape.log_softmax(z).unwrap();
        let l = nll_loss(&mut tape, lp, &[0, 3]).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-14);
    }
}
