use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Prepared;
use crate::error::{Error, Result};
use crate::layers::{gcn_norm_tensor, nll_loss, Activation, GcnLayer};
use crate::pooling::{Family, PoolLayer, PoolSpec};
use crate::tensor::{Binding, Params, Tape, Tensor};

/// Places row `j` of `hp` at row `idx[j]` of an `n`-row zero matrix.
pub fn unpool(tape: &mut Tape, hp: Tensor, idx: &[usize], n: usize) -> Result<Tensor> {
    tape.scatter_rows(hp, idx, n)
}

/// How the upsampled features meet the skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fusion {
    Sum,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
    pub pool: PoolSpec,
    pub fusion: Fusion,
}

impl UNetConfig {
    pub fn new(d_in: usize, classes: usize, pool: PoolSpec) -> Self {
        Self {
            d_in,
            hidden: 64,
            classes,
            pool,
            fusion: Fusion::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetOutput {
    /// `n×C` per-node log-probabilities.
    pub log_probs: Tensor,
    /// Fused features entering the last convolution.
    pub embedding: Tensor,
    pub kept: Vec<usize>,
}

/// Down: GCN, pool, GCN. Up: unpool, fuse with the first GCN output, GCN.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel {
    pub config: UNetConfig,
    pub params: Params,
    down: GcnLayer,
    pool: PoolLayer,
    bottom: GcnLayer,
    up: GcnLayer,
}

impl UNetModel {
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.pool.family() != Family::Dropping {
            return Err(Error::Unsupported(format!(
                "u-net needs an index-based pooler, got {}",
                config.pool.name()
            )));
        }
        if config.classes < 2 {
            return Err(Error::Config(
                "node classification needs at least two classes".into(),
            ));
        }
        let mut params = Params::new();
        let h = config.hidden;
        let down = GcnLayer::new(&mut params, "down", config.d_in, h, Activation::Relu, rng)?;
        let pool = PoolLayer::new(&mut params, "pool", config.pool, h, rng)?;
        let bottom = GcnLayer::new(&mut params, "bottom", h, h, Activation::Relu, rng)?;
        let fused = match config.fusion {
            Fusion::Sum => h,
            Fusion::Concat => 2 * h,
        };
        let up = GcnLayer::new(
            &mut params,
            "up",
            fused,
            config.classes,
            Activation::None,
            rng,
        )?;
        Ok(Self {
            config,
            params,
            down,
            pool,
            bottom,
            up,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, g: &Prepared) -> Result<UNetOutput> {
        if g.x.cols() != self.config.d_in {
            return Err(Error::dim(
                "unet_forward",
                g.x.shape(),
                (g.n(), self.config.d_in),
            ));
        }
        let n = g.n();
        let x = tape.constant(g.x.clone());
        let adj = tape.constant(g.adj.clone());
        let a_hat = tape.constant(g.a_hat.clone());
        let h1 = self.down.forward(tape, bind, x, a_hat)?;
        let pooled = self.pool.forward(tape, bind, h1, adj, a_hat)?;
        let kept = pooled
            .indices()
            .ok_or_else(|| Error::Unsupported("pooler returned no kept indices".into()))?
            .to_vec();
        let a_hat_p = gcn_norm_tensor(tape, pooled.adj)?;
        let h2 = self.bottom.forward(tape, bind, pooled.h, a_hat_p)?;
        let back = unpool(tape, h2, &kept, n)?;
        let fused = match self.config.fusion {
            Fusion::Sum => tape.add(back, h1)?,
            Fusion::Concat => tape.concat_cols(&[back, h1])?,
        };
        let logits = self.up.forward(tape, bind, fused, a_hat)?;
        Ok(UNetOutput {
            log_probs: tape.log_softmax(logits)?,
            embedding: fused,
            kept,
        })
    }

    /// Mean NLL over the nodes in `mask`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        out: &UNetOutput,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<Tensor> {
        let picked = tape.slice_rows(out.log_probs, mask)?;
        let targets: Vec<usize> = mask.iter().map(|&i| labels[i]).collect();
        nll_loss(tape, picked, &targets)
    }

    pub(crate) fn with_params(mut self, params: Params) -> Result<Self> {
        super::checkpoint::check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::layers::gcn_norm;
    use crate::rng::seeded;
    use crate::tensor::{gradcheck, Adam, Matrix};

    #[test]
    fn unpool_places_rows() {
        let mut tape = Tape::new();
        let hp = tape.constant(Matrix::column(&[7.0, 9.0]));
        let up = unpool(&mut tape, hp, &[0, 2], 4).unwrap();
        assert_eq!(tape.value(up).as_slice(), &[7.0, 0.0, 9.0, 0.0]);
        let all = unpool(&mut tape, hp, &[0, 1], 2).unwrap();
        assert_eq!(tape.value(all), tape.value(hp));
        assert!(unpool(&mut tape, hp, &[0, 4], 4).is_err());
    }

    #[test]
    fn unpool_is_adjoint_of_slice() {
        let x = Matrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64 * 0.3 - 1.0);
        let w = Matrix::from_fn(5, 2, |i, j| ((i + 3 * j) % 4) as f64 - 1.5);
        let err = gradcheck(&x, move |t, x| {
            let s = t.slice_rows(x, &[1, 3, 4])?;
            let u = unpool(t, s, &[1, 3, 4], 5)?;
            let c = t.constant(w.clone());
            let z = t.hadamard(u, c)?;
            t.sum(z)
        })
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn clustering_pooler_is_unsupported() {
        let cfg = UNetConfig::new(3, 2, PoolSpec::MinCut { clusters: 4 });
        assert!(matches!(
            UNetModel::new(cfg, &mut seeded(0)),
            Err(Error::Unsupported(_))
        ));
    }

    fn random_graph(n: usize, seed: u64) -> Graph {
        use rand::Rng;
        let mut rng = seeded(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.35) {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(
            n,
            &edges,
            Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn full_ratio_reduces_to_plain_stack() {
        let g = random_graph(7, 3);
        let p = Prepared::new(&g);
        let mut cfg = UNetConfig::new(3, 2, PoolSpec::Sag { ratio: 1.0 });
        cfg.hidden = 4;
        let model = UNetModel::new(cfg, &mut seeded(5)).unwrap();
        let mut tape = Tape::new();
        let bind = model.params.bind_frozen(&mut tape);
        let out = model.forward(&mut tape, &bind, &p).unwrap();
        assert_eq!(out.kept, (0..7).collect::<Vec<_>>());

        let w = |i: usize| model.params.values()[i].clone();
        let relu = |m: Matrix| m.map(|v| v.max(0.0));
        let h1 = relu(p.a_hat.matmul(&p.x.matmul(&w(0)).unwrap()).unwrap());
        let score = p.a_hat.matmul(&h1.matmul(&w(1)).unwrap()).unwrap();
        let gated = Matrix::from_fn(7, 4, |i, j| h1[(i, j)] * score[(i, 0)].tanh());
        let h2 = relu(p.a_hat.matmul(&gated.matmul(&w(2)).unwrap()).unwrap());
        let fused = h2.zip_map(&h1, |a, b| a + b);
        assert!(tape.value(out.embedding).max_abs_diff(&fused) < 1e-12);
        assert_eq!(gcn_norm(&p.adj), p.a_hat);
    }

    #[test]
    fn node_permutation_permutes_outputs() {
        let g = random_graph(8, 17);
        let perm = [3usize, 0, 6, 1, 7, 2, 5, 4];
        let mut inv = [0usize; 8];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges: Vec<(usize, usize)> = g.edges().map(|(a, b)| (inv[a], inv[b])).collect();
        let h = Graph::from_edges(8, &edges, g.features().select_rows(&perm)).unwrap();
        let mut cfg = UNetConfig::new(3, 3, PoolSpec::TopK { ratio: 0.5 });
        cfg.hidden = 6;
        cfg.fusion = Fusion::Concat;
        let model = UNetModel::new(cfg, &mut seeded(8)).unwrap();
        let mut tape = Tape::new();
        let bind = model.params.bind_frozen(&mut tape);
        let a = model.forward(&mut tape, &bind, &Prepared::new(&g)).unwrap();
        let b = model.forward(&mut tape, &bind, &Prepared::new(&h)).unwrap();
        let expected = tape.value(a.log_probs).select_rows(&perm);
        assert!(tape.value(b.log_probs).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn training_reduces_loss_on_two_cliques() {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in i + 1..5 {
                    edges.push((base + i, base + j));
                }
            }
        }
        edges.push((4, 5));
        let labels: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let x = Matrix::from_fn(
            10,
            2,
            |i, j| if j == labels[i] { 1.0 } else { 0.0 } + 0.1 * ((i * 7) % 3) as f64,
        );
        let p = Prepared::new(&Graph::from_edges(10, &edges, x).unwrap());
        let mut cfg = UNetConfig::new(2, 2, PoolSpec::Kmis { k: 1 });
        cfg.hidden = 8;
        let mut model = UNetModel::new(cfg, &mut seeded(1)).unwrap();
        let mask: Vec<usize> = (0..10).collect();
        let mut adam = Adam::new(&model.params, 1e-2);
        let mut losses = Vec::new();
        for _ in 0..30 {
            let mut tape = Tape::new();
            let bind = model.params.bind(&mut tape);
            let out = model.forward(&mut tape, &bind, &p).unwrap();
            let loss = model.loss(&mut tape, &out, &labels, &mask).unwrap();
            losses.push(tape.value(loss).item());
            let grads = bind.gradients(&tape.backward(loss).unwrap());
            adam.step(&mut model.params, &grads).unwrap();
        }
        assert!(losses[29] < losses[0]);
    }
}
