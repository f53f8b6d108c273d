//! Transformer-encoder predictor: an embedding MLP, `n` single-head encoder
//! blocks, mean pooling over the sequence and one MLP head per task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{per_task_mse, Graph, Var};
use super::tensor::Tensor;
use super::FeatureSequence;
use crate::{Error, Result, Scalar};

/// Where the layer norms sit inside an encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualForm {
    /// `h1 = Attn(o + LN(o))`, `h2 = MLP(h1 + LN(h1))`.
    #[default]
    Literal,
    /// `h1 = o + Attn(LN(o))`, `h2 = h1 + MLP(LN(h1))`.
    PreNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TebConfig {
    /// Feature width `D` of each sequence row.
    pub input_dim: usize,
    /// Sequence length `T`.
    pub seq_len: usize,
    pub d_model: usize,
    pub embed_hidden: usize,
    pub block_hidden: usize,
    pub n_blocks: usize,
    pub head_hidden: usize,
    pub n_tasks: usize,
    pub residual: ResidualForm,
    /// Learned per-position embeddings added after the input MLP.
    pub positional: bool,
    pub ln_eps: f64,
}

impl TebConfig {
    /// Default widths for a given input layout.
    pub fn new(input_dim: usize, seq_len: usize) -> Self {
        Self {
            input_dim,
            seq_len,
            d_model: 64,
            embed_hidden: 64,
            block_hidden: 64,
            n_blocks: 2,
            head_hidden: 32,
            n_tasks: 4,
            residual: ResidualForm::Literal,
            positional: true,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.seq_len,
            self.d_model,
            self.embed_hidden,
            self.block_hidden,
            self.head_hidden,
            self.n_tasks,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Two-layer perceptron `f(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights<P> {
    pub w1: P,
    pub b1: P,
    pub w2: P,
    pub b2: P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormWeights<P> {
    pub gamma: P,
    pub beta: P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights<P> {
    pub attn_norm: NormWeights<P>,
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub mlp_norm: NormWeights<P>,
    pub mlp: MlpWeights<P>,
}

/// Every learnable slot of the predictor. Instantiated with `Tensor<T>` for
/// parameters and gradients and with [`Var`] while a graph is being built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TebWeights<P> {
    pub embed: MlpWeights<P>,
    pub positional: Option<P>,
    pub blocks: Vec<BlockWeights<P>>,
    pub heads: Vec<MlpWeights<P>>,
}

pub type TebParameters<T> = TebWeights<Tensor<T>>;

impl<P> MlpWeights<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> MlpWeights<Q> {
        MlpWeights {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    fn refs<'a>(&'a self, out: &mut Vec<&'a P>) {
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
    }

    fn refs_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
    }
}

impl<P> NormWeights<P> {
    fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> NormWeights<Q> {
        NormWeights {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }
}

impl<P> TebWeights<P> {
    /// Structural map; visits slots in the same order as [`Self::slots`].
    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> TebWeights<Q> {
        let embed = self.embed.map(&mut f);
        let positional = self.positional.as_ref().map(&mut f);
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockWeights {
                attn_norm: b.attn_norm.map(&mut f),
                wq: f(&b.wq),
                wk: f(&b.wk),
                wv: f(&b.wv),
                mlp_norm: b.mlp_norm.map(&mut f),
                mlp: b.mlp.map(&mut f),
            })
            .collect();
        let heads = self.heads.iter().map(|h| h.map(&mut f)).collect();
        TebWeights {
            embed,
            positional,
            blocks,
            heads,
        }
    }

    pub fn slots(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.embed.refs(&mut out);
        out.extend(self.positional.as_ref());
        for b in &self.blocks {
            out.extend([&b.attn_norm.gamma, &b.attn_norm.beta, &b.wq, &b.wk, &b.wv]);
            out.extend([&b.mlp_norm.gamma, &b.mlp_norm.beta]);
            b.mlp.refs(&mut out);
        }
        for h in &self.heads {
            h.refs(&mut out);
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.embed.refs_mut(&mut out);
        out.extend(self.positional.as_mut());
        for b in &mut self.blocks {
            out.extend([
                &mut b.attn_norm.gamma,
                &mut b.attn_norm.beta,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
            ]);
            out.extend([&mut b.mlp_norm.gamma, &mut b.mlp_norm.beta]);
            b.mlp.refs_mut(&mut out);
        }
        for h in &mut self.heads {
            h.refs_mut(&mut out);
        }
        out
    }
}

impl<T: Scalar> TebParameters<T> {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &TebConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn(&[rows, cols], |_| T::lit(rng.random_range(-a..a)))
        };
        let zeros = |n: usize| Tensor::<T>::zeros(&[n]);
        let norm = |n: usize| NormWeights {
            gamma: Tensor::full(&[n], T::one()),
            beta: Tensor::zeros(&[n]),
        };
        let d = config.d_model;
        let embed = MlpWeights {
            w1: glorot(config.input_dim, config.embed_hidden),
            b1: zeros(config.embed_hidden),
            w2: glorot(config.embed_hidden, d),
            b2: zeros(d),
        };
        let positional = config.positional.then(|| glorot(config.seq_len, d).map(|v| v * T::lit(0.1)));
        let blocks = (0..config.n_blocks)
            .map(|_| BlockWeights {
                attn_norm: norm(d),
                wq: glorot(d, d),
                wk: glorot(d, d),
                wv: glorot(d, d),
                mlp_norm: norm(d),
                mlp: MlpWeights {
                    w1: glorot(d, config.block_hidden),
                    b1: zeros(config.block_hidden),
                    w2: glorot(config.block_hidden, d),
                    b2: zeros(d),
                },
            })
            .collect();
        let heads = (0..config.n_tasks)
            .map(|_| MlpWeights {
                w1: glorot(d, config.head_hidden),
                b1: zeros(config.head_hidden),
                w2: glorot(config.head_hidden, 1),
                b2: zeros(1),
            })
            .collect();
        Ok(Self {
            embed,
            positional,
            blocks,
            heads,
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|t| Tensor::zeros(t.shape()))
    }

    pub fn all_finite(&self) -> bool {
        self.slots().iter().all(|t| t.all_finite())
    }

    pub fn parameter_count(&self) -> usize {
        self.slots().iter().map(|t| t.len()).sum()
    }

    /// Shape agreement with a freshly initialised model of `config`.
    pub fn check_shapes(&self, config: &TebConfig) -> Result<()> {
        let expected = Self::init(config, 0)?;
        let (a, b) = (self.slots(), expected.slots());
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.shape() != y.shape()) {
            return Err(Error::CheckpointMismatch(
                "parameter shapes do not match the architecture config".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn mlp_node<T: Scalar>(g: &mut Graph<T>, x: Var, w: &MlpWeights<Var>) -> Result<Var> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add_broadcast(h, w.b1)?;
    let h = g.relu(h);
    let y = g.matmul(h, w.w2)?;
    g.add_broadcast(y, w.b2)
}

pub(crate) fn norm_node<T: Scalar>(g: &mut Graph<T>, x: Var, w: &NormWeights<Var>, eps: T) -> Result<Var> {
    g.layer_norm(x, w.gamma, w.beta, eps)
}

/// Single-head `softmax(Q Kᵀ / √d_k) V` over a `[B, T, d]` input.
pub(crate) fn attention_node<T: Scalar>(g: &mut Graph<T>, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let d_k = g.value(k).last_dim();
    let scores = g.batch_matmul_bt(q, k)?;
    let scores = g.scale(scores, T::one() / T::lit(d_k as f64).sqrt());
    let attn = g.softmax_last(scores);
    g.batch_matmul(attn, v)
}

fn forward_nodes<T: Scalar>(g: &mut Graph<T>, cfg: &TebConfig, w: &TebWeights<Var>, x: Var) -> Result<Var> {
    let eps = T::lit(cfg.ln_eps);
    let mut o = mlp_node(g, x, &w.embed)?;
    if let Some(pos) = w.positional {
        o = g.add_broadcast(o, pos)?;
    }
    for b in &w.blocks {
        o = match cfg.residual {
            ResidualForm::Literal => {
                let n1 = norm_node(g, o, &b.attn_norm, eps)?;
                let a_in = g.add(o, n1)?;
                let h1 = attention_node(g, a_in, b.wq, b.wk, b.wv)?;
                let n2 = norm_node(g, h1, &b.mlp_norm, eps)?;
                let m_in = g.add(h1, n2)?;
                mlp_node(g, m_in, &b.mlp)?
            }
            ResidualForm::PreNorm => {
                let n1 = norm_node(g, o, &b.attn_norm, eps)?;
                let a = attention_node(g, n1, b.wq, b.wk, b.wv)?;
                let h1 = g.add(o, a)?;
                let n2 = norm_node(g, h1, &b.mlp_norm, eps)?;
                let m = mlp_node(g, n2, &b.mlp)?;
                g.add(h1, m)?
            }
        };
    }
    let pooled = g.mean_axis1(o)?;
    let heads = w
        .heads
        .iter()
        .map(|h| mlp_node(g, pooled, h))
        .collect::<Result<Vec<_>>>()?;
    g.concat_last(&heads)
}

/// A recorded forward pass, ready for a weighted backward pass.
pub struct ForwardPass<T: Scalar> {
    graph: Graph<T>,
    vars: TebWeights<Var>,
    pred: Var,
}

impl<T: Scalar> ForwardPass<T> {
    /// `[B, m]` predictions.
    pub fn predictions(&self) -> &Tensor<T> {
        self.graph.value(self.pred)
    }

    /// Per-task mean squared error against `[B, m]` targets.
    pub fn task_losses(&self, targets: &Tensor<T>) -> Result<Vec<T>> {
        if targets.shape() != self.predictions().shape() {
            return Err(Error::Shape(format!(
                "targets {:?} vs predictions {:?}",
                targets.shape(),
                self.predictions().shape()
            )));
        }
        Ok(per_task_mse(self.predictions(), targets))
    }

    /// Gradients of `Σ_i w_i · l_i` for every parameter slot.
    pub fn backward(mut self, targets: &Tensor<T>, weights: &[T]) -> Result<Backward<T>> {
        let task_losses = self.task_losses(targets)?;
        let loss = self.graph.weighted_mse(self.pred, targets.clone(), weights.to_vec())?;
        let objective = self.graph.value(loss).data()[0];
        if !objective.is_finite() || task_losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged {
                step: 0,
                last_finite: Vec::new(),
            });
        }
        let grads = self.graph.backward(loss)?;
        let graph = &self.graph;
        let grads = self.vars.map(|v| grads.get_or_zeros(*v, graph));
        Ok(Backward {
            task_losses,
            objective,
            grads,
        })
    }
}

pub struct Backward<T: Scalar> {
    pub task_losses: Vec<T>,
    pub objective: T,
    pub grads: TebParameters<T>,
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TebModel<T: Scalar> {
    pub config: TebConfig,
    pub params: TebParameters<T>,
}

impl<T: Scalar> TebModel<T> {
    pub fn new(config: TebConfig, seed: u64) -> Result<Self> {
        let params = TebParameters::init(&config, seed)?;
        Ok(Self { config, params })
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        match batch.shape() {
            [_, t, d] if *t == c.seq_len && *d == c.input_dim => Ok(()),
            s => Err(Error::Shape(format!(
                "expected [B, {}, {}] input, got {s:?}",
                c.seq_len, c.input_dim
            ))),
        }
    }

    /// Records the forward graph for a `[B, T, D]` batch.
    pub fn record(&self, batch: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.check_input(batch)?;
        let mut graph = Graph::new();
        let vars = self.params.map(|t| graph.leaf(t.clone()));
        let x = graph.leaf(batch.clone());
        let pred = forward_nodes(&mut graph, &self.config, &vars, x)?;
        Ok(ForwardPass { graph, vars, pred })
    }

    /// `[B, m]` predictions for a `[B, T, D]` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.record(batch)?.predictions().clone())
    }

    pub fn forward_sequence(&self, x: &FeatureSequence<T>) -> Result<Vec<T>> {
        let batch = x.tensor().clone().reshape(&[1, x.len(), x.dim()])?;
        Ok(self.forward(&batch)?.into_data())
    }

    /// Per-task losses and parameter gradients of `Σ_i w_i · l_i`.
    pub fn backward(&self, batch: &Tensor<T>, targets: &Tensor<T>, weights: &[T]) -> Result<Backward<T>> {
        if weights.len() != self.config.n_tasks {
            return Err(Error::Shape(format!("{} weights for {} tasks", weights.len(), self.config.n_tasks)));
        }
        self.record(batch)?.backward(targets, weights)
    }
}
