//! Learnable parameters: relevance projections, attention-pool projections,
//! decoder layers, reference/box/confidence heads, and the learned query
//! embeddings used by the non-selected query modes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::config::ModelConfig;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnParams {
    pub q_w: Matrix,
    pub q_b: Matrix,
    pub k_w: Matrix,
    pub k_b: Matrix,
    pub v_w: Matrix,
    pub v_b: Matrix,
    pub o_w: Matrix,
    pub o_b: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub self_attn: AttnParams,
    pub cross_attn: AttnParams,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    pub ln3_g: Matrix,
    pub ln3_b: Matrix,
}

/// Attention-pool projections (no biases; identity-initialized so pooling
/// starts as a plain similarity-weighted mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    pub q_w: Matrix,
    pub k_w: Matrix,
    pub v_w: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub num_queries: usize,
    /// Relevance projections: the two learned maps fusing visual and task
    /// features before the knowledge cosine.
    pub fc_v_w: Matrix,
    pub fc_v_b: Matrix,
    pub fc_t_w: Matrix,
    pub fc_t_b: Matrix,
    pub pool: PoolParams,
    pub layers: Vec<LayerParams>,
    pub ref_w: Matrix,
    pub ref_b: Matrix,
    pub box_w1: Matrix,
    pub box_b1: Matrix,
    pub box_w2: Matrix,
    pub box_b2: Matrix,
    pub cls_w: Matrix,
    pub cls_b: Matrix,
    pub query_embeds: Matrix,
}

fn identity(d: usize) -> Matrix {
    Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

fn xavier(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

impl ModelParams {
    /// Seeded initialization. Relevance projections start as identity/zero so
    /// Eq.-style relevance is meaningful before any training; box, class and
    /// reference heads start at zero so predictions sit exactly on their
    /// anchors.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let d = config.d_model;
        let mut r = rng::rng_from(rng::derive_seed(seed, &[0x7061, 0x7261]));
        let attn = |r: &mut rand_chacha::ChaCha8Rng| AttnParams {
            q_w: xavier(d, d, r),
            q_b: Matrix::zeros((1, d)),
            k_w: xavier(d, d, r),
            k_b: Matrix::zeros((1, d)),
            v_w: xavier(d, d, r),
            v_b: Matrix::zeros((1, d)),
            o_w: xavier(d, d, r),
            o_b: Matrix::zeros((1, d)),
        };
        let layers = (0..config.decoder_layers)
            .map(|_| LayerParams {
                self_attn: attn(&mut r),
                cross_attn: attn(&mut r),
                ffn_w1: xavier(d, config.ffn_dim, &mut r),
                ffn_b1: Matrix::zeros((1, config.ffn_dim)),
                ffn_w2: xavier(config.ffn_dim, d, &mut r),
                ffn_b2: Matrix::zeros((1, d)),
                ln1_g: Matrix::ones((1, d)),
                ln1_b: Matrix::zeros((1, d)),
                ln2_g: Matrix::ones((1, d)),
                ln2_b: Matrix::zeros((1, d)),
                ln3_g: Matrix::ones((1, d)),
                ln3_b: Matrix::zeros((1, d)),
            })
            .collect();
        Self {
            d_model: d,
            heads: config.heads,
            ffn_dim: config.ffn_dim,
            num_queries: config.num_queries,
            fc_v_w: identity(d),
            fc_v_b: Matrix::zeros((1, d)),
            fc_t_w: Matrix::zeros((d, d)),
            fc_t_b: Matrix::zeros((1, d)),
            pool: PoolParams {
                q_w: identity(d),
                k_w: identity(d),
                v_w: identity(d),
            },
            layers,
            ref_w: Matrix::zeros((d, 2)),
            ref_b: Matrix::zeros((1, 2)),
            box_w1: xavier(d, d, &mut r),
            box_b1: Matrix::zeros((1, d)),
            box_w2: Matrix::zeros((d, 4)),
            box_b2: Matrix::zeros((1, 4)),
            cls_w: Matrix::zeros((d, 1)),
            cls_b: Matrix::zeros((1, 1)),
            query_embeds: Array2::from_shape_fn((config.num_queries, d), |_| {
                0.5 * rng::standard_normal(&mut r)
            }),
        }
    }

    /// Canonical (name, matrix) listing; the optimizer, the tape registry and
    /// the checkpoint all follow this order.
    pub fn entries(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("fc_v_w".into(), &self.fc_v_w),
            ("fc_v_b".into(), &self.fc_v_b),
            ("fc_t_w".into(), &self.fc_t_w),
            ("fc_t_b".into(), &self.fc_t_b),
            ("pool.q_w".into(), &self.pool.q_w),
            ("pool.k_w".into(), &self.pool.k_w),
            ("pool.v_w".into(), &self.pool.v_w),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (tag, attn) in [("self", &layer.self_attn), ("cross", &layer.cross_attn)] {
                out.push((format!("layer{i}.{tag}.q_w"), &attn.q_w));
                out.push((format!("layer{i}.{tag}.q_b"), &attn.q_b));
                out.push((format!("layer{i}.{tag}.k_w"), &attn.k_w));
                out.push((format!("layer{i}.{tag}.k_b"), &attn.k_b));
                out.push((format!("layer{i}.{tag}.v_w"), &attn.v_w));
                out.push((format!("layer{i}.{tag}.v_b"), &attn.v_b));
                out.push((format!("layer{i}.{tag}.o_w"), &attn.o_w));
                out.push((format!("layer{i}.{tag}.o_b"), &attn.o_b));
            }
            out.push((format!("layer{i}.ffn_w1"), &layer.ffn_w1));
            out.push((format!("layer{i}.ffn_b1"), &layer.ffn_b1));
            out.push((format!("layer{i}.ffn_w2"), &layer.ffn_w2));
            out.push((format!("layer{i}.ffn_b2"), &layer.ffn_b2));
            out.push((format!("layer{i}.ln1_g"), &layer.ln1_g));
            out.push((format!("layer{i}.ln1_b"), &layer.ln1_b));
            out.push((format!("layer{i}.ln2_g"), &layer.ln2_g));
            out.push((format!("layer{i}.ln2_b"), &layer.ln2_b));
            out.push((format!("layer{i}.ln3_g"), &layer.ln3_g));
            out.push((format!("layer{i}.ln3_b"), &layer.ln3_b));
        }
        out.push(("ref_w".into(), &self.ref_w));
        out.push(("ref_b".into(), &self.ref_b));
        out.push(("box_w1".into(), &self.box_w1));
        out.push(("box_b1".into(), &self.box_b1));
        out.push(("box_w2".into(), &self.box_w2));
        out.push(("box_b2".into(), &self.box_b2));
        out.push(("cls_w".into(), &self.cls_w));
        out.push(("cls_b".into(), &self.cls_b));
        out.push(("query_embeds".into(), &self.query_embeds));
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = vec![
            ("fc_v_w".into(), &mut self.fc_v_w),
            ("fc_v_b".into(), &mut self.fc_v_b),
            ("fc_t_w".into(), &mut self.fc_t_w),
            ("fc_t_b".into(), &mut self.fc_t_b),
            ("pool.q_w".into(), &mut self.pool.q_w),
            ("pool.k_w".into(), &mut self.pool.k_w),
            ("pool.v_w".into(), &mut self.pool.v_w),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (tag, attn) in [
                ("self", &mut layer.self_attn),
                ("cross", &mut layer.cross_attn),
            ] {
                out.push((format!("layer{i}.{tag}.q_w"), &mut attn.q_w));
                out.push((format!("layer{i}.{tag}.q_b"), &mut attn.q_b));
                out.push((format!("layer{i}.{tag}.k_w"), &mut attn.k_w));
                out.push((format!("layer{i}.{tag}.k_b"), &mut attn.k_b));
                out.push((format!("layer{i}.{tag}.v_w"), &mut attn.v_w));
                out.push((format!("layer{i}.{tag}.v_b"), &mut attn.v_b));
                out.push((format!("layer{i}.{tag}.o_w"), &mut attn.o_w));
                out.push((format!("layer{i}.{tag}.o_b"), &mut attn.o_b));
            }
            out.push((format!("layer{i}.ffn_w1"), &mut layer.ffn_w1));
            out.push((format!("layer{i}.ffn_b1"), &mut layer.ffn_b1));
            out.push((format!("layer{i}.ffn_w2"), &mut layer.ffn_w2));
            out.push((format!("layer{i}.ffn_b2"), &mut layer.ffn_b2));
            out.push((format!("layer{i}.ln1_g"), &mut layer.ln1_g));
            out.push((format!("layer{i}.ln1_b"), &mut layer.ln1_b));
            out.push((format!("layer{i}.ln2_g"), &mut layer.ln2_g));
            out.push((format!("layer{i}.ln2_b"), &mut layer.ln2_b));
            out.push((format!("layer{i}.ln3_g"), &mut layer.ln3_g));
            out.push((format!("layer{i}.ln3_b"), &mut layer.ln3_b));
        }
        out.push(("ref_w".into(), &mut self.ref_w));
        out.push(("ref_b".into(), &mut self.ref_b));
        out.push(("box_w1".into(), &mut self.box_w1));
        out.push(("box_b1".into(), &mut self.box_b1));
        out.push(("box_w2".into(), &mut self.box_w2));
        out.push(("box_b2".into(), &mut self.box_b2));
        out.push(("cls_w".into(), &mut self.cls_w));
        out.push(("cls_b".into(), &mut self.cls_b));
        out.push(("query_embeds".into(), &mut self.query_embeds));
        out
    }

    /// Register every parameter on a tape. The returned model mirrors the
    /// parameter structure with tape vars and remembers the (name, var)
    /// pairing for gradient extraction.
    pub fn to_tape(&self, tape: &Tape) -> TapeModel {
        let mut named: Vec<(String, Var)> = Vec::new();
        let mut reg = |name: String, value: &Matrix| -> Var {
            let var = tape.leaf(value.clone());
            named.push((name, var));
            var
        };
        let fc_v_w = reg("fc_v_w".into(), &self.fc_v_w);
        let fc_v_b = reg("fc_v_b".into(), &self.fc_v_b);
        let fc_t_w = reg("fc_t_w".into(), &self.fc_t_w);
        let fc_t_b = reg("fc_t_b".into(), &self.fc_t_b);
        let pool_q = reg("pool.q_w".into(), &self.pool.q_w);
        let pool_k = reg("pool.k_w".into(), &self.pool.k_w);
        let pool_v = reg("pool.v_w".into(), &self.pool.v_w);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let mut attn = |tag: &str, a: &AttnParams| TapeAttn {
                    q_w: reg(format!("layer{i}.{tag}.q_w"), &a.q_w),
                    q_b: reg(format!("layer{i}.{tag}.q_b"), &a.q_b),
                    k_w: reg(format!("layer{i}.{tag}.k_w"), &a.k_w),
                    k_b: reg(format!("layer{i}.{tag}.k_b"), &a.k_b),
                    v_w: reg(format!("layer{i}.{tag}.v_w"), &a.v_w),
                    v_b: reg(format!("layer{i}.{tag}.v_b"), &a.v_b),
                    o_w: reg(format!("layer{i}.{tag}.o_w"), &a.o_w),
                    o_b: reg(format!("layer{i}.{tag}.o_b"), &a.o_b),
                };
                let self_attn = attn("self", &layer.self_attn);
                let cross_attn = attn("cross", &layer.cross_attn);
                TapeLayer {
                    self_attn,
                    cross_attn,
                    ffn_w1: reg(format!("layer{i}.ffn_w1"), &layer.ffn_w1),
                    ffn_b1: reg(format!("layer{i}.ffn_b1"), &layer.ffn_b1),
                    ffn_w2: reg(format!("layer{i}.ffn_w2"), &layer.ffn_w2),
                    ffn_b2: reg(format!("layer{i}.ffn_b2"), &layer.ffn_b2),
                    ln1_g: reg(format!("layer{i}.ln1_g"), &layer.ln1_g),
                    ln1_b: reg(format!("layer{i}.ln1_b"), &layer.ln1_b),
                    ln2_g: reg(format!("layer{i}.ln2_g"), &layer.ln2_g),
                    ln2_b: reg(format!("layer{i}.ln2_b"), &layer.ln2_b),
                    ln3_g: reg(format!("layer{i}.ln3_g"), &layer.ln3_g),
                    ln3_b: reg(format!("layer{i}.ln3_b"), &layer.ln3_b),
                }
            })
            .collect();
        let model = TapeModel {
            d_model: self.d_model,
            heads: self.heads,
            fc_v_w,
            fc_v_b,
            fc_t_w,
            fc_t_b,
            pool_q,
            pool_k,
            pool_v,
            layers,
            ref_w: reg("ref_w".into(), &self.ref_w),
            ref_b: reg("ref_b".into(), &self.ref_b),
            box_w1: reg("box_w1".into(), &self.box_w1),
            box_b1: reg("box_b1".into(), &self.box_b1),
            box_w2: reg("box_w2".into(), &self.box_w2),
            box_b2: reg("box_b2".into(), &self.box_b2),
            cls_w: reg("cls_w".into(), &self.cls_w),
            cls_b: reg("cls_b".into(), &self.cls_b),
            query_embeds: reg("query_embeds".into(), &self.query_embeds),
            named: Vec::new(),
        };
        let mut model = model;
        model.named = named;
        model
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapeAttn {
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub o_w: Var,
    pub o_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct TapeLayer {
    pub self_attn: TapeAttn,
    pub cross_attn: TapeAttn,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub ln3_g: Var,
    pub ln3_b: Var,
}

/// Tape-registered parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct TapeModel {
    pub d_model: usize,
    pub heads: usize,
    pub fc_v_w: Var,
    pub fc_v_b: Var,
    pub fc_t_w: Var,
    pub fc_t_b: Var,
    pub pool_q: Var,
    pub pool_k: Var,
    pub pool_v: Var,
    pub layers: Vec<TapeLayer>,
    pub ref_w: Var,
    pub ref_b: Var,
    pub box_w1: Var,
    pub box_b1: Var,
    pub box_w2: Var,
    pub box_b2: Var,
    pub cls_w: Var,
    pub cls_b: Var,
    pub query_embeds: Var,
    named: Vec<(String, Var)>,
}

impl TapeModel {
    /// Pull this pass's parameter gradients out of a backward result.
    /// Parameters untouched by the graph get zero gradients.
    pub fn collect_grads(
        &self,
        tape: &Tape,
        grads: &crate::autodiff::Gradients,
    ) -> std::collections::HashMap<String, Matrix> {
        self.named
            .iter()
            .map(|(name, var)| {
                let g = grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(tape.shape(*var)));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named.iter().map(|(n, _)| n.clone()).collect()
    }
}
