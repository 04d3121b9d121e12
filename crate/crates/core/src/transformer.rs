//! Encoder built from deterministic transformer blocks: multi-head
//! softmax attention with per-head output maps, residual + LayerNorm, a
//! ReLU feed-forward layer and a second residual + LayerNorm. Tokens are
//! embedded without positional signal, the final block output is
//! mean-pooled, and a linear head produces class logits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::params::{ParamError, ParamStore};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("sequence of length {len} exceeds n_max = {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { id: usize, vocab: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Model width.
    pub d: usize,
    /// Per-head query/key/value width.
    pub k: usize,
    /// Feed-forward width.
    pub m_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_max: usize,
    pub vocab: usize,
    pub n_classes: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("d", self.d),
            ("k", self.k),
            ("m_ff", self.m_ff),
            ("heads", self.heads),
            ("layers", self.layers),
            ("n_max", self.n_max),
            ("vocab", self.vocab),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Number of coordinates in prunable weight matrices.
    pub fn prunable_count(&self) -> usize {
        self.layers * (self.heads * 4 * self.d * self.k + 2 * self.d * self.m_ff)
    }
}

/// Weights of one block. `w_q`, `w_k`, `w_v` are `d×k` and `w_c` is `k×d`
/// per head; `w1` is `d×m_ff` and `w2` is `m_ff×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_c: Vec<Tensor>,
    pub w1: Tensor,
    pub w2: Tensor,
    pub gamma1: Tensor,
    pub beta1: Tensor,
    pub gamma2: Tensor,
    pub beta2: Tensor,
}

pub const EMBEDDING: &str = "embedding";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

fn head_name(layer: usize, head: usize, which: &str) -> String {
    format!("blocks.{layer}.attn.{head}.{which}")
}

fn block_name(layer: usize, which: &str) -> String {
    format!("blocks.{layer}.{which}")
}

impl BlockParams {
    pub fn from_store(store: &ParamStore, layer: usize, cfg: &TransformerConfig) -> Result<Self, ModelError> {
        let get = |name: String| -> Result<Tensor, ModelError> { Ok(store.get(&name)?.tensor.clone()) };
        let per_head = |which: &str| -> Result<Vec<Tensor>, ModelError> {
            (0..cfg.heads).map(|h| get(head_name(layer, h, which))).collect()
        };
        Ok(Self {
            w_q: per_head("w_q")?,
            w_k: per_head("w_k")?,
            w_v: per_head("w_v")?,
            w_c: per_head("w_c")?,
            w1: get(block_name(layer, "ffn.w1"))?,
            w2: get(block_name(layer, "ffn.w2"))?,
            gamma1: get(block_name(layer, "ln1.gamma"))?,
            beta1: get(block_name(layer, "ln1.beta"))?,
            gamma2: get(block_name(layer, "ln2.gamma"))?,
            beta2: get(block_name(layer, "ln2.beta"))?,
        })
    }
}

/// Names, shapes and prunability of every parameter of the model.
pub fn param_shapes(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = vec![
        (EMBEDDING.to_string(), vec![cfg.vocab, cfg.d], false),
        (HEAD_WEIGHT.to_string(), vec![cfg.d, cfg.n_classes], false),
        (HEAD_BIAS.to_string(), vec![cfg.n_classes], false),
    ];
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            for which in ["w_q", "w_k", "w_v"] {
                out.push((head_name(l, h, which), vec![cfg.d, cfg.k], true));
            }
            out.push((head_name(l, h, "w_c"), vec![cfg.k, cfg.d], true));
        }
        out.push((block_name(l, "ffn.w1"), vec![cfg.d, cfg.m_ff], true));
        out.push((block_name(l, "ffn.w2"), vec![cfg.m_ff, cfg.d], true));
        for ln in ["ln1", "ln2"] {
            out.push((block_name(l, &format!("{ln}.gamma")), vec![cfg.d], false));
            out.push((block_name(l, &format!("{ln}.beta")), vec![cfg.d], false));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Seeded initialization: matrices from `N(0, 1/d)` (standard deviation
/// `1/√d`), LayerNorm gains 1, offsets and head bias 0. Values are drawn in
/// name order.
pub fn init_params<R: Rng + ?Sized>(cfg: &TransformerConfig, rng: &mut R) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    let normal = Normal::new(0.0, 1.0 / (cfg.d as f64).sqrt()).expect("finite std");
    let mut store = ParamStore::new();
    for (name, shape, prunable) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".beta") || name == HEAD_BIAS {
            vec![0.0; n]
        } else {
            (0..n).map(|_| normal.sample(rng)).collect()
        };
        store.insert(&name, Tensor::new(shape, data)?, prunable)?;
    }
    Ok(store)
}

struct HeadIds {
    q: usize,
    k: usize,
    v: usize,
    c: usize,
}

struct BlockIds {
    heads: Vec<HeadIds>,
    w1: usize,
    w2: usize,
    g1: usize,
    b1: usize,
    g2: usize,
    b2: usize,
}

/// Positions of every named parameter within a store's name order.
struct Layout {
    embedding: usize,
    head_w: usize,
    head_b: usize,
    blocks: Vec<BlockIds>,
}

impl Layout {
    fn resolve(store: &ParamStore, cfg: &TransformerConfig) -> Result<Self, ModelError> {
        let idx = |name: &str| {
            store
                .index_of(name)
                .ok_or_else(|| ParamError::Unknown(name.to_string()))
        };
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let heads = (0..cfg.heads)
                .map(|h| {
                    Ok(HeadIds {
                        q: idx(&head_name(l, h, "w_q"))?,
                        k: idx(&head_name(l, h, "w_k"))?,
                        v: idx(&head_name(l, h, "w_v"))?,
                        c: idx(&head_name(l, h, "w_c"))?,
                    })
                })
                .collect::<Result<Vec<_>, ParamError>>()?;
            blocks.push(BlockIds {
                heads,
                w1: idx(&block_name(l, "ffn.w1"))?,
                w2: idx(&block_name(l, "ffn.w2"))?,
                g1: idx(&block_name(l, "ln1.gamma"))?,
                b1: idx(&block_name(l, "ln1.beta"))?,
                g2: idx(&block_name(l, "ln2.gamma"))?,
                b2: idx(&block_name(l, "ln2.beta"))?,
            });
        }
        Ok(Self {
            embedding: idx(EMBEDDING)?,
            head_w: idx(HEAD_WEIGHT)?,
            head_b: idx(HEAD_BIAS)?,
            blocks,
        })
    }
}

/// One attention head on the graph; returns `(values n×k, weights n×n)`.
fn head_on_graph(
    g: &mut Graph,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
) -> Result<(NodeId, NodeId), TensorError> {
    let k = g.value(wq).dims2().1;
    let q = g.matmul(x, wq)?;
    let key = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let kt = g.transpose(key);
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (k as f64).sqrt());
    let weights = g.row_softmax(scaled);
    let values = g.matmul(weights, v)?;
    Ok((values, weights))
}

struct BlockNodes {
    heads: Vec<[NodeId; 4]>,
    w1: NodeId,
    w2: NodeId,
    g1: NodeId,
    b1: NodeId,
    g2: NodeId,
    b2: NodeId,
}

fn block_on_graph(g: &mut Graph, x: NodeId, p: &BlockNodes) -> Result<NodeId, TensorError> {
    let mut u: Option<NodeId> = None;
    for &[wq, wk, wv, wc] in &p.heads {
        let (values, _) = head_on_graph(g, x, wq, wk, wv)?;
        let projected = g.matmul(values, wc)?;
        u = Some(match u {
            None => projected,
            Some(acc) => g.add(acc, projected)?,
        });
    }
    let u = u.expect("at least one head");
    let r1 = g.add(x, u)?;
    let u_tilde = g.layer_norm(r1, p.g1, p.b1)?;
    let hidden = g.matmul(u_tilde, p.w1)?;
    let hidden = g.relu(hidden);
    let z_tilde = g.matmul(hidden, p.w2)?;
    let r2 = g.add(u_tilde, z_tilde)?;
    g.layer_norm(r2, p.g2, p.b2)
}

fn check_matrix(t: &Tensor, rows: usize, cols: usize, op: &'static str, x: &Tensor) -> Result<(), TensorError> {
    if t.shape() != [rows, cols] {
        return Err(TensorError::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// Scaled dot-product attention of one head over the rows of `x` (`n×d`).
pub fn attention_head(x: &Tensor, w_q: &Tensor, w_k: &Tensor, w_v: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
    let (_, d) = x.dims2();
    let k = w_q.dims2().1;
    for w in [w_q, w_k, w_v] {
        check_matrix(w, d, k, "attention_head", x)?;
    }
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let q = g.constant(w_q.clone());
    let kk = g.constant(w_k.clone());
    let v = g.constant(w_v.clone());
    let (values, weights) = head_on_graph(&mut g, xn, q, kk, v)?;
    Ok((g.value(values).clone(), g.value(weights).clone()))
}

/// Applies one transformer block to `x` (`n×d`), returning `n×d`.
pub fn block_forward(x: &Tensor, p: &BlockParams) -> Result<Tensor, ModelError> {
    let (_, d) = x.dims2();
    if x.shape().len() != 2 {
        return Err(TensorError::Shape {
            op: "block_forward",
            lhs: x.shape().to_vec(),
            rhs: vec![d],
        }
        .into());
    }
    if p.w_q.is_empty() {
        return Err(ModelError::Config("block needs at least one head".into()));
    }
    let k = p.w_q[0].dims2().1;
    for h in 0..p.w_q.len() {
        check_matrix(&p.w_q[h], d, k, "block_forward", x)?;
        check_matrix(&p.w_k[h], d, k, "block_forward", x)?;
        check_matrix(&p.w_v[h], d, k, "block_forward", x)?;
        check_matrix(&p.w_c[h], k, d, "block_forward", x)?;
    }
    let m = p.w1.dims2().1;
    check_matrix(&p.w1, d, m, "block_forward", x)?;
    check_matrix(&p.w2, m, d, "block_forward", x)?;
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let mut c = |t: &Tensor| g.constant(t.clone());
    let heads = (0..p.w_q.len())
        .map(|h| [c(&p.w_q[h]), c(&p.w_k[h]), c(&p.w_v[h]), c(&p.w_c[h])])
        .collect();
    let nodes = BlockNodes {
        heads,
        w1: c(&p.w1),
        w2: c(&p.w2),
        g1: c(&p.gamma1),
        b1: c(&p.beta1),
        g2: c(&p.gamma2),
        b2: c(&p.beta2),
    };
    let out = block_on_graph(&mut g, xn, &nodes)?;
    Ok(g.value(out).clone())
}

fn check_tokens(tokens: &[usize], cfg: &TransformerConfig) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > cfg.n_max {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: cfg.n_max,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id >= cfg.vocab) {
        return Err(ModelError::TokenOutOfVocab { id, vocab: cfg.vocab });
    }
    Ok(())
}

/// Records the full model on `g` and returns the leaf node of every
/// parameter (store order) and the logits node.
fn model_on_graph(
    g: &mut Graph,
    tokens: &[usize],
    store: &ParamStore,
    layout: &Layout,
    requires_grad: bool,
) -> Result<(Vec<NodeId>, NodeId), ModelError> {
    let leaves: Vec<NodeId> = store.iter().map(|p| g.leaf(p.tensor.clone(), requires_grad)).collect();
    let mut x = g.gather(leaves[layout.embedding], tokens)?;
    for b in &layout.blocks {
        let nodes = BlockNodes {
            heads: b
                .heads
                .iter()
                .map(|h| [leaves[h.q], leaves[h.k], leaves[h.v], leaves[h.c]])
                .collect(),
            w1: leaves[b.w1],
            w2: leaves[b.w2],
            g1: leaves[b.g1],
            b1: leaves[b.b1],
            g2: leaves[b.g2],
            b2: leaves[b.b2],
        };
        x = block_on_graph(g, x, &nodes)?;
    }
    let pooled = g.mean_rows(x);
    let logits = g.matmul(pooled, leaves[layout.head_w])?;
    let logits = g.add_row(logits, leaves[layout.head_b])?;
    Ok((leaves, logits))
}

/// Class logits (length `n_classes`) for one token sequence.
pub fn model_forward(tokens: &[usize], params: &ParamStore, cfg: &TransformerConfig) -> Result<Tensor, ModelError> {
    check_tokens(tokens, cfg)?;
    let layout = Layout::resolve(params, cfg)?;
    let mut g = Graph::new();
    let (_, logits) = model_on_graph(&mut g, tokens, params, &layout, false)?;
    let out = g.value(logits);
    Ok(Tensor::vector(out.data().to_vec()))
}

/// Index of the largest logit; ties go to the lower class.
pub fn predict(tokens: &[usize], params: &ParamStore, cfg: &TransformerConfig) -> Result<usize, ModelError> {
    let logits = model_forward(tokens, params, cfg)?;
    let mut best = 0;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > logits.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of `(tokens, label)` pairs whose prediction matches the label.
pub fn accuracy<'a, I>(examples: I, params: &ParamStore, cfg: &TransformerConfig) -> Result<f64, ModelError>
where
    I: IntoIterator<Item = (&'a [usize], usize)>,
{
    let layout = Layout::resolve(params, cfg)?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (tokens, label) in examples {
        check_tokens(tokens, cfg)?;
        let mut g = Graph::new();
        let (_, logits) = model_on_graph(&mut g, tokens, params, &layout, false)?;
        let row = g.value(logits).data();
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        hits += (best == label) as usize;
        total += 1;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Mean cross-entropy over a batch of `(tokens, label)` pairs and its
/// gradient with respect to every parameter, aligned with the store order.
/// Each example is differentiated on its own tape and the per-example
/// gradients are summed in batch order.
pub fn loss_and_grads(
    batch: &[(&[usize], usize)],
    params: &ParamStore,
    cfg: &TransformerConfig,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let layout = Layout::resolve(params, cfg)?;
    let mut total = params
        .iter()
        .map(|p| Tensor::zeros(p.tensor.shape()))
        .collect::<Vec<_>>();
    let mut loss_sum = 0.0;
    for &(tokens, label) in batch {
        check_tokens(tokens, cfg)?;
        if label >= cfg.n_classes {
            return Err(ModelError::LabelOutOfRange {
                label,
                classes: cfg.n_classes,
            });
        }
        let mut g = Graph::new();
        let (leaves, logits) = model_on_graph(&mut g, tokens, params, &layout, true)?;
        let loss = g.cross_entropy(logits, &[label])?;
        loss_sum += g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        for (acc, leaf) in total.iter_mut().zip(&leaves) {
            if let Some(gr) = grads.take(*leaf) {
                acc.add_assign(&gr);
            }
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for t in &mut total {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    Ok((loss_sum * scale, total))
}

/// Mean cross-entropy over a batch without gradients.
pub fn batch_loss(
    batch: &[(&[usize], usize)],
    params: &ParamStore,
    cfg: &TransformerConfig,
) -> Result<f64, ModelError> {
    let layout = Layout::resolve(params, cfg)?;
    let mut loss_sum = 0.0;
    for &(tokens, label) in batch {
        check_tokens(tokens, cfg)?;
        let mut g = Graph::new();
        let (_, logits) = model_on_graph(&mut g, tokens, params, &layout, false)?;
        let loss = g.cross_entropy(logits, &[label])?;
        loss_sum += g.value(loss).data()[0];
    }
    Ok(loss_sum / batch.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> TransformerConfig {
        TransformerConfig {
            d: 8,
            k: 4,
            m_ff: 16,
            heads: 2,
            layers: 2,
            n_max: 6,
            vocab: 10,
            n_classes: 2,
        }
    }

    #[test]
    fn shapes_and_prunable_count() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = init_params(&cfg, &mut rng).unwrap();
        assert_eq!(store.prunable_count(), cfg.prunable_count());
        assert!(!store.get(EMBEDDING).unwrap().prunable);
        assert!(!store.get(HEAD_WEIGHT).unwrap().prunable);
        assert!(!store.get("blocks.0.ln1.gamma").unwrap().prunable);
        assert!(store.get("blocks.1.attn.0.w_c").unwrap().prunable);
        assert_eq!(store.get("blocks.1.attn.0.w_c").unwrap().tensor.shape(), &[4, 8]);
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Tensor::new(vec![5, 3], (0..15).map(|_| normal.sample(&mut rng)).collect()).unwrap();
        let zero = Tensor::zeros(&[3, 2]);
        let wv = Tensor::new(vec![3, 2], (0..6).map(|_| normal.sample(&mut rng)).collect()).unwrap();
        let (_, w) = attention_head(&x, &zero, &zero, &wv).unwrap();
        assert!(w.data().iter().all(|&a| (a - 0.2).abs() < 1e-15));
        let one = Tensor::from_rows(&[&[0.3, -1.0, 2.0]]);
        let (_, w) = attention_head(&one, &wv, &wv, &wv).unwrap();
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn attention_shape_error() {
        let x = Tensor::zeros(&[2, 3]);
        let bad = Tensor::zeros(&[4, 2]);
        let ok = Tensor::zeros(&[3, 2]);
        assert!(attention_head(&x, &bad, &ok, &ok).is_err());
    }

    #[test]
    fn zero_weights_collapse_to_double_layer_norm() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = init_params(&cfg, &mut rng).unwrap();
        for p in store.iter_mut() {
            if p.prunable {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let bp = BlockParams::from_store(&store, 0, &cfg).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Tensor::new(vec![3, 8], (0..24).map(|_| normal.sample(&mut rng)).collect()).unwrap();
        let z = block_forward(&x, &bp).unwrap();
        assert_eq!(z.shape(), x.shape());
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let gm = g.constant(Tensor::filled(&[8], 1.0));
        let bt = g.constant(Tensor::zeros(&[8]));
        let once = g.layer_norm(xn, gm, bt).unwrap();
        let twice = g.layer_norm(once, gm, bt).unwrap();
        for (a, b) in z.data().iter().zip(g.value(twice).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_and_validates_input() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store = init_params(&cfg, &mut rng).unwrap();
        let a = model_forward(&[1, 2, 3], &store, &cfg).unwrap();
        let b = model_forward(&[1, 2, 3], &store, &cfg).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.data(), b.data());
        assert!(matches!(
            model_forward(&[1; 7], &store, &cfg),
            Err(ModelError::SequenceTooLong { len: 7, max: 6 })
        ));
        assert!(matches!(
            model_forward(&[1, 10], &store, &cfg),
            Err(ModelError::TokenOutOfVocab { id: 10, vocab: 10 })
        ));
        assert!(matches!(
            model_forward(&[], &store, &cfg),
            Err(ModelError::EmptySequence)
        ));
    }

    #[test]
    fn logits_are_permutation_invariant() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = init_params(&cfg, &mut rng).unwrap();
        let a = model_forward(&[4, 1, 7, 7, 0], &store, &cfg).unwrap();
        let b = model_forward(&[7, 0, 4, 7, 1], &store, &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_examples() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let store = init_params(&cfg, &mut rng).unwrap();
        let e1: (&[usize], usize) = (&[1, 2, 3], 0);
        let e2: (&[usize], usize) = (&[4, 4, 9, 0], 1);
        let (l1, g1) = loss_and_grads(&[e1], &store, &cfg).unwrap();
        let (l2, g2) = loss_and_grads(&[e2], &store, &cfg).unwrap();
        let (l, g) = loss_and_grads(&[e1, e2], &store, &cfg).unwrap();
        assert!((l - (l1 + l2) / 2.0).abs() < 1e-15);
        for ((a, b), c) in g1.iter().zip(&g2).zip(&g) {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(c.data()) {
                assert!((z - (x + y) / 2.0).abs() < 1e-15);
            }
        }
        assert!((batch_loss(&[e1, e2], &store, &cfg).unwrap() - l).abs() < 1e-15);
    }
}
