//! The three classifier families behind one [`Classifier`] trait.
//!
//! Every family maps a padded token sequence to class logits:
//!
//! * bidirectional LSTM / GRU — embed the non-padding tokens, run both
//!   directions, concatenate the two final states, classify;
//! * transformer encoder — embed plus sinusoidal positions, stack
//!   self-attention blocks with padding masked out of the attention
//!   weights, pool one position, classify.
//!
//! Forward passes are recorded on the autodiff tape, so
//! [`Classifier::loss_and_grads`] returns exact gradients in the same
//! order as [`Classifier::params`]. Parameter initialization draws from a
//! single seeded stream in a fixed order, which makes models reproducible
//! from `(config, seed)` alone.

use std::collections::HashMap;

use rand_chacha::ChaCha20Rng;

use super::checkpoint::Checkpoint;
use super::graph::{Graph, NodeId};
use super::ops::{self, AttentionParams, GruParams, HeadLayer, HeadParams, HeadSpec, LstmParams};
use super::tensor::Tensor;
use super::NnError;
use crate::rng;
use crate::token::TokenSequence;

/// Salt for the parameter-init rng stream.
const INIT_SALT: u64 = 0x4d4f_4445;

/// Additive attention bias that effectively removes padded keys.
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    BiLstm,
    BiGru,
    Encoder,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::BiLstm => "bilstm",
            ModelFamily::BiGru => "bigru",
            ModelFamily::Encoder => "encoder",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "bilstm" => Ok(ModelFamily::BiLstm),
            "bigru" => Ok(ModelFamily::BiGru),
            "encoder" => Ok(ModelFamily::Encoder),
            other => Err(NnError::ConfigMismatch(format!(
                "unknown model family {other:?}"
            ))),
        }
    }
}

/// Which classification-head recipe sits on top of the pooled features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Single affine map.
    Linear,
    /// Dropout, then the affine map.
    DropoutLinear,
    /// Hidden affine + ReLU, dropout, affine map.
    ReluTower,
    /// Dropout, hidden affine + tanh, dropout, affine map.
    TanhTower,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::DropoutLinear => "dropout_linear",
            HeadKind::ReluTower => "relu_tower",
            HeadKind::TanhTower => "tanh_tower",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "dropout_linear" => Ok(HeadKind::DropoutLinear),
            "relu_tower" => Ok(HeadKind::ReluTower),
            "tanh_tower" => Ok(HeadKind::TanhTower),
            other => Err(NnError::ConfigMismatch(format!(
                "unknown head recipe {other:?}"
            ))),
        }
    }
}

/// Which encoder position feeds the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// The first position (the sequence-start token).
    First,
    /// The last non-padding position.
    LastContent,
}

impl PoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::First => "first",
            PoolKind::LastContent => "last",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NnError> {
        match s {
            "first" => Ok(PoolKind::First),
            "last" => Ok(PoolKind::LastContent),
            other => Err(NnError::ConfigMismatch(format!(
                "unknown pooling position {other:?}"
            ))),
        }
    }
}

/// Everything needed to rebuild a classifier deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub vocab_size: usize,
    pub classes: usize,
    pub max_len: usize,
    /// Embedding width; for the encoder this is also the model width.
    pub embed_dim: usize,
    /// Hidden units per recurrent direction (recurrent families only).
    pub hidden: usize,
    /// Encoder block count (encoder only).
    pub layers: usize,
    /// Attention head count (encoder only).
    pub heads: usize,
    pub head: HeadKind,
    pub pool: PoolKind,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// A small configuration with workable defaults for everything except
    /// the identity of the model.
    pub fn new(family: ModelFamily, vocab_size: usize, classes: usize) -> Self {
        ModelConfig {
            family,
            vocab_size,
            classes,
            max_len: 128,
            embed_dim: 64,
            hidden: 64,
            layers: 2,
            heads: 4,
            head: HeadKind::DropoutLinear,
            pool: PoolKind::First,
            dropout: 0.1,
            seed: 1,
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("family".into(), self.family.as_str().into()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("head".into(), self.head.as_str().into()),
            ("pool".into(), self.pool.as_str().into()),
            ("dropout".into(), self.dropout.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, NnError> {
        let map: HashMap<&str, &str> = pairs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let get = |key: &str| -> Result<&str, NnError> {
            map.get(key)
                .copied()
                .ok_or_else(|| NnError::ConfigMismatch(format!("missing config key {key:?}")))
        };
        fn num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, NnError> {
            v.parse().map_err(|_| {
                NnError::ConfigMismatch(format!("config key {key:?} has bad value {v:?}"))
            })
        }
        Ok(ModelConfig {
            family: ModelFamily::parse(get("family")?)?,
            vocab_size: num(get("vocab_size")?, "vocab_size")?,
            classes: num(get("classes")?, "classes")?,
            max_len: num(get("max_len")?, "max_len")?,
            embed_dim: num(get("embed_dim")?, "embed_dim")?,
            hidden: num(get("hidden")?, "hidden")?,
            layers: num(get("layers")?, "layers")?,
            heads: num(get("heads")?, "heads")?,
            head: HeadKind::parse(get("head")?)?,
            pool: PoolKind::parse(get("pool")?)?,
            dropout: num(get("dropout")?, "dropout")?,
            seed: num(get("seed")?, "seed")?,
        })
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.vocab_size < 4 {
            return Err(NnError::ConfigMismatch(format!(
                "vocabulary of {} cannot even hold the special tokens",
                self.vocab_size
            )));
        }
        if self.classes < 2 {
            return Err(NnError::ConfigMismatch(format!(
                "{} classes is not a classification problem",
                self.classes
            )));
        }
        if self.max_len < 2 {
            return Err(NnError::ConfigMismatch(
                "max_len must fit the sequence delimiters".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(NnError::ConfigMismatch("embedding width is zero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::ConfigMismatch(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout
            )));
        }
        match self.family {
            ModelFamily::BiLstm | ModelFamily::BiGru => {
                if self.hidden == 0 {
                    return Err(NnError::ConfigMismatch(
                        "recurrent hidden width is zero".into(),
                    ));
                }
            }
            ModelFamily::Encoder => {
                if self.layers == 0 {
                    return Err(NnError::ConfigMismatch("encoder with zero blocks".into()));
                }
                if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
                    return Err(NnError::ConfigMismatch(format!(
                        "model width {} does not divide into {} heads",
                        self.embed_dim, self.heads
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A trained or trainable sequence classifier.
pub trait Classifier {
    fn config(&self) -> &ModelConfig;

    /// Stable names for every parameter tensor, aligned with
    /// [`Classifier::params`].
    fn param_names(&self) -> Vec<String>;

    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Mean cross-entropy over the batch plus one gradient tensor per
    /// parameter, aligned with [`Classifier::params`]. Passing a dropout
    /// rng enables training mode; `None` runs the head deterministically.
    fn loss_and_grads(
        &self,
        batch: &[(&TokenSequence, u32)],
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(f64, Vec<Tensor>), NnError>;

    /// Inference logits for one sequence (dropout disabled).
    fn logits(&self, seq: &TokenSequence) -> Result<Tensor, NnError>;

    /// Predicted class: argmax of the logits, lowest index on ties.
    fn predict(&self, seq: &TokenSequence) -> Result<u32, NnError> {
        Ok(argmax_row(&self.logits(seq)?))
    }
}

/// Build a freshly initialized classifier from its configuration.
pub fn build_classifier(cfg: &ModelConfig) -> Result<Box<dyn Classifier>, NnError> {
    cfg.validate()?;
    Ok(match cfg.family {
        ModelFamily::BiLstm => Box::new(BiLstmModel::build(cfg)?),
        ModelFamily::BiGru => Box::new(BiGruModel::build(cfg)?),
        ModelFamily::Encoder => Box::new(EncoderModel::build(cfg)?),
    })
}

/// Snapshot a model into the checkpoint format.
pub fn model_to_checkpoint(model: &dyn Classifier) -> Checkpoint {
    let tensors = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(name, t)| (name, t.clone()))
        .collect();
    Checkpoint {
        config: model.config().to_pairs(),
        tensors,
    }
}

/// Rebuild a model from a checkpoint, restoring every parameter by name.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<Box<dyn Classifier>, NnError> {
    let cfg = ModelConfig::from_pairs(&ck.config)?;
    let mut model = build_classifier(&cfg)?;
    let stored: HashMap<&str, &Tensor> = ck
        .tensors
        .iter()
        .map(|(name, t)| (name.as_str(), t))
        .collect();
    let names = model.param_names();
    if stored.len() != names.len() {
        return Err(NnError::ConfigMismatch(format!(
            "checkpoint holds {} tensors but the model has {} parameters",
            stored.len(),
            names.len()
        )));
    }
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let t = stored.get(name.as_str()).ok_or_else(|| {
            NnError::ConfigMismatch(format!("checkpoint is missing parameter {name:?}"))
        })?;
        if (t.rows(), t.cols()) != (slot.rows(), slot.cols()) {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {name:?} is {}x{} in the checkpoint but {}x{} in the model",
                t.rows(),
                t.cols(),
                slot.rows(),
                slot.cols()
            )));
        }
        *slot = (*t).clone();
    }
    Ok(model)
}

fn argmax_row(t: &Tensor) -> u32 {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (j, &v) in t.row(0).iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best as u32
}

fn head_spec_for(cfg: &ModelConfig, feature_width: usize) -> HeadSpec {
    // Hidden tower layers are four times as wide as the incoming features.
    match cfg.head {
        HeadKind::Linear => HeadSpec::linear(cfg.classes),
        HeadKind::DropoutLinear => HeadSpec::dropout_linear(cfg.dropout, cfg.classes),
        HeadKind::ReluTower => HeadSpec::relu_tower(cfg.dropout, 4 * feature_width, cfg.classes),
        HeadKind::TanhTower => HeadSpec::tanh_tower(cfg.dropout, 4 * feature_width, cfg.classes),
    }
}

/// Check a hand-made or decoded sequence before touching the tape.
fn validate_sequence(seq: &TokenSequence, cfg: &ModelConfig) -> Result<(), NnError> {
    if seq.ids.len() != seq.mask.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} ids but {} mask entries",
            seq.ids.len(),
            seq.mask.len()
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(NnError::ShapeMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Ids of the non-padding tokens, in order.
fn content_ids(seq: &TokenSequence) -> Vec<u32> {
    seq.ids
        .iter()
        .zip(&seq.mask)
        .filter(|(_, &m)| m != 0)
        .map(|(&id, _)| id)
        .collect()
}

/// Shared batch driver: clone the parameters onto a fresh tape once, run
/// every sample forward, then do a single multi-root backward pass.
fn run_batch(
    params: &[&Tensor],
    batch: &[(&TokenSequence, u32)],
    mut dropout_rng: Option<&mut ChaCha20Rng>,
    forward: impl Fn(
        &mut Graph,
        &[NodeId],
        &TokenSequence,
        Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId, NnError>,
) -> Result<(f64, Vec<Tensor>), NnError> {
    if batch.is_empty() {
        return Err(NnError::ConfigMismatch("empty training batch".into()));
    }
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|t| g.leaf((*t).clone())).collect();
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut seeds = Vec::with_capacity(batch.len());
    for (seq, label) in batch {
        let logits = forward(&mut g, &leaves, seq, dropout_rng.as_deref_mut())?;
        let (loss, dlogits) = ops::cross_entropy(g.value(logits), *label)?;
        total += loss * inv;
        seeds.push((logits, dlogits.scale(inv)));
    }
    let mut grads = g.backward_multi(seeds);
    let out = leaves
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();
    Ok((total, out))
}

/// Run a classification head on the tape. `weights` pairs up with the
/// spec's linear layers in order.
fn tape_head(
    g: &mut Graph,
    spec: &HeadSpec,
    weights: &[(NodeId, NodeId)],
    x: NodeId,
    mut dropout_rng: Option<&mut ChaCha20Rng>,
) -> NodeId {
    let mut cur = x;
    let mut li = 0;
    for layer in &spec.layers {
        match layer {
            HeadLayer::Dropout(p) => cur = g.dropout(cur, *p, dropout_rng.as_deref_mut()),
            HeadLayer::Linear(_) => {
                let (w, b) = weights[li];
                li += 1;
                let m = g.matmul(cur, w);
                cur = g.add(m, b);
            }
            HeadLayer::Relu => cur = g.relu(cur),
            HeadLayer::Tanh => cur = g.tanh(cur),
        }
    }
    cur
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM
// ---------------------------------------------------------------------------

const LSTM_FIELDS: [&str; 8] = ["w_f", "b_f", "w_u", "b_u", "w_o", "b_o", "w_c", "b_c"];

fn lstm_tensors(p: &LstmParams) -> [&Tensor; 8] {
    [
        &p.w_f, &p.b_f, &p.w_u, &p.b_u, &p.w_o, &p.b_o, &p.w_c, &p.b_c,
    ]
}

fn lstm_tensors_mut(p: &mut LstmParams) -> [&mut Tensor; 8] {
    [
        &mut p.w_f, &mut p.b_f, &mut p.w_u, &mut p.b_u, &mut p.w_o, &mut p.b_o, &mut p.w_c,
        &mut p.b_c,
    ]
}

/// Leaf ids for one LSTM direction, in `LSTM_FIELDS` order.
struct TapeLstm {
    w_f: NodeId,
    b_f: NodeId,
    w_u: NodeId,
    b_u: NodeId,
    w_o: NodeId,
    b_o: NodeId,
    w_c: NodeId,
    b_c: NodeId,
}

impl TapeLstm {
    fn from_leaves(ids: &[NodeId]) -> Self {
        TapeLstm {
            w_f: ids[0],
            b_f: ids[1],
            w_u: ids[2],
            b_u: ids[3],
            w_o: ids[4],
            b_o: ids[5],
            w_c: ids[6],
            b_c: ids[7],
        }
    }

    /// Unroll over the steps and return the final hidden state.
    fn chain(&self, g: &mut Graph, xs: &[NodeId], hidden: usize) -> NodeId {
        let mut a = g.leaf(Tensor::zeros(1, hidden));
        let mut c = g.leaf(Tensor::zeros(1, hidden));
        for &x in xs {
            let z = g.concat_cols(a, x);
            let f = gate(g, z, self.w_f, self.b_f, Gate::Sigmoid);
            let i = gate(g, z, self.w_u, self.b_u, Gate::Sigmoid);
            let o = gate(g, z, self.w_o, self.b_o, Gate::Sigmoid);
            let cand = gate(g, z, self.w_c, self.b_c, Gate::Tanh);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let squashed = g.tanh(c);
            a = g.mul(o, squashed);
        }
        a
    }
}

enum Gate {
    Sigmoid,
    Tanh,
}

fn gate(g: &mut Graph, z: NodeId, w: NodeId, b: NodeId, kind: Gate) -> NodeId {
    let m = g.matmul(z, w);
    let s = g.add(m, b);
    match kind {
        Gate::Sigmoid => g.sigmoid(s),
        Gate::Tanh => g.tanh(s),
    }
}

pub struct BiLstmModel {
    cfg: ModelConfig,
    embed: Tensor,
    fwd: LstmParams,
    bwd: LstmParams,
    head_spec: HeadSpec,
    head: HeadParams,
}

impl BiLstmModel {
    fn build(cfg: &ModelConfig) -> Result<Self, NnError> {
        let mut r = rng::seeded(cfg.seed, INIT_SALT);
        let bound = 1.0 / (cfg.embed_dim as f64).sqrt();
        let embed = Tensor::uniform(cfg.vocab_size, cfg.embed_dim, bound, &mut r);
        let fwd = LstmParams::init(cfg.embed_dim, cfg.hidden, &mut r);
        let bwd = LstmParams::init(cfg.embed_dim, cfg.hidden, &mut r);
        let head_spec = head_spec_for(cfg, 2 * cfg.hidden);
        let head = HeadParams::init(&head_spec, 2 * cfg.hidden, &mut r)?;
        Ok(BiLstmModel {
            cfg: cfg.clone(),
            embed,
            fwd,
            bwd,
            head_spec,
            head,
        })
    }

    /// Leaf layout: embed, 8 forward tensors, 8 backward tensors, head
    /// pairs — matching `params()`.
    fn tape_forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId, NnError> {
        validate_sequence(seq, &self.cfg)?;
        let ids = content_ids(seq);
        if ids.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let embedded = g.embed_rows(leaves[0], &ids);
        let xs: Vec<NodeId> = (0..ids.len()).map(|t| g.select_row(embedded, t)).collect();
        let fwd = TapeLstm::from_leaves(&leaves[1..9]);
        let bwd = TapeLstm::from_leaves(&leaves[9..17]);
        let a_f = fwd.chain(g, &xs, self.cfg.hidden);
        let reversed: Vec<NodeId> = xs.iter().rev().copied().collect();
        let a_b = bwd.chain(g, &reversed, self.cfg.hidden);
        let feat = g.concat_cols(a_f, a_b);
        let head: Vec<(NodeId, NodeId)> = leaves[17..].chunks(2).map(|c| (c[0], c[1])).collect();
        Ok(tape_head(g, &self.head_spec, &head, feat, dropout_rng))
    }
}

impl Classifier for BiLstmModel {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        for dir in ["fwd", "bwd"] {
            names.extend(LSTM_FIELDS.iter().map(|f| format!("{dir}.{f}")));
        }
        for i in 0..self.head.weights.len() {
            names.push(format!("head.{i}.w"));
            names.push(format!("head.{i}.b"));
        }
        names
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        out.extend(lstm_tensors(&self.fwd));
        out.extend(lstm_tensors(&self.bwd));
        for (w, b) in &self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed];
        out.extend(lstm_tensors_mut(&mut self.fwd));
        out.extend(lstm_tensors_mut(&mut self.bwd));
        for (w, b) in &mut self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn loss_and_grads(
        &self,
        batch: &[(&TokenSequence, u32)],
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(f64, Vec<Tensor>), NnError> {
        run_batch(&self.params(), batch, dropout_rng, |g, leaves, seq, rng| {
            self.tape_forward(g, leaves, seq, rng)
        })
    }

    fn logits(&self, seq: &TokenSequence) -> Result<Tensor, NnError> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = self.params().iter().map(|t| g.leaf((*t).clone())).collect();
        let out = self.tape_forward(&mut g, &leaves, seq, None)?;
        Ok(g.value(out).clone())
    }
}

// ---------------------------------------------------------------------------
// Bidirectional GRU
// ---------------------------------------------------------------------------

const GRU_FIELDS: [&str; 9] = [
    "w_u", "u_u", "b_u", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h",
];

fn gru_tensors(p: &GruParams) -> [&Tensor; 9] {
    [
        &p.w_u, &p.u_u, &p.b_u, &p.w_r, &p.u_r, &p.b_r, &p.w_h, &p.u_h, &p.b_h,
    ]
}

fn gru_tensors_mut(p: &mut GruParams) -> [&mut Tensor; 9] {
    [
        &mut p.w_u, &mut p.u_u, &mut p.b_u, &mut p.w_r, &mut p.u_r, &mut p.b_r, &mut p.w_h,
        &mut p.u_h, &mut p.b_h,
    ]
}

struct TapeGru {
    w_u: NodeId,
    u_u: NodeId,
    b_u: NodeId,
    w_r: NodeId,
    u_r: NodeId,
    b_r: NodeId,
    w_h: NodeId,
    u_h: NodeId,
    b_h: NodeId,
}

impl TapeGru {
    fn from_leaves(ids: &[NodeId]) -> Self {
        TapeGru {
            w_u: ids[0],
            u_u: ids[1],
            b_u: ids[2],
            w_r: ids[3],
            u_r: ids[4],
            b_r: ids[5],
            w_h: ids[6],
            u_h: ids[7],
            b_h: ids[8],
        }
    }

    fn chain(&self, g: &mut Graph, xs: &[NodeId], hidden: usize) -> NodeId {
        let mut c = g.leaf(Tensor::zeros(1, hidden));
        for &x in xs {
            let i = gru_gate(g, x, c, self.w_u, self.u_u, self.b_u);
            let r = gru_gate(g, x, c, self.w_r, self.u_r, self.b_r);
            let gated = g.mul(r, c);
            let xm = g.matmul(x, self.w_h);
            let cm = g.matmul(gated, self.u_h);
            let sum = g.add(xm, cm);
            let pre = g.add(sum, self.b_h);
            let cand = g.tanh(pre);
            let keep = g.mul(i, c);
            let inv = g.affine(i, -1.0, 1.0);
            let write = g.mul(inv, cand);
            c = g.add(keep, write);
        }
        c
    }
}

fn gru_gate(g: &mut Graph, x: NodeId, c: NodeId, w: NodeId, u: NodeId, b: NodeId) -> NodeId {
    let xm = g.matmul(x, w);
    let cm = g.matmul(c, u);
    let sum = g.add(xm, cm);
    let pre = g.add(sum, b);
    g.sigmoid(pre)
}

pub struct BiGruModel {
    cfg: ModelConfig,
    embed: Tensor,
    fwd: GruParams,
    bwd: GruParams,
    head_spec: HeadSpec,
    head: HeadParams,
}

impl BiGruModel {
    fn build(cfg: &ModelConfig) -> Result<Self, NnError> {
        let mut r = rng::seeded(cfg.seed, INIT_SALT);
        let bound = 1.0 / (cfg.embed_dim as f64).sqrt();
        let embed = Tensor::uniform(cfg.vocab_size, cfg.embed_dim, bound, &mut r);
        let fwd = GruParams::init(cfg.embed_dim, cfg.hidden, &mut r);
        let bwd = GruParams::init(cfg.embed_dim, cfg.hidden, &mut r);
        let head_spec = head_spec_for(cfg, 2 * cfg.hidden);
        let head = HeadParams::init(&head_spec, 2 * cfg.hidden, &mut r)?;
        Ok(BiGruModel {
            cfg: cfg.clone(),
            embed,
            fwd,
            bwd,
            head_spec,
            head,
        })
    }

    fn tape_forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId, NnError> {
        validate_sequence(seq, &self.cfg)?;
        let ids = content_ids(seq);
        if ids.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let embedded = g.embed_rows(leaves[0], &ids);
        let xs: Vec<NodeId> = (0..ids.len()).map(|t| g.select_row(embedded, t)).collect();
        let fwd = TapeGru::from_leaves(&leaves[1..10]);
        let bwd = TapeGru::from_leaves(&leaves[10..19]);
        let c_f = fwd.chain(g, &xs, self.cfg.hidden);
        let reversed: Vec<NodeId> = xs.iter().rev().copied().collect();
        let c_b = bwd.chain(g, &reversed, self.cfg.hidden);
        let feat = g.concat_cols(c_f, c_b);
        let head: Vec<(NodeId, NodeId)> = leaves[19..].chunks(2).map(|c| (c[0], c[1])).collect();
        Ok(tape_head(g, &self.head_spec, &head, feat, dropout_rng))
    }
}

impl Classifier for BiGruModel {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        for dir in ["fwd", "bwd"] {
            names.extend(GRU_FIELDS.iter().map(|f| format!("{dir}.{f}")));
        }
        for i in 0..self.head.weights.len() {
            names.push(format!("head.{i}.w"));
            names.push(format!("head.{i}.b"));
        }
        names
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        out.extend(gru_tensors(&self.fwd));
        out.extend(gru_tensors(&self.bwd));
        for (w, b) in &self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed];
        out.extend(gru_tensors_mut(&mut self.fwd));
        out.extend(gru_tensors_mut(&mut self.bwd));
        for (w, b) in &mut self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn loss_and_grads(
        &self,
        batch: &[(&TokenSequence, u32)],
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(f64, Vec<Tensor>), NnError> {
        run_batch(&self.params(), batch, dropout_rng, |g, leaves, seq, rng| {
            self.tape_forward(g, leaves, seq, rng)
        })
    }

    fn logits(&self, seq: &TokenSequence) -> Result<Tensor, NnError> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = self.params().iter().map(|t| g.leaf((*t).clone())).collect();
        let out = self.tape_forward(&mut g, &leaves, seq, None)?;
        Ok(g.value(out).clone())
    }
}

// ---------------------------------------------------------------------------
// Transformer encoder
// ---------------------------------------------------------------------------

struct EncoderBlock {
    attn: AttentionParams,
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    ff_w1: Tensor,
    ff_b1: Tensor,
    ff_w2: Tensor,
    ff_b2: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
}

impl EncoderBlock {
    fn init(d_model: usize, heads: usize, r: &mut ChaCha20Rng) -> Result<Self, NnError> {
        let attn = AttentionParams::init(d_model, heads, r)?;
        // Normalization starts as the identity: unit gain, zero shift.
        let ln1_gain = Tensor::filled(1, d_model, 1.0);
        let ln1_bias = Tensor::zeros(1, d_model);
        // Inner feed-forward width is four times the model width.
        let inner = 4 * d_model;
        let b1 = 1.0 / (d_model as f64).sqrt();
        let ff_w1 = Tensor::uniform(d_model, inner, b1, r);
        let ff_b1 = Tensor::uniform(1, inner, b1, r);
        let b2 = 1.0 / (inner as f64).sqrt();
        let ff_w2 = Tensor::uniform(inner, d_model, b2, r);
        let ff_b2 = Tensor::uniform(1, d_model, b2, r);
        let ln2_gain = Tensor::filled(1, d_model, 1.0);
        let ln2_bias = Tensor::zeros(1, d_model);
        Ok(EncoderBlock {
            attn,
            ln1_gain,
            ln1_bias,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
            ln2_gain,
            ln2_bias,
        })
    }

    fn names(l: usize, heads: usize) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..heads {
            v.push(format!("layer{l}.wq{i}"));
        }
        for i in 0..heads {
            v.push(format!("layer{l}.wk{i}"));
        }
        for i in 0..heads {
            v.push(format!("layer{l}.wv{i}"));
        }
        v.push(format!("layer{l}.wo"));
        v.push(format!("layer{l}.ln1.gain"));
        v.push(format!("layer{l}.ln1.bias"));
        v.push(format!("layer{l}.ff.w1"));
        v.push(format!("layer{l}.ff.b1"));
        v.push(format!("layer{l}.ff.w2"));
        v.push(format!("layer{l}.ff.b2"));
        v.push(format!("layer{l}.ln2.gain"));
        v.push(format!("layer{l}.ln2.bias"));
        v
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        v.extend(self.attn.wq.iter());
        v.extend(self.attn.wk.iter());
        v.extend(self.attn.wv.iter());
        v.push(&self.attn.wo);
        v.push(&self.ln1_gain);
        v.push(&self.ln1_bias);
        v.push(&self.ff_w1);
        v.push(&self.ff_b1);
        v.push(&self.ff_w2);
        v.push(&self.ff_b2);
        v.push(&self.ln2_gain);
        v.push(&self.ln2_bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.extend(self.attn.wq.iter_mut());
        v.extend(self.attn.wk.iter_mut());
        v.extend(self.attn.wv.iter_mut());
        v.push(&mut self.attn.wo);
        v.push(&mut self.ln1_gain);
        v.push(&mut self.ln1_bias);
        v.push(&mut self.ff_w1);
        v.push(&mut self.ff_b1);
        v.push(&mut self.ff_w2);
        v.push(&mut self.ff_b2);
        v.push(&mut self.ln2_gain);
        v.push(&mut self.ln2_bias);
        v
    }

    /// Tensors per block: 3·heads projections + wo + 2 norms ×2 + 4 ff.
    fn tensor_count(heads: usize) -> usize {
        3 * heads + 9
    }
}

pub struct EncoderModel {
    cfg: ModelConfig,
    embed: Tensor,
    /// Constant sinusoidal position table, recomputed from the config
    /// rather than checkpointed.
    positions: Tensor,
    blocks: Vec<EncoderBlock>,
    head_spec: HeadSpec,
    head: HeadParams,
}

impl EncoderModel {
    fn build(cfg: &ModelConfig) -> Result<Self, NnError> {
        let positions = ops::positional_encoding(cfg.max_len, cfg.embed_dim)?;
        let mut r = rng::seeded(cfg.seed, INIT_SALT);
        let bound = 1.0 / (cfg.embed_dim as f64).sqrt();
        let embed = Tensor::uniform(cfg.vocab_size, cfg.embed_dim, bound, &mut r);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            blocks.push(EncoderBlock::init(cfg.embed_dim, cfg.heads, &mut r)?);
        }
        let head_spec = head_spec_for(cfg, cfg.embed_dim);
        let head = HeadParams::init(&head_spec, cfg.embed_dim, &mut r)?;
        Ok(EncoderModel {
            cfg: cfg.clone(),
            embed,
            positions,
            blocks,
            head_spec,
            head,
        })
    }

    fn tape_forward(
        &self,
        g: &mut Graph,
        leaves: &[NodeId],
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<NodeId, NnError> {
        validate_sequence(seq, &self.cfg)?;
        // Trim the all-padding tail; nothing after the last real token can
        // influence the output.
        let last = match (0..seq.mask.len()).rev().find(|&i| seq.mask[i] != 0) {
            Some(i) => i,
            None => return Err(NnError::EmptySequence),
        };
        let n = last + 1;
        if n > self.cfg.max_len {
            return Err(NnError::ShapeMismatch(format!(
                "sequence of {n} exceeds the model's maximum of {}",
                self.cfg.max_len
            )));
        }
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let d_k = d / heads;
        let scale = 1.0 / (d_k as f64).sqrt();

        let mut x = g.embed_rows(leaves[0], &seq.ids[..n]);
        let pos = Tensor::new(n, d, self.positions.data()[..n * d].to_vec());
        x = g.add_fixed(x, &pos);
        // Padded keys get a large negative bias so softmax ignores them.
        let mut bias = Tensor::zeros(n, n);
        for j in 0..n {
            if seq.mask[j] == 0 {
                for r in 0..n {
                    bias.set(r, j, MASK_BIAS);
                }
            }
        }

        let per_block = EncoderBlock::tensor_count(heads);
        for (l, _) in self.blocks.iter().enumerate() {
            let base = 1 + l * per_block;
            let wq = &leaves[base..base + heads];
            let wk = &leaves[base + heads..base + 2 * heads];
            let wv = &leaves[base + 2 * heads..base + 3 * heads];
            let wo = leaves[base + 3 * heads];
            let ln1_gain = leaves[base + 3 * heads + 1];
            let ln1_bias = leaves[base + 3 * heads + 2];
            let ff_w1 = leaves[base + 3 * heads + 3];
            let ff_b1 = leaves[base + 3 * heads + 4];
            let ff_w2 = leaves[base + 3 * heads + 5];
            let ff_b2 = leaves[base + 3 * heads + 6];
            let ln2_gain = leaves[base + 3 * heads + 7];
            let ln2_bias = leaves[base + 3 * heads + 8];

            let mut cat: Option<NodeId> = None;
            for i in 0..heads {
                let q = g.matmul(x, wq[i]);
                let k = g.matmul(x, wk[i]);
                let v = g.matmul(x, wv[i]);
                let scores = g.matmul_bt(q, k);
                let scaled = g.scale(scores, scale);
                let masked = g.add_fixed(scaled, &bias);
                let probs = g.softmax_rows(masked);
                let head = g.matmul(probs, v);
                cat = Some(match cat {
                    None => head,
                    Some(acc) => g.concat_cols(acc, head),
                });
            }
            let attn = g.matmul(cat.expect("at least one head"), wo);
            let res1 = g.add(x, attn);
            let n1 = g.layer_norm(res1, ln1_gain, ln1_bias);
            let h1 = g.matmul(n1, ff_w1);
            let h1b = g.add_row(h1, ff_b1);
            let h1r = g.relu(h1b);
            let h2 = g.matmul(h1r, ff_w2);
            let ff = g.add_row(h2, ff_b2);
            let res2 = g.add(n1, ff);
            x = g.layer_norm(res2, ln2_gain, ln2_bias);
        }

        let pool_row = match self.cfg.pool {
            PoolKind::First => 0,
            PoolKind::LastContent => last,
        };
        let feat = g.select_row(x, pool_row);
        let head_base = 1 + self.blocks.len() * per_block;
        let head: Vec<(NodeId, NodeId)> = leaves[head_base..]
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect();
        Ok(tape_head(g, &self.head_spec, &head, feat, dropout_rng))
    }
}

impl Classifier for EncoderModel {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed".to_string()];
        for l in 0..self.blocks.len() {
            names.extend(EncoderBlock::names(l, self.cfg.heads));
        }
        for i in 0..self.head.weights.len() {
            names.push(format!("head.{i}.w"));
            names.push(format!("head.{i}.b"));
        }
        names
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        for (w, b) in &self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        for (w, b) in &mut self.head.weights {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn loss_and_grads(
        &self,
        batch: &[(&TokenSequence, u32)],
        dropout_rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(f64, Vec<Tensor>), NnError> {
        run_batch(&self.params(), batch, dropout_rng, |g, leaves, seq, rng| {
            self.tape_forward(g, leaves, seq, rng)
        })
    }

    fn logits(&self, seq: &TokenSequence) -> Result<Tensor, NnError> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = self.params().iter().map(|t| g.leaf((*t).clone())).collect();
        let out = self.tape_forward(&mut g, &leaves, seq, None)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::{BOS, EOS, PAD};

    fn seq(content: &[u32], max_len: usize) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend_from_slice(content);
        ids.push(EOS);
        assert!(ids.len() <= max_len);
        ids.resize(max_len, PAD);
        let mask = ids.iter().map(|&id| u8::from(id != PAD)).collect();
        TokenSequence { ids, mask }
    }

    fn tiny_cfg(family: ModelFamily) -> ModelConfig {
        ModelConfig {
            family,
            vocab_size: 12,
            classes: 2,
            max_len: 8,
            embed_dim: if family == ModelFamily::Encoder { 8 } else { 6 },
            hidden: 4,
            layers: 1,
            heads: 2,
            head: HeadKind::Linear,
            pool: PoolKind::First,
            dropout: 0.25,
            seed: 7,
        }
    }

    #[test]
    fn each_family_produces_class_logits_deterministically() {
        for family in [
            ModelFamily::BiLstm,
            ModelFamily::BiGru,
            ModelFamily::Encoder,
        ] {
            let cfg = tiny_cfg(family);
            let a = build_classifier(&cfg).unwrap();
            let b = build_classifier(&cfg).unwrap();
            let s = seq(&[5, 9, 4], cfg.max_len);
            let la = a.logits(&s).unwrap();
            let lb = b.logits(&s).unwrap();
            assert_eq!(la.rows(), 1);
            assert_eq!(la.cols(), 2);
            assert_eq!(la, lb, "{family:?} init or forward is not deterministic");
            assert!(la.is_finite());
        }
    }

    #[test]
    fn padding_tail_content_never_changes_logits() {
        for family in [
            ModelFamily::BiLstm,
            ModelFamily::BiGru,
            ModelFamily::Encoder,
        ] {
            let cfg = tiny_cfg(family);
            let m = build_classifier(&cfg).unwrap();
            let clean = seq(&[5, 9, 4], cfg.max_len);
            // Same content, but the masked-out tail holds arbitrary ids.
            let mut noisy = clean.clone();
            for i in 0..noisy.ids.len() {
                if noisy.mask[i] == 0 {
                    noisy.ids[i] = 11;
                }
            }
            assert_ne!(clean.ids, noisy.ids);
            assert_eq!(
                m.logits(&clean).unwrap(),
                m.logits(&noisy).unwrap(),
                "{family:?} reads padded positions"
            );
        }
    }

    #[test]
    fn all_padding_sequence_is_rejected() {
        for family in [
            ModelFamily::BiLstm,
            ModelFamily::BiGru,
            ModelFamily::Encoder,
        ] {
            let cfg = tiny_cfg(family);
            let m = build_classifier(&cfg).unwrap();
            let s = TokenSequence {
                ids: vec![PAD; cfg.max_len],
                mask: vec![0; cfg.max_len],
            };
            assert!(matches!(m.logits(&s), Err(NnError::EmptySequence)));
        }
    }

    #[test]
    fn out_of_vocabulary_ids_are_rejected() {
        let cfg = tiny_cfg(ModelFamily::BiLstm);
        let m = build_classifier(&cfg).unwrap();
        let s = seq(&[5, 12, 4], cfg.max_len);
        assert!(matches!(m.logits(&s), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn encoder_rejects_widths_heads_cannot_tile() {
        let mut cfg = tiny_cfg(ModelFamily::Encoder);
        cfg.embed_dim = 10;
        cfg.heads = 4;
        assert!(matches!(
            build_classifier(&cfg),
            Err(NnError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn encoder_rejects_odd_width() {
        let mut cfg = tiny_cfg(ModelFamily::Encoder);
        cfg.embed_dim = 7;
        cfg.heads = 7;
        assert!(matches!(
            build_classifier(&cfg),
            Err(NnError::OddModelDim(7))
        ));
    }

    #[test]
    fn bilstm_tape_matches_pure_forward() {
        let cfg = tiny_cfg(ModelFamily::BiLstm);
        let m = BiLstmModel::build(&cfg).unwrap();
        let s = seq(&[5, 9, 4, 7], cfg.max_len);
        let got = m.logits(&s).unwrap();
        // Pure-op oracle: embed rows by hand, run both directions, head.
        let ids = content_ids(&s);
        let xs: Vec<Tensor> = ids
            .iter()
            .map(|&id| Tensor::row_vec(m.embed.row(id as usize)))
            .collect();
        let feat = ops::bilstm_forward(&xs, None, &m.fwd, &m.bwd).unwrap();
        let expect = ops::head_forward(&feat, &m.head_spec, &m.head, None).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bigru_tape_matches_pure_forward() {
        let cfg = tiny_cfg(ModelFamily::BiGru);
        let m = BiGruModel::build(&cfg).unwrap();
        let s = seq(&[8, 6, 10], cfg.max_len);
        let got = m.logits(&s).unwrap();
        let ids = content_ids(&s);
        let xs: Vec<Tensor> = ids
            .iter()
            .map(|&id| Tensor::row_vec(m.embed.row(id as usize)))
            .collect();
        let feat = ops::bigru_forward(&xs, None, &m.fwd, &m.bwd).unwrap();
        let expect = ops::head_forward(&feat, &m.head_spec, &m.head, None).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_logits_exactly() {
        for family in [
            ModelFamily::BiLstm,
            ModelFamily::BiGru,
            ModelFamily::Encoder,
        ] {
            let mut cfg = tiny_cfg(family);
            cfg.head = HeadKind::TanhTower;
            let m = build_classifier(&cfg).unwrap();
            let ck = model_to_checkpoint(m.as_ref());
            let bytes = ck.to_bytes();
            let back = model_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            let s = seq(&[5, 9], cfg.max_len);
            assert_eq!(m.logits(&s).unwrap(), back.logits(&s).unwrap());
            // Re-serializing is byte-identical.
            assert_eq!(bytes, model_to_checkpoint(back.as_ref()).to_bytes());
        }
    }

    #[test]
    fn checkpoint_with_missing_tensor_is_rejected() {
        let cfg = tiny_cfg(ModelFamily::BiLstm);
        let m = build_classifier(&cfg).unwrap();
        let mut ck = model_to_checkpoint(m.as_ref());
        ck.tensors.remove(3);
        assert!(model_from_checkpoint(&ck).is_err());
    }

    #[test]
    fn param_names_align_with_params() {
        for family in [
            ModelFamily::BiLstm,
            ModelFamily::BiGru,
            ModelFamily::Encoder,
        ] {
            let mut cfg = tiny_cfg(family);
            cfg.head = HeadKind::ReluTower;
            let m = build_classifier(&cfg).unwrap();
            let names = m.param_names();
            assert_eq!(names.len(), m.params().len());
            let unique: std::collections::HashSet<&String> = names.iter().collect();
            assert_eq!(unique.len(), names.len(), "duplicate parameter names");
        }
    }

    #[test]
    fn dropout_training_mode_is_stochastic_but_seeded() {
        let mut cfg = tiny_cfg(ModelFamily::BiLstm);
        cfg.head = HeadKind::DropoutLinear;
        cfg.dropout = 0.5;
        let m = build_classifier(&cfg).unwrap();
        let s = seq(&[5, 9, 4], cfg.max_len);
        let batch = [(&s, 1u32)];
        let loss = |salt: u64| {
            let mut r = crate::rng::seeded(99, salt);
            m.loss_and_grads(&batch, Some(&mut r)).unwrap().0
        };
        // Same dropout seed, same loss; the inference path needs no rng.
        assert_eq!(loss(1).to_bits(), loss(1).to_bits());
        let inference = m.loss_and_grads(&batch, None).unwrap().0;
        assert!(inference.is_finite());
    }

    /// Central-difference gradient check over every parameter of a model.
    fn finite_difference_check(family: ModelFamily) {
        let cfg = tiny_cfg(family);
        let mut model = build_classifier(&cfg).unwrap();
        let s1 = seq(&[5, 9, 4], cfg.max_len);
        let s2 = seq(&[7, 6], cfg.max_len);
        let batch = [(&s1, 1u32), (&s2, 0u32)];
        let (_, grads) = model.loss_and_grads(&batch, None).unwrap();
        let eps = 1e-5;
        for (k, grad) in grads.iter().enumerate() {
            for j in 0..grad.len() {
                let orig = model.params()[k].data()[j];
                model.params_mut()[k].data_mut()[j] = orig + eps;
                let (hi, _) = model.loss_and_grads(&batch, None).unwrap();
                model.params_mut()[k].data_mut()[j] = orig - eps;
                let (lo, _) = model.loss_and_grads(&batch, None).unwrap();
                model.params_mut()[k].data_mut()[j] = orig;
                let fd = (hi - lo) / (2.0 * eps);
                let an = grad.data()[j];
                let rel = (an - fd).abs() / f64::max(1.0, an.abs().max(fd.abs()));
                assert!(
                    rel < 1e-4,
                    "{family:?} parameter {k} element {j}: analytic {an} vs central difference {fd}"
                );
            }
        }
    }

    #[test]
    fn bilstm_gradients_match_central_differences() {
        finite_difference_check(ModelFamily::BiLstm);
    }

    #[test]
    fn bigru_gradients_match_central_differences() {
        finite_difference_check(ModelFamily::BiGru);
    }

    #[test]
    fn encoder_gradients_match_central_differences() {
        finite_difference_check(ModelFamily::Encoder);
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let cfg = tiny_cfg(ModelFamily::BiGru);
        let m = build_classifier(&cfg).unwrap();
        let s1 = seq(&[5, 9], cfg.max_len);
        let s2 = seq(&[4, 7, 6], cfg.max_len);
        let (l12, g12) = m.loss_and_grads(&[(&s1, 0), (&s2, 1)], None).unwrap();
        let (l1, g1) = m.loss_and_grads(&[(&s1, 0)], None).unwrap();
        let (l2, g2) = m.loss_and_grads(&[(&s2, 1)], None).unwrap();
        assert!((l12 - (l1 + l2) / 2.0).abs() < 1e-12);
        for ((a, b), c) in g12.iter().zip(&g1).zip(&g2) {
            for ((av, bv), cv) in a.data().iter().zip(b.data()).zip(c.data()) {
                assert!((av - (bv + cv) / 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn predict_returns_argmax_class() {
        let cfg = tiny_cfg(ModelFamily::Encoder);
        let m = build_classifier(&cfg).unwrap();
        let s = seq(&[5, 9, 4], cfg.max_len);
        let logits = m.logits(&s).unwrap();
        let want = if logits.at(0, 0) >= logits.at(0, 1) {
            0
        } else {
            1
        };
        assert_eq!(m.predict(&s).unwrap(), want);
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        let t = Tensor::row_vec(&[1.5, 0.5, 1.5]);
        assert_eq!(argmax_row(&t), 0);
    }

    #[test]
    fn config_pairs_round_trip() {
        let mut cfg = tiny_cfg(ModelFamily::Encoder);
        cfg.pool = PoolKind::LastContent;
        cfg.head = HeadKind::TanhTower;
        cfg.dropout = 0.125;
        let back = ModelConfig::from_pairs(&cfg.to_pairs()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn last_content_pooling_uses_the_final_real_token() {
        let mut cfg = tiny_cfg(ModelFamily::Encoder);
        cfg.pool = PoolKind::LastContent;
        let m = build_classifier(&cfg).unwrap();
        // Two sequences with identical prefixes but different last tokens
        // should pool differently; with First pooling they also differ,
        // so instead check PAD-tail invariance under Last pooling.
        let clean = seq(&[5, 9, 4], cfg.max_len);
        let mut noisy = clean.clone();
        for i in 0..noisy.ids.len() {
            if noisy.mask[i] == 0 {
                noisy.ids[i] = 7;
            }
        }
        assert_eq!(m.logits(&clean).unwrap(), m.logits(&noisy).unwrap());
    }
}
