//! Pure forward-pass building blocks.
//!
//! These functions compute exactly what the tape in [`crate::nn::graph`]
//! computes, without recording anything; the test suite holds the two
//! implementations against each other. All vectors are 1×n row vectors and
//! weight matrices multiply on the right: `y = x · W + b`.

use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;
use super::NnError;
use crate::rng;

/// Sinusoidal position table with `max_pos` rows and `d_model` columns.
///
/// Row `pos` holds `sin(pos / 10000^(2i/d_model))` at even column `2i` and
/// the matching cosine at column `2i + 1`.
pub fn positional_encoding(max_pos: usize, d_model: usize) -> Result<Tensor, NnError> {
    if !d_model.is_multiple_of(2) {
        return Err(NnError::OddModelDim(d_model));
    }
    let mut out = Tensor::zeros(max_pos, d_model);
    for pos in 0..max_pos {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            out.set(pos, 2 * i, angle.sin());
            out.set(pos, 2 * i + 1, angle.cos());
        }
    }
    Ok(out)
}

/// Numerically stable softmax applied to each row independently.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * x.cols()..(r + 1) * x.cols()];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d_k)·V`.
///
/// `q` is m×d_k, `k` is n×d_k, `v` is n×d_v; the result is m×d_v.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, NnError> {
    if q.cols() != k.cols() {
        return Err(NnError::ShapeMismatch(format!(
            "query width {} vs key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(NnError::ShapeMismatch(format!(
            "{} keys vs {} value rows",
            k.rows(),
            v.rows()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_bt(k).scale(scale);
    Ok(softmax_rows(&scores).matmul(v))
}

/// Projection weights for one multi-head attention block.
///
/// Each head carries its own d_model×d_k query/key/value projections; the
/// concatenated head outputs pass through the (h·d_k)×d_model output
/// projection `wo`. The widths must tile exactly: `d_k · h = d_model`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
}

impl AttentionParams {
    /// Freshly initialized projections for `heads` heads over width
    /// `d_model`, drawn uniformly from ±1/√fan_in.
    pub fn init(d_model: usize, heads: usize, r: &mut ChaCha20Rng) -> Result<Self, NnError> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(NnError::ConfigMismatch(format!(
                "width {d_model} does not divide into {heads} heads"
            )));
        }
        let d_k = d_model / heads;
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut proj = || Tensor::uniform(d_model, d_k, bound, r);
        let wq = (0..heads).map(|_| proj()).collect();
        let wk = (0..heads).map(|_| proj()).collect();
        let wv = (0..heads).map(|_| proj()).collect();
        let wo = Tensor::uniform(d_model, d_model, bound, r);
        Ok(AttentionParams { wq, wk, wv, wo })
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn d_model(&self) -> usize {
        self.wo.cols()
    }

    pub fn d_k(&self) -> usize {
        self.wq.first().map_or(0, Tensor::cols)
    }

    fn validate(&self, d_in: usize) -> Result<(), NnError> {
        let h = self.heads();
        if h == 0 || self.wk.len() != h || self.wv.len() != h {
            return Err(NnError::ConfigMismatch(
                "query/key/value head counts differ".into(),
            ));
        }
        let d_k = self.d_k();
        for w in self.wq.iter().chain(&self.wk).chain(&self.wv) {
            if w.rows() != d_in || w.cols() != d_k {
                return Err(NnError::ShapeMismatch(format!(
                    "head projection is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    d_in,
                    d_k
                )));
            }
        }
        if h * d_k != d_in {
            return Err(NnError::ConfigMismatch(format!(
                "{h} heads of width {d_k} do not tile model width {d_in}"
            )));
        }
        if self.wo.rows() != h * d_k || self.wo.cols() != d_in {
            return Err(NnError::ShapeMismatch(format!(
                "output projection is {}x{}, expected {}x{}",
                self.wo.rows(),
                self.wo.cols(),
                h * d_k,
                d_in
            )));
        }
        Ok(())
    }
}

/// Multi-head self-attention over the n×d_model input `x`.
pub fn multi_head_attention(x: &Tensor, p: &AttentionParams) -> Result<Tensor, NnError> {
    p.validate(x.cols())?;
    let mut concat: Option<Tensor> = None;
    for i in 0..p.heads() {
        let q = x.matmul(&p.wq[i]);
        let k = x.matmul(&p.wk[i]);
        let v = x.matmul(&p.wv[i]);
        let head = scaled_dot_attention(&q, &k, &v)?;
        concat = Some(match concat {
            None => head,
            Some(acc) => acc.concat_cols(&head),
        });
    }
    Ok(concat.expect("at least one head").matmul(&p.wo))
}

/// Gate weights for one LSTM direction.
///
/// Gates read the concatenation `[a_{t-1}, x_t]` (hidden state first), so
/// every weight matrix is (hidden+input)×hidden and every bias 1×hidden.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub w_u: Tensor,
    pub b_u: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

impl LstmParams {
    pub fn init(input_dim: usize, hidden: usize, r: &mut ChaCha20Rng) -> Self {
        let fan_in = hidden + input_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = || Tensor::uniform(fan_in, hidden, bound, r);
        let w_f = w();
        let w_u = w();
        let w_o = w();
        let w_c = w();
        let mut b = || Tensor::uniform(1, hidden, bound, r);
        let b_f = b();
        let b_u = b();
        let b_o = b();
        let b_c = b();
        LstmParams {
            w_f,
            b_f,
            w_u,
            b_u,
            w_o,
            b_o,
            w_c,
            b_c,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let fan_in = hidden + input_dim;
        LstmParams {
            w_f: Tensor::zeros(fan_in, hidden),
            b_f: Tensor::zeros(1, hidden),
            w_u: Tensor::zeros(fan_in, hidden),
            b_u: Tensor::zeros(1, hidden),
            w_o: Tensor::zeros(fan_in, hidden),
            b_o: Tensor::zeros(1, hidden),
            w_c: Tensor::zeros(fan_in, hidden),
            b_c: Tensor::zeros(1, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.rows() - self.hidden()
    }
}

/// Cell and hidden state of one LSTM direction, both 1×hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Tensor,
    pub a: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            c: Tensor::zeros(1, hidden),
            a: Tensor::zeros(1, hidden),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One LSTM step.
///
/// With `z = [a_{t-1}, x_t]`: forget/update/output gates are `σ(z·W + b)`,
/// the candidate is `tanh(z·W_c + b_c)`, the new cell is
/// `f ⊙ C_{t-1} + i ⊙ candidate`, and the new hidden state is
/// `o ⊙ tanh(C_t)`.
pub fn lstm_step(x: &Tensor, prev: &LstmState, p: &LstmParams) -> Result<LstmState, NnError> {
    if x.rows() != 1 || x.cols() != p.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "step input is {}x{}, expected 1x{}",
            x.rows(),
            x.cols(),
            p.input_dim()
        )));
    }
    if prev.a.cols() != p.hidden() || prev.c.cols() != p.hidden() {
        return Err(NnError::ShapeMismatch(format!(
            "state width {} vs {} hidden units",
            prev.a.cols(),
            p.hidden()
        )));
    }
    let z = prev.a.concat_cols(x);
    let f = z.matmul(&p.w_f).add(&p.b_f).map(sigmoid);
    let i = z.matmul(&p.w_u).add(&p.b_u).map(sigmoid);
    let o = z.matmul(&p.w_o).add(&p.b_o).map(sigmoid);
    let cand = z.matmul(&p.w_c).add(&p.b_c).map(f64::tanh);
    let c = f.mul(&prev.c).add(&i.mul(&cand));
    let a = o.mul(&c.map(f64::tanh));
    Ok(LstmState { c, a })
}

/// Gate weights for one GRU direction.
///
/// `w_*` read the input (input×hidden), `u_*` read the carried state
/// (hidden×hidden), biases are 1×hidden.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_u: Tensor,
    pub u_u: Tensor,
    pub b_u: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn init(input_dim: usize, hidden: usize, r: &mut ChaCha20Rng) -> Self {
        let wb = 1.0 / (input_dim as f64).sqrt();
        let ub = 1.0 / (hidden as f64).sqrt();
        let w = |r: &mut ChaCha20Rng| Tensor::uniform(input_dim, hidden, wb, r);
        let u = |r: &mut ChaCha20Rng| Tensor::uniform(hidden, hidden, ub, r);
        let b = |r: &mut ChaCha20Rng| Tensor::uniform(1, hidden, ub, r);
        let w_u = w(r);
        let u_u = u(r);
        let b_u = b(r);
        let w_r = w(r);
        let u_r = u(r);
        let b_r = b(r);
        let w_h = w(r);
        let u_h = u(r);
        let b_h = b(r);
        GruParams {
            w_u,
            u_u,
            b_u,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_u.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_u.rows()
    }
}

/// One GRU step, returning the new carried state.
///
/// Update gate `i = σ(x·W_u + C·U_u + b_u)`, reset gate
/// `r = σ(x·W_r + C·U_r + b_r)`, candidate
/// `h = tanh(x·W_h + (r ⊙ C)·U_h + b_h)`, and the new state blends the old
/// one with the candidate: `i ⊙ C + (1 - i) ⊙ h`.
pub fn gru_step(x: &Tensor, c_prev: &Tensor, p: &GruParams) -> Result<Tensor, NnError> {
    if x.rows() != 1 || x.cols() != p.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "step input is {}x{}, expected 1x{}",
            x.rows(),
            x.cols(),
            p.input_dim()
        )));
    }
    if c_prev.rows() != 1 || c_prev.cols() != p.hidden() {
        return Err(NnError::ShapeMismatch(format!(
            "state width {} vs {} hidden units",
            c_prev.cols(),
            p.hidden()
        )));
    }
    let i = x
        .matmul(&p.w_u)
        .add(&c_prev.matmul(&p.u_u))
        .add(&p.b_u)
        .map(sigmoid);
    let r = x
        .matmul(&p.w_r)
        .add(&c_prev.matmul(&p.u_r))
        .add(&p.b_r)
        .map(sigmoid);
    let cand = x
        .matmul(&p.w_h)
        .add(&r.mul(c_prev).matmul(&p.u_h))
        .add(&p.b_h)
        .map(f64::tanh);
    Ok(i.mul(c_prev).add(&i.map(|v| 1.0 - v).mul(&cand)))
}

fn masked_steps<'a>(xs: &'a [Tensor], mask: Option<&'a [u8]>) -> Result<Vec<&'a Tensor>, NnError> {
    if let Some(m) = mask {
        if m.len() != xs.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} mask entries for {} steps",
                m.len(),
                xs.len()
            )));
        }
    }
    let kept: Vec<&Tensor> = xs
        .iter()
        .enumerate()
        .filter(|(t, _)| mask.is_none_or(|m| m[*t] != 0))
        .map(|(_, x)| x)
        .collect();
    if kept.is_empty() {
        return Err(NnError::EmptySequence);
    }
    Ok(kept)
}

/// Run both LSTM directions over the sequence and concatenate their final
/// hidden states (forward last, then backward first).
///
/// Steps whose mask entry is 0 are padding: they never touch either state,
/// so trailing padding cannot change the result. A sequence with no real
/// steps is an error.
pub fn bilstm_forward(
    xs: &[Tensor],
    mask: Option<&[u8]>,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Tensor, NnError> {
    let kept = masked_steps(xs, mask)?;
    let mut f = LstmState::zeros(fwd.hidden());
    for x in &kept {
        f = lstm_step(x, &f, fwd)?;
    }
    let mut b = LstmState::zeros(bwd.hidden());
    for x in kept.iter().rev() {
        b = lstm_step(x, &b, bwd)?;
    }
    Ok(f.a.concat_cols(&b.a))
}

/// GRU counterpart of [`bilstm_forward`]: concatenation of the final
/// carried states of the two directions.
pub fn bigru_forward(
    xs: &[Tensor],
    mask: Option<&[u8]>,
    fwd: &GruParams,
    bwd: &GruParams,
) -> Result<Tensor, NnError> {
    let kept = masked_steps(xs, mask)?;
    let mut f = Tensor::zeros(1, fwd.hidden());
    for x in &kept {
        f = gru_step(x, &f, fwd)?;
    }
    let mut b = Tensor::zeros(1, bwd.hidden());
    for x in kept.iter().rev() {
        b = gru_step(x, &b, bwd)?;
    }
    Ok(f.concat_cols(&b))
}

/// One layer of a classification head.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadLayer {
    /// Inverted dropout with the given drop probability: during training
    /// each activation is zeroed with probability p and survivors are
    /// scaled by 1/(1-p); at inference it is the identity.
    Dropout(f64),
    /// Affine layer to the given output width.
    Linear(usize),
    Relu,
    Tanh,
}

/// Layer recipe for the head that turns pooled features into class logits.
/// The last layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub layers: Vec<HeadLayer>,
}

impl HeadSpec {
    /// Single affine map to the class logits.
    pub fn linear(classes: usize) -> Self {
        HeadSpec {
            layers: vec![HeadLayer::Linear(classes)],
        }
    }

    /// Dropout followed by the output affine map.
    pub fn dropout_linear(p: f64, classes: usize) -> Self {
        HeadSpec {
            layers: vec![HeadLayer::Dropout(p), HeadLayer::Linear(classes)],
        }
    }

    /// Hidden affine + ReLU, dropout, then the output affine map.
    pub fn relu_tower(p: f64, width: usize, classes: usize) -> Self {
        HeadSpec {
            layers: vec![
                HeadLayer::Linear(width),
                HeadLayer::Relu,
                HeadLayer::Dropout(p),
                HeadLayer::Linear(classes),
            ],
        }
    }

    /// Dropout, hidden affine + tanh, dropout again, then the output affine
    /// map.
    pub fn tanh_tower(p: f64, width: usize, classes: usize) -> Self {
        HeadSpec {
            layers: vec![
                HeadLayer::Dropout(p),
                HeadLayer::Linear(width),
                HeadLayer::Tanh,
                HeadLayer::Dropout(p),
                HeadLayer::Linear(classes),
            ],
        }
    }

    /// Output width of the final linear layer.
    pub fn out_width(&self) -> Result<usize, NnError> {
        match self.layers.last() {
            Some(HeadLayer::Linear(n)) => Ok(*n),
            _ => Err(NnError::ConfigMismatch(
                "classification head must end with a linear layer".into(),
            )),
        }
    }

    /// Validate the recipe and check that chained widths work out from the
    /// given input width.
    pub fn validate(&self, mut width: usize) -> Result<(), NnError> {
        self.out_width()?;
        for layer in &self.layers {
            match layer {
                HeadLayer::Dropout(p) => {
                    if !(0.0..1.0).contains(p) {
                        return Err(NnError::ConfigMismatch(format!(
                            "dropout probability {p} outside [0, 1)"
                        )));
                    }
                }
                HeadLayer::Linear(out) => {
                    if *out == 0 || width == 0 {
                        return Err(NnError::ConfigMismatch(
                            "linear layer with zero width".into(),
                        ));
                    }
                    width = *out;
                }
                HeadLayer::Relu | HeadLayer::Tanh => {}
            }
        }
        Ok(())
    }
}

/// Weights for the linear layers of a [`HeadSpec`], in layer order.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub weights: Vec<(Tensor, Tensor)>,
}

impl HeadParams {
    /// Initialize weights for `spec` reading features of width `in_dim`.
    pub fn init(spec: &HeadSpec, in_dim: usize, r: &mut ChaCha20Rng) -> Result<Self, NnError> {
        spec.validate(in_dim)?;
        let mut width = in_dim;
        let mut weights = Vec::new();
        for layer in &spec.layers {
            if let HeadLayer::Linear(out) = layer {
                let bound = 1.0 / (width as f64).sqrt();
                let w = Tensor::uniform(width, *out, bound, r);
                let b = Tensor::uniform(1, *out, bound, r);
                weights.push((w, b));
                width = *out;
            }
        }
        Ok(HeadParams { weights })
    }
}

/// Run a classification head over a 1×d feature row.
///
/// `dropout_rng` enables training mode: each dropout layer draws one mask
/// from it. Pass `None` for inference, where dropout is the identity.
pub fn head_forward(
    x: &Tensor,
    spec: &HeadSpec,
    params: &HeadParams,
    mut dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<Tensor, NnError> {
    let mut cur = x.clone();
    let mut linear = 0;
    for layer in &spec.layers {
        match layer {
            HeadLayer::Dropout(p) => {
                if let Some(r) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - p;
                    let data: Vec<f64> = cur
                        .data()
                        .iter()
                        .map(|&v| {
                            if rng::uniform(r, 0.0, 1.0) < *p {
                                0.0
                            } else {
                                v / keep
                            }
                        })
                        .collect();
                    cur = Tensor::new(cur.rows(), cur.cols(), data);
                }
            }
            HeadLayer::Linear(out) => {
                let (w, b) = params.weights.get(linear).ok_or_else(|| {
                    NnError::ConfigMismatch("head weights missing a linear layer".into())
                })?;
                if w.rows() != cur.cols() || w.cols() != *out {
                    return Err(NnError::ShapeMismatch(format!(
                        "head linear {} is {}x{}, expected {}x{}",
                        linear,
                        w.rows(),
                        w.cols(),
                        cur.cols(),
                        out
                    )));
                }
                cur = cur.matmul(w).add(b);
                linear += 1;
            }
            HeadLayer::Relu => cur = cur.map(|v| v.max(0.0)),
            HeadLayer::Tanh => cur = cur.map(f64::tanh),
        }
    }
    Ok(cur)
}

/// Cross-entropy loss for a 1×C logit row against a gold class.
///
/// Returns the loss `-log softmax(logits)[label]` together with its exact
/// gradient with respect to the logits, `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &Tensor, label: u32) -> Result<(f64, Tensor), NnError> {
    if logits.rows() != 1 || logits.cols() == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "logits are {}x{}, expected one non-empty row",
            logits.rows(),
            logits.cols()
        )));
    }
    let classes = logits.cols();
    if label as usize >= classes {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let probs = softmax_rows(logits);
    let loss = -probs.at(0, label as usize).ln();
    let mut grad = probs;
    let cur = grad.at(0, label as usize);
    grad.set(0, label as usize, cur - 1.0);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn positional_encoding_matches_sin_cos_oracle() {
        let pe = positional_encoding(3, 4).unwrap();
        assert!(close(pe.at(1, 0), 1f64.sin(), 1e-12));
        assert!(close(pe.at(1, 0), 0.841471, 1e-6));
        assert!(close(pe.at(1, 1), 1f64.cos(), 1e-12));
        // Column pair 2i=2 uses wavelength 10000^(2/4) = 100.
        assert!(close(pe.at(2, 2), (2.0f64 / 100.0).sin(), 1e-12));
        assert!(close(pe.at(2, 3), (2.0f64 / 100.0).cos(), 1e-12));
        // Position zero alternates sin(0)=0, cos(0)=1.
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_encoding_rejects_odd_width() {
        assert!(matches!(
            positional_encoding(4, 5),
            Err(NnError::OddModelDim(5))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]);
        let s = softmax_rows(&x);
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!(close(sum, 1.0, 1e-12));
        }
    }

    #[test]
    fn attention_with_single_key_repeats_the_value_row() {
        let q = Tensor::from_rows(&[vec![0.3, -0.7], vec![2.0, 1.0], vec![0.0, 0.0]]);
        let k = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let v = Tensor::from_rows(&[vec![4.0, 5.0, 6.0]]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), v.row(0));
        }
    }

    #[test]
    fn attention_with_zero_query_averages_value_rows() {
        let q = Tensor::zeros(1, 2);
        let k = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let v = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 6.0], vec![3.0, 3.0]]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert!(close(out.at(0, 0), 2.0, 1e-12));
        assert!(close(out.at(0, 1), 3.0, 1e-12));
    }

    #[test]
    fn attention_matches_three_step_oracle_on_2x2() {
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let k = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        // Oracle: explicit scores, explicit softmax, explicit mix.
        let scale = 1.0 / 2f64.sqrt();
        let mut expect = Tensor::zeros(2, 2);
        for i in 0..2 {
            let s0 = (q.at(i, 0) * k.at(0, 0) + q.at(i, 1) * k.at(0, 1)) * scale;
            let s1 = (q.at(i, 0) * k.at(1, 0) + q.at(i, 1) * k.at(1, 1)) * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            let z = e0 + e1;
            let (p0, p1) = (e0 / z, e1 / z);
            for c in 0..2 {
                expect.set(i, c, p0 * v.at(0, c) + p1 * v.at(1, c));
            }
        }
        let got = scaled_dot_attention(&q, &k, &v).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn attention_rejects_mismatched_widths() {
        let q = Tensor::zeros(1, 3);
        let k = Tensor::zeros(2, 2);
        let v = Tensor::zeros(2, 2);
        assert!(matches!(
            scaled_dot_attention(&q, &k, &v),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn single_head_identity_projections_reduce_to_plain_attention() {
        let x = Tensor::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.75, 2.0]]);
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = AttentionParams {
            wq: vec![eye.clone()],
            wk: vec![eye.clone()],
            wv: vec![eye.clone()],
            wo: eye,
        };
        let got = multi_head_attention(&x, &p).unwrap();
        let expect = scaled_dot_attention(&x, &x, &x).unwrap();
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn two_heads_match_per_head_oracle() {
        let mut r = crate::rng::seeded(11, 0);
        let x = Tensor::uniform(3, 4, 1.0, &mut r);
        let p = AttentionParams::init(4, 2, &mut r).unwrap();
        let got = multi_head_attention(&x, &p).unwrap();
        // Oracle: run each head through plain attention, concatenate, project.
        let h0 = scaled_dot_attention(
            &x.matmul(&p.wq[0]),
            &x.matmul(&p.wk[0]),
            &x.matmul(&p.wv[0]),
        )
        .unwrap();
        let h1 = scaled_dot_attention(
            &x.matmul(&p.wq[1]),
            &x.matmul(&p.wk[1]),
            &x.matmul(&p.wv[1]),
        )
        .unwrap();
        let expect = h0.concat_cols(&h1).matmul(&p.wo);
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn attention_init_rejects_widths_heads_cannot_tile() {
        let mut r = crate::rng::seeded(1, 0);
        assert!(matches!(
            AttentionParams::init(6, 4, &mut r),
            Err(NnError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn zero_weight_lstm_step_halves_the_cell() {
        let p = LstmParams::zeros(3, 2);
        let prev = LstmState {
            c: Tensor::row_vec(&[0.8, -0.4]),
            a: Tensor::row_vec(&[0.1, 0.2]),
        };
        let x = Tensor::row_vec(&[1.0, 2.0, 3.0]);
        let next = lstm_step(&x, &prev, &p).unwrap();
        // All gates sit at σ(0)=0.5 and the candidate at tanh(0)=0, so the
        // cell halves and the hidden state is 0.5·tanh(C/2).
        for j in 0..2 {
            let c = 0.5 * prev.c.at(0, j);
            assert!(close(next.c.at(0, j), c, 1e-12));
            assert!(close(next.a.at(0, j), 0.5 * c.tanh(), 1e-12));
        }
    }

    #[test]
    fn gru_state_stays_between_old_state_and_candidate() {
        let mut r = crate::rng::seeded(17, 3);
        let p = GruParams::init(3, 4, &mut r);
        let mut c = Tensor::zeros(1, 4);
        for step in 0..5 {
            let x = Tensor::uniform(1, 3, 1.0, &mut r);
            let next = gru_step(&x, &c, &p).unwrap();
            // Recompute the candidate to bracket each coordinate.
            let i = x
                .matmul(&p.w_u)
                .add(&c.matmul(&p.u_u))
                .add(&p.b_u)
                .map(sigmoid);
            let rr = x
                .matmul(&p.w_r)
                .add(&c.matmul(&p.u_r))
                .add(&p.b_r)
                .map(sigmoid);
            let cand = x
                .matmul(&p.w_h)
                .add(&rr.mul(&c).matmul(&p.u_h))
                .add(&p.b_h)
                .map(f64::tanh);
            for j in 0..4 {
                let (lo, hi) = if c.at(0, j) <= cand.at(0, j) {
                    (c.at(0, j), cand.at(0, j))
                } else {
                    (cand.at(0, j), c.at(0, j))
                };
                assert!(
                    next.at(0, j) >= lo - 1e-12 && next.at(0, j) <= hi + 1e-12,
                    "step {step} coordinate {j} escaped its bracket"
                );
                // And the update gate mixes exactly.
                let mixed = i.at(0, j) * c.at(0, j) + (1.0 - i.at(0, j)) * cand.at(0, j);
                assert!(close(next.at(0, j), mixed, 1e-12));
            }
            c = next;
        }
    }

    #[test]
    fn bilstm_rejects_empty_input() {
        let p = LstmParams::zeros(2, 2);
        assert!(matches!(
            bilstm_forward(&[], None, &p, &p),
            Err(NnError::EmptySequence)
        ));
        let xs = [Tensor::zeros(1, 2)];
        assert!(matches!(
            bilstm_forward(&xs, Some(&[0]), &p, &p),
            Err(NnError::EmptySequence)
        ));
    }

    #[test]
    fn bilstm_padding_never_changes_the_state() {
        let mut r = crate::rng::seeded(23, 0);
        let fwd = LstmParams::init(3, 2, &mut r);
        let bwd = LstmParams::init(3, 2, &mut r);
        let xs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(1, 3, 1.0, &mut r)).collect();
        let trimmed = bilstm_forward(&xs[..2], None, &fwd, &bwd).unwrap();
        // Steps 2 and 3 are masked out, so they must not matter.
        let padded = bilstm_forward(&xs, Some(&[1, 1, 0, 0]), &fwd, &bwd).unwrap();
        assert_eq!(trimmed, padded);
    }

    #[test]
    fn bilstm_on_a_palindrome_with_tied_directions_is_symmetric() {
        let mut r = crate::rng::seeded(29, 0);
        let p = LstmParams::init(2, 3, &mut r);
        let a = Tensor::uniform(1, 2, 1.0, &mut r);
        let b = Tensor::uniform(1, 2, 1.0, &mut r);
        let xs = [a.clone(), b, a];
        let out = bilstm_forward(&xs, None, &p, &p).unwrap();
        // Reading a palindrome forwards or backwards is the same walk, so
        // the two concatenated halves agree.
        for j in 0..3 {
            assert!(close(out.at(0, j), out.at(0, 3 + j), 1e-12));
        }
    }

    #[test]
    fn bilstm_matches_manual_three_step_unroll() {
        let mut r = crate::rng::seeded(31, 0);
        let fwd = LstmParams::init(2, 2, &mut r);
        let bwd = LstmParams::init(2, 2, &mut r);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(1, 2, 1.0, &mut r)).collect();
        let mut f = LstmState::zeros(2);
        for x in &xs {
            f = lstm_step(x, &f, &fwd).unwrap();
        }
        let mut b = LstmState::zeros(2);
        for x in xs.iter().rev() {
            b = lstm_step(x, &b, &bwd).unwrap();
        }
        let expect = f.a.concat_cols(&b.a);
        assert_eq!(bilstm_forward(&xs, None, &fwd, &bwd).unwrap(), expect);
    }

    #[test]
    fn bigru_padding_never_changes_the_state() {
        let mut r = crate::rng::seeded(37, 0);
        let fwd = GruParams::init(2, 3, &mut r);
        let bwd = GruParams::init(2, 3, &mut r);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(1, 2, 1.0, &mut r)).collect();
        let trimmed = bigru_forward(&xs[..1], None, &fwd, &bwd).unwrap();
        let padded = bigru_forward(&xs, Some(&[1, 0, 0]), &fwd, &bwd).unwrap();
        assert_eq!(trimmed, padded);
    }

    #[test]
    fn head_inference_ignores_dropout_and_applies_layers_in_order() {
        let spec = HeadSpec::relu_tower(0.9, 3, 2);
        let mut r = crate::rng::seeded(41, 0);
        let params = HeadParams::init(&spec, 2, &mut r).unwrap();
        let x = Tensor::row_vec(&[0.5, -1.5]);
        let out = head_forward(&x, &spec, &params, None).unwrap();
        // Oracle: linear, relu, (dropout skipped), linear.
        let h = x.matmul(&params.weights[0].0).add(&params.weights[0].1);
        let h = h.map(|v| v.max(0.0));
        let expect = h.matmul(&params.weights[1].0).add(&params.weights[1].1);
        assert_eq!(out, expect);
        assert_eq!(out.cols(), 2);
    }

    #[test]
    fn head_dropout_zeroes_or_rescales_during_training() {
        let spec = HeadSpec {
            layers: vec![HeadLayer::Dropout(0.5), HeadLayer::Linear(4)],
        };
        let mut r = crate::rng::seeded(43, 0);
        let params = HeadParams::init(&spec, 8, &mut r).unwrap();
        // Identity-free check: feed through a spec that is just dropout by
        // inspecting the pre-linear activations via a linear identity.
        let x = Tensor::filled(1, 8, 1.0);
        let mut dropout_rng = crate::rng::seeded(43, 1);
        let probe = HeadSpec {
            layers: vec![HeadLayer::Dropout(0.5), HeadLayer::Linear(8)],
        };
        let mut eye = Tensor::zeros(8, 8);
        for j in 0..8 {
            eye.set(j, j, 1.0);
        }
        let probe_params = HeadParams {
            weights: vec![(eye, Tensor::zeros(1, 8))],
        };
        let out = head_forward(&x, &probe, &probe_params, Some(&mut dropout_rng)).unwrap();
        let mut dropped = 0;
        for &v in out.data() {
            assert!(v == 0.0 || close(v, 2.0, 1e-12), "got {v}");
            if v == 0.0 {
                dropped += 1;
            }
        }
        assert!(dropped > 0 && dropped < 8, "p=0.5 over 8 lanes: {dropped}");
        // Keep `params` alive as the realistic two-layer variant.
        assert_eq!(params.weights.len(), 1);
    }

    #[test]
    fn head_spec_must_end_with_linear() {
        let spec = HeadSpec {
            layers: vec![HeadLayer::Linear(4), HeadLayer::Relu],
        };
        assert!(matches!(spec.validate(4), Err(NnError::ConfigMismatch(_))));
    }

    #[test]
    fn cross_entropy_on_uniform_logits_is_log_class_count() {
        for classes in [2usize, 3, 7] {
            let logits = Tensor::filled(1, classes, 0.37);
            let (loss, grad) = cross_entropy(&logits, 0).unwrap();
            assert!(close(loss, (classes as f64).ln(), 1e-12));
            // Gradient sums to zero: softmax minus a one-hot.
            let sum: f64 = grad.data().iter().sum();
            assert!(close(sum, 0.0, 1e-12));
        }
    }

    #[test]
    fn cross_entropy_two_logit_oracle() {
        let logits = Tensor::row_vec(&[1.0, 2.0]);
        let (loss, grad) = cross_entropy(&logits, 0).unwrap();
        // -log(e^1/(e^1+e^2)) = log(1+e) ≈ 1.313262.
        assert!(close(loss, (1f64 + 1f64.exp()).ln(), 1e-12));
        assert!(close(loss, 1.313262, 1e-6));
        let p0 = 1.0 / (1.0 + 1f64.exp());
        assert!(close(grad.at(0, 0), p0 - 1.0, 1e-12));
        assert!(close(grad.at(0, 1), 1.0 - p0, 1e-12));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_labels() {
        let logits = Tensor::row_vec(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            cross_entropy(&logits, 3),
            Err(NnError::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let a = Tensor::row_vec(&[1.0, -2.0, 0.5]);
        let b = a.map(|v| v + 1000.0);
        let (la, _) = cross_entropy(&a, 2).unwrap();
        let (lb, _) = cross_entropy(&b, 2).unwrap();
        assert!(close(la, lb, 1e-9));
    }
}
