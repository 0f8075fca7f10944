use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng as _;

use super::params::{Layout, Slot};
use super::{EncoderConfig, EncoderError, EncoderParams};
use crate::rng::Rng;
use crate::tokenizer::TokenId;

pub(crate) const LN_EPS: f64 = 1e-12;

pub enum Mode<'a> {
    Eval,
    /// Dropout is active and its masks are drawn from the given stream.
    Train(&'a mut Rng),
}

/// `f64` working copy of [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    layout: Layout,
    weights: Vec<f64>,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln1: LnCache,
    y1: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Everything a backward pass needs, plus the per-layer hidden states.
pub struct ForwardCache {
    ids: Vec<TokenId>,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    /// Embedding output followed by each encoder layer's output.
    pub hidden: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Row-stochastic attention weights of one head.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }

    /// Normalized (pre scale/shift) activations of a layer's two layer norms.
    pub fn layer_norm_inputs(&self, layer: usize) -> [&Array2<f64>; 2] {
        [&self.layers[layer].ln1.xhat, &self.layers[layer].ln2.xhat]
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn layer_norm(x: &Array2<f64>, gamma: ArrayView1<f64>, beta: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &gamma;
    y += &beta;
    (y, LnCache { xhat, inv_std })
}

/// Returns dx and accumulates the scale/shift gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<f64>,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Array2<f64> {
    let h = dy.ncols() as f64;
    for (dy_row, xhat_row) in dy.rows().into_iter().zip(cache.xhat.rows()) {
        for j in 0..dy_row.len() {
            d_gamma[j] += dy_row[j] * xhat_row[j];
            d_beta[j] += dy_row[j];
        }
    }
    let mut dx = dy * &gamma;
    for ((mut row, xhat_row), &inv) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean_d = row.sum() / h;
        let mean_dx = row.iter().zip(xhat_row).map(|(d, x)| d * x).sum::<f64>() / h;
        Zip::from(&mut row)
            .and(&xhat_row)
            .for_each(|d, &x| *d = inv * (*d - mean_d - x * mean_dx));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn add_mat(grads: &mut [f64], slot: Slot, m: &Array2<f64>) {
    debug_assert_eq!(m.len(), slot.rows * slot.cols);
    for (g, v) in grads[slot.range()].iter_mut().zip(m.iter()) {
        *g += v;
    }
}

fn add_col_sums(grads: &mut [f64], slot: Slot, m: &Array2<f64>) {
    let g = &mut grads[slot.range()];
    for row in m.rows() {
        for (gj, v) in g.iter_mut().zip(row) {
            *gj += v;
        }
    }
}

impl Encoder {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            config: params.config.clone(),
            layout: Layout::for_config(&params.config),
            weights: params.values.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Rounds the working weights back to `f32` storage.
    pub fn to_params(&self) -> EncoderParams {
        EncoderParams {
            config: self.config.clone(),
            values: self.weights.iter().map(|&v| v as f32).collect(),
        }
    }

    fn mat(&self, slot: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((slot.rows, slot.cols), &self.weights[slot.range()]).unwrap()
    }

    fn vector(&self, slot: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.weights[slot.range()])
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<(), EncoderError> {
        if ids.len() > self.config.max_seq_len {
            return Err(EncoderError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Eval-mode hidden states: `num_layers + 1` matrices of shape `len × H`.
    pub fn hidden_states(&self, ids: &[TokenId]) -> Result<Vec<Array2<f64>>, EncoderError> {
        Ok(self.forward(ids, Mode::Eval)?.hidden)
    }

    pub fn forward(&self, ids: &[TokenId], mode: Mode<'_>) -> Result<ForwardCache, EncoderError> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let (n, h) = (ids.len(), cfg.hidden_size);
        let mut rng = match mode {
            Mode::Train(rng) if cfg.dropout > 0.0 => Some(rng),
            _ => None,
        };

        let tok = self.mat(self.layout.tok_emb);
        let pos = self.mat(self.layout.pos_emb);
        let mut x = Array2::zeros((n, h));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row.assign(&tok.row(id as usize));
            row += &pos.row(i);
        }
        let emb_drop = rng.as_mut().map(|r| dropout_mask(n, h, cfg.dropout, r));
        if let Some(mask) = &emb_drop {
            x *= mask;
        }

        let mut hidden = Vec::with_capacity(cfg.num_layers + 1);
        hidden.push(x.clone());
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        for slots in &self.layout.layers {
            let q = linear(&x, self.mat(slots.q_w), self.vector(slots.q_b));
            let k = linear(&x, self.mat(slots.k_w), self.vector(slots.k_b));
            let v = linear(&x, self.mat(slots.v_w), self.vector(slots.v_b));
            let mut ctx = Array2::zeros((n, h));
            let mut probs = Vec::with_capacity(cfg.num_heads);
            for head in 0..cfg.num_heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut p = q.slice(cols).dot(&k.slice(cols).t());
                p *= scale;
                softmax_rows(&mut p);
                ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                probs.push(p);
            }
            let mut attn = linear(&ctx, self.mat(slots.o_w), self.vector(slots.o_b));
            let attn_drop = rng.as_mut().map(|r| dropout_mask(n, h, cfg.dropout, r));
            if let Some(mask) = &attn_drop {
                attn *= mask;
            }
            attn += &x;
            let (y1, ln1) = layer_norm(&attn, self.vector(slots.ln1_g), self.vector(slots.ln1_b));

            let pre_act = linear(&y1, self.mat(slots.ffn_w1), self.vector(slots.ffn_b1));
            let act = pre_act.mapv(gelu);
            let mut ffn = linear(&act, self.mat(slots.ffn_w2), self.vector(slots.ffn_b2));
            let ffn_drop = rng.as_mut().map(|r| dropout_mask(n, h, cfg.dropout, r));
            if let Some(mask) = &ffn_drop {
                ffn *= mask;
            }
            ffn += &y1;
            let (out, ln2) = layer_norm(&ffn, self.vector(slots.ln2_g), self.vector(slots.ln2_b));

            layers.push(LayerCache {
                input: x,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln1,
                y1,
                pre_act,
                act,
                ffn_drop,
                ln2,
            });
            hidden.push(out.clone());
            x = out;
        }

        Ok(ForwardCache {
            ids: ids.to_vec(),
            emb_drop,
            layers,
            hidden,
        })
    }

    /// Backpropagates `d_out` (gradient w.r.t. the last hidden state) and adds
    /// parameter gradients into `grads`, which uses the flat layout.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: Array2<f64>, grads: &mut [f64]) {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_x = d_out;

        for (slots, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // out = LN2(y1 + drop(ffn(y1)))
            let (g2, b2) = split_pair(grads, slots.ln2_g, slots.ln2_b);
            let d_r2 = layer_norm_backward(&d_x, &lc.ln2, self.vector(slots.ln2_g), g2, b2);
            let mut d_ffn = d_r2.clone();
            if let Some(mask) = &lc.ffn_drop {
                d_ffn *= mask;
            }
            add_mat(grads, slots.ffn_w2, &lc.act.t().dot(&d_ffn));
            add_col_sums(grads, slots.ffn_b2, &d_ffn);
            let mut d_pre = d_ffn.dot(&self.mat(slots.ffn_w2).t());
            Zip::from(&mut d_pre).and(&lc.pre_act).for_each(|d, &u| *d *= gelu_grad(u));
            add_mat(grads, slots.ffn_w1, &lc.y1.t().dot(&d_pre));
            add_col_sums(grads, slots.ffn_b1, &d_pre);
            let mut d_y1 = d_r2;
            d_y1 += &d_pre.dot(&self.mat(slots.ffn_w1).t());

            // y1 = LN1(x + drop(attn(x)))
            let (g1, b1) = split_pair(grads, slots.ln1_g, slots.ln1_b);
            let d_r1 = layer_norm_backward(&d_y1, &lc.ln1, self.vector(slots.ln1_g), g1, b1);
            let mut d_attn = d_r1.clone();
            if let Some(mask) = &lc.attn_drop {
                d_attn *= mask;
            }
            add_mat(grads, slots.o_w, &lc.ctx.t().dot(&d_attn));
            add_col_sums(grads, slots.o_b, &d_attn);
            let d_ctx = d_attn.dot(&self.mat(slots.o_w).t());

            let n = d_ctx.nrows();
            let mut d_q = Array2::zeros((n, cfg.hidden_size));
            let mut d_k = Array2::zeros((n, cfg.hidden_size));
            let mut d_v = Array2::zeros((n, cfg.hidden_size));
            for (head, p) in lc.probs.iter().enumerate() {
                let cols = s![.., head * dh..(head + 1) * dh];
                let d_ctx_h = d_ctx.slice(cols);
                let d_p = d_ctx_h.dot(&lc.v.slice(cols).t());
                d_v.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
                let mut d_s = d_p;
                for (mut ds_row, p_row) in d_s.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = ds_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                    Zip::from(&mut ds_row)
                        .and(&p_row)
                        .for_each(|d, &pv| *d = pv * (*d - dot) * scale);
                }
                d_q.slice_mut(cols).assign(&d_s.dot(&lc.k.slice(cols)));
                d_k.slice_mut(cols).assign(&d_s.t().dot(&lc.q.slice(cols)));
            }

            let mut d_in = d_r1;
            for (d, w, b) in [(&d_q, slots.q_w, slots.q_b), (&d_k, slots.k_w, slots.k_b), (&d_v, slots.v_w, slots.v_b)] {
                add_mat(grads, w, &lc.input.t().dot(d));
                add_col_sums(grads, b, d);
                d_in += &d.dot(&self.mat(w).t());
            }
            d_x = d_in;
        }

        if let Some(mask) = &cache.emb_drop {
            d_x *= mask;
        }
        let h = cfg.hidden_size;
        let (tok, pos) = (self.layout.tok_emb, self.layout.pos_emb);
        for (i, (&id, row)) in cache.ids.iter().zip(d_x.rows()).enumerate() {
            let t = tok.offset + id as usize * h;
            let p = pos.offset + i * h;
            for (j, &v) in row.iter().enumerate() {
                grads[t + j] += v;
                grads[p + j] += v;
            }
        }
    }

    /// Summed masked-token cross-entropy of one sequence. When `grads` is
    /// given, the gradient of that sum is added into it.
    pub(crate) fn mlm_sequence(
        &self,
        corrupted: &[TokenId],
        targets: &[(usize, TokenId)],
        mode: Mode<'_>,
        grads: Option<&mut [f64]>,
    ) -> Result<f64, EncoderError> {
        let cache = self.forward(corrupted, mode)?;
        let last = cache.hidden.last().unwrap();
        let h = self.config.hidden_size;
        let m = targets.len();
        let mut hm = Array2::zeros((m, h));
        for (r, &(pos, _)) in targets.iter().enumerate() {
            hm.row_mut(r).assign(&last.row(pos));
        }
        let emb = self.mat(self.layout.tok_emb);
        let mut logits = hm.dot(&emb.t());
        logits += &self.vector(self.layout.head_bias);

        let mut loss = 0.0;
        for (mut row, &(_, target)) in logits.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[target as usize];
            // row becomes d(loss)/d(logits) = softmax - onehot
            row.mapv_inplace(|v| (v - lse).exp());
            row[target as usize] -= 1.0;
        }

        if let Some(grads) = grads {
            let d_logits = logits;
            let d_hm = d_logits.dot(&emb);
            add_mat(grads, self.layout.tok_emb, &d_logits.t().dot(&hm));
            add_col_sums(grads, self.layout.head_bias, &d_logits);
            let mut d_out = Array2::zeros(last.raw_dim());
            for (r, &(pos, _)) in targets.iter().enumerate() {
                let mut row = d_out.row_mut(pos);
                row += &d_hm.row(r);
            }
            self.backward(&cache, d_out, grads);
        }
        Ok(loss)
    }
}

/// Two disjoint mutable slices of the flat gradient vector.
fn split_pair(grads: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    let (ra, rb) = (a.range(), b.range());
    assert!(ra.end <= rb.start, "slots out of order");
    let (lo, hi) = grads.split_at_mut(rb.start);
    (&mut lo[ra], &mut hi[..rb.end - rb.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_encoder;
    use crate::rng;

    fn tiny(layers: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: layers,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 16,
            vocab_size: 300,
            dropout: 0.0,
            mask_rate: 0.15,
            seed: 3,
        }
    }

    #[test]
    fn single_token_shapes() {
        let enc = Encoder::new(&init_encoder(&tiny(2)).unwrap());
        let hidden = enc.hidden_states(&[crate::tokenizer::BOS]).unwrap();
        assert_eq!(hidden.len(), 3);
        assert!(hidden.iter().all(|h| h.dim() == (1, 8)));
    }

    #[test]
    fn too_long_and_out_of_range() {
        let enc = Encoder::new(&init_encoder(&tiny(1)).unwrap());
        assert!(matches!(
            enc.hidden_states(&[5; 17]),
            Err(EncoderError::SequenceTooLong { len: 17, max: 16 })
        ));
        assert!(matches!(enc.hidden_states(&[300]), Err(EncoderError::TokenOutOfRange { .. })));
    }

    #[test]
    fn position_and_content_sensitivity() {
        let enc = Encoder::new(&init_encoder(&tiny(2)).unwrap());
        let a = enc.hidden_states(&[1, 70, 71, 72, 2]).unwrap();
        let b = enc.hidden_states(&[1, 70, 99, 72, 2]).unwrap();
        let c = enc.hidden_states(&[1, 72, 71, 70, 2]).unwrap();
        let last = |h: &Vec<Array2<f64>>| h.last().unwrap().clone();
        assert!((&last(&a) - &last(&b)).iter().any(|d| d.abs() > 1e-9));
        // Same multiset of tokens, different positions.
        assert!((&last(&a) - &last(&c)).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn attention_rows_and_layer_norm_moments() {
        let enc = Encoder::new(&init_encoder(&tiny(2)).unwrap());
        let cache = enc.forward(&[1, 40, 41, 42, 43, 44, 2], Mode::Eval).unwrap();
        for layer in 0..2 {
            for head in 0..2 {
                for row in cache.attention(layer, head).rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
            for xhat in cache.layer_norm_inputs(layer) {
                for row in xhat.rows() {
                    let mean = row.mean().unwrap();
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
                    assert!(mean.abs() < 1e-5);
                    assert!((var - 1.0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let enc = Encoder::new(&init_encoder(&tiny(2)).unwrap());
        let ids = [1, 50, 60, 70, 2];
        let mut r = rng::seeded(1);
        let train = enc.forward(&ids, Mode::Train(&mut r)).unwrap().hidden;
        assert_eq!(train, enc.hidden_states(&ids).unwrap());

        let with_dropout = EncoderConfig { dropout: 0.3, ..tiny(2) };
        let enc = Encoder::new(&init_encoder(&with_dropout).unwrap());
        let train = enc.forward(&ids, Mode::Train(&mut r)).unwrap().hidden;
        assert_ne!(train, enc.hidden_states(&ids).unwrap());
        assert_eq!(enc.hidden_states(&ids).unwrap(), enc.hidden_states(&ids).unwrap());
    }
}
