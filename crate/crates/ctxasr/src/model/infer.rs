//! Tape-free inference: eager forward passes, a KV-cached session for
//! incremental decoding, and greedy decoding.

use super::{ModelError, ModelParams};
use crate::promptkit::{Element, SlotKind, Vocab};
use gradtape::{gelu, Real};
use ndarray::{s, Array2};

const LN_EPS: f64 = 1e-5;

fn layer_norm_eager<T: Real>(x: &Array2<T>, g: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let eps = T::from_f64(LN_EPS);
    let n = T::from_f64(x.ncols() as f64);
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mean = row.sum() / n;
        let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
        let inv = (var + eps).sqrt().recip();
        for j in 0..x.ncols() {
            out[[i, j]] = (row[j] - mean) * inv * g[[0, j]] + b[[0, j]];
        }
    }
    out
}

fn add_row<T: Real>(x: &mut Array2<T>, b: &Array2<T>) {
    for mut row in x.rows_mut() {
        row += &b.row(0);
    }
}

fn linear<T: Real>(params: &ModelParams<T>, x: &Array2<T>, w: &str, b: Option<&str>) -> Array2<T> {
    let mut y = x.dot(params.get(w));
    if let Some(b) = b {
        add_row(&mut y, params.get(b));
    }
    y
}

fn lora_proj<T: Real>(
    params: &ModelParams<T>,
    h: &Array2<T>,
    block: usize,
    proj: &str,
) -> Array2<T> {
    let base = h.dot(params.get(&format!("lm.{block}.attn.{proj}")));
    if !params.config.has_adapters {
        return base;
    }
    let scale = T::from_f64(params.config.adapter_alpha / params.config.adapter_rank as f64);
    let down = params.get(&format!("adapt.{block}.{proj}.down"));
    let up = params.get(&format!("adapt.{block}.{proj}.up"));
    base + &h.dot(down).dot(up).mapv(|x| x * scale)
}

fn conv_stride2_eager<T: Real>(params: &ModelParams<T>, x: &Array2<T>, prefix: &str) -> Array2<T> {
    let t_in = x.nrows();
    let t_out = (t_in + 1) / 2;
    let w: Vec<&Array2<T>> = (0..3)
        .map(|tap| params.get(&format!("{prefix}.w{tap}")))
        .collect();
    let mut out = Array2::zeros((t_out, w[0].ncols()));
    for (tap, wt) in w.iter().enumerate() {
        for t in 0..t_out {
            let j = (2 * t + tap) as isize - 1;
            if j < 0 || j >= t_in as isize {
                continue;
            }
            let contrib = x.row(j as usize).dot(&wt.view());
            let mut row = out.row_mut(t);
            row += &contrib;
        }
    }
    add_row(&mut out, params.get(&format!("{prefix}.b")));
    out.mapv_inplace(gelu);
    out
}

pub fn encode_audio_infer<T: Real>(
    params: &ModelParams<T>,
    frames: &Array2<f32>,
) -> Result<Array2<T>, ModelError> {
    let cfg = &params.config;
    if frames.ncols() != cfg.feature_dim || frames.nrows() == 0 {
        return Err(ModelError::FeatureDimMismatch {
            got: frames.ncols(),
            want: cfg.feature_dim,
        });
    }
    let silence = params.get("enc.silence");
    let t = frames.nrows().max(4);
    let mut input: Array2<T> = Array2::zeros((t, cfg.feature_dim));
    for i in 0..t {
        for j in 0..cfg.feature_dim {
            input[[i, j]] = if i < frames.nrows() {
                T::from_f64(frames[[i, j]] as f64)
            } else {
                silence[[0, j]]
            };
        }
    }
    let h1 = conv_stride2_eager(params, &input, "enc.conv1");
    let h2 = conv_stride2_eager(params, &h1, "enc.conv2");
    Ok(linear(params, &h2, "enc.proj.w", Some("enc.proj.b")))
}

pub fn compress_turn_infer<T: Real>(
    params: &ModelParams<T>,
    audio: &Array2<T>,
    rel_index: usize,
) -> Result<Array2<T>, ModelError> {
    let cfg = &params.config;
    if !cfg.has_compressor {
        return Err(ModelError::MissingComponent("compressor"));
    }
    if rel_index == 0 || rel_index > cfg.c_max {
        return Err(ModelError::RelIndexOutOfRange {
            got: rel_index,
            max: cfg.c_max,
        });
    }
    let q = params
        .get(&format!("comp.q.{rel_index}"))
        .dot(params.get("comp.attn.wq"));
    let k = audio.dot(params.get("comp.attn.wk"));
    let v = audio.dot(params.get("comp.attn.wv"));
    let probs = gradtape::attention_probs(&q, &k, cfg.heads, false);
    let dh = cfg.dim / cfg.heads;
    let mut att: Array2<T> = Array2::zeros((q.nrows(), cfg.dim));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let oh = p.dot(&v.slice(cols).to_owned());
        att.slice_mut(cols).assign(&oh);
    }
    let z0 = att.dot(params.get("comp.attn.wo"));
    if !cfg.compressor_ff {
        return Ok(z0);
    }
    let ln = layer_norm_eager(&z0, params.get("comp.ln.g"), params.get("comp.ln.b"));
    let mut h = linear(params, &ln, "comp.ff.w1", Some("comp.ff.b1"));
    h.mapv_inplace(gelu);
    let ff = linear(params, &h, "comp.ff.w2", Some("comp.ff.b2"));
    Ok(z0 + ff)
}

/// Attention probabilities of the compressor for `rel_index`, one matrix per
/// head. Rows sum to one.
pub fn compressor_attention_probs<T: Real>(
    params: &ModelParams<T>,
    audio: &Array2<T>,
    rel_index: usize,
) -> Vec<Array2<T>> {
    let q = params
        .get(&format!("comp.q.{rel_index}"))
        .dot(params.get("comp.attn.wq"));
    let k = audio.dot(params.get("comp.attn.wk"));
    gradtape::attention_probs(&q, &k, params.config.heads, false)
}

/// Mirrors [`crate::model::Forward::embed_prompt`] eagerly.
pub fn embed_prompt_infer<T: Real>(
    params: &ModelParams<T>,
    elements: &[Element],
    audio: &[&Array2<f32>],
) -> Result<Array2<T>, ModelError> {
    let cfg = &params.config;
    let mut rows: Vec<Array2<T>> = Vec::new();
    let tok = params.get("lm.tok");
    let mut total = 0usize;
    for e in elements {
        match e {
            Element::Text(id) => {
                rows.push(tok.row(*id as usize).insert_axis(ndarray::Axis(0)).to_owned());
                total += 1;
            }
            Element::Slot(slot) => {
                let frames = audio
                    .get(slot.slot_id)
                    .copied()
                    .ok_or(ModelError::MissingSlotAudio {
                        slot_id: slot.slot_id,
                    })?;
                let enc = encode_audio_infer(params, frames)?;
                let emb = match slot.kind {
                    SlotKind::Raw => enc,
                    SlotKind::Latent => compress_turn_infer(params, &enc, slot.rel_index)?,
                };
                total += emb.nrows();
                rows.push(emb);
            }
        }
    }
    if total > cfg.max_len {
        return Err(ModelError::LengthOverflow {
            required: total,
            available: cfg.max_len,
        });
    }
    let mut out = Array2::zeros((total, cfg.dim));
    let mut at = 0;
    for r in rows {
        out.slice_mut(s![at..at + r.nrows(), ..]).assign(&r);
        at += r.nrows();
    }
    let pos = params.get("lm.pos");
    for i in 0..total {
        let mut row = out.row_mut(i);
        row += &pos.row(i);
    }
    Ok(out)
}

/// Incremental decoder state: per-block key/value caches.
pub struct LmSession<'p, T: Real> {
    params: &'p ModelParams<T>,
    caches: Vec<(Array2<T>, Array2<T>)>,
    len: usize,
}

impl<'p, T: Real> LmSession<'p, T> {
    pub fn new(params: &'p ModelParams<T>) -> Self {
        let d = params.config.dim;
        LmSession {
            params,
            caches: (0..params.config.blocks)
                .map(|_| (Array2::zeros((0, d)), Array2::zeros((0, d))))
                .collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds `chunk.nrows()` new positions; returns their logits.
    pub fn feed(&mut self, chunk: &Array2<T>) -> Result<Array2<T>, ModelError> {
        let cfg = &self.params.config;
        let new = chunk.nrows();
        if self.len + new > cfg.max_len {
            return Err(ModelError::LengthOverflow {
                required: self.len + new,
                available: cfg.max_len,
            });
        }
        let base = self.len;
        let mut x = chunk.clone();
        for b in 0..cfg.blocks {
            let h = layer_norm_eager(
                &x,
                self.params.get(&format!("lm.{b}.ln1.g")),
                self.params.get(&format!("lm.{b}.ln1.b")),
            );
            let q = lora_proj(self.params, &h, b, "wq");
            let k_new = h.dot(self.params.get(&format!("lm.{b}.attn.wk")));
            let v_new = lora_proj(self.params, &h, b, "wv");
            let (ck, cv) = &mut self.caches[b];
            *ck = concat_rows(ck, &k_new);
            *cv = concat_rows(cv, &v_new);

            let att = cached_causal_attention(&q, ck, cv, cfg.heads, base);
            let att = att.dot(self.params.get(&format!("lm.{b}.attn.wo")));
            x = x + att;

            let h2 = layer_norm_eager(
                &x,
                self.params.get(&format!("lm.{b}.ln2.g")),
                self.params.get(&format!("lm.{b}.ln2.b")),
            );
            let mut f = linear(
                self.params,
                &h2,
                &format!("lm.{b}.ff.w1"),
                Some(&format!("lm.{b}.ff.b1")),
            );
            f.mapv_inplace(gelu);
            let f = linear(
                self.params,
                &f,
                &format!("lm.{b}.ff.w2"),
                Some(&format!("lm.{b}.ff.b2")),
            );
            x = x + f;
        }
        self.len += new;
        let xf = layer_norm_eager(&x, self.params.get("lm.lnf.g"), self.params.get("lm.lnf.b"));
        Ok(xf.dot(self.params.get("lm.head")))
    }
}

fn concat_rows<T: Real>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows() + b.nrows(), a.ncols()));
    out.slice_mut(s![..a.nrows(), ..]).assign(a);
    out.slice_mut(s![a.nrows().., ..]).assign(b);
    out
}

/// Attention of `q` (new positions starting at `base`) over the full cache,
/// allowing position base+i to see cache rows 0..=base+i.
fn cached_causal_attention<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    base: usize,
) -> Array2<T> {
    let d = q.ncols();
    let dh = d / heads;
    let scale = T::from_f64((dh as f64).sqrt()).recip();
    let neg = T::from_f64(-1e9);
    let mut out = Array2::zeros((q.nrows(), d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols).to_owned();
        let kh = k.slice(cols).to_owned();
        let vh = v.slice(cols).to_owned();
        let mut scores = qh.dot(&kh.t()).mapv(|x| x * scale);
        for i in 0..scores.nrows() {
            for j in (base + i + 1)..scores.ncols() {
                scores[[i, j]] = neg;
            }
        }
        gradtape::softmax_rows_inplace(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&vh));
    }
    out
}

/// Full-sequence eager forward; logits for every position.
pub fn lm_forward_infer<T: Real>(
    params: &ModelParams<T>,
    embedded: &Array2<T>,
) -> Result<Array2<T>, ModelError> {
    LmSession::new(params).feed(embedded)
}

/// Per-block, per-head causal attention probabilities at `embedded`,
/// for normalization checks.
pub fn lm_attention_probs<T: Real>(
    params: &ModelParams<T>,
    embedded: &Array2<T>,
) -> Vec<Vec<Array2<T>>> {
    let cfg = &params.config;
    let mut x = embedded.clone();
    let mut all = Vec::new();
    for b in 0..cfg.blocks {
        let h = layer_norm_eager(
            &x,
            params.get(&format!("lm.{b}.ln1.g")),
            params.get(&format!("lm.{b}.ln1.b")),
        );
        let q = lora_proj(params, &h, b, "wq");
        let k = h.dot(params.get(&format!("lm.{b}.attn.wk")));
        let v = lora_proj(params, &h, b, "wv");
        all.push(gradtape::attention_probs(&q, &k, cfg.heads, true));

        let att = cached_causal_attention(&q, &k, &v, cfg.heads, 0);
        let att = att.dot(params.get(&format!("lm.{b}.attn.wo")));
        x = x + att;
        let h2 = layer_norm_eager(
            &x,
            params.get(&format!("lm.{b}.ln2.g")),
            params.get(&format!("lm.{b}.ln2.b")),
        );
        let mut f = linear(params, &h2, &format!("lm.{b}.ff.w1"), Some(&format!("lm.{b}.ff.b1")));
        f.mapv_inplace(gelu);
        let f = linear(params, &f, &format!("lm.{b}.ff.w2"), Some(&format!("lm.{b}.ff.b2")));
        x = x + f;
    }
    all
}

/// Greedy decoding from an embedded prefix: repeatedly takes the argmax
/// token (lowest id on ties), stopping at END or after `max_new` tokens.
/// Returns generated ids, END excluded.
pub fn greedy_decode<T: Real>(
    params: &ModelParams<T>,
    prefix_embedded: &Array2<T>,
    max_new: usize,
) -> Result<Vec<u32>, ModelError> {
    let cfg = &params.config;
    if prefix_embedded.nrows() + max_new > cfg.max_len {
        return Err(ModelError::LengthOverflow {
            required: prefix_embedded.nrows() + max_new,
            available: cfg.max_len,
        });
    }
    let mut session = LmSession::new(params);
    let logits = session.feed(prefix_embedded)?;
    let mut last = logits.row(logits.nrows() - 1).to_owned();
    let mut out = Vec::new();
    let tok = params.get("lm.tok");
    let pos = params.get("lm.pos");
    for _ in 0..max_new {
        let mut best = 0usize;
        for j in 1..last.len() {
            if last[j] > last[best] {
                best = j;
            }
        }
        if best as u32 == Vocab::END {
            break;
        }
        out.push(best as u32);
        let at = session.len();
        let emb = (&tok.row(best) + &pos.row(at)).insert_axis(ndarray::Axis(0));
        let logits = session.feed(&emb.to_owned())?;
        last = logits.row(0).to_owned();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attach_compressor, new_model, Forward, ModelConfig, ModelParams};

    fn tiny_model() -> ModelParams<f64> {
        let cfg = ModelConfig {
            feature_dim: 4,
            enc_channels: 6,
            dim: 8,
            blocks: 2,
            heads: 2,
            ff_mult: 2,
            max_len: 64,
            vocab_size: 44,
            k_latent: 3,
            c_max: 4,
            adapter_rank: 2,
            ..ModelConfig::default()
        };
        let mut p: ModelParams<f64> = new_model(&cfg, 21, &[0.1, 0.2, 0.3, 0.4]);
        attach_compressor(&mut p, 21);
        p
    }

    #[test]
    fn eager_forward_matches_tape_forward() {
        let params = tiny_model();
        let x = Array2::from_shape_fn((9, 8), |(i, j)| ((i * 5 + j) as f64 * 0.19).sin());
        let eager = lm_forward_infer(&params, &x).unwrap();
        let mut f = Forward::new(&params);
        let xid = f.tape.leaf(x);
        let logits = f.lm_forward(xid).unwrap();
        let taped = f.tape.value(logits);
        let max_diff = eager
            .iter()
            .zip(taped.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "eager vs tape {max_diff}");
    }

    #[test]
    fn incremental_feed_matches_batch_prefill() {
        let params = tiny_model();
        let x = Array2::from_shape_fn((7, 8), |(i, j)| ((i * 3 + j) as f64 * 0.23).cos());
        let batch = lm_forward_infer(&params, &x).unwrap();
        let mut session = LmSession::new(&params);
        let first = session
            .feed(&x.slice(s![..4, ..]).to_owned())
            .unwrap();
        let mut rows = vec![first];
        for i in 4..7 {
            let r = session
                .feed(&x.slice(s![i..i + 1, ..]).to_owned())
                .unwrap();
            rows.push(r);
        }
        let mut stacked = Array2::zeros((0, batch.ncols()));
        for r in rows {
            stacked = concat_rows(&stacked, &r);
        }
        let max_diff = batch
            .iter()
            .zip(stacked.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "incremental vs batch {max_diff}");
    }

    #[test]
    fn eager_encoder_and_compressor_match_tape() {
        let params = tiny_model();
        let frames = Array2::from_shape_fn((13, 4), |(i, j)| ((i + j) as f32 * 0.31).sin());
        let enc_e = encode_audio_infer(&params, &frames).unwrap();
        let z_e = compress_turn_infer(&params, &enc_e, 2).unwrap();
        let mut f = Forward::new(&params);
        let enc_t = f.encode_audio(&frames).unwrap();
        let z_t = f.compress_turn(enc_t, 2).unwrap();
        let d1 = enc_e
            .iter()
            .zip(f.tape.value(enc_t).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d2 = z_e
            .iter()
            .zip(f.tape.value(z_t).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d1 < 1e-9 && d2 < 1e-9, "encoder {d1} compressor {d2}");
    }

    #[test]
    fn greedy_decode_is_deterministic_and_caps() {
        let params = tiny_model();
        let prefix = Array2::from_shape_fn((5, 8), |(i, j)| ((i + j) as f64 * 0.41).sin());
        let a = greedy_decode(&params, &prefix, 10).unwrap();
        let b = greedy_decode(&params, &prefix, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 10);
    }

    /// Zeroing the final norm gain pins its output to the bias, making the
    /// logit distribution constant so decode behavior is fully controlled.
    fn pin_end_logit(params: &mut ModelParams<f64>, end_score: f64) {
        let d = params.config.dim;
        let v = params.config.vocab_size;
        params.tensors.insert("lm.lnf.g".into(), Array2::zeros((1, d)));
        params
            .tensors
            .insert("lm.lnf.b".into(), Array2::from_elem((1, d), 1.0));
        let mut head = Array2::zeros((d, v));
        for i in 0..d {
            head[[i, Vocab::END as usize]] = end_score;
        }
        params.tensors.insert("lm.head".into(), head);
    }

    #[test]
    fn always_end_model_decodes_empty() {
        let mut params = tiny_model();
        pin_end_logit(&mut params, 1.0);
        let prefix = Array2::from_shape_fn((3, 8), |(i, j)| ((i + j) as f64 * 0.5).cos());
        let out = greedy_decode(&params, &prefix, 16).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn never_end_model_emits_exactly_max_new() {
        let mut params = tiny_model();
        pin_end_logit(&mut params, -1.0);
        let prefix = Array2::from_shape_fn((3, 8), |(i, j)| ((i + j) as f64 * 0.5).cos());
        let out = greedy_decode(&params, &prefix, 12).unwrap();
        assert_eq!(out.len(), 12);
    }

    #[test]
    fn decode_length_overflow_is_reported() {
        let params = tiny_model();
        let prefix = Array2::zeros((60, 8));
        assert!(matches!(
            greedy_decode(&params, &prefix, 10),
            Err(ModelError::LengthOverflow { .. })
        ));
    }
}
