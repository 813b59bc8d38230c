//! Differentiable forward passes over a gradient tape.

use super::{ModelError, ModelParams};
use crate::promptkit::{Element, PromptSequence, SlotKind};
use gradtape::{NodeId, Real, Tape};
use ndarray::Array2;
use std::collections::BTreeMap;

/// Gradients keyed by tensor name, for the parameters an example touched.
pub type TensorGrads<T> = BTreeMap<String, Array2<T>>;

/// One example's forward computation. Parameters enter the tape lazily and
/// are tracked by name so gradients can be collected after backward.
pub struct Forward<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p ModelParams<T>,
    leaves: BTreeMap<String, NodeId>,
}

impl<'p, T: Real> Forward<'p, T> {
    pub fn new(params: &'p ModelParams<T>) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            leaves: BTreeMap::new(),
        }
    }

    fn p(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.tape.leaf(self.params.get(name).clone());
        self.leaves.insert(name.to_string(), id);
        id
    }

    fn constant(&mut self, value: Array2<T>) -> NodeId {
        self.tape.leaf(value)
    }

    fn linear(&mut self, x: NodeId, w: &str, b: Option<&str>) -> NodeId {
        let wid = self.p(w);
        let y = self.tape.matmul(x, wid);
        match b {
            Some(b) => {
                let bid = self.p(b);
                self.tape.add_row(y, bid)
            }
            None => y,
        }
    }

    fn layer_norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b)
    }

    /// One strided conv layer expressed as a sum of per-tap projections:
    /// out[t] = sum_m x[2t-1+m] W_m + b, with zero rows past the edges.
    fn conv_stride2(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let t_in = self.tape.value(x).nrows();
        let width = self.tape.value(x).ncols();
        let t_out = (t_in + 1) / 2;
        let zero = self.constant(Array2::zeros((1, width)));
        let padded = self.tape.concat_rows(&[x, zero]);
        let mut acc: Option<NodeId> = None;
        for tap in 0..3usize {
            let idx: Vec<usize> = (0..t_out)
                .map(|t| {
                    let j = (2 * t + tap) as isize - 1;
                    if j < 0 || j >= t_in as isize {
                        t_in // the zero row
                    } else {
                        j as usize
                    }
                })
                .collect();
            let g = self.tape.gather_rows(padded, &idx);
            let w = self.p(&format!("{prefix}.w{tap}"));
            let y = self.tape.matmul(g, w);
            acc = Some(match acc {
                Some(a) => self.tape.add(a, y),
                None => y,
            });
        }
        let b = self.p(&format!("{prefix}.b"));
        let with_bias = self.tape.add_row(acc.unwrap(), b);
        self.tape.gelu(with_bias)
    }

    /// Frames -> audio tokens. Inputs shorter than 4 frames are right-padded
    /// with the silence buffer first, so the output always has
    /// ceil(max(T,4)/4) rows of width `dim`.
    pub fn encode_audio(&mut self, frames: &Array2<f32>) -> Result<NodeId, ModelError> {
        let cfg = &self.params.config;
        if frames.ncols() != cfg.feature_dim {
            return Err(ModelError::FeatureDimMismatch {
                got: frames.ncols(),
                want: cfg.feature_dim,
            });
        }
        if frames.nrows() == 0 {
            return Err(ModelError::FeatureDimMismatch {
                got: 0,
                want: cfg.feature_dim,
            });
        }
        let silence = self.params.get("enc.silence");
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
        let x = self.constant(input);
        let h1 = self.conv_stride2(x, "enc.conv1");
        let h2 = self.conv_stride2(h1, "enc.conv2");
        Ok(self.linear(h2, "enc.proj.w", Some("enc.proj.b")))
    }

    /// Audio tokens -> K latent tokens via the turn-indexed query matrix and
    /// the shared cross-attention block.
    pub fn compress_turn(&mut self, audio: NodeId, rel_index: usize) -> Result<NodeId, ModelError> {
        let cfg = &self.params.config;
        if !cfg.has_compressor {
            return Err(ModelError::MissingComponent("compressor"));
        }
        if rel_index == 0 || rel_index > cfg.c_max {
            return Err(ModelError::RelIndexOutOfRange {
                got: rel_index,
                max: cfg.c_max,
            });
        }
        let queries = self.p(&format!("comp.q.{rel_index}"));
        let q = self.linear(queries, "comp.attn.wq", None);
        let k = self.linear(audio, "comp.attn.wk", None);
        let v = self.linear(audio, "comp.attn.wv", None);
        let heads = self.params.config.heads;
        let att = self.tape.attention(q, k, v, heads, false);
        let z0 = self.linear(att, "comp.attn.wo", None);
        if !self.params.config.compressor_ff {
            return Ok(z0);
        }
        let ln = self.layer_norm(z0, "comp.ln");
        let h = self.linear(ln, "comp.ff.w1", Some("comp.ff.b1"));
        let h = self.tape.gelu(h);
        let ff = self.linear(h, "comp.ff.w2", Some("comp.ff.b2"));
        Ok(self.tape.add(z0, ff))
    }

    /// Interleaves token embeddings with encoded (and optionally compressed)
    /// audio, then adds positional embeddings over the final length.
    /// `audio[slot_id]` supplies frames for each slot.
    pub fn embed_prompt(
        &mut self,
        elements: &[Element],
        audio: &[&Array2<f32>],
    ) -> Result<NodeId, ModelError> {
        Ok(self.embed_prompt_mapped(elements, audio)?.0)
    }

    /// As [`Forward::embed_prompt`], also returning each element's last
    /// embedded row index. Text elements occupy one row; audio slots expand
    /// to however many rows their representation produces.
    pub fn embed_prompt_mapped(
        &mut self,
        elements: &[Element],
        audio: &[&Array2<f32>],
    ) -> Result<(NodeId, Vec<usize>), ModelError> {
        let mut segments: Vec<NodeId> = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        let mut total_len = 0usize;
        let mut last_rows = Vec::with_capacity(elements.len());

        macro_rules! flush_run {
            ($self:ident) => {
                if !run.is_empty() {
                    let tok = $self.p("lm.tok");
                    let seg = $self.tape.gather_rows(tok, &run);
                    segments.push(seg);
                    run.clear();
                }
            };
        }

        for e in elements {
            match e {
                Element::Text(id) => {
                    run.push(*id as usize);
                    total_len += 1;
                    last_rows.push(total_len - 1);
                }
                Element::Slot(slot) => {
                    flush_run!(self);
                    let frames = audio
                        .get(slot.slot_id)
                        .copied()
                        .ok_or(ModelError::MissingSlotAudio {
                            slot_id: slot.slot_id,
                        })?;
                    let enc = self.encode_audio(frames)?;
                    let node = match slot.kind {
                        SlotKind::Raw => enc,
                        SlotKind::Latent => self.compress_turn(enc, slot.rel_index)?,
                    };
                    total_len += self.tape.value(node).nrows();
                    last_rows.push(total_len - 1);
                    segments.push(node);
                }
            }
        }
        flush_run!(self);

        let max_len = self.params.config.max_len;
        if total_len > max_len {
            return Err(ModelError::LengthOverflow {
                required: total_len,
                available: max_len,
            });
        }
        let x = self.tape.concat_rows(&segments);
        let pos_ids: Vec<usize> = (0..total_len).collect();
        let pos_table = self.p("lm.pos");
        let pos = self.tape.gather_rows(pos_table, &pos_ids);
        Ok((self.tape.add(x, pos), last_rows))
    }

    fn lora(&mut self, h: NodeId, base: NodeId, block: usize, proj: &str) -> NodeId {
        if !self.params.config.has_adapters {
            return base;
        }
        let scale = T::from_f64(
            self.params.config.adapter_alpha / self.params.config.adapter_rank as f64,
        );
        let down = self.p(&format!("adapt.{block}.{proj}.down"));
        let up = self.p(&format!("adapt.{block}.{proj}.up"));
        let hd = self.tape.matmul(h, down);
        let hu = self.tape.matmul(hd, up);
        let scaled = self.tape.scale(hu, scale);
        self.tape.add(base, scaled)
    }

    /// Pre-norm causal decoder stack over an embedded sequence; returns
    /// per-position logits.
    pub fn lm_forward(&mut self, embedded: NodeId) -> Result<NodeId, ModelError> {
        let cfg = self.params.config.clone();
        let len = self.tape.value(embedded).nrows();
        if len > cfg.max_len {
            return Err(ModelError::LengthOverflow {
                required: len,
                available: cfg.max_len,
            });
        }
        let mut x = embedded;
        for b in 0..cfg.blocks {
            let h = self.layer_norm(x, &format!("lm.{b}.ln1"));
            let q0 = self.linear(h, &format!("lm.{b}.attn.wq"), None);
            let q = self.lora(h, q0, b, "wq");
            let k = self.linear(h, &format!("lm.{b}.attn.wk"), None);
            let v0 = self.linear(h, &format!("lm.{b}.attn.wv"), None);
            let v = self.lora(h, v0, b, "wv");
            let att = self.tape.attention(q, k, v, cfg.heads, true);
            let att = self.linear(att, &format!("lm.{b}.attn.wo"), None);
            x = self.tape.add(x, att);

            let h2 = self.layer_norm(x, &format!("lm.{b}.ln2"));
            let f = self.linear(h2, &format!("lm.{b}.ff.w1"), Some(&format!("lm.{b}.ff.b1")));
            let f = self.tape.gelu(f);
            let f = self.linear(f, &format!("lm.{b}.ff.w2"), Some(&format!("lm.{b}.ff.b2")));
            x = self.tape.add(x, f);
        }
        let xf = self.layer_norm(x, "lm.lnf");
        Ok(self.linear(xf, "lm.head", None))
    }

    /// Mean cross-entropy over positions with the mask set.
    pub fn loss(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        mask: &[bool],
    ) -> Result<NodeId, ModelError> {
        let rows = self.tape.value(logits).nrows();
        if rows != targets.len() || rows != mask.len() {
            return Err(ModelError::MisalignedLoss {
                logits: rows,
                targets: targets.len(),
            });
        }
        if !mask.iter().any(|&b| b) {
            return Err(ModelError::EmptyLossMask);
        }
        let t: Vec<usize> = targets.iter().map(|&x| x as usize).collect();
        Ok(self.tape.cross_entropy(logits, &t, mask))
    }

    /// Full teacher-forced example: embed, run the LM, score the masked
    /// positions. The prompt's per-element targets and mask are spread onto
    /// embedded rows (a text element's prediction happens at its own single
    /// row; slot rows are never supervised).
    pub fn example_loss(
        &mut self,
        prompt: &PromptSequence,
        audio: &[&Array2<f32>],
    ) -> Result<NodeId, ModelError> {
        let (emb, last_rows) = self.embed_prompt_mapped(&prompt.elements, audio)?;
        let total = self.tape.value(emb).nrows();
        let mut targets = vec![crate::promptkit::Vocab::PAD; total];
        let mut mask = vec![false; total];
        for (i, (&t, &m)) in prompt.targets.iter().zip(&prompt.loss_mask).enumerate() {
            if m {
                targets[last_rows[i]] = t;
                mask[last_rows[i]] = true;
            }
        }
        let logits = self.lm_forward(emb)?;
        self.loss(logits, &targets, &mask)
    }

    /// Backward pass from a scalar node; returns (loss value, grads by
    /// tensor name, restricted to parameters this example touched).
    pub fn grads(self, root: NodeId) -> (f64, TensorGrads<T>) {
        let value = self.tape.value(root)[[0, 0]].to_f64();
        let mut grads = self.tape.backward(root);
        let mut out = TensorGrads::new();
        for (name, id) in self.leaves {
            if let Some(g) = grads.take(id) {
                out.insert(name, g);
            }
        }
        (value, out)
    }
}
