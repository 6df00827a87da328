use super::{AggMode, BiLstm, Channel, DualEncoderModel, EntityFusion};
use crate::error::{Error, Result};
use crate::numeric::{axpy, cosine, dot, norm, softmax, softmax_cross_entropy, GradBuffer, LstmTrace, Parallelism, COSINE_EPS};
use crate::stream::Note;

/// Forward quantities for one note.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedNote {
    /// Aggregated context vector `h^c`.
    pub h_c: Vec<f64>,
    /// Aligned context vector `z^c`.
    pub z_c: Vec<f64>,
    /// Fused entity vector `h^s`; zeros when the note has no entities, empty
    /// when the model has no entity channel.
    pub h_s: Vec<f64>,
    pub z_s: Vec<f64>,
    /// Cosine scores `u_m` between each entity state and `h^c`.
    pub scores: Vec<f64>,
    /// Fusion weights `a_m`.
    pub attention: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug)]
struct BiTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// `[→h_t ; ←h_t]` per position.
    states: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct EntityTrace {
    bi: BiTrace,
    norms: Vec<f64>,
}

/// Cached forward pass used for backpropagation.
#[derive(Clone, Debug)]
pub struct NoteTrace {
    ctx: BiTrace,
    /// Per output dimension, the position selected by max pooling.
    argmax: Vec<usize>,
    ent: Option<EntityTrace>,
    h_c_norm: f64,
    z: Vec<f64>,
    pub encoded: EncodedNote,
}

impl BiLstm {
    fn forward(&self, model: &DualEncoderModel, emb: crate::numeric::ParamId, ids: &[usize]) -> Result<BiTrace> {
        let table = model.params.value(emb);
        if let Some(&bad) = ids.iter().find(|&&i| i >= table.rows()) {
            return Err(Error::Index {
                what: "embedding table",
                index: bad,
                len: table.rows(),
            });
        }
        let fwd = self.fwd.run(&model.params, ids.iter().map(|&i| table.row(i)))?;
        let bwd = self.bwd.run(&model.params, ids.iter().rev().map(|&i| table.row(i)))?;
        let h = self.fwd.hidden;
        let t_len = ids.len();
        let states = (0..t_len)
            .map(|t| {
                let mut s = Vec::with_capacity(2 * h);
                s.extend_from_slice(fwd.hidden_state(t, h));
                s.extend_from_slice(bwd.hidden_state(t_len - 1 - t, h));
                s
            })
            .collect();
        Ok(BiTrace { fwd, bwd, states })
    }

    fn backward(
        &self,
        model: &DualEncoderModel,
        emb: crate::numeric::ParamId,
        ids: &[usize],
        tr: &BiTrace,
        dstates: &[Vec<f64>],
        grads: &mut GradBuffer,
    ) {
        let h = self.fwd.hidden;
        let t_len = ids.len();
        let mut dh_f = vec![0.0; t_len * h];
        let mut dh_b = vec![0.0; t_len * h];
        for (t, ds) in dstates.iter().enumerate() {
            dh_f[t * h..(t + 1) * h].copy_from_slice(&ds[..h]);
            let s = t_len - 1 - t;
            dh_b[s * h..(s + 1) * h].copy_from_slice(&ds[h..]);
        }
        let dx_f = self.fwd.backward(&model.params, &tr.fwd, &dh_f, grads);
        let dx_b = self.bwd.backward(&model.params, &tr.bwd, &dh_b, grads);
        let d = self.fwd.input;
        let g = grads.get_mut(emb);
        for (t, &id) in ids.iter().enumerate() {
            let row = g.row_mut(id);
            axpy(1.0, &dx_f[t * d..(t + 1) * d], row);
            let s = t_len - 1 - t;
            axpy(1.0, &dx_b[s * d..(s + 1) * d], row);
        }
    }
}

fn weighted_sum(weights: &[f64], states: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (a, s) in weights.iter().zip(states) {
        axpy(*a, s, &mut out);
    }
    out
}

/// Context-to-entity attention over entity states: returns the cosine scores
/// `u`, the softmax weights `a` and the fused vector `Σ a_m h^s_m`. A state or
/// context with norm below [`COSINE_EPS`] scores 0.
pub fn cosine_attention(states: &[Vec<f64>], h_c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    if states.is_empty() {
        return (Vec::new(), Vec::new(), vec![0.0; h_c.len()]);
    }
    let scores: Vec<f64> = states.iter().map(|s| cosine(s, h_c)).collect();
    let weights = softmax(&scores);
    let fused = weighted_sum(&weights, states, h_c.len());
    (scores, weights, fused)
}

fn aggregate(mode: AggMode, states: &[Vec<f64>], hidden: usize) -> (Vec<f64>, Vec<usize>) {
    let dim = 2 * hidden;
    let t_len = states.len();
    match mode {
        AggMode::MeanPool => {
            let mut h = vec![0.0; dim];
            for s in states {
                axpy(1.0, s, &mut h);
            }
            h.iter_mut().for_each(|v| *v /= t_len as f64);
            (h, Vec::new())
        }
        AggMode::MaxPool => {
            let mut h = states[0].clone();
            let mut arg = vec![0; dim];
            for (t, s) in states.iter().enumerate().skip(1) {
                for j in 0..dim {
                    if s[j] > h[j] {
                        h[j] = s[j];
                        arg[j] = t;
                    }
                }
            }
            (h, arg)
        }
        AggMode::ConcatEnds => {
            let mut h = Vec::with_capacity(dim);
            h.extend_from_slice(&states[t_len - 1][..hidden]);
            h.extend_from_slice(&states[0][hidden..]);
            (h, Vec::new())
        }
    }
}

fn aggregate_backward(mode: AggMode, t_len: usize, hidden: usize, argmax: &[usize], dh: &[f64]) -> Vec<Vec<f64>> {
    let dim = 2 * hidden;
    let mut ds = vec![vec![0.0; dim]; t_len];
    match mode {
        AggMode::MeanPool => {
            for s in &mut ds {
                axpy(1.0 / t_len as f64, dh, s);
            }
        }
        AggMode::MaxPool => {
            for j in 0..dim {
                ds[argmax[j]][j] += dh[j];
            }
        }
        AggMode::ConcatEnds => {
            for j in 0..hidden {
                ds[t_len - 1][j] += dh[j];
                ds[0][hidden + j] += dh[hidden + j];
            }
        }
    }
    ds
}

impl Channel {
    fn align(&self, model: &DualEncoderModel, h: &[f64]) -> Result<Vec<f64>> {
        self.align.forward(&model.params, h)
    }
}

impl DualEncoderModel {
    /// Context channel: `(h^c, z^c)`.
    pub fn encode_context(&self, note: &Note) -> Result<(Vec<f64>, Vec<f64>)> {
        let bi = self.context_trace(note)?;
        let (h_c, _) = aggregate(self.config.agg, &bi.states, self.config.hidden);
        let z_c = self.context.align(self, &h_c)?;
        Ok((h_c, z_c))
    }

    fn context_trace(&self, note: &Note) -> Result<BiTrace> {
        if note.char_ids.is_empty() {
            return Err(Error::EmptyInput("note has no characters"));
        }
        self.context.encoder.forward(self, self.context.embedding, &note.char_ids)
    }

    /// Entity channel given the note's context vector: `(h^s, z^s, a)`.
    /// Without entities the fused vector is zero and `a` is empty.
    pub fn encode_entities(&self, note: &Note, h_c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let ent = self
            .entity
            .as_ref()
            .ok_or_else(|| Error::Config("model has no entity channel".into()))?;
        if h_c.len() != self.config.channel_dim() {
            return Err(Error::dim("encode_entities h_c", self.config.channel_dim(), h_c.len()));
        }
        let (h_s, _, a, _) = self.fuse_entities(ent, note, h_c)?;
        let z_s = ent.align(self, &h_s)?;
        Ok((h_s, z_s, a))
    }

    #[allow(clippy::type_complexity)]
    fn fuse_entities(
        &self,
        ent: &Channel,
        note: &Note,
        h_c: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Option<EntityTrace>)> {
        let dim = self.config.channel_dim();
        if note.entity_ids.is_empty() {
            return Ok((vec![0.0; dim], Vec::new(), Vec::new(), None));
        }
        let bi = ent.encoder.forward(self, ent.embedding, &note.entity_ids)?;
        let norms: Vec<f64> = bi.states.iter().map(|s| norm(s)).collect();
        let (scores, attention, h_s) = match self.config.fusion {
            EntityFusion::Attention => cosine_attention(&bi.states, h_c),
            EntityFusion::Uniform => {
                let (scores, _, _) = cosine_attention(&bi.states, h_c);
                let m = bi.states.len();
                let attention = vec![1.0 / m as f64; m];
                let h_s = weighted_sum(&attention, &bi.states, dim);
                (scores, attention, h_s)
            }
        };
        Ok((h_s, scores, attention, Some(EntityTrace { bi, norms })))
    }

    /// `(logits, probabilities)` for `z = (z^c ; z^s)`.
    pub fn classify(&self, z_c: &[f64], z_s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.config.channel_dim();
        let want_s = if self.entity.is_some() { dim } else { 0 };
        if z_c.len() != dim || z_s.len() != want_s {
            return Err(Error::dim(
                "classify",
                format!("z_c {dim} / z_s {want_s}"),
                format!("z_c {} / z_s {}", z_c.len(), z_s.len()),
            ));
        }
        let z: Vec<f64> = z_c.iter().chain(z_s).copied().collect();
        let logits = self.logits(&z);
        let probs = softmax(&logits);
        Ok((logits, probs))
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let w = self.params.value(self.classifier);
        let mut logits = vec![0.0; w.rows()];
        w.matvec_into(z, &mut logits);
        logits
    }

    /// Full forward pass with the cache needed for [`DualEncoderModel::backward`].
    pub fn trace(&self, note: &Note) -> Result<NoteTrace> {
        let ctx = self.context_trace(note)?;
        let (h_c, argmax) = aggregate(self.config.agg, &ctx.states, self.config.hidden);
        let z_c = self.context.align(self, &h_c)?;
        let (h_s, z_s, scores, attention, ent) = match &self.entity {
            Some(ch) => {
                let (h_s, scores, attention, tr) = self.fuse_entities(ch, note, &h_c)?;
                let z_s = ch.align(self, &h_s)?;
                (h_s, z_s, scores, attention, tr)
            }
            None => (Vec::new(), Vec::new(), Vec::new(), Vec::new(), None),
        };
        let z: Vec<f64> = z_c.iter().chain(&z_s).copied().collect();
        let logits = self.logits(&z);
        Ok(NoteTrace {
            h_c_norm: norm(&h_c),
            ctx,
            argmax,
            ent,
            z,
            encoded: EncodedNote {
                h_c,
                z_c,
                h_s,
                z_s,
                scores,
                attention,
                logits,
            },
        })
    }

    pub fn encode(&self, note: &Note) -> Result<EncodedNote> {
        Ok(self.trace(note)?.encoded)
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂logits`.
    pub fn backward(&self, note: &Note, tr: &NoteTrace, dlogits: &[f64], grads: &mut GradBuffer) {
        let cfg = &self.config;
        let dim = cfg.channel_dim();
        let w = self.params.value(self.classifier);
        grads.get_mut(self.classifier).add_outer(1.0, dlogits, &tr.z);
        let mut dz = vec![0.0; w.cols()];
        w.t_matvec_into(dlogits, &mut dz);
        self.backward_from_z(note, tr, &dz[..dim], &dz[dim..], grads);
    }

    /// Backward pass starting from `∂L/∂z^c` and `∂L/∂z^s`.
    pub(crate) fn backward_from_z(&self, note: &Note, tr: &NoteTrace, dz_c: &[f64], dz_s: &[f64], grads: &mut GradBuffer) {
        let cfg = &self.config;
        let enc = &tr.encoded;
        let mut dh_c = self.context.align.backward(&self.params, &enc.h_c, dz_c, grads);

        if let (Some(ch), Some(et)) = (&self.entity, &tr.ent) {
            let dh_s = ch.align.backward(&self.params, &enc.h_s, dz_s, grads);
            let m = et.bi.states.len();
            let mut dstates: Vec<Vec<f64>> = enc.attention.iter().map(|&a| dh_s.iter().map(|g| a * g).collect()).collect();
            if cfg.fusion == EntityFusion::Attention {
                let da: Vec<f64> = et.bi.states.iter().map(|s| dot(&dh_s, s)).collect();
                let mean: f64 = enc.attention.iter().zip(&da).map(|(a, d)| a * d).sum();
                let qn = tr.h_c_norm;
                for i in 0..m {
                    let du = enc.attention[i] * (da[i] - mean);
                    let pn = et.norms[i];
                    if pn < COSINE_EPS || qn < COSINE_EPS || du == 0.0 {
                        continue;
                    }
                    let u = enc.scores[i];
                    let p = &et.bi.states[i];
                    // ∂u/∂p = q/(|p||q|) − u p/|p|²,  ∂u/∂q = p/(|p||q|) − u q/|q|²
                    axpy(du / (pn * qn), &enc.h_c, &mut dstates[i]);
                    axpy(-du * u / (pn * pn), p, &mut dstates[i]);
                    axpy(du / (pn * qn), p, &mut dh_c);
                    axpy(-du * u / (qn * qn), &enc.h_c, &mut dh_c);
                }
            }
            ch.encoder
                .backward(self, ch.embedding, &note.entity_ids, &et.bi, &dstates, grads);
        } else if let Some(ch) = &self.entity {
            // no entities: h^s is a constant zero vector, only W_align^s sees a (zero) gradient
            let _ = ch.align.backward(&self.params, &enc.h_s, dz_s, grads);
        }

        let dstates = aggregate_backward(cfg.agg, tr.ctx.states.len(), cfg.hidden, &tr.argmax, &dh_c);
        self.context
            .encoder
            .backward(self, self.context.embedding, &note.char_ids, &tr.ctx, &dstates, grads);
    }

    /// Cross-entropy loss of one note; gradient accumulated into `grads`.
    pub fn loss_and_grad(&self, note: &Note, grads: &mut GradBuffer) -> Result<f64> {
        let tr = self.trace(note)?;
        let (loss, dlogits) = softmax_cross_entropy(&tr.encoded.logits, note.label)?;
        self.backward(note, &tr, &dlogits, grads);
        Ok(loss)
    }

    pub fn loss(&self, note: &Note) -> Result<f64> {
        let tr = self.trace(note)?;
        Ok(softmax_cross_entropy(&tr.encoded.logits, note.label)?.0)
    }

    /// Mean cross-entropy over `notes` and its gradient. Notes are processed
    /// in fixed chunks whose partial sums are combined in order, so the
    /// result does not depend on `par`.
    pub fn batch_gradient(&self, notes: &[&Note], par: Parallelism) -> Result<(f64, GradBuffer)> {
        if notes.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let parts = par.map_chunks(notes, GRAD_CHUNK, |chunk| -> Result<(f64, GradBuffer)> {
            let mut g = self.params.grad_buffer();
            let mut loss = 0.0;
            for n in chunk {
                loss += self.loss_and_grad(n, &mut g)?;
            }
            Ok((loss, g))
        });
        let mut total = 0.0;
        let mut grads: Option<GradBuffer> = None;
        for p in parts {
            let (l, g) = p?;
            total += l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.merge(&g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        let inv = 1.0 / notes.len() as f64;
        grads.scale(inv);
        Ok((total * inv, grads))
    }

    /// Per-entity states `h^s_m`, optionally passed through the entity
    /// alignment layer.
    pub fn entity_states(&self, note: &Note, aligned: bool) -> Result<Vec<Vec<f64>>> {
        let ch = self
            .entity
            .as_ref()
            .ok_or_else(|| Error::Config("model has no entity channel".into()))?;
        if note.entity_ids.is_empty() {
            return Ok(Vec::new());
        }
        let bi = ch.encoder.forward(self, ch.embedding, &note.entity_ids)?;
        if aligned {
            bi.states.iter().map(|s| ch.align(self, s)).collect()
        } else {
            Ok(bi.states)
        }
    }

    /// Predicted class (argmax over all classes seen so far).
    pub fn predict(&self, note: &Note) -> Result<usize> {
        let logits = self.encode(note)?.logits;
        if logits.is_empty() {
            return Err(Error::Stage("classifier has no classes yet".into()));
        }
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Notes per work unit in batch loops.
pub const GRAD_CHUNK: usize = 8;
