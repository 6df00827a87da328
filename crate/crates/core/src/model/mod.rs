//! The dual-channel classifier: a character-level BiLSTM context encoder, a
//! BiLSTM sub-entity encoder fused by context-to-entity cosine attention, one
//! square alignment layer per channel and a classifier whose rows grow as new
//! classes arrive.

mod checkpoint;
mod forward;
mod probe;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use forward::{cosine_attention, EncodedNote, NoteTrace, GRAD_CHUNK};
pub use probe::{model_probes, model_suite, probe_configs, ModelProbe};

use crate::error::{Error, Result};
use crate::numeric::layers::init_uniform;
use crate::numeric::{Linear, Lstm, ParamGroup, ParamId, ParamSlot, ParamStore, RngStream, Tensor2};

/// How per-step context states are pooled into one vector. Every mode yields
/// a vector of width `2·hidden`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggMode {
    /// Final forward state next to final backward state.
    ConcatEnds,
    MaxPool,
    #[default]
    MeanPool,
}

impl std::str::FromStr for AggMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat-ends" | "concat" => Ok(AggMode::ConcatEnds),
            "max-pool" | "max" => Ok(AggMode::MaxPool),
            "mean-pool" | "mean" => Ok(AggMode::MeanPool),
            _ => Err(Error::Config(format!(
                "unknown aggregation `{s}`; expected concat-ends, max-pool or mean-pool"
            ))),
        }
    }
}

/// How entity states are combined into the fused entity vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityFusion {
    /// Softmax over cosine similarity to the context vector.
    #[default]
    Attention,
    /// Plain average; every entity weighs `1/M`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub agg: AggMode,
    /// `false` drops the entity channel entirely.
    pub use_entities: bool,
    pub fusion: EntityFusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden: 16,
            agg: AggMode::MeanPool,
            use_entities: true,
            fusion: EntityFusion::Attention,
        }
    }
}

impl ModelConfig {
    /// Width of each channel's aggregated (and aligned) embedding.
    pub fn channel_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Width of the classifier input.
    pub fn classifier_dim(&self) -> usize {
        if self.use_entities {
            2 * self.channel_dim()
        } else {
            self.channel_dim()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Channel {
    pub embedding: ParamId,
    pub encoder: BiLstm,
    pub align: Linear,
}

impl Channel {
    fn new(store: &mut ParamStore, name: &str, vocab: usize, cfg: &ModelConfig, rng: &mut RngStream) -> Self {
        let emb = init_uniform(vocab, cfg.embed_dim, 1, rng);
        let embedding = store.push(ParamSlot::new(format!("{name}.embedding"), ParamGroup::Embedding, emb));
        let fwd = Lstm::new(store, &format!("{name}.lstm_fwd"), ParamGroup::Encoder, cfg.embed_dim, cfg.hidden, rng);
        let bwd = Lstm::new(store, &format!("{name}.lstm_bwd"), ParamGroup::Encoder, cfg.embed_dim, cfg.hidden, rng);
        Self {
            embedding,
            encoder: BiLstm { fwd, bwd },
            align: Linear {
                weight: ParamId(usize::MAX),
                bias: None,
            },
        }
    }
}

/// All trainable parameters of the classifier plus the layout needed to run
/// it. A model is single-writer; clones are independent.
#[derive(Clone, Debug)]
pub struct DualEncoderModel {
    config: ModelConfig,
    char_vocab: usize,
    entity_vocab: usize,
    params: ParamStore,
    pub(crate) context: Channel,
    pub(crate) entity: Option<Channel>,
    pub(crate) classifier: ParamId,
}

impl DualEncoderModel {
    pub fn new(config: ModelConfig, char_vocab: usize, entity_vocab: usize, rng: &mut RngStream) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("embed_dim and hidden must be positive".into()));
        }
        if char_vocab == 0 {
            return Err(Error::Config("character vocabulary is empty".into()));
        }
        if config.use_entities && entity_vocab == 0 {
            return Err(Error::Config("entity channel requires a non-empty entity vocabulary".into()));
        }
        let mut params = ParamStore::new();
        let mut context = Channel::new(&mut params, "context", char_vocab, &config, rng);
        let mut entity = config
            .use_entities
            .then(|| Channel::new(&mut params, "entity", entity_vocab, &config, rng));
        let dim = config.channel_dim();
        context.align.weight = params.push(ParamSlot::new("context.align", ParamGroup::Alignment, Tensor2::identity(dim)));
        if let Some(e) = entity.as_mut() {
            e.align.weight = params.push(ParamSlot::new("entity.align", ParamGroup::Alignment, Tensor2::identity(dim)));
        }
        let classifier = params.push(ParamSlot::new(
            "classifier",
            ParamGroup::Classifier,
            Tensor2::zeros(0, config.classifier_dim()),
        ));
        Ok(Self {
            config,
            char_vocab,
            entity_vocab: if entity.is_some() { entity_vocab } else { 0 },
            params,
            context,
            entity,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn char_vocab_size(&self) -> usize {
        self.char_vocab
    }

    pub fn entity_vocab_size(&self) -> usize {
        self.entity_vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Current classifier width `|Y_{:k}|`.
    pub fn num_classes(&self) -> usize {
        self.params.value(self.classifier).rows()
    }

    pub fn has_entity_channel(&self) -> bool {
        self.entity.is_some()
    }

    /// Ids of the alignment weights (context first).
    pub fn alignment_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.context.align.weight)
            .chain(self.entity.map(|e| e.align.weight))
            .collect()
    }

    pub fn context_alignment(&self) -> &Tensor2 {
        self.params.value(self.context.align.weight)
    }

    pub fn entity_alignment(&self) -> Option<&Tensor2> {
        self.entity.map(|e| self.params.value(e.align.weight))
    }

    pub fn classifier_weights(&self) -> &Tensor2 {
        self.params.value(self.classifier)
    }

    /// Appends `new_labels` freshly initialised classifier rows; existing rows
    /// are left untouched.
    pub fn expand_classifier(&mut self, new_labels: usize, rng: &mut RngStream) -> Result<()> {
        if new_labels == 0 {
            return Err(Error::Config("expand_classifier needs at least one new label".into()));
        }
        let dim = self.config.classifier_dim();
        let rows = init_uniform(new_labels, dim, dim, rng);
        let slot = self.params.get_mut(self.classifier);
        slot.value.append_rows(&rows)?;
        slot.grad = Tensor2::zeros(slot.value.rows(), dim);
        Ok(())
    }

    /// Frozen copy of everything needed to recompute `z^c` and `z^s`; the
    /// classifier is not part of it.
    pub fn snapshot(&self) -> EncoderSnapshot {
        let mut model = self.clone();
        let dim = model.config.classifier_dim();
        let slot = model.params.get_mut(model.classifier);
        slot.value = Tensor2::zeros(0, dim);
        slot.grad = Tensor2::zeros(0, dim);
        for s in model.params.slots_mut() {
            s.frozen = true;
        }
        EncoderSnapshot { model }
    }

    /// Replaces every parameter value (not the layout) from `other`.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::dim("load_values_from", self.params.len(), other.len()));
        }
        for (dst, src) in self.params.slots_mut().iter_mut().zip(other.slots()) {
            if dst.name != src.name {
                return Err(Error::Checkpoint(format!("parameter `{}` vs `{}`", dst.name, src.name)));
            }
            dst.value = src.value.clone();
            dst.grad = Tensor2::zeros(src.value.rows(), src.value.cols());
        }
        Ok(())
    }
}

/// Read-only copy of a model's encoders and alignment layers taken at a stage
/// boundary. It can embed notes but exposes no gradient path.
#[derive(Clone, Debug)]
pub struct EncoderSnapshot {
    model: DualEncoderModel,
}

impl EncoderSnapshot {
    /// `(z^c, z^s)` under the frozen parameters; `z^s` is empty without an
    /// entity channel.
    pub fn embed(&self, note: &crate::stream::Note) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.model.encode(note)?;
        Ok((e.z_c, e.z_s))
    }

    pub fn encode(&self, note: &crate::stream::Note) -> Result<EncodedNote> {
        self.model.encode(note)
    }

    pub fn params(&self) -> &ParamStore {
        self.model.params()
    }
}
