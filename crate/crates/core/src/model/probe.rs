use super::{AggMode, DualEncoderModel, EntityFusion, ModelConfig};
use crate::numeric::{check_all, Differentiable, GradBuffer, GradCheckReport, Parallelism, ParamStore, Probe, RngStream};
use crate::stream::Note;

/// Mean cross-entropy of a fixed batch as a function of all model weights.
pub struct ModelProbe {
    pub model: DualEncoderModel,
    pub notes: Vec<Note>,
}

impl ModelProbe {
    /// A tiny random model with perturbed alignment layers and a batch that
    /// covers notes with zero, one and several entities.
    pub fn random(config: ModelConfig, rng: &mut RngStream) -> Self {
        let (chars, entities, classes) = (6, 5, 3);
        let mut model = DualEncoderModel::new(config, chars, entities, rng).expect("valid probe config");
        model.expand_classifier(classes, rng).expect("positive");
        for id in model.alignment_ids() {
            for v in model.params_mut().get_mut(id).value.data_mut() {
                *v += rng.uniform(-0.3, 0.3);
            }
        }
        let notes = [0usize, 1, 3, 2]
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let len = 2 + rng.index(4);
                Note {
                    text: String::new(),
                    char_ids: (0..len).map(|_| rng.index(chars)).collect(),
                    entity_ids: (0..m).map(|_| rng.index(entities)).collect(),
                    label: i % classes,
                    source_id: format!("probe-{i}"),
                }
            })
            .collect();
        Self { model, notes }
    }
}

impl Differentiable for ModelProbe {
    fn params(&self) -> &ParamStore {
        self.model.params()
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        self.model.params_mut()
    }
    fn loss(&self) -> f64 {
        let refs: Vec<&Note> = self.notes.iter().collect();
        self.model.batch_gradient(&refs, Parallelism::Sequential).expect("probe batch").0
    }
    fn gradient(&self) -> GradBuffer {
        let refs: Vec<&Note> = self.notes.iter().collect();
        self.model.batch_gradient(&refs, Parallelism::Sequential).expect("probe batch").1
    }
}

/// Every model configuration exercised by the full-model gradient check.
pub fn probe_configs() -> Vec<(String, ModelConfig)> {
    let mut out = Vec::new();
    for agg in [AggMode::MeanPool, AggMode::MaxPool, AggMode::ConcatEnds] {
        for (tag, use_entities, fusion) in [
            ("attention", true, EntityFusion::Attention),
            ("uniform", true, EntityFusion::Uniform),
            ("no-entity", false, EntityFusion::Attention),
        ] {
            let cfg = ModelConfig {
                embed_dim: 3,
                hidden: 2,
                agg,
                use_entities,
                fusion,
            };
            out.push((format!("model/{agg:?}/{tag}"), cfg));
        }
    }
    out
}

/// One random full-model probe per configuration for `seed`.
pub fn model_probes(seed: u64) -> Vec<Probe> {
    probe_configs()
        .into_iter()
        .enumerate()
        .map(|(i, (name, cfg))| {
            let mut rng = RngStream::new(seed).derive("gradcheck.model", &[i as u64]);
            let probe: Box<dyn Differentiable + Send> = Box::new(ModelProbe::random(cfg, &mut rng));
            (name, probe)
        })
        .collect()
}

/// Finite-difference reports for the full model in every configuration.
pub fn model_suite(seed: u64, epsilon: f64, tolerance: f64) -> Vec<(String, GradCheckReport)> {
    check_all(model_probes(seed), epsilon, tolerance)
}
