use super::*;
use crate::model::{DualEncoderModel, ModelConfig};
use crate::numeric::{Parallelism, ParamGroup, ParamStore, RngStream, Tensor2};
use crate::stream::{synthesize_stream, GeneratorSpec, Note, TaskStream};
use crate::Error;

const SEQ: Parallelism = Parallelism::Sequential;

fn note(chars: &[usize], entities: &[usize], label: usize) -> Note {
    Note {
        text: String::new(),
        char_ids: chars.to_vec(),
        entity_ids: entities.to_vec(),
        label,
        source_id: String::new(),
    }
}

fn model(classes: usize, seed: u64) -> DualEncoderModel {
    let cfg = ModelConfig {
        embed_dim: 4,
        hidden: 3,
        ..ModelConfig::default()
    };
    let mut rng = RngStream::new(seed);
    let mut m = DualEncoderModel::new(cfg, 6, 5, &mut rng).unwrap();
    m.expand_classifier(classes, &mut rng).unwrap();
    m
}

fn values(store: &ParamStore, pick: impl Fn(ParamGroup) -> bool) -> Vec<Tensor2> {
    store
        .slots()
        .iter()
        .filter(|s| pick(s.group))
        .map(|s| s.value.clone())
        .collect()
}

fn batch() -> Vec<Note> {
    vec![
        note(&[1, 2, 3], &[0, 1], 0),
        note(&[2, 2, 4, 5], &[2], 1),
        note(&[5, 1], &[], 2),
        note(&[3, 4, 4, 1, 1], &[3, 4, 0], 1),
    ]
}

fn small_stream(seed: u64) -> TaskStream {
    let spec = GeneratorSpec {
        num_classes: 6,
        num_tasks: 3,
        notes_per_class: 20,
        ..GeneratorSpec::default()
    };
    synthesize_stream(&spec, &mut RngStream::new(seed)).unwrap()
}

fn stream_model(stream: &TaskStream, seed: u64) -> DualEncoderModel {
    let cfg = ModelConfig {
        embed_dim: 4,
        hidden: 3,
        ..ModelConfig::default()
    };
    DualEncoderModel::new(cfg, stream.char_vocab.len(), stream.lexicon.len(), &mut RngStream::new(seed)).unwrap()
}

fn fast_config() -> E2mcConfig {
    E2mcConfig {
        lr_phase1: 0.1,
        lr_align_c: 0.01,
        lr_align_s: 0.01,
        batch_train: 16,
        batch_phase2: 8,
        budget: 5,
        replay_batch: 4,
        epochs_per_task: 1,
        ..E2mcConfig::default()
    }
}

#[test]
fn consolidation_zero_right_after_snapshot() {
    let m = model(3, 1);
    let snap = m.snapshot();
    for n in batch() {
        assert_eq!(consolidation_loss(&n, &m, Some(&snap)).unwrap(), (0.0, 0.0));
    }
}

#[test]
fn consolidation_without_snapshot_is_stage_error() {
    let m = model(3, 1);
    assert!(matches!(consolidation_loss(&batch()[0], &m, None), Err(Error::Stage(_))));
}

#[test]
fn consolidation_zero_entities_gives_zero_omega_s() {
    let mut m = model(3, 2);
    let snap = m.snapshot();
    for id in m.alignment_ids() {
        m.params_mut().get_mut(id).value.data_mut()[0] += 0.3;
    }
    let (oc, os) = consolidation_loss(&note(&[1, 2], &[], 0), &m, Some(&snap)).unwrap();
    assert!(oc > 0.0);
    assert_eq!(os, 0.0);
}

#[test]
fn consolidation_matches_direct_recomputation() {
    let mut m = model(3, 3);
    let n = note(&[1, 4, 2, 3], &[1, 2], 0);
    let snap = m.snapshot();
    let h_c = m.encode(&n).unwrap().h_c;
    let (r, j, delta) = (2, 4, 0.25);
    let id = m.alignment_ids()[0];
    let a = &mut m.params_mut().get_mut(id).value;
    let v = a.get(r, j);
    a.set(r, j, v + delta);
    // z = Aᵀh, so only coordinate j moves, by δ·h_r
    let want = (delta * h_c[r]).powi(2);
    let (oc, os) = consolidation_loss(&n, &m, Some(&snap)).unwrap();
    assert!((oc - want).abs() < 1e-15, "{oc} vs {want}");
    assert_eq!(os, 0.0);
}

#[test]
fn phase1_leaves_alignment_bit_identical() {
    let mut m = model(3, 4);
    for id in m.alignment_ids() {
        m.params_mut().get_mut(id).value.data_mut()[1] = 0.7;
    }
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    let align = values(m.params(), |g| g == ParamGroup::Alignment);
    let other = values(m.params(), |g| g != ParamGroup::Alignment);
    for _ in 0..5 {
        phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    }
    assert_eq!(values(m.params(), |g| g == ParamGroup::Alignment), align);
    assert_ne!(values(m.params(), |g| g != ParamGroup::Alignment), other);
}

#[test]
fn phase1_initial_loss_near_uniform() {
    let mut m = model(4, 5);
    let notes: Vec<Note> = (0..20).map(|i| note(&[i % 6, (i * 7) % 6, 2], &[i % 5], i % 4)).collect();
    let refs: Vec<&Note> = notes.iter().collect();
    let loss = phase1_step(&mut m, &refs, 0.01, None, SEQ).unwrap();
    assert!((loss - 4f64.ln()).abs() < 0.1, "{loss}");
}

#[test]
fn phase1_fits_separable_task() {
    let mut m = model(4, 6);
    // each class repeats its own character; entity id mirrors the class
    let notes: Vec<Note> = (0..4)
        .flat_map(|c| (0..3).map(move |len| note(&vec![c + 1; len + 2], &[c], c)))
        .collect();
    let refs: Vec<&Note> = notes.iter().collect();
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        last = phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    }
    assert!(last < 0.1, "{last}");
}

#[test]
fn phase1_rejects_empty_batch() {
    let mut m = model(2, 0);
    assert!(phase1_step(&mut m, &[], 0.1, None, SEQ).is_err());
}

#[test]
fn phase2_touches_only_alignment() {
    let mut m = model(3, 7);
    let snap = m.snapshot();
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    let align = values(m.params(), |g| g == ParamGroup::Alignment);
    let other = values(m.params(), |g| g != ParamGroup::Alignment);
    let (oc, os) = phase2_step(&mut m, &refs, &snap, 1.0, 1.0, 0.1, 0.1, SEQ).unwrap();
    assert!(oc > 0.0 && os > 0.0);
    assert_eq!(values(m.params(), |g| g != ParamGroup::Alignment), other);
    assert_ne!(values(m.params(), |g| g == ParamGroup::Alignment), align);
}

#[test]
fn phase2_with_zero_weights_is_a_no_op() {
    let mut m = model(3, 8);
    let snap = m.snapshot();
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    let before = values(m.params(), |_| true);
    phase2_step(&mut m, &refs, &snap, 0.0, 0.0, 0.1, 0.1, SEQ).unwrap();
    assert_eq!(values(m.params(), |_| true), before);
}

#[test]
fn phase2_descends_on_fixed_batch() {
    let mut m = model(3, 9);
    let snap = m.snapshot();
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    for _ in 0..10 {
        phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    }
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let (oc, os) = phase2_step(&mut m, &refs, &snap, 1.0, 0.5, 0.05, 0.05, SEQ).unwrap();
        let obj = oc + 0.5 * os;
        assert!(obj <= prev + 1e-9, "{obj} > {prev}");
        prev = obj;
    }
}

#[test]
fn phase2_gradient_matches_finite_differences() {
    let mut m = model(3, 10);
    let snap = m.snapshot();
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    for _ in 0..5 {
        phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    }
    let (alpha, beta) = (0.7, 1.3);
    let objective = |m: &DualEncoderModel| {
        let (oc, os, _, _) = phase2_gradient(m, &refs, &snap, alpha, beta, SEQ).unwrap();
        alpha * oc + beta * os
    };
    let (_, _, gc, gs) = phase2_gradient(&m, &refs, &snap, alpha, beta, SEQ).unwrap();
    let ids = m.alignment_ids();
    let eps = 1e-5;
    for (id, g) in ids.iter().zip([gc, gs.unwrap()]) {
        for i in 0..g.len() {
            let orig = m.params().value(*id).data()[i];
            m.params_mut().get_mut(*id).value.data_mut()[i] = orig + eps;
            let up = objective(&m);
            m.params_mut().get_mut(*id).value.data_mut()[i] = orig - eps;
            let down = objective(&m);
            m.params_mut().get_mut(*id).value.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = g.data()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-3), "{i}: {a} vs {fd}");
        }
    }
}

#[test]
fn phase2_without_entity_channel_updates_context_alignment_only() {
    let cfg = ModelConfig {
        embed_dim: 3,
        hidden: 2,
        use_entities: false,
        ..ModelConfig::default()
    };
    let mut rng = RngStream::new(0);
    let mut m = DualEncoderModel::new(cfg, 6, 0, &mut rng).unwrap();
    m.expand_classifier(3, &mut rng).unwrap();
    let snap = m.snapshot();
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    phase1_step(&mut m, &refs, 0.5, None, SEQ).unwrap();
    let (oc, os) = phase2_step(&mut m, &refs, &snap, 1.0, 1.0, 0.1, 0.1, SEQ).unwrap();
    assert!(oc > 0.0);
    assert_eq!(os, 0.0);
}

#[test]
fn clipping_bounds_the_norm() {
    let m = model(3, 11);
    let notes = batch();
    let refs: Vec<&Note> = notes.iter().collect();
    let (_, mut g) = phase1_gradient(&m, &refs, SEQ).unwrap();
    let n = grad_norm(&g);
    clip_global_norm(&mut g, n / 2.0);
    assert!((grad_norm(&g) - n / 2.0).abs() < 1e-12);
}

#[derive(Default)]
struct Recorder {
    records: Vec<StepRecord>,
}

impl TrainObserver for Recorder {
    fn after_step(&mut self, _m: &DualEncoderModel, r: &StepRecord) -> crate::Result<()> {
        self.records.push(r.clone());
        Ok(())
    }
}

#[test]
fn first_stage_has_no_replay_or_phase2() {
    let stream = small_stream(1);
    let mut m = stream_model(&stream, 1);
    let mut learner = E2mcLearner::new(fast_config(), SEQ).unwrap();
    let mut rec = Recorder::default();
    let d = learner.train_stage(&mut m, &stream, 1, &mut rec).unwrap();
    assert!(rec.records.iter().all(|r| r.phase == Phase::One));
    assert!(learner.snapshot().is_some());
    assert_eq!(d.memory_size, 5);
    assert!(d.omega_probe.is_none());
    assert_eq!(m.num_classes(), stream.task(1).labels.len());
}

#[test]
fn later_stages_interleave_phases_and_probe_decreases() {
    let stream = small_stream(2);
    let mut m = stream_model(&stream, 2);
    let mut learner = E2mcLearner::new(fast_config(), SEQ).unwrap();
    learner.train_stage(&mut m, &stream, 1, &mut ()).unwrap();
    let mut rec = Recorder::default();
    let d = learner.train_stage(&mut m, &stream, 2, &mut rec).unwrap();
    let phases: Vec<Phase> = rec.records.iter().map(|r| r.phase).collect();
    assert_eq!(phases.len(), d.steps);
    for pair in phases.chunks(2) {
        assert_eq!(pair, [Phase::One, Phase::Two]);
    }
    let (before, after) = d.omega_probe.unwrap();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(d.memory_size, 10);
}

#[test]
fn end_of_task_schedule_runs_phase2_last() {
    let stream = small_stream(3);
    let mut m = stream_model(&stream, 3);
    let cfg = E2mcConfig {
        schedule: Phase2Schedule::EndOfTask,
        ..fast_config()
    };
    let mut learner = E2mcLearner::new(cfg, SEQ).unwrap();
    learner.train_stage(&mut m, &stream, 1, &mut ()).unwrap();
    let mut rec = Recorder::default();
    learner.train_stage(&mut m, &stream, 2, &mut rec).unwrap();
    let first_two = rec.records.iter().position(|r| r.phase == Phase::Two).unwrap();
    assert!(first_two > 0);
    assert!(rec.records[first_two..].iter().all(|r| r.phase == Phase::Two));
}

#[test]
fn stages_must_run_in_order() {
    let stream = small_stream(4);
    let mut m = stream_model(&stream, 4);
    let mut learner = E2mcLearner::new(fast_config(), SEQ).unwrap();
    assert!(matches!(learner.train_stage(&mut m, &stream, 2, &mut ()), Err(Error::Stage(_))));
    assert!(learner.train_stage(&mut m, &stream, 4, &mut ()).is_err());
}

#[test]
fn memory_accounting_over_stream() {
    let stream = small_stream(5);
    let mut m = stream_model(&stream, 5);
    let mut learner = E2mcLearner::new(fast_config(), SEQ).unwrap();
    for k in 1..=3 {
        let d = learner.train_stage(&mut m, &stream, k, &mut ()).unwrap();
        assert_eq!(d.memory_size, 5 * k);
    }
}

#[test]
fn parallel_and_sequential_training_agree() {
    let stream = small_stream(6);
    let run = |par| {
        let mut m = stream_model(&stream, 6);
        let mut learner = E2mcLearner::new(fast_config(), par).unwrap();
        for k in 1..=2 {
            learner.train_stage(&mut m, &stream, k, &mut ()).unwrap();
        }
        values(m.params(), |_| true)
    };
    assert_eq!(run(Parallelism::Sequential), run(Parallelism::Rayon));
}

#[test]
fn training_log_rows() {
    let stream = small_stream(7);
    let mut m = stream_model(&stream, 7);
    let mut learner = E2mcLearner::new(fast_config(), SEQ).unwrap();
    let mut log = TrainingLog::new(Vec::new()).unwrap();
    learner.train_stage(&mut m, &stream, 1, &mut log).unwrap();
    learner.train_stage(&mut m, &stream, 2, &mut log).unwrap();
    let text = String::from_utf8(log.into_inner().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "stage,epoch,step,phase,loss,omega_c,omega_s");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 7));
    assert!(rows.iter().any(|r| r[0] == "1" && r[3] == "1" && r[5].is_empty()));
    assert!(rows.iter().any(|r| r[0] == "2" && r[3] == "2" && !r[5].is_empty()));
}
