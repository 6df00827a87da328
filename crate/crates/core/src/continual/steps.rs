use crate::error::{Error, Result};
use crate::model::{DualEncoderModel, EncoderSnapshot};
use crate::numeric::{norm, sgd_step, squared_distance, GradBuffer, Parallelism, ParamGroup, Tensor2};
use crate::stream::Note;

/// Freezes exactly the alignment layers.
pub fn freeze_alignment(model: &mut DualEncoderModel) {
    model.params_mut().freeze_where(|g| g == ParamGroup::Alignment);
}

/// Freezes everything except the alignment layers.
pub fn freeze_all_but_alignment(model: &mut DualEncoderModel) {
    model.params_mut().freeze_where(|g| g != ParamGroup::Alignment);
}

/// Mean cross-entropy over `batch` and its gradient with the alignment
/// gradient zeroed.
pub fn phase1_gradient(model: &DualEncoderModel, batch: &[&Note], par: Parallelism) -> Result<(f64, GradBuffer)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("phase-1 batch"));
    }
    let (loss, mut grads) = model.batch_gradient(batch, par)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            slot: "loss".into(),
            what: "cross-entropy",
        });
    }
    for id in model.alignment_ids() {
        grads.get_mut(id).fill(0.0);
    }
    Ok((loss, grads))
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut GradBuffer, max_norm: f64) {
    let total: f64 = grads.0.iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum();
    let n = total.sqrt();
    if n > max_norm {
        grads.scale(max_norm / n);
    }
}

/// One SGD step on every non-alignment parameter.
pub fn apply_phase1(model: &mut DualEncoderModel, grads: &GradBuffer, lr: f64, clip: Option<f64>) -> Result<()> {
    freeze_alignment(model);
    let params = model.params_mut();
    match clip {
        Some(c) => {
            let mut g = grads.clone();
            clip_global_norm(&mut g, c);
            params.accumulate(&g, 1.0)?;
        }
        None => params.accumulate(grads, 1.0)?,
    }
    sgd_step(params.slots_mut(), lr)
}

/// Cross-entropy step with the alignment layers frozen; returns the mean
/// loss before the update.
pub fn phase1_step(
    model: &mut DualEncoderModel,
    batch: &[&Note],
    lr: f64,
    clip: Option<f64>,
    par: Parallelism,
) -> Result<f64> {
    let (loss, grads) = phase1_gradient(model, batch, par)?;
    apply_phase1(model, &grads, lr, clip)?;
    Ok(loss)
}

/// `(‖z^c − z^c_old‖², ‖z^s − z^s_old‖²)` for one note.
pub fn consolidation_loss(note: &Note, model: &DualEncoderModel, snapshot: Option<&EncoderSnapshot>) -> Result<(f64, f64)> {
    let snap = snapshot.ok_or_else(|| Error::Stage("consolidation needs a snapshot from a previous stage".into()))?;
    let cur = model.encode(note)?;
    let (zc_old, zs_old) = snap.embed(note)?;
    Ok((squared_distance(&cur.z_c, &zc_old), squared_distance(&cur.z_s, &zs_old)))
}

struct Phase2Partial {
    omega_c: f64,
    omega_s: f64,
    grad_c: Tensor2,
    grad_s: Option<Tensor2>,
}

/// Mean `(Ω_c, Ω_s)` over `batch` and the gradients of
/// `mean(α Ω_c + β Ω_s)` with respect to the two alignment matrices.
pub fn phase2_gradient(
    model: &DualEncoderModel,
    batch: &[&Note],
    snapshot: &EncoderSnapshot,
    alpha: f64,
    beta: f64,
    par: Parallelism,
) -> Result<(f64, f64, Tensor2, Option<Tensor2>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("phase-2 batch"));
    }
    let dim = model.config().channel_dim();
    let has_entities = model.has_entity_channel();
    let inv = 1.0 / batch.len() as f64;
    let parts = par.map_chunks(batch, crate::model::GRAD_CHUNK, |chunk| -> Result<Phase2Partial> {
        let mut p = Phase2Partial {
            omega_c: 0.0,
            omega_s: 0.0,
            grad_c: Tensor2::zeros(dim, dim),
            grad_s: has_entities.then(|| Tensor2::zeros(dim, dim)),
        };
        for note in chunk {
            let cur = model.encode(note)?;
            let (zc_old, zs_old) = snapshot.embed(note)?;
            let dc: Vec<f64> = cur.z_c.iter().zip(&zc_old).map(|(a, b)| a - b).collect();
            p.omega_c += dc.iter().map(|v| v * v).sum::<f64>();
            p.grad_c.add_outer(2.0 * alpha * inv, &cur.h_c, &dc);
            if let Some(gs) = p.grad_s.as_mut() {
                let ds: Vec<f64> = cur.z_s.iter().zip(&zs_old).map(|(a, b)| a - b).collect();
                p.omega_s += ds.iter().map(|v| v * v).sum::<f64>();
                gs.add_outer(2.0 * beta * inv, &cur.h_s, &ds);
            }
        }
        Ok(p)
    });
    let mut omega_c = 0.0;
    let mut omega_s = 0.0;
    let mut grad_c = Tensor2::zeros(dim, dim);
    let mut grad_s = has_entities.then(|| Tensor2::zeros(dim, dim));
    for p in parts {
        let p = p?;
        omega_c += p.omega_c;
        omega_s += p.omega_s;
        grad_c.add_scaled(1.0, &p.grad_c)?;
        if let (Some(acc), Some(g)) = (grad_s.as_mut(), p.grad_s.as_ref()) {
            acc.add_scaled(1.0, g)?;
        }
    }
    Ok((omega_c * inv, omega_s * inv, grad_c, grad_s))
}

/// Alignment-only step on `mean(α Ω_c + β Ω_s)`; returns mean `(Ω_c, Ω_s)`
/// before the update. No other parameter is written.
#[allow(clippy::too_many_arguments)]
pub fn phase2_step(
    model: &mut DualEncoderModel,
    batch: &[&Note],
    snapshot: &EncoderSnapshot,
    alpha: f64,
    beta: f64,
    lr_c: f64,
    lr_s: f64,
    par: Parallelism,
) -> Result<(f64, f64)> {
    let (oc, os, gc, gs) = phase2_gradient(model, batch, snapshot, alpha, beta, par)?;
    if !(oc.is_finite() && os.is_finite()) {
        return Err(Error::Divergence {
            slot: "consolidation".into(),
            what: "loss",
        });
    }
    let ids = model.alignment_ids();
    let updates = std::iter::once((ids[0], gc, lr_c)).chain(gs.map(|g| (ids[1], g, lr_s)));
    let updates: Vec<_> = updates.collect();
    for (id, g, _) in &updates {
        if !g.is_finite() {
            return Err(Error::Divergence {
                slot: model.params().get(*id).name.clone(),
                what: "gradient",
            });
        }
    }
    for (id, g, lr) in updates {
        model.params_mut().get_mut(id).value.add_scaled(-lr, &g)?;
    }
    Ok((oc, os))
}

/// L2 norm of a flattened gradient buffer.
pub fn grad_norm(grads: &GradBuffer) -> f64 {
    let flat: Vec<f64> = grads.0.iter().flat_map(|t| t.data().iter().copied()).collect();
    norm(&flat)
}
