use super::{run_epochs, BaselineConfig};
use crate::continual::{begin_stage, phase1_gradient, ContinualLearner, E2mcConfig, StageDiagnostics, TrainObserver};
use crate::error::{Error, Result};
use crate::model::DualEncoderModel;
use crate::numeric::{GradBuffer, Parallelism, ParamStore, RngStream, Tensor2};
use crate::stream::{Note, TaskStream};

fn check_shapes(params: &ParamStore, fisher: &[Tensor2], anchor: &[Tensor2]) -> Result<()> {
    if fisher.len() != params.len() || anchor.len() != params.len() {
        return Err(Error::dim(
            "ewc state",
            format!("{} tensors", params.len()),
            format!("{} fisher / {} anchor", fisher.len(), anchor.len()),
        ));
    }
    for ((slot, f), a) in params.slots().iter().zip(fisher).zip(anchor) {
        let shape = slot.value.shape();
        if f.shape() != shape || a.shape() != shape {
            return Err(Error::dim(
                "ewc state",
                format!("{} {:?}", slot.name, shape),
                format!("fisher {:?} / anchor {:?}", f.shape(), a.shape()),
            ));
        }
    }
    Ok(())
}

/// `(λ/2) Σ_i F_i (θ_i − θ*_i)²`.
pub fn ewc_penalty(params: &ParamStore, fisher: &[Tensor2], anchor: &[Tensor2], lambda: f64) -> Result<f64> {
    check_shapes(params, fisher, anchor)?;
    let mut total = 0.0;
    for ((slot, f), a) in params.slots().iter().zip(fisher).zip(anchor) {
        for ((v, f), a) in slot.value.data().iter().zip(f.data()).zip(a.data()) {
            let d = v - a;
            total += f * d * d;
        }
    }
    Ok(0.5 * lambda * total)
}

/// `λ F_i (θ_i − θ*_i)` laid out like `params`.
pub fn ewc_gradient(params: &ParamStore, fisher: &[Tensor2], anchor: &[Tensor2], lambda: f64) -> Result<GradBuffer> {
    check_shapes(params, fisher, anchor)?;
    let mut g = params.grad_buffer();
    for (i, slot) in params.slots().iter().enumerate() {
        let out = g.0[i].data_mut();
        for (j, (v, (f, a))) in slot.value.data().iter().zip(fisher[i].data().iter().zip(anchor[i].data())).enumerate() {
            out[j] = lambda * f * (v - a);
        }
    }
    Ok(g)
}

/// Diagonal empirical Fisher: the mean over `notes` of squared per-note
/// log-likelihood gradients.
pub fn estimate_fisher(model: &DualEncoderModel, notes: &[&Note], par: Parallelism) -> Result<Vec<Tensor2>> {
    if notes.is_empty() {
        return Err(Error::EmptyInput("fisher sample"));
    }
    let parts = par.map_chunks(notes, crate::model::GRAD_CHUNK, |chunk| -> Result<GradBuffer> {
        let mut acc = model.params().grad_buffer();
        for n in chunk {
            let mut g = model.params().grad_buffer();
            model.loss_and_grad(n, &mut g)?;
            for (a, t) in acc.0.iter_mut().zip(&g.0) {
                for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                    *x += y * y;
                }
            }
        }
        Ok(acc)
    });
    let mut total = model.params().grad_buffer();
    for p in parts {
        total.merge(&p?);
    }
    total.scale(1.0 / notes.len() as f64);
    Ok(total.0)
}

fn pad_rows(t: &Tensor2, rows: usize) -> Result<Tensor2> {
    let mut out = t.clone();
    if rows > t.rows() {
        out.append_rows(&Tensor2::zeros(rows - t.rows(), t.cols()))?;
    }
    Ok(out)
}

/// Accumulated Fisher diagonal and the parameters at the latest task end.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub fisher: Vec<Tensor2>,
    pub anchor: Vec<Tensor2>,
}

impl EwcState {
    /// Zero-pads tensors that grew rows since capture (new classifier rows
    /// carry no importance).
    pub fn pad_to(&mut self, params: &ParamStore) -> Result<()> {
        for (i, slot) in params.slots().iter().enumerate() {
            if let (Some(f), Some(a)) = (self.fisher.get(i), self.anchor.get(i)) {
                let rows = slot.value.rows();
                self.fisher[i] = pad_rows(f, rows)?;
                self.anchor[i] = pad_rows(a, rows)?;
            }
        }
        Ok(())
    }
}

/// Cross-entropy plus the EWC quadratic penalty around the previous tasks'
/// parameters.
#[derive(Clone, Debug)]
pub struct EwcLearner {
    config: E2mcConfig,
    baseline: BaselineConfig,
    rng: RngStream,
    par: Parallelism,
    state: Option<EwcState>,
}

impl EwcLearner {
    pub fn new(config: E2mcConfig, baseline: BaselineConfig, par: Parallelism) -> Self {
        Self {
            rng: RngStream::new(config.seed).derive("train", &[]),
            config,
            baseline,
            par,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&EwcState> {
        self.state.as_ref()
    }
}

impl ContinualLearner for EwcLearner {
    fn train_stage(
        &mut self,
        model: &mut DualEncoderModel,
        stream: &TaskStream,
        k: usize,
        observer: &mut dyn TrainObserver,
    ) -> Result<StageDiagnostics> {
        begin_stage(model, stream, k, &self.rng)?;
        if let Some(s) = self.state.as_mut() {
            s.pad_to(model.params())?;
        }
        let task = stream.task(k);
        let train: Vec<&Note> = task.train.iter().collect();
        let (par, lambda, state) = (self.par, self.baseline.ewc_lambda, self.state.clone());
        let steps = run_epochs(model, &train, k, &self.config, &self.rng, observer, |m, b, _| {
            let (mut loss, mut g) = phase1_gradient(m, b, par)?;
            if let Some(s) = &state {
                loss += ewc_penalty(m.params(), &s.fisher, &s.anchor, lambda)?;
                g.merge(&ewc_gradient(m.params(), &s.fisher, &s.anchor, lambda)?);
                for id in m.alignment_ids() {
                    g.get_mut(id).fill(0.0);
                }
            }
            Ok((loss, g))
        })?;

        let picked = self
            .rng
            .derive("fisher", &[k as u64])
            .sample_indices(task.train.len(), self.baseline.fisher_samples);
        let sample: Vec<&Note> = picked.into_iter().map(|i| &task.train[i]).collect();
        let fresh = estimate_fisher(model, &sample, self.par)?;
        let fisher = match self.state.take() {
            Some(mut s) => {
                for (acc, f) in s.fisher.iter_mut().zip(&fresh) {
                    acc.add_scaled(1.0, f)?;
                }
                s.fisher
            }
            None => fresh,
        };
        let anchor = model.params().slots().iter().map(|s| s.value.clone()).collect();
        self.state = Some(EwcState { fisher, anchor });
        Ok(StageDiagnostics {
            stage: k,
            steps,
            ..StageDiagnostics::default()
        })
    }
}
