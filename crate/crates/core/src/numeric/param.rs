use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{Error, Result};

/// Coarse role of a parameter tensor; freeze plans are expressed per group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    Encoder,
    Alignment,
    Classifier,
}

/// Index of a slot inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub frozen: bool,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            group,
            value,
            grad: Tensor2::zeros(r, c),
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Flat, ordered collection of parameter slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<ParamSlot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, slot: ParamSlot) -> ParamId {
        self.slots.push(slot);
        ParamId(self.slots.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &ParamSlot {
        &self.slots[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamSlot {
        &mut self.slots[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.slots[id.0].value
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [ParamSlot] {
        &mut self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// Sets `frozen` on every slot: frozen iff `freeze(group)`.
    pub fn freeze_where(&mut self, freeze: impl Fn(ParamGroup) -> bool) {
        for s in &mut self.slots {
            s.frozen = freeze(s.group);
        }
    }

    pub fn zero_grads(&mut self) {
        self.slots.iter_mut().for_each(ParamSlot::zero_grad);
    }

    /// A zeroed gradient buffer with one tensor per slot.
    pub fn grad_buffer(&self) -> GradBuffer {
        GradBuffer(
            self.slots
                .iter()
                .map(|s| Tensor2::zeros(s.value.rows(), s.value.cols()))
                .collect(),
        )
    }

    /// Adds `scale · buffer` into the slots' gradients.
    pub fn accumulate(&mut self, buffer: &GradBuffer, scale: f64) -> Result<()> {
        if buffer.0.len() != self.slots.len() {
            return Err(Error::dim("ParamStore::accumulate", self.slots.len(), buffer.0.len()));
        }
        for (slot, g) in self.slots.iter_mut().zip(&buffer.0) {
            slot.grad.add_scaled(scale, g)?;
        }
        Ok(())
    }
}

/// Per-slot gradient tensors, laid out like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer(pub Vec<Tensor2>);

impl GradBuffer {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.0[id.0]
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.0[id.0]
    }

    /// Element-wise `self += other`; layouts must match.
    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            super::axpy(1.0, b.data(), a.data_mut());
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|t| t.scale(alpha));
    }
}
