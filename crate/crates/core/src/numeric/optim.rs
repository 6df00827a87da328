use super::ParamSlot;
use crate::error::{Error, Result};

/// Plain SGD: `value ← value − lr·grad` on every non-frozen slot, then all
/// gradients are zeroed. Nothing is written if any live gradient is non-finite.
pub fn sgd_step(slots: &mut [ParamSlot], learning_rate: f64) -> Result<()> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {learning_rate}")));
    }
    if let Some(bad) = slots.iter().find(|s| !s.frozen && !s.grad.is_finite()) {
        return Err(Error::Divergence {
            slot: bad.name.clone(),
            what: "gradient",
        });
    }
    for slot in slots.iter_mut() {
        if !slot.frozen {
            super::axpy(-learning_rate, slot.grad.data(), slot.value.data_mut());
        }
        slot.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ParamGroup, Tensor2};

    fn slot(v: f64, g: f64) -> ParamSlot {
        let mut s = ParamSlot::new("p", ParamGroup::Encoder, Tensor2::from_vec(1, 1, vec![v]).unwrap());
        s.grad.set(0, 0, g);
        s
    }

    #[test]
    fn basic_update() {
        let mut s = [slot(1.0, 0.5)];
        sgd_step(&mut s, 0.1).unwrap();
        assert!((s[0].value.get(0, 0) - 0.95).abs() < 1e-15);
        assert_eq!(s[0].grad.get(0, 0), 0.0);
    }

    #[test]
    fn frozen_slot_is_bit_identical() {
        let mut s = [slot(0.1234567, 123.0)];
        s[0].frozen = true;
        let before = s[0].value.get(0, 0).to_bits();
        sgd_step(&mut s, 0.7).unwrap();
        assert_eq!(s[0].value.get(0, 0).to_bits(), before);
    }

    #[test]
    fn zero_rate_is_noop() {
        let mut s = [slot(2.5, 3.0)];
        sgd_step(&mut s, 0.0).unwrap();
        s[0].grad.set(0, 0, -1.0);
        sgd_step(&mut s, 0.0).unwrap();
        assert_eq!(s[0].value.get(0, 0), 2.5);
    }

    #[test]
    fn non_finite_gradient_names_slot() {
        let mut s = [slot(1.0, 0.0), slot(1.0, f64::NAN)];
        s[1].name = "clf".into();
        let err = sgd_step(&mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { ref slot, .. } if slot == "clf"));
        assert_eq!(s[0].value.get(0, 0), 1.0);
    }
}
