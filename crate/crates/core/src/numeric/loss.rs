use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// `−log softmax(logits)[label]` and its gradient `softmax(logits) − onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index {
            what: "logits",
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = (log_z - logits[label]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, _) = softmax_cross_entropy(&[0.3; 4], 1).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn extreme_logits_are_stable() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn hand_evaluated_loss() {
        // −log(e³ / (e¹ + e² + e³))
        let (loss, grad) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((loss - 0.40761).abs() < 1e-5);
        let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let z: f64 = e.iter().sum();
        assert!((grad[0] - e[0] / z).abs() < 1e-14);
        assert!((grad[2] - (e[2] / z - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::Index { index: 2, len: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn probabilities_normalised(logits in prop::collection::vec(-50.0f64..50.0, 1..12), pick in 0usize..12) {
            let label = pick % logits.len();
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
            prop_assert!(loss >= 0.0);
            // gradient sums to zero because probabilities sum to one
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
