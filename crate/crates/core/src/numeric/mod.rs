//! Dense numeric primitives and the handful of trainable layers the encoder
//! needs, each with a hand-written backward pass.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod par;
pub mod param;
pub mod rng;
pub mod tensor;

pub use gradcheck::{check_all, finite_diff_check, layer_probes, layer_suite, Differentiable, FaultInjected, GradCheckReport, Probe};
pub use layers::{Linear, Lstm, LstmTrace};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::sgd_step;
pub use par::Parallelism;
pub use param::{GradBuffer, ParamGroup, ParamId, ParamSlot, ParamStore};
pub use rng::RngStream;
pub use tensor::Tensor2;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Norm below which a vector is treated as zero when taking cosines.
pub const COSINE_EPS: f64 = 1e-12;

/// Cosine similarity, defined as 0 when either vector is (numerically) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_EPS || nb < COSINE_EPS {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
