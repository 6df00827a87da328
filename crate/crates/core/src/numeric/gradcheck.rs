//! Central finite-difference verification of analytic gradients.

use super::layers::init_uniform;
use super::{GradBuffer, Linear, Lstm, ParamGroup, ParamId, ParamSlot, ParamStore, RngStream};

/// A computation exposing a scalar loss as a function of its parameters.
pub trait Differentiable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self) -> f64;
    /// Analytic gradient of [`Differentiable::loss`], laid out like `params()`.
    fn gradient(&self) -> GradBuffer;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    /// Parameters whose max relative error exceeds the tolerance.
    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error.is_nan() || p.max_rel_error > self.tolerance).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Scale below which gradients are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Perturbs every scalar parameter by ±`epsilon` and compares
/// `(f(θ+ε) − f(θ−ε)) / 2ε` with the analytic gradient.
pub fn finite_diff_check<D: Differentiable + ?Sized>(module: &mut D, epsilon: f64, tolerance: f64) -> GradCheckReport {
    let analytic = module.gradient();
    let mut report = GradCheckReport {
        tolerance,
        params: Vec::new(),
    };
    for p in 0..module.params().len() {
        let n = module.params().slots()[p].value.len();
        let mut worst = (0.0, 0);
        for i in 0..n {
            let orig = module.params().slots()[p].value.data()[i];
            module.params_mut().slots_mut()[p].value.data_mut()[i] = orig + epsilon;
            let up = module.loss();
            module.params_mut().slots_mut()[p].value.data_mut()[i] = orig - epsilon;
            let down = module.loss();
            module.params_mut().slots_mut()[p].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(analytic.0[p].data()[i], numeric);
            if err.is_nan() || err > worst.0 {
                worst = (err, i);
            }
        }
        report.params.push(ParamCheck {
            name: module.params().slots()[p].name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    report
}

/// Wraps a module and corrupts its analytic gradient; used to verify that the
/// checker actually reports failures.
pub struct FaultInjected<D>(pub D);

impl<D: Differentiable> Differentiable for FaultInjected<D> {
    fn params(&self) -> &ParamStore {
        self.0.params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.0.params_mut()
    }

    fn loss(&self) -> f64 {
        self.0.loss()
    }

    fn gradient(&self) -> GradBuffer {
        let mut g = self.0.gradient();
        for t in &mut g.0 {
            for v in t.data_mut() {
                *v = *v * 1.01 + 1e-3;
            }
        }
        g
    }
}

/// Linear layer with bias under `L = Σ c_j y_j + ½‖y‖²`.
pub struct LinearProbe {
    store: ParamStore,
    layer: Linear,
    x: Vec<f64>,
    c: Vec<f64>,
}

impl LinearProbe {
    pub fn random(dim_in: usize, dim_out: usize, rng: &mut RngStream) -> Self {
        let mut store = ParamStore::new();
        let w = init_uniform(dim_in, dim_out, dim_in, rng);
        let b = init_uniform(1, dim_out, dim_in, rng);
        let weight = store.push(ParamSlot::new("linear.weight", ParamGroup::Encoder, w));
        let bias = Some(store.push(ParamSlot::new("linear.bias", ParamGroup::Encoder, b)));
        let x = (0..dim_in).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let c = (0..dim_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self {
            store,
            layer: Linear { weight, bias },
            x,
            c,
        }
    }

    fn output(&self) -> Vec<f64> {
        self.layer.forward(&self.store, &self.x).expect("probe shapes are consistent")
    }
}

impl Differentiable for LinearProbe {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn loss(&self) -> f64 {
        let y = self.output();
        y.iter().zip(&self.c).map(|(y, c)| c * y + 0.5 * y * y).sum()
    }
    fn gradient(&self) -> GradBuffer {
        let y = self.output();
        let dy: Vec<f64> = y.iter().zip(&self.c).map(|(y, c)| c + y).collect();
        let mut g = self.store.grad_buffer();
        self.layer.backward(&self.store, &self.x, &dy, &mut g);
        g
    }
}

/// LSTM over a sequence whose inputs are themselves parameters, under
/// `L = Σ_t r_t·h_t + ½‖h_T‖²`.
pub struct LstmProbe {
    store: ParamStore,
    lstm: Lstm,
    inputs: ParamId,
    proj: Vec<f64>,
}

impl LstmProbe {
    pub fn random(input: usize, hidden: usize, steps: usize, rng: &mut RngStream) -> Self {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", ParamGroup::Encoder, input, hidden, rng);
        // non-trivial biases
        for v in store.get_mut(lstm.bias).value.data_mut() {
            *v += rng.uniform(-0.5, 0.5);
        }
        let xs = init_uniform(steps, input, 1, rng);
        let inputs = store.push(ParamSlot::new("inputs", ParamGroup::Embedding, xs));
        let proj = (0..steps * hidden).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self {
            store,
            lstm,
            inputs,
            proj,
        }
    }

    fn run(&self) -> super::LstmTrace {
        let xs = self.store.value(self.inputs);
        self.lstm
            .run(&self.store, (0..xs.rows()).map(|t| xs.row(t)))
            .expect("probe shapes are consistent")
    }
}

impl Differentiable for LstmProbe {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn loss(&self) -> f64 {
        let tr = self.run();
        let h = self.lstm.hidden;
        let steps = tr.steps();
        let mut l = 0.0;
        for t in 0..steps {
            l += super::dot(&self.proj[t * h..(t + 1) * h], tr.hidden_state(t, h));
        }
        let last = tr.hidden_state(steps - 1, h);
        l + 0.5 * super::dot(last, last)
    }
    fn gradient(&self) -> GradBuffer {
        let tr = self.run();
        let h = self.lstm.hidden;
        let steps = tr.steps();
        let mut dh = self.proj.clone();
        let last = tr.hidden_state(steps - 1, h).to_vec();
        super::axpy(1.0, &last, &mut dh[(steps - 1) * h..]);
        let mut g = self.store.grad_buffer();
        let dx = self.lstm.backward(&self.store, &tr, &dh, &mut g);
        g.get_mut(self.inputs).data_mut().copy_from_slice(&dx);
        g
    }
}

/// Softmax cross-entropy with the logits as the parameter.
pub struct SoftmaxProbe {
    store: ParamStore,
    label: usize,
}

impl SoftmaxProbe {
    pub fn random(classes: usize, rng: &mut RngStream) -> Self {
        let mut store = ParamStore::new();
        store.push(ParamSlot::new("logits", ParamGroup::Classifier, init_uniform(1, classes, 1, rng)));
        for v in store.slots_mut()[0].value.data_mut() {
            *v *= 3.0;
        }
        Self {
            store,
            label: rng.index(classes),
        }
    }
}

impl Differentiable for SoftmaxProbe {
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn loss(&self) -> f64 {
        super::softmax_cross_entropy(self.store.slots()[0].value.data(), self.label)
            .expect("label in range")
            .0
    }
    fn gradient(&self) -> GradBuffer {
        let (_, d) = super::softmax_cross_entropy(self.store.slots()[0].value.data(), self.label).expect("label in range");
        let mut g = self.store.grad_buffer();
        g.0[0].data_mut().copy_from_slice(&d);
        g
    }
}

/// A named module under test.
pub type Probe = (String, Box<dyn Differentiable + Send>);

/// One random instance of every layer probe for `seed`.
pub fn layer_probes(seed: u64) -> Vec<Probe> {
    let mut rng = RngStream::new(seed).derive("gradcheck.layers", &[]);
    vec![
        ("linear".to_string(), Box::new(LinearProbe::random(4, 3, &mut rng))),
        ("lstm".to_string(), Box::new(LstmProbe::random(3, 4, 5, &mut rng))),
        ("softmax_cross_entropy".to_string(), Box::new(SoftmaxProbe::random(5, &mut rng))),
    ]
}

/// Runs [`finite_diff_check`] on every probe.
pub fn check_all(probes: Vec<Probe>, epsilon: f64, tolerance: f64) -> Vec<(String, GradCheckReport)> {
    probes
        .into_iter()
        .map(|(name, mut p)| {
            let r = finite_diff_check(p.as_mut(), epsilon, tolerance);
            (name, r)
        })
        .collect()
}

/// Finite-difference reports for every layer probe at one seed.
pub fn layer_suite(seed: u64, epsilon: f64, tolerance: f64) -> Vec<(String, GradCheckReport)> {
    check_all(layer_probes(seed), epsilon, tolerance)
}

impl<D: Differentiable + ?Sized> Differentiable for Box<D> {
    fn params(&self) -> &ParamStore {
        (**self).params()
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        (**self).params_mut()
    }
    fn loss(&self) -> f64 {
        (**self).loss()
    }
    fn gradient(&self) -> GradBuffer {
        (**self).gradient()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ParamGroup, ParamSlot, Tensor2};

    struct Empty(ParamStore);

    impl Differentiable for Empty {
        fn params(&self) -> &ParamStore {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
        fn loss(&self) -> f64 {
            1.0
        }
        fn gradient(&self) -> GradBuffer {
            self.0.grad_buffer()
        }
    }

    /// f(w) = Σ w_i³
    struct Cubic(ParamStore);

    impl Differentiable for Cubic {
        fn params(&self) -> &ParamStore {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
        fn loss(&self) -> f64 {
            self.0.slots()[0].value.data().iter().map(|w| w * w * w).sum()
        }
        fn gradient(&self) -> GradBuffer {
            let mut g = self.0.grad_buffer();
            for (o, w) in g.0[0].data_mut().iter_mut().zip(self.0.slots()[0].value.data()) {
                *o = 3.0 * w * w;
            }
            g
        }
    }

    fn cubic() -> Cubic {
        let mut s = ParamStore::new();
        s.push(ParamSlot::new(
            "w",
            ParamGroup::Encoder,
            Tensor2::from_vec(1, 3, vec![0.5, -1.2, 2.0]).unwrap(),
        ));
        Cubic(s)
    }

    #[test]
    fn layer_probes_pass() {
        for seed in 0..3 {
            for (name, r) in layer_suite(seed, 1e-5, 1e-6) {
                assert!(r.passed(), "{name} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn empty_module_gives_empty_report() {
        let r = finite_diff_check(&mut Empty(ParamStore::new()), 1e-5, 1e-4);
        assert!(r.params.is_empty());
        assert!(r.passed());
    }

    #[test]
    fn correct_gradient_passes_and_values_restored() {
        let mut m = cubic();
        let before = m.0.clone();
        let r = finite_diff_check(&mut m, 1e-5, 1e-6);
        assert!(r.passed(), "{r:?}");
        assert_eq!(m.0, before);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut m = FaultInjected(cubic());
        let r = finite_diff_check(&mut m, 1e-5, 1e-4);
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
    }
}
