use super::{axpy, sigmoid, GradBuffer, ParamGroup, ParamId, ParamSlot, ParamStore, RngStream, Tensor2};
use crate::error::{Error, Result};

/// Uniform(−1/√fan_in, +1/√fan_in) initialisation.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Tensor2 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("length matches by construction")
}

/// Affine map `y = Wᵀx (+ b)` with `W` stored as `[dim_in × dim_out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let w = store.value(self.weight);
        if x.len() != w.rows() {
            return Err(Error::dim(
                "linear_forward",
                format!("input of length {} for weight {}x{}", w.rows(), w.rows(), w.cols()),
                format!("input of length {}", x.len()),
            ));
        }
        let mut y = match self.bias {
            Some(b) => {
                let b = store.value(b);
                if b.shape() != (1, w.cols()) {
                    return Err(Error::dim(
                        "linear_forward",
                        format!("bias 1x{}", w.cols()),
                        format!("bias {}x{}", b.rows(), b.cols()),
                    ));
                }
                b.data().to_vec()
            }
            None => vec![0.0; w.cols()],
        };
        w.t_matvec_into(x, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&self, store: &ParamStore, x: &[f64], dy: &[f64], grads: &mut GradBuffer) -> Vec<f64> {
        let w = store.value(self.weight);
        grads.get_mut(self.weight).add_outer(1.0, x, dy);
        if let Some(b) = self.bias {
            axpy(1.0, dy, grads.get_mut(b).data_mut());
        }
        let mut dx = vec![0.0; w.rows()];
        w.matvec_into(dy, &mut dx);
        dx
    }
}

/// Standard four-gate LSTM (input, forget, cell candidate, output; no
/// peepholes). Weights are one `[(input + hidden) × 4·hidden]` matrix acting on
/// `[x_t ; h_{t−1}]`, gate blocks ordered `i | f | g | o`.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward run over a sequence.
#[derive(Clone, Debug, Default)]
pub struct LstmTrace {
    steps: usize,
    /// `[x_t ; h_{t−1}]` per step.
    concat: Vec<f64>,
    /// Post-activation gates per step.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
}

impl LstmTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Hidden state `h_t` (length `hidden`).
    pub fn hidden_state(&self, t: usize, hidden: usize) -> &[f64] {
        &self.hidden[t * hidden..(t + 1) * hidden]
    }

    pub fn cell_state(&self, t: usize, hidden: usize) -> &[f64] {
        &self.cell[t * hidden..(t + 1) * hidden]
    }
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Self {
        let w = init_uniform(input + hidden, 4 * hidden, input + hidden, rng);
        let mut b = Tensor2::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.set(0, j, 1.0);
        }
        let weight = store.push(ParamSlot::new(format!("{name}.weight"), group, w));
        let bias = store.push(ParamSlot::new(format!("{name}.bias"), group, b));
        Self {
            weight,
            bias,
            input,
            hidden,
        }
    }

    fn check(&self, store: &ParamStore) -> Result<()> {
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        let want_w = (self.input + self.hidden, 4 * self.hidden);
        if w.shape() != want_w {
            return Err(Error::dim("lstm weight", format!("{want_w:?}"), format!("{:?}", w.shape())));
        }
        if b.shape() != (1, 4 * self.hidden) {
            return Err(Error::dim(
                "lstm bias",
                format!("(1, {})", 4 * self.hidden),
                format!("{:?}", b.shape()),
            ));
        }
        Ok(())
    }

    /// One cell step: returns `(h_t, c_t)`.
    pub fn cell_forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(store)?;
        if x.len() != self.input {
            return Err(Error::dim("lstm_cell_forward input", self.input, x.len()));
        }
        if h_prev.len() != self.hidden || c_prev.len() != self.hidden {
            return Err(Error::dim(
                "lstm_cell_forward state",
                self.hidden,
                format!("h {} / c {}", h_prev.len(), c_prev.len()),
            ));
        }
        let mut concat = Vec::with_capacity(self.input + self.hidden);
        concat.extend_from_slice(x);
        concat.extend_from_slice(h_prev);
        let mut gates = vec![0.0; 4 * self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut tc = vec![0.0; self.hidden];
        let mut h = vec![0.0; self.hidden];
        self.step(store, &concat, c_prev, &mut gates, &mut c, &mut tc, &mut h);
        Ok((h, c))
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn step(
        &self,
        store: &ParamStore,
        concat: &[f64],
        c_prev: &[f64],
        gates: &mut [f64],
        c: &mut [f64],
        tanh_c: &mut [f64],
        h: &mut [f64],
    ) {
        let hd = self.hidden;
        gates.copy_from_slice(store.value(self.bias).data());
        store.value(self.weight).t_matvec_into(concat, gates);
        for j in 0..hd {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hd + j]);
            let g = gates[2 * hd + j].tanh();
            let o = sigmoid(gates[3 * hd + j]);
            gates[j] = i;
            gates[hd + j] = f;
            gates[2 * hd + j] = g;
            gates[3 * hd + j] = o;
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
    }

    /// Runs the cell over `xs` (each of length `input`) from zero state.
    /// With `reverse`, the sequence is consumed from the last element to the
    /// first; the trace is indexed by processing order.
    pub fn run<'a, I>(&self, store: &ParamStore, xs: I) -> Result<LstmTrace>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        self.check(store)?;
        let (d, hd) = (self.input, self.hidden);
        let mut tr = LstmTrace::default();
        let zero = vec![0.0; hd];
        for x in xs {
            if x.len() != d {
                return Err(Error::dim("lstm input", d, x.len()));
            }
            let t = tr.steps;
            tr.concat.extend_from_slice(x);
            if t == 0 {
                tr.concat.extend_from_slice(&zero);
            } else {
                let prev = tr.hidden[(t - 1) * hd..t * hd].to_vec();
                tr.concat.extend_from_slice(&prev);
            }
            tr.gates.resize((t + 1) * 4 * hd, 0.0);
            tr.cell.resize((t + 1) * hd, 0.0);
            tr.tanh_cell.resize((t + 1) * hd, 0.0);
            tr.hidden.resize((t + 1) * hd, 0.0);
            let c_prev = if t == 0 { zero.clone() } else { tr.cell[(t - 1) * hd..t * hd].to_vec() };
            let concat = &tr.concat[t * (d + hd)..(t + 1) * (d + hd)];
            let (gates, cell, tanh_cell, hidden) = (
                &mut tr.gates[t * 4 * hd..(t + 1) * 4 * hd],
                &mut tr.cell[t * hd..(t + 1) * hd],
                &mut tr.tanh_cell[t * hd..(t + 1) * hd],
                &mut tr.hidden[t * hd..(t + 1) * hd],
            );
            self.step(store, concat, &c_prev, gates, cell, tanh_cell, hidden);
            tr.steps += 1;
        }
        Ok(tr)
    }

    /// Backpropagation through time. `dh` holds `∂L/∂h_t` for every step in
    /// processing order (`steps × hidden`); returns `∂L/∂x_t` in the same order.
    pub fn backward(&self, store: &ParamStore, tr: &LstmTrace, dh: &[f64], grads: &mut GradBuffer) -> Vec<f64> {
        let (d, hd) = (self.input, self.hidden);
        let w = store.value(self.weight);
        let mut dx = vec![0.0; tr.steps * d];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        let mut dconcat = vec![0.0; d + hd];
        for t in (0..tr.steps).rev() {
            let gates = &tr.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let tanh_c = &tr.tanh_cell[t * hd..(t + 1) * hd];
            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let dht = dh[t * hd + j] + dh_next[j];
                let c_prev = if t == 0 { 0.0 } else { tr.cell[(t - 1) * hd + j] };
                let dc = dc_next[j] + dht * o * (1.0 - tanh_c[j] * tanh_c[j]);
                dz[j] = dc * g * i * (1.0 - i);
                dz[hd + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - g * g);
                dz[3 * hd + j] = dht * tanh_c[j] * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let concat = &tr.concat[t * (d + hd)..(t + 1) * (d + hd)];
            grads.get_mut(self.weight).add_outer(1.0, concat, &dz);
            axpy(1.0, &dz, grads.get_mut(self.bias).data_mut());
            dconcat.iter_mut().for_each(|v| *v = 0.0);
            w.matvec_into(&dz, &mut dconcat);
            dx[t * d..(t + 1) * d].copy_from_slice(&dconcat[..d]);
            dh_next.copy_from_slice(&dconcat[d..]);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(w: Tensor2, b: Option<Tensor2>) -> (ParamStore, Linear) {
        let mut s = ParamStore::new();
        let weight = s.push(ParamSlot::new("w", ParamGroup::Encoder, w));
        let bias = b.map(|b| s.push(ParamSlot::new("b", ParamGroup::Encoder, b)));
        (s, Linear { weight, bias })
    }

    #[test]
    fn linear_identity() {
        let (s, l) = store_with(Tensor2::identity(2), None);
        assert_eq!(l.forward(&s, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn linear_zero_input() {
        let w = Tensor2::from_rows(&[&[0.3, -2.0], &[7.0, 1.5]]).unwrap();
        let (s, l) = store_with(w, None);
        assert_eq!(l.forward(&s, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_hand_product() {
        let w = Tensor2::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]).unwrap();
        let (s, l) = store_with(w, None);
        assert_eq!(l.forward(&s, &[1.0, 2.0]).unwrap(), vec![5.0, 11.0]);
    }

    #[test]
    fn linear_bias_and_shape_error() {
        let w = Tensor2::identity(2);
        let b = Tensor2::from_rows(&[&[0.5, -0.5]]).unwrap();
        let (s, l) = store_with(w, Some(b));
        assert_eq!(l.forward(&s, &[1.0, 1.0]).unwrap(), vec![1.5, 0.5]);
        let err = l.forward(&s, &[1.0, 2.0, 3.0]).unwrap_err().to_string();
        assert!(err.contains("2x2") && err.contains("length 3"), "{err}");
    }

    fn scalar_lstm(wx: [f64; 4], wh: [f64; 4], b: [f64; 4]) -> (ParamStore, Lstm) {
        let mut s = ParamStore::new();
        let w = Tensor2::from_rows(&[&wx, &wh]).unwrap();
        let weight = s.push(ParamSlot::new("w", ParamGroup::Encoder, w));
        let bias = s.push(ParamSlot::new("b", ParamGroup::Encoder, Tensor2::from_rows(&[&b]).unwrap()));
        (s, Lstm { weight, bias, input: 1, hidden: 1 })
    }

    #[test]
    fn lstm_zero_weights_zero_state() {
        let (s, l) = scalar_lstm([0.0; 4], [0.0; 4], [0.0; 4]);
        let (h, c) = l.cell_forward(&s, &[3.7], &[0.0], &[0.0]).unwrap();
        assert_eq!(h, vec![0.0]);
        assert_eq!(c, vec![0.0]);
    }

    #[test]
    fn lstm_scalar_hand_computation() {
        // x = 0.5, h_prev = -0.2, c_prev = 0.3
        // z_i = 0.4*0.5 + 0.1*(-0.2) + 0.05  = 0.23
        // z_f = -0.3*0.5 + 0.2*(-0.2) + 1.0  = 0.81
        // z_g = 0.7*0.5 - 0.5*(-0.2) - 0.1   = 0.35
        // z_o = 0.2*0.5 + 0.3*(-0.2) + 0.0   = 0.04
        // i = σ(0.23) = 0.557248, f = σ(0.81) = 0.692110, g = tanh(0.35) = 0.336376, o = σ(0.04) = 0.509999
        // c = 0.692110*0.3 + 0.557248*0.336376 = 0.395077
        // h = 0.509999 * tanh(0.395077) = 0.191621
        let (s, l) = scalar_lstm([0.4, -0.3, 0.7, 0.2], [0.1, 0.2, -0.5, 0.3], [0.05, 1.0, -0.1, 0.0]);
        let (h, c) = l.cell_forward(&s, &[0.5], &[-0.2], &[0.3]).unwrap();
        assert!((c[0] - 0.395077).abs() < 1e-6, "c = {}", c[0]);
        assert!((h[0] - 0.191621).abs() < 1e-6, "h = {}", h[0]);
    }

    #[test]
    fn lstm_shape_errors() {
        let (s, l) = scalar_lstm([0.0; 4], [0.0; 4], [0.0; 4]);
        assert!(l.cell_forward(&s, &[1.0, 2.0], &[0.0], &[0.0]).is_err());
        assert!(l.cell_forward(&s, &[1.0], &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn run_matches_repeated_cell_steps() {
        let mut rng = RngStream::new(5);
        let mut s = ParamStore::new();
        let l = Lstm::new(&mut s, "l", ParamGroup::Encoder, 3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let tr = l.run(&s, xs.iter().map(|v| v.as_slice())).unwrap();
        let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for (t, x) in xs.iter().enumerate() {
            let (h2, c2) = l.cell_forward(&s, x, &h, &c).unwrap();
            h = h2;
            c = c2;
            assert_eq!(tr.hidden_state(t, 2), h.as_slice());
            assert_eq!(tr.cell_state(t, 2), c.as_slice());
        }
    }
}
