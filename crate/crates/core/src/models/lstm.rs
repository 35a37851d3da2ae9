use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Activation, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use super::layers::{Builder, Dense};

/// Gate order used for the parameter arrays below.
pub const GATES: [&str; 4] = ["forget", "input", "output", "candidate"];

/// Input weights `W: [H, D_in]` with bias, and recurrent weights `U: [H, H]`,
/// for the forget, input, output and candidate gates.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input: [Dense; 4],
    pub recurrent: [ParamId; 4],
    pub hidden: usize,
}

/// Values produced by one step.
#[derive(Debug, Clone, Copy)]
pub struct LstmStep {
    pub h: Var,
    pub c: Var,
    /// forget, input, output, candidate.
    pub gates: [Var; 4],
}

impl LstmCell {
    /// A standalone cell with parameters under `name`, Glorot-initialised from `seed`.
    pub fn new(store: &mut ParamStore<f32>, name: &str, input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(store, &mut rng);
        Self::build(&mut b.scope(name), input, hidden)
    }

    pub(crate) fn build(b: &mut Builder, input: usize, hidden: usize) -> Self {
        let dense = GATES.map(|g| b.dense(&format!("w_{g}"), input, hidden));
        let recurrent = GATES.map(|g| b.glorot(&format!("u_{g}"), &[hidden, hidden], hidden, hidden));
        Self {
            input: dense,
            recurrent,
            hidden,
        }
    }

    /// `W x + b` for every gate; works on `[N, D]` or `[N, T, D]`.
    pub fn project<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<[Var; 4]> {
        let mut out = [x; 4];
        for (o, d) in out.iter_mut().zip(&self.input) {
            *o = d.forward(store, tape, x)?;
        }
        Ok(out)
    }

    /// One step from already projected inputs.
    pub fn step_projected<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        projected: [Var; 4],
        h_prev: Var,
        c_prev: Var,
    ) -> Result<LstmStep> {
        let mut gates = projected;
        for (i, g) in gates.iter_mut().enumerate() {
            let u = tape.param(store, self.recurrent[i]);
            let uh = tape.linear(h_prev, u, None)?;
            let pre = tape.add(*g, uh)?;
            let kind = if i == 3 { Activation::Tanh } else { Activation::Sigmoid };
            *g = tape.activation(pre, kind)?;
        }
        let [f, i, o, cand] = gates;
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.activation(c, Activation::Tanh)?;
        let h = tape.mul(o, squashed)?;
        Ok(LstmStep { h, c, gates })
    }

    /// One step on `x_t: [N, D_in]` with state `[N, H]`.
    pub fn step<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<LstmStep> {
        let projected = self.project(store, tape, x)?;
        self.step_projected(store, tape, projected, h_prev, c_prev)
    }

    /// Runs over `[N, T, D]` from a zero state. Returns the hidden states
    /// stacked as `[N, T, H]` when `keep_sequence`, and the last hidden state.
    pub fn run<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        keep_sequence: bool,
    ) -> Result<(Option<Var>, Var)> {
        let shape = tape.value(x).shape().to_vec();
        let (n, steps) = (shape[0], shape[1]);
        let projected = self.project(store, tape, x)?;
        let mut h = tape.constant(Tensor::zeros(&[n, self.hidden]))?;
        let mut c = h;
        let mut seq = Vec::with_capacity(if keep_sequence { steps } else { 0 });
        for t in 0..steps {
            let mut at = projected;
            for (a, p) in at.iter_mut().zip(&projected) {
                *a = tape.time_step(*p, t)?;
            }
            let s = self.step_projected(store, tape, at, h, c)?;
            h = s.h;
            c = s.c;
            if keep_sequence {
                seq.push(h);
            }
        }
        let stacked = if keep_sequence { Some(tape.stack_time(&seq)?) } else { None };
        Ok((stacked, h))
    }
}

/// Stacked LSTM layers; the last hidden state of the top layer is returned.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

impl LstmStack {
    pub(crate) fn build(b: &mut Builder, input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| LstmCell::build(&mut b.scope(&format!("lstm{l}")), if l == 0 { input } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut seq = x;
        let mut last = x;
        for (l, cell) in self.layers.iter().enumerate() {
            let top = l + 1 == self.layers.len();
            let (s, h) = cell.run(store, tape, seq, !top)?;
            last = h;
            if let Some(s) = s {
                seq = s;
            }
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64, d: usize, h: usize) -> (LstmCell, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = LstmCell::build(&mut Builder::new(&mut store, &mut rng), d, h);
        (c, store)
    }

    fn randomize(store: &mut ParamStore<f32>, seed: u64, scale: f32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).numel();
            store.set_data(id, (0..n).map(|_| scale * rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        }
    }

    fn random(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn run_step(c: &LstmCell, store: &ParamStore<f64>, x: &Tensor<f64>, h: &Tensor<f64>, cp: &Tensor<f64>) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let mut tape = Tape::new(false);
        let (xv, hv, cv) = (
            tape.constant(x.clone()).unwrap(),
            tape.constant(h.clone()).unwrap(),
            tape.constant(cp.clone()).unwrap(),
        );
        let s = c.step(store, &mut tape, xv, hv, cv).unwrap();
        let gates = s.gates.iter().map(|g| tape.value(*g).data().to_vec()).collect();
        (tape.value(s.h).data().to_vec(), tape.value(s.c).data().to_vec(), gates)
    }

    #[test]
    fn zero_parameters_analytic() {
        let (c, mut store) = cell(1, 3, 4);
        randomize(&mut store, 0, 0.0);
        let store = store.cast::<f64>();
        let cp = random(2, &[2, 4], 3.0);
        let (h, cn, gates) = run_step(&c, &store, &random(3, &[2, 3], 1.0), &random(4, &[2, 4], 1.0), &cp);
        for g in &gates[..3] {
            assert!(g.iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
        for k in 0..8 {
            assert!((cn[k] - 0.5 * cp.data()[k]).abs() < 1e-6);
            assert!((h[k] - 0.5 * (0.5 * cp.data()[k]).tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_forget_gate_remembers() {
        let (c, mut store) = cell(5, 2, 3);
        randomize(&mut store, 6, 0.5);
        store.set_data(c.input[0].b, vec![100.0; 3]).unwrap();
        let store = store.cast::<f64>();
        let cp = random(7, &[1, 3], 2.0);
        let (_, cn, gates) = run_step(&c, &store, &random(8, &[1, 2], 1.0), &random(9, &[1, 3], 1.0), &cp);
        for k in 0..3 {
            let want = cp.data()[k] + gates[1][k] * gates[3][k];
            assert!((cn[k] - want).abs() < 1e-9);
        }
    }

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn random_cell_matches_direct_formula() {
        let (d, hd) = (3, 5);
        let (c, mut store) = cell(10, d, hd);
        randomize(&mut store, 11, 1.0);
        let store = store.cast::<f64>();
        let (x, h, cp) = (random(12, &[1, d], 1.0), random(13, &[1, hd], 1.0), random(14, &[1, hd], 1.0));
        let (h_got, c_got, _) = run_step(&c, &store, &x, &h, &cp);
        let pre = |g: usize, k: usize| {
            let w = store.get(c.input[g].w).data();
            let b = store.get(c.input[g].b).data();
            let u = store.get(c.recurrent[g]).data();
            let mut acc = b[k];
            for j in 0..d {
                acc += w[k * d + j] * x.data()[j];
            }
            for j in 0..hd {
                acc += u[k * hd + j] * h.data()[j];
            }
            acc
        };
        for k in 0..hd {
            let (f, i, o, cand) = (sigmoid(pre(0, k)), sigmoid(pre(1, k)), sigmoid(pre(2, k)), pre(3, k).tanh());
            let cn = f * cp.data()[k] + i * cand;
            assert!((c_got[k] - cn).abs() < 1e-6);
            assert!((h_got[k] - o * cn.tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn grad_check_cell_and_stack() {
        for seed in 0..10 {
            let (c, store) = cell(seed, 3, 4);
            let store = store.cast::<f64>();
            let (x, h, cp) = (random(seed + 1, &[2, 3], 1.0), random(seed + 2, &[2, 4], 1.0), random(seed + 3, &[2, 4], 1.0));
            let target = random(seed + 4, &[2, 4], 1.0);
            let opts = GradCheckOptions { seed, ..Default::default() };
            let report = grad_check(&store, opts, |s, tape| {
                let xv = tape.leaf(x.clone())?;
                let hv = tape.leaf(h.clone())?;
                let cv = tape.leaf(cp.clone())?;
                let st = c.step(s, tape, xv, hv, cv)?;
                let both = tape.concat(st.h, st.c)?;
                let t2 = Tensor::new(&[2, 8], [target.data(), target.data()].concat())?;
                tape.mse(both, &t2)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-3, "seed {seed}: {report:?}");
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = LstmStack::build(&mut Builder::new(&mut store, &mut rng), 2, 3, 2);
        let store = store.cast::<f64>();
        let x = random(20, &[2, 5, 2], 1.0);
        let target = random(21, &[2, 3], 1.0);
        let report = grad_check(&store, GradCheckOptions::default(), |s, tape| {
            let xv = tape.leaf(x.clone())?;
            let h = stack.forward(s, tape, xv)?;
            tape.mse(h, &target)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    proptest! {
        #[test]
        fn gates_bounded_and_cell_growth_limited(seed in any::<u64>(), scale in 0.1f32..2.0) {
            let (c, mut store) = cell(seed, 3, 4);
            randomize(&mut store, seed ^ 1, scale);
            let store = store.cast::<f64>();
            let cp = random(seed ^ 2, &[2, 4], 4.0);
            let (_, cn, gates) = run_step(&c, &store, &random(seed ^ 3, &[2, 3], 3.0), &random(seed ^ 4, &[2, 4], 1.0), &cp);
            for g in &gates[..3] {
                // Pre-activations stay below ~28 in magnitude, so f64 does not saturate.
                prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            for k in 0..8 {
                prop_assert!(cn[k].abs() <= cp.data()[k].abs() + 1.0 + 1e-12);
            }
        }
    }
}
