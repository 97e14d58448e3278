//! Affine maps and LSTM cells with explicit backward passes. Gradients go
//! into a same-shaped twin of the layer.

use super::tensor::{add_into, sigmoid, Tensor};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Linear { w: Tensor::uniform(output, input, scale, rng), b: Tensor::zeros(output, 1) }
    }

    pub fn zeros_like(&self) -> Self {
        Linear { w: self.w.zeros_like(), b: self.b.zeros_like() }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        add_into(&self.b.data, &mut y);
        y
    }

    /// Accumulates parameter gradients into `g` and input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], g: &mut Linear, dx: &mut [f64]) {
        g.w.add_outer(dy, x);
        add_into(dy, &mut g.b.data);
        self.w.matvec_t_acc(dy, dx);
    }
}

/// One LSTM layer. Gates are stacked as input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: Tensor,
    pub b: Tensor,
    pub input: usize,
    pub hidden: usize,
}

/// Values kept from a forward step for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

impl LstmCell {
    pub fn new(input: usize, hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        LstmCell { w: Tensor::uniform(4 * hidden, input + hidden, scale, rng), b: Tensor::zeros(4 * hidden, 1), input, hidden }
    }

    pub fn zeros_like(&self) -> Self {
        LstmCell { w: self.w.zeros_like(), b: self.b.zeros_like(), input: self.input, hidden: self.hidden }
    }

    pub fn forward(&self, x: &[f64], prev: &LstmState) -> (LstmState, LstmCache) {
        debug_assert_eq!(x.len(), self.input);
        let n = self.hidden;
        let mut xh = Vec::with_capacity(self.input + n);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&prev.h);
        let mut z = self.w.matvec(&xh);
        add_into(&self.b.data, &mut z);
        let i: Vec<f64> = z[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * n..3 * n].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * n..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..n).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache { xh, c_prev: prev.c.clone(), i, f, g, o, tanh_c };
        (LstmState { h, c }, cache)
    }

    /// Given gradients on the new state, accumulates parameter gradients and
    /// returns gradients on the input and on the previous state.
    pub fn backward(&self, cache: &LstmCache, dh: &[f64], dc: &[f64], grad: &mut LstmCell) -> (Vec<f64>, LstmState) {
        let n = self.hidden;
        let mut dz = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * g * i * (1.0 - i);
            dz[n + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * n + k] = dct * i * (1.0 - g * g);
            dz[3 * n + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        grad.w.add_outer(&dz, &cache.xh);
        add_into(&dz, &mut grad.b.data);
        let mut dxh = vec![0.0; self.input + n];
        self.w.matvec_t_acc(&dz, &mut dxh);
        let dh_prev = dxh.split_off(self.input);
        (dxh, LstmState { h: dh_prev, c: dc_prev })
    }
}

/// Stacked LSTM layers sharing one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

pub type StackState = Vec<LstmState>;
pub type StackCache = Vec<LstmCache>;

impl LstmStack {
    pub fn new(input: usize, hidden: usize, n_layers: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let layers =
            (0..n_layers).map(|l| LstmCell::new(if l == 0 { input } else { hidden }, hidden, scale, rng)).collect();
        LstmStack { layers }
    }

    pub fn zeros_like(&self) -> Self {
        LstmStack { layers: self.layers.iter().map(LstmCell::zeros_like).collect() }
    }

    pub fn zero_state(&self) -> StackState {
        self.layers.iter().map(|l| LstmState::zeros(l.hidden)).collect()
    }

    pub fn forward(&self, x: &[f64], prev: &StackState) -> (StackState, StackCache) {
        let mut input = x.to_vec();
        let mut states = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (cell, p) in self.layers.iter().zip(prev) {
            let (s, c) = cell.forward(&input, p);
            input = s.h.clone();
            states.push(s);
            caches.push(c);
        }
        (states, caches)
    }

    /// `dtop` is extra gradient on the top layer's output; `dnext` is the
    /// gradient on the whole new state (from the following step).
    pub fn backward(
        &self,
        caches: &StackCache,
        dtop: &[f64],
        dnext: &StackState,
        grad: &mut LstmStack,
    ) -> (Vec<f64>, StackState) {
        let n = self.layers.len();
        let mut dprev = vec![LstmState { h: vec![], c: vec![] }; n];
        let mut dabove: Vec<f64> = dtop.to_vec();
        for l in (0..n).rev() {
            let mut dh = dnext[l].h.clone();
            add_into(&dabove, &mut dh);
            let (dx, dp) = self.layers[l].backward(&caches[l], &dh, &dnext[l].c, &mut grad.layers[l]);
            dprev[l] = dp;
            dabove = dx;
        }
        (dabove, dprev)
    }
}
