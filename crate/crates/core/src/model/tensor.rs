//! Dense row-major matrices and the vector helpers the network needs.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x` where `x` has `cols` entries.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|r| dot(r, x)).collect()
    }

    /// Adds `selfᵀ · dy` into `dx`.
    pub fn matvec_t_acc(&self, dy: &[f64], dx: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        for (r, &g) in self.data.chunks_exact(self.cols).zip(dy) {
            if g != 0.0 {
                axpy(g, r, dx);
            }
        }
    }

    /// Adds the outer product `dy ⊗ x`.
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        for (r, &g) in self.data.chunks_exact_mut(self.cols).zip(dy) {
            if g != 0.0 {
                axpy(g, x, r);
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_into(src: &[f64], dst: &mut [f64]) {
    axpy(1.0, src, dst);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-softmax over the entries where `mask` is true; masked entries get -inf.
pub fn log_softmax_masked(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let live: Vec<f64> = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| *l).collect();
    let z = logsumexp(&live);
    logits.iter().zip(mask).map(|(l, &m)| if m { l - z } else { f64::NEG_INFINITY }).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let z = logsumexp(logits);
    logits.iter().map(|l| l - z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn matvec_and_transpose() {
        let t = Tensor { rows: 2, cols: 3, data: vec![1., 2., 3., 4., 5., 6.] };
        assert_eq!(t.matvec(&[1., 0., -1.]), vec![-2., -2.]);
        let mut dx = vec![0.0; 3];
        t.matvec_t_acc(&[1., 1.], &mut dx);
        assert_eq!(dx, vec![5., 7., 9.]);
    }

    #[test]
    fn stable_sigmoid() {
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(log_sigmoid(-800.0), -800.0);
        assert_relative_eq!(log_sigmoid(800.0), 0.0);
        assert_relative_eq!(log_sigmoid(1.3), sigmoid(1.3).ln(), epsilon = 1e-15);
    }

    #[test]
    fn masked_softmax_ignores_dead_entries() {
        let lp = log_softmax_masked(&[1.0, 50.0, 1.0], &[true, false, true]);
        assert_relative_eq!(lp[0], 0.5f64.ln());
        assert_eq!(lp[1], f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn log_softmax_normalizes(xs in prop::collection::vec(-300.0f64..300.0, 1..30)) {
            let s: f64 = log_softmax(&xs).iter().map(|l| l.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
