//! The trainable tensors. A second `Parameters` of the same shape serves as
//! the gradient accumulator.

use super::layers::{Linear, LstmCell, LstmStack};
use super::tensor::Tensor;
use super::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const N_OPS: usize = 22;
pub const N_PREDICTORS: usize = 3;

/// Pointer affinity `v · tanh(Wk·key + Wq·q + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinity {
    pub wk: Tensor,
    pub wq: Linear,
    pub v: Tensor,
}

impl Affinity {
    fn new(hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Affinity {
            wk: Tensor::uniform(hidden, hidden, scale, rng),
            wq: Linear::new(hidden, hidden, scale, rng),
            v: Tensor::uniform(hidden, 1, scale, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Affinity { wk: self.wk.zeros_like(), wq: self.wq.zeros_like(), v: self.v.zeros_like() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// Encoder input embeddings.
    pub tok_emb: Tensor,
    pub encoder: LstmStack,
    /// Input is the previous value embedding and the previous final argument state.
    pub decoder: LstmStack,
    pub op_out: Linear,
    pub op_emb: Tensor,
    /// Destination state from `[h; op embedding]`.
    pub r_state: Linear,
    /// `w_r`, `b_r`: logit of writing to the output.
    pub dest_out: Linear,
    pub dest_emb: Tensor,
    pub q_cell: LstmCell,
    pub pred_out: Linear,
    pub voc_out: Linear,
    pub copy_in: Affinity,
    pub copy_out: Affinity,
    /// Argument and value lookup table.
    pub val_emb: Tensor,
    /// Rows: string flag, float flag, numeric feature.
    pub val_flags: Tensor,
}

impl Parameters {
    pub fn init(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, e, s) = (cfg.hidden_size, cfg.embed_size, cfg.init_scale);
        Parameters {
            tok_emb: Tensor::uniform(vocab_size, e, s, &mut rng),
            encoder: LstmStack::new(e, h, cfg.lstm_layers, s, &mut rng),
            decoder: LstmStack::new(e + h, h, cfg.lstm_layers, s, &mut rng),
            op_out: Linear::new(h, N_OPS, s, &mut rng),
            op_emb: Tensor::uniform(N_OPS, e, s, &mut rng),
            r_state: Linear::new(h + e, h, s, &mut rng),
            dest_out: Linear::new(h, 1, s, &mut rng),
            dest_emb: Tensor::uniform(2, e, s, &mut rng),
            q_cell: LstmCell::new(e, h, s, &mut rng),
            pred_out: Linear::new(h, N_PREDICTORS, s, &mut rng),
            voc_out: Linear::new(h, vocab_size, s, &mut rng),
            copy_in: Affinity::new(h, s, &mut rng),
            copy_out: Affinity::new(h, s, &mut rng),
            val_emb: Tensor::uniform(vocab_size, e, s, &mut rng),
            val_flags: Tensor::uniform(3, e, s, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Parameters {
            tok_emb: self.tok_emb.zeros_like(),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            op_out: self.op_out.zeros_like(),
            op_emb: self.op_emb.zeros_like(),
            r_state: self.r_state.zeros_like(),
            dest_out: self.dest_out.zeros_like(),
            dest_emb: self.dest_emb.zeros_like(),
            q_cell: self.q_cell.zeros_like(),
            pred_out: self.pred_out.zeros_like(),
            voc_out: self.voc_out.zeros_like(),
            copy_in: self.copy_in.zeros_like(),
            copy_out: self.copy_out.zeros_like(),
            val_emb: self.val_emb.zeros_like(),
            val_flags: self.val_flags.zeros_like(),
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("tok_emb".into(), &self.tok_emb));
        for (l, c) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.{l}.w"), &c.w));
            out.push((format!("encoder.{l}.b"), &c.b));
        }
        for (l, c) in self.decoder.layers.iter().enumerate() {
            out.push((format!("decoder.{l}.w"), &c.w));
            out.push((format!("decoder.{l}.b"), &c.b));
        }
        for (n, l) in [
            ("op_out", &self.op_out),
            ("r_state", &self.r_state),
            ("dest_out", &self.dest_out),
            ("pred_out", &self.pred_out),
            ("voc_out", &self.voc_out),
        ] {
            out.push((format!("{n}.w"), &l.w));
            out.push((format!("{n}.b"), &l.b));
        }
        out.push(("op_emb".into(), &self.op_emb));
        out.push(("dest_emb".into(), &self.dest_emb));
        out.push(("q_cell.w".into(), &self.q_cell.w));
        out.push(("q_cell.b".into(), &self.q_cell.b));
        for (n, a) in [("copy_in", &self.copy_in), ("copy_out", &self.copy_out)] {
            out.push((format!("{n}.wk"), &a.wk));
            out.push((format!("{n}.wq.w"), &a.wq.w));
            out.push((format!("{n}.wq.b"), &a.wq.b));
            out.push((format!("{n}.v"), &a.v));
        }
        out.push(("val_emb".into(), &self.val_emb));
        out.push(("val_flags".into(), &self.val_flags));
        out
    }

    /// Same order as [`Parameters::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.tok_emb];
        for c in self.encoder.layers.iter_mut() {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        for c in self.decoder.layers.iter_mut() {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        for l in [&mut self.op_out, &mut self.r_state, &mut self.dest_out, &mut self.pred_out, &mut self.voc_out] {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.op_emb);
        out.push(&mut self.dest_emb);
        out.push(&mut self.q_cell.w);
        out.push(&mut self.q_cell.b);
        for a in [&mut self.copy_in, &mut self.copy_out] {
            out.push(&mut a.wk);
            out.push(&mut a.wq.w);
            out.push(&mut a.wq.b);
            out.push(&mut a.v);
        }
        out.push(&mut self.val_emb);
        out.push(&mut self.val_flags);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `self += a · other`
    pub fn add_scaled(&mut self, other: &Parameters, a: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            super::tensor::axpy(a, &src.data, &mut dst.data);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= a);
        }
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_and_mut_agree() {
        let cfg = ModelConfig::toy();
        let mut p = Parameters::init(&cfg, 30, 1);
        let shapes: Vec<(usize, usize)> = p.named().iter().map(|(_, t)| (t.rows, t.cols)).collect();
        let shapes_mut: Vec<(usize, usize)> = p.tensors_mut().iter().map(|t| (t.rows, t.cols)).collect();
        assert_eq!(shapes, shapes_mut);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert!(p.is_finite());
        assert!(p.encoder.layers[0].b.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::toy();
        assert_eq!(Parameters::init(&cfg, 30, 4), Parameters::init(&cfg, 30, 4));
        assert_ne!(Parameters::init(&cfg, 30, 4), Parameters::init(&cfg, 30, 5));
    }
}
