//! Fully connected tanh network with reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows handled per parallel task. Fixed so that reductions are identical for
/// any number of worker threads.
pub const CHUNK: usize = 256;

/// `sizes[0] -> sizes[1] -> … -> sizes[L]`, tanh after every layer but the last.
///
/// Parameters are stored flat, layer by layer: weights (row-major, out × in)
/// followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass: per layer, `rows × width`.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    pub rows: usize,
    /// `acts[0]` is the input, `acts[l]` the tanh output of layer `l`
    /// (the last entry holds the raw output).
    pub acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] })
    }

    /// Uniform Glorot initialization, biases zero.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let a = (6.0 / (i + o) as f64).sqrt();
            for p in &mut m.params[off..off + i * o] {
                *p = rng.random_range(-a..a);
            }
            off += i * o + o;
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offs.push(off);
            off += w[0] * w[1] + w[1];
        }
        offs
    }

    /// Forward pass over `rows` inputs laid out row-major.
    pub fn forward(&self, input: &[f64]) -> MlpTape {
        let d0 = self.input_dim();
        assert_eq!(input.len() % d0, 0, "input length must be a multiple of {d0}");
        let rows = input.len() / d0;
        let offs = self.layer_offsets();
        let mut acts = vec![input.to_vec()];
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offs[l]..offs[l] + din * dout];
            let b = &self.params[offs[l] + din * dout..offs[l] + din * dout + dout];
            let last = l + 1 == n_layers;
            let prev = &acts[l];
            let mut out = vec![0.0; rows * dout];
            out.par_chunks_mut(CHUNK * dout).enumerate().for_each(|(ci, chunk)| {
                let r0 = ci * CHUNK;
                for (r, orow) in chunk.chunks_mut(dout).enumerate() {
                    let x = &prev[(r0 + r) * din..(r0 + r + 1) * din];
                    for (o, val) in orow.iter_mut().enumerate() {
                        let wr = &w[o * din..(o + 1) * din];
                        let mut s = b[o];
                        for (a, c) in wr.iter().zip(x) {
                            s += a * c;
                        }
                        *val = if last { s } else { s.tanh() };
                    }
                }
            });
            acts.push(out);
        }
        MlpTape { rows, acts }
    }

    /// Reverse pass. Returns the gradient w.r.t. the input rows and, if asked,
    /// the gradient w.r.t. the parameters.
    pub fn backward(&self, tape: &MlpTape, grad_out: &[f64], want_params: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let rows = tape.rows;
        assert_eq!(grad_out.len(), rows * self.output_dim());
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let n_chunks = rows.div_ceil(CHUNK);
        // Per chunk: input gradient block and optional parameter gradient.
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let r0 = ci * CHUNK;
                let r1 = (r0 + CHUNK).min(rows);
                let mut pg = if want_params { vec![0.0; self.params.len()] } else { Vec::new() };
                let dl = self.output_dim();
                let mut g: Vec<f64> = grad_out[r0 * dl..r1 * dl].to_vec();
                for l in (0..n_layers).rev() {
                    let (din, dout) = (self.sizes[l], self.sizes[l + 1]);
                    let w = &self.params[offs[l]..offs[l] + din * dout];
                    if l + 1 != n_layers {
                        // Through tanh: d/ds tanh(s) = 1 - y².
                        let y = &tape.acts[l + 1][r0 * dout..r1 * dout];
                        for (gv, yv) in g.iter_mut().zip(y) {
                            *gv *= 1.0 - yv * yv;
                        }
                    }
                    let x = &tape.acts[l][r0 * din..r1 * din];
                    if want_params {
                        let (pw, pb) = pg[offs[l]..offs[l] + din * dout + dout].split_at_mut(din * dout);
                        for r in 0..(r1 - r0) {
                            let gr = &g[r * dout..(r + 1) * dout];
                            let xr = &x[r * din..(r + 1) * din];
                            for (o, &go) in gr.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                pb[o] += go;
                                for (pwv, xv) in pw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                                    *pwv += go * xv;
                                }
                            }
                        }
                    }
                    let mut gi = vec![0.0; (r1 - r0) * din];
                    for r in 0..(r1 - r0) {
                        let gr = &g[r * dout..(r + 1) * dout];
                        let gir = &mut gi[r * din..(r + 1) * din];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for (giv, wv) in gir.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                                *giv += go * wv;
                            }
                        }
                    }
                    g = gi;
                }
                (g, pg)
            })
            .collect();
        let mut grad_in = Vec::with_capacity(rows * self.input_dim());
        let mut grad_p = if want_params { Some(vec![0.0; self.params.len()]) } else { None };
        for (gi, pg) in parts {
            grad_in.extend_from_slice(&gi);
            if let Some(acc) = grad_p.as_mut() {
                for (a, b) in acc.iter_mut().zip(&pg) {
                    *a += b;
                }
            }
        }
        (grad_in, grad_p)
    }
}

/// Numerically stable softmax of each row of `logits` (width `c`).
pub fn softmax_rows(logits: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, orow) in logits.chunks(c).zip(out.chunks_mut(c)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &z) in orow.iter_mut().zip(row) {
            *o = (z - m).exp();
            s += *o;
        }
        for o in orow.iter_mut() {
            *o /= s;
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Current preconditioner `sqrt(v̂_i) + eps` of coordinate `i` (after at least one step).
    pub fn denominator(&self, i: usize) -> f64 {
        let c2 = 1.0 - self.beta2.powi(self.t.max(1) as i32);
        (self.v[i] / c2).sqrt() + self.eps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(m: &Mlp, x: &[f64], w: &[f64]) -> f64 {
        m.forward(x).output().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Mlp::init(&[5, 7, 6, 3], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = 300;
        let x: Vec<f64> = (0..rows * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = m.forward(&x);
        let (gx, gp) = m.backward(&tape, &w, true);
        let gp = gp.unwrap();
        let h = 1e-6;
        for i in (0..x.len()).step_by(37) {
            let mut a = x.clone();
            a[i] += h;
            let mut b = x.clone();
            b[i] -= h;
            let fd = (loss(&m, &a, &w) - loss(&m, &b, &w)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "x[{i}]: {fd} vs {}", gx[i]);
        }
        for i in 0..m.params.len() {
            let mut a = m.clone();
            a.params[i] += h;
            let mut b = m.clone();
            b.params[i] -= h;
            let fd = (loss(&a, &x, &w) - loss(&b, &x, &w)) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "p[{i}]: {fd} vs {}", gp[i]);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1000.0, 0.0, -3.0, 0.1, 0.2, 0.3], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * x[0], 4.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }
}
