//! Fully connected tanh network with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector; layer `l` stores its weight matrix
//! (`out_l x in_l`, row-major) followed by its bias.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `(out, in)` per layer.
    shapes: Vec<(usize, usize)>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`
    /// (post-activation for hidden layers, linear for the last).
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    /// Builds a network `sizes[0] -> sizes[1] -> ... -> sizes[last]` with zero parameters.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let shapes: Vec<(usize, usize)> = sizes.windows(2).map(|w| (w[1], w[0])).collect();
        let count = shapes.iter().map(|(o, i)| o * i + o).sum();
        Mlp {
            shapes,
            params: vec![0.0; count],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of weights and biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut mlp = Mlp::zeros(sizes);
        let mut offset = 0;
        for &(out, inp) in &mlp.shapes {
            let bound = 1.0 / (inp as f64).sqrt();
            for p in &mut mlp.params[offset..offset + out * inp + out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += out * inp + out;
        }
        mlp
    }

    pub fn from_parts(shapes: Vec<(usize, usize)>, params: Vec<f64>) -> Result<Self> {
        if shapes.is_empty() || shapes.windows(2).any(|w| w[0].0 != w[1].1) {
            return Err(Error::config("layer shapes do not chain"));
        }
        let count: usize = shapes.iter().map(|(o, i)| o * i + o).sum();
        if params.len() != count {
            return Err(Error::Shape {
                expected: format!("{count} parameters"),
                got: format!("{} parameters", params.len()),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("parameters must be finite"));
        }
        Ok(Mlp { shapes, params })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].1
    }

    pub fn output_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].0
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Runs the network, recording activations in `tape`, and returns the output.
    pub fn forward<'t>(&self, input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        let layers = self.shapes.len();
        tape.acts.resize_with(layers + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for (l, &(out, inp)) in self.shapes.iter().enumerate() {
            let (w, rest) = self.params[offset..].split_at(out * inp);
            let b = &rest[..out];
            let (prev, next) = tape.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            for r in 0..out {
                let row = &w[r * inp..(r + 1) * inp];
                let z = b[r] + dot(row, x);
                y.push(if l + 1 < layers { z.tanh() } else { z });
            }
            offset += out * inp + out;
        }
        &tape.acts[layers]
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, tape: &mut Tape, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.shapes.len();
        let Tape {
            acts,
            delta,
            delta_prev,
        } = tape;
        delta.clear();
        delta.extend_from_slice(d_out);
        let mut end = self.params.len();
        for l in (0..layers).rev() {
            let (out, inp) = self.shapes[l];
            let start = end - (out * inp + out);
            let w = &self.params[start..start + out * inp];
            let (gw, gb) = grad[start..end].split_at_mut(out * inp);
            let x = &acts[l];
            for r in 0..out {
                let dr = delta[r];
                gb[r] += dr;
                if dr != 0.0 {
                    for (g, xv) in gw[r * inp..(r + 1) * inp].iter_mut().zip(x) {
                        *g += dr * xv;
                    }
                }
            }
            if l > 0 {
                delta_prev.clear();
                delta_prev.resize(inp, 0.0);
                for r in 0..out {
                    let dr = delta[r];
                    if dr != 0.0 {
                        for (dp, wv) in delta_prev.iter_mut().zip(&w[r * inp..(r + 1) * inp]) {
                            *dp += dr * wv;
                        }
                    }
                }
                // tanh'(z) = 1 - tanh(z)^2, and acts[l] holds tanh(z)
                for (dp, a) in delta_prev.iter_mut().zip(x) {
                    *dp *= 1.0 - a * a;
                }
                std::mem::swap(delta, delta_prev);
            }
            end = start;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bias-corrected adaptive-moment optimizer without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn half_sq_loss(mlp: &Mlp, x: &[f64], target: &[f64]) -> f64 {
        let mut tape = Tape::default();
        let out = mlp.forward(x, &mut tape);
        out.iter().zip(target).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mlp = Mlp::zeros(&[5, 7, 7, 3]);
        let mut tape = Tape::default();
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0, 0.5, 9.0], &mut tape), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = Mlp::init(&[4, 6, 5, 3], &mut seeded(1));
        let x = [0.3, -0.8, 1.2, 0.05];
        let target = [0.1, 0.2, -0.4];
        let mut tape = Tape::default();
        let out = mlp.forward(&x, &mut tape).to_vec();
        let d_out: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
        let mut grad = vec![0.0; mlp.num_params()];
        mlp.backward(&mut tape, &d_out, &mut grad);
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = mlp.clone();
            plus.params_mut()[i] += h;
            let mut minus = mlp.clone();
            minus.params_mut()[i] -= h;
            let fd = (half_sq_loss(&plus, &x, &target) - half_sq_loss(&minus, &x, &target)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7, "param {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn from_parts_validates() {
        let mlp = Mlp::zeros(&[2, 3, 1]);
        assert!(Mlp::from_parts(mlp.shapes().to_vec(), mlp.params().to_vec()).is_ok());
        assert!(Mlp::from_parts(mlp.shapes().to_vec(), vec![0.0; 3]).is_err());
        assert!(Mlp::from_parts(vec![(3, 2), (1, 4)], vec![0.0; 13]).is_err());
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = p.clone();
            opt.update(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2));
    }
}
