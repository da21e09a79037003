//! Small dense networks with hand-written backprop and Adam.
//!
//! Batches are column-major: each column of an input matrix is one sample.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// `tanh` hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Cache {
    acts: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Orthogonal-free scaled Gaussian init (`1/sqrt(fan_in)`); the last layer is scaled by `out_scale`.
    pub fn new<R: Rng>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = 1.0 / (fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let scale = if i + 2 == sizes.len() { out_scale } else { 1.0 };
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(rng) * scale),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    w: DMatrix::zeros(w[1], w[0]),
                    b: DVector::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &h + &l.b;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            h = z;
        }
        h
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Cache) {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().expect("input");
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let out = acts.last().expect("output").clone();
        (out, Cache { acts })
    }

    /// Parameter gradient given `d_out = ∂L/∂output` (summed over the batch).
    pub fn backward(&self, cache: &Cache, d_out: &DMatrix<f64>) -> MlpGrad {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = d_out.clone();
        for i in (0..n).rev() {
            if i < n - 1 {
                // tanh' = 1 - h²
                let h = &cache.acts[i + 1];
                delta.zip_apply(h, |d, hv| *d *= 1.0 - hv * hv);
            }
            let input = &cache.acts[i];
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                delta = self.layers[i].w.transpose() * &delta;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        MlpGrad { layers: grads }
    }

    /// Row-major weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                out.extend(l.w.row(r).iter());
            }
            out.extend(l.b.iter());
        }
        out
    }

    pub fn load_flat(&mut self, data: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            let (rows, cols) = l.w.shape();
            for r in 0..rows {
                for c in 0..cols {
                    l.w[(r, c)] = data[k];
                    k += 1;
                }
            }
            for r in 0..rows {
                l.b[r] = data[k];
                k += 1;
            }
        }
        k
    }
}

impl MlpGrad {
    pub fn norm_squared(&self) -> f64 {
        self.layers.iter().map(|l| l.w.norm_squared() + l.b.norm_squared()).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }
}

/// Adam state for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Starts a new step; call `update` for every tensor in a fixed order afterwards.
    pub fn begin(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, params: &mut [f64], grad: &[f64]) {
        if self.moments.len() <= slot {
            self.moments.resize(slot + 1, Moments { m: Vec::new(), v: Vec::new() });
        }
        let mo = &mut self.moments[slot];
        if mo.m.len() != params.len() {
            mo.m = vec![0.0; params.len()];
            mo.v = vec![0.0; params.len()];
        }
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            mo.m[i] = self.beta1 * mo.m[i] + (1.0 - self.beta1) * grad[i];
            mo.v[i] = self.beta2 * mo.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = mo.m[i] / c1;
            let vh = mo.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// Applies a descent step for every layer of `net`, using slots from `first_slot`.
    pub fn step_mlp(&mut self, first_slot: usize, net: &mut Mlp, grad: &MlpGrad) -> usize {
        let mut slot = first_slot;
        for (l, g) in net.layers.iter_mut().zip(&grad.layers) {
            self.update(slot, l.w.as_mut_slice(), g.w.as_slice());
            self.update(slot + 1, l.b.as_mut_slice(), g.b.as_slice());
            slot += 2;
        }
        slot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 8, 3, 2], 1.0, &mut rng);
        let x = DMatrix::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.3);
        let (y, _) = net.forward_batch(&x);
        for c in 0..4 {
            let yc = net.forward(&x.column(c).into_owned());
            assert!((y.column(c) - yc).amax() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 6, 5, 3], 1.0, &mut rng);
        let x = DMatrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let target = DMatrix::from_fn(3, 3, |r, c| (r + c) as f64 * 0.1);
        let loss = |n: &Mlp| {
            let (y, _) = n.forward_batch(&x);
            0.5 * (y - &target).norm_squared()
        };
        let (y, cache) = net.forward_batch(&x);
        let g = net.backward(&cache, &(y - &target));
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for (r, c) in [(0, 0), (1, 2), (2, 1)] {
                let mut p = net.clone();
                p.layers[li].w[(r, c)] += h;
                let mut m = net.clone();
                m.layers[li].w[(r, c)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - g.layers[li].w[(r, c)]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
            let mut p = net.clone();
            p.layers[li].b[1] += h;
            let mut m = net.clone();
            m.layers[li].b[1] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g.layers[li].b[1]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        let flat = net.flatten();
        assert_eq!(flat.len(), net.n_params());
        assert_eq!(flat[1], net.layers[0].w[(0, 1)]);
        let mut other = Mlp::zeros(&[3, 4, 2]);
        assert_eq!(other.load_flat(&flat), flat.len());
        assert_eq!(other, net);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.begin();
            opt.update(0, &mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }
}
