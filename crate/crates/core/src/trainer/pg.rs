//! A one-hidden-layer softmax policy trained with REINFORCE and Adam.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, Policy};
use crate::gridworld::{Action, DoorState};
use crate::schema::ActionMask;

const A: usize = 7;
const MEMORY_RADIX: usize = 8;

/// Shape of the feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub grid: usize,
    pub num_tasks: usize,
    pub memory_len: usize,
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        2 * self.grid + 4 + 7 + 6 + 18 + 6 + self.num_tasks + self.memory_len * MEMORY_RADIX
    }

    pub fn encode(&self, obs: &Observation) -> Vec<f32> {
        let mut x = vec![0.0f32; self.dim()];
        let d = &obs.state.dynamic;
        let mut off = 0;
        let hot = |x: &mut Vec<f32>, off: &mut usize, width: usize, i: usize| {
            if i < width {
                x[*off + i] = 1.0;
            }
            *off += width;
        };
        hot(&mut x, &mut off, self.grid, d.agent.x as usize);
        hot(&mut x, &mut off, self.grid, d.agent.y as usize);
        hot(&mut x, &mut off, 4, d.dir as usize);
        hot(&mut x, &mut off, 7, d.carried.map_or(6, |c| c.index()));
        for k in &d.keys {
            x[off] = k.is_some() as u8 as f32;
            off += 1;
        }
        for door in &d.doors {
            let i = match door {
                DoorState::Open => 0,
                DoorState::Closed => 1,
                DoorState::Locked => 2,
            };
            hot(&mut x, &mut off, 3, i);
        }
        for c in 0..6 {
            x[off] = (d.boxes >> c & 1) as f32;
            off += 1;
        }
        hot(&mut x, &mut off, self.num_tasks, obs.task_index);
        for m in 0..self.memory_len {
            let v = obs.memory.get(m).map_or(0, |&v| v as usize);
            hot(&mut x, &mut off, MEMORY_RADIX, v.min(MEMORY_RADIX - 1));
        }
        x
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

/// Masked softmax MLP policy.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MlpPolicy {
    pub features: FeatureSpec,
    hidden: usize,
    /// `w1 (hidden x dim) | b1 | w2 (A x hidden) | b2`, flattened.
    params: Vec<f32>,
    adam: Adam,
    #[serde(skip)]
    grad: Vec<f32>,
}

struct Forward {
    h: Vec<f32>,
    probs: [f32; A],
}

impl MlpPolicy {
    pub fn new(features: FeatureSpec, hidden: usize, seed: u64) -> Self {
        let dim = features.dim();
        let n = hidden * dim + hidden + A * hidden + A;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; n];
        let s1 = (1.0 / dim as f32).sqrt();
        let s2 = (1.0 / hidden as f32).sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            let scale = if i < hidden * dim {
                s1
            } else if i >= hidden * dim + hidden && i < n - A {
                s2
            } else {
                0.0
            };
            *p = rng.gen_range(-1.0..1.0) * scale;
        }
        Self {
            features,
            hidden,
            adam: Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
            grad: vec![0.0; n],
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let dim = self.features.dim();
        let b1 = self.hidden * dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + A * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, x: &[f32], mask: ActionMask) -> Forward {
        let dim = x.len();
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut h = vec![0.0f32; self.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &p[j * dim..(j + 1) * dim];
            let mut z = p[b1 + j];
            for (w, xi) in row.iter().zip(x) {
                if *xi != 0.0 {
                    z += w * xi;
                }
            }
            *hj = z.tanh();
        }
        let mut logits = [f32::NEG_INFINITY; A];
        for (a, l) in logits.iter_mut().enumerate() {
            if !mask.contains(a) {
                continue;
            }
            let row = &p[w2 + a * self.hidden..w2 + (a + 1) * self.hidden];
            *l = p[b2 + a] + row.iter().zip(&h).map(|(w, hj)| w * hj).sum::<f32>();
        }
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut probs = [0.0f32; A];
        let mut total = 0.0;
        for a in 0..A {
            if logits[a].is_finite() {
                probs[a] = (logits[a] - max).exp();
                total += probs[a];
            }
        }
        probs.iter_mut().for_each(|q| *q /= total);
        Forward { h, probs }
    }

    /// Action probabilities; exactly zero outside `mask`.
    pub fn probabilities(&self, obs: &Observation) -> [f32; A] {
        self.forward(&self.features.encode(obs), obs.mask).probs
    }

    pub fn log_prob(&self, x: &[f32], mask: ActionMask, action: usize) -> f32 {
        self.forward(x, mask).probs[action].ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> usize {
        let probs = self.probabilities(obs);
        let u: f32 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for a in obs.mask.iter() {
            acc += probs[a];
            last = a;
            if u < acc {
                return a;
            }
        }
        last
    }

    /// Adds `weight * d log pi(action | x) / d params` to the gradient buffer.
    pub fn accumulate(&mut self, x: &[f32], mask: ActionMask, action: usize, weight: f32) {
        if self.grad.len() != self.params.len() {
            self.grad = vec![0.0; self.params.len()];
        }
        let f = self.forward(x, mask);
        let dim = x.len();
        let (b1, w2, b2) = self.offsets();
        let mut dh = vec![0.0f32; self.hidden];
        for a in mask.iter() {
            let g = weight * ((a == action) as u8 as f32 - f.probs[a]);
            if g == 0.0 {
                continue;
            }
            self.grad[b2 + a] += g;
            for j in 0..self.hidden {
                self.grad[w2 + a * self.hidden + j] += g * f.h[j];
                dh[j] += g * self.params[w2 + a * self.hidden + j];
            }
        }
        for j in 0..self.hidden {
            let dz = dh[j] * (1.0 - f.h[j] * f.h[j]);
            if dz == 0.0 {
                continue;
            }
            self.grad[b1 + j] += dz;
            for (i, xi) in x.iter().enumerate() {
                if *xi != 0.0 {
                    self.grad[j * dim + i] += dz * xi;
                }
            }
        }
    }

    pub fn gradient(&self) -> &[f32] {
        &self.grad
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// One Adam ascent step along the accumulated gradient, then clears it.
    pub fn apply(&mut self, lr: f32) {
        if self.grad.len() != self.params.len() {
            return;
        }
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        let ad = &mut self.adam;
        ad.t += 1;
        let c1 = 1.0 - B1.powi(ad.t);
        let c2 = 1.0 - B2.powi(ad.t);
        for i in 0..self.params.len() {
            let g = self.grad[i];
            ad.m[i] = B1 * ad.m[i] + (1.0 - B1) * g;
            ad.v[i] = B2 * ad.v[i] + (1.0 - B2) * g * g;
            self.params[i] += lr * (ad.m[i] / c1) / ((ad.v[i] / c2).sqrt() + 1e-8);
            self.grad[i] = 0.0;
        }
    }
}

impl Policy for MlpPolicy {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn rand::RngCore) -> Action {
        let probs = self.probabilities(obs);
        let best = obs
            .mask
            .iter()
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
            .expect("masks are non-empty");
        Action::from_index(best).expect("mask is within the action set")
    }
}
