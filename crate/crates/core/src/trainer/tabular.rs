use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, Policy};
use crate::gridworld::Action;
use crate::schema::ActionMask;

const N: usize = 7;

/// Tabular action values keyed by [`Observation::key`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QTable {
    values: HashMap<u64, [f32; N]>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: u64) -> Option<&[f32; N]> {
        self.values.get(&key)
    }

    /// Highest value over `mask`, zero for unseen keys.
    pub fn max_over(&self, key: u64, mask: ActionMask) -> f32 {
        match self.values.get(&key) {
            Some(q) => mask.iter().map(|a| q[a]).fold(f32::NEG_INFINITY, f32::max),
            None => 0.0,
        }
    }

    /// Greedy action within `mask`; ties break uniformly at random.
    pub fn greedy<R: Rng + ?Sized>(&self, key: u64, mask: ActionMask, rng: &mut R) -> usize {
        let allowed: Vec<usize> = mask.iter().collect();
        let Some(q) = self.values.get(&key) else {
            return allowed[rng.gen_range(0..allowed.len())];
        };
        let best = allowed.iter().map(|&a| q[a]).fold(f32::NEG_INFINITY, f32::max);
        let ties: Vec<usize> = allowed.into_iter().filter(|&a| q[a] == best).collect();
        ties[rng.gen_range(0..ties.len())]
    }

    pub fn value(&self, key: u64, action: usize) -> f32 {
        self.values.get(&key).map_or(0.0, |q| q[action])
    }

    pub fn update(&mut self, key: u64, action: usize, target: f32, alpha: f32) {
        let q = self.values.entry(key).or_insert([0.0; N]);
        q[action] += alpha * (target - q[action]);
    }

    pub fn add(&mut self, key: u64, action: usize, delta: f32) {
        self.values.entry(key).or_insert([0.0; N])[action] += delta;
    }
}

/// Replacing eligibility traces for Watkins's Q(lambda).
#[derive(Clone, Debug, Default)]
pub struct Traces {
    items: Vec<(u64, usize, f32)>,
}

impl Traces {
    const CUTOFF: f32 = 1e-3;

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Marks `(key, action)` as just visited and spreads `alpha * delta`
    /// over all traced pairs, then decays the traces by `decay`.
    pub fn backup(&mut self, q: &mut QTable, key: u64, action: usize, step: f32, decay: f32) {
        self.items.retain(|&(k, a, _)| k != key || a != action);
        self.items.push((key, action, 1.0));
        for (k, a, e) in &mut self.items {
            q.add(*k, *a, step * *e);
            *e *= decay;
        }
        self.items.retain(|&(_, _, e)| e >= Self::CUTOFF);
    }
}

impl Serialize for QTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut pairs: Vec<(u64, [f32; N])> = self.values.iter().map(|(k, v)| (*k, *v)).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for QTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(u64, [f32; N])>::deserialize(d)?;
        Ok(Self {
            values: pairs.into_iter().collect(),
        })
    }
}

impl Policy for QTable {
    fn act(&mut self, obs: &Observation, rng: &mut dyn rand::RngCore) -> Action {
        Action::from_index(self.greedy(obs.key(), obs.mask, rng)).expect("mask is within the action set")
    }
}
