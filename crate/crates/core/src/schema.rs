//! Environment schema: the predicates formulas may mention and the ordered
//! discrete action set that action masks index into.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six object colors of the gridworld environments, in index order.
pub const COLOR_NAMES: [&str; 6] = ["red", "green", "blue", "purple", "yellow", "grey"];

/// Object color. The discriminant is the color index used by predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red = 0,
    Green = 1,
    Blue = 2,
    Purple = 3,
    Yellow = 4,
    Grey = 5,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Purple,
        Color::Yellow,
        Color::Grey,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: i64) -> Option<Color> {
        usize::try_from(i).ok().and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        COLOR_NAMES[self as usize]
    }

    pub fn from_name(name: &str) -> Option<Color> {
        COLOR_NAMES
            .iter()
            .position(|c| *c == name)
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredicateKind {
    Scalar,
    Coord2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub kind: PredicateKind,
    /// Indexed by one of the six colors (e.g. `door_state[red]`).
    pub color_indexed: bool,
}

impl PredicateDecl {
    pub fn new(name: &str, kind: PredicateKind, color_indexed: bool) -> Self {
        Self {
            name: name.to_string(),
            kind,
            color_indexed,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate action name `{0}`")]
    DuplicateAction(String),
    #[error("duplicate predicate name `{0}`")]
    DuplicatePredicate(String),
    #[error("schema must declare between 1 and 64 actions, got {0}")]
    ActionCount(usize),
    #[error("grid size must be positive")]
    GridSize,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action mask must not be empty")]
    EmptyMask,
}

/// Predicates, ordered actions and grid size of an environment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvSchema {
    predicates: Vec<PredicateDecl>,
    actions: Vec<String>,
    grid_size: usize,
}

impl EnvSchema {
    pub fn new(
        predicates: Vec<PredicateDecl>,
        actions: Vec<String>,
        grid_size: usize,
    ) -> Result<Self, SchemaError> {
        if actions.is_empty() || actions.len() > 64 {
            return Err(SchemaError::ActionCount(actions.len()));
        }
        if grid_size == 0 {
            return Err(SchemaError::GridSize);
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].contains(a) {
                return Err(SchemaError::DuplicateAction(a.clone()));
            }
        }
        for (i, p) in predicates.iter().enumerate() {
            if predicates[..i].iter().any(|q| q.name == p.name) {
                return Err(SchemaError::DuplicatePredicate(p.name.clone()));
            }
        }
        Ok(Self {
            predicates,
            actions,
            grid_size,
        })
    }

    pub fn predicates(&self) -> &[PredicateDecl] {
        &self.predicates
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn action_name(&self, id: usize) -> &str {
        &self.actions[id]
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn full_mask(&self) -> ActionMask {
        ActionMask::full(self.actions.len())
    }

    /// Builds a mask from action names; rejects unknown names and empty lists.
    pub fn mask_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<ActionMask, SchemaError> {
        let mut mask = ActionMask::EMPTY;
        for n in names {
            let id = self
                .action_id(n.as_ref())
                .ok_or_else(|| SchemaError::UnknownAction(n.as_ref().to_string()))?;
            mask.insert(id);
        }
        if mask.is_empty() {
            return Err(SchemaError::EmptyMask);
        }
        Ok(mask)
    }

    pub fn mask_names(&self, mask: ActionMask) -> Vec<String> {
        mask.iter().map(|a| self.actions[a].clone()).collect()
    }
}

/// Bitset over the schema's action list; bit `i` permits action `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionMask(u64);

impl ActionMask {
    pub const EMPTY: ActionMask = ActionMask(0);

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ActionMask(u64::MAX)
        } else {
            ActionMask((1u64 << n) - 1)
        }
    }

    pub fn from_bits(bits: u64) -> Self {
        ActionMask(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_actions(actions: &[usize]) -> Self {
        let mut m = Self::EMPTY;
        for &a in actions {
            m.insert(a);
        }
        m
    }

    pub fn insert(&mut self, action: usize) {
        self.0 |= 1 << action;
    }

    pub fn contains(self, action: usize) -> bool {
        action < 64 && self.0 & (1 << action) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset(self, other: ActionMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ActionMask) -> ActionMask {
        ActionMask(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.0 & (1 << i) != 0)
    }

    /// Renders the mask as a bit string over the first `n` actions, action 0 first.
    pub fn to_bit_string(self, n: usize) -> String {
        (0..n)
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn actions() -> Vec<String> {
        ["left", "right", "forward"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_duplicate_actions() {
        let mut a = actions();
        a.push("left".into());
        assert_eq!(
            EnvSchema::new(vec![], a, 4),
            Err(SchemaError::DuplicateAction("left".into()))
        );
    }

    #[test]
    fn mask_from_names_orders_by_schema() {
        let s = EnvSchema::new(vec![], actions(), 4).unwrap();
        let m = s.mask_from_names(&["forward", "left"]).unwrap();
        assert_eq!(m.bits(), 0b101);
        assert_eq!(m.to_bit_string(3), "101");
        assert_eq!(s.mask_names(m), vec!["left", "forward"]);
        assert_eq!(s.mask_from_names::<&str>(&[]), Err(SchemaError::EmptyMask));
        assert!(s.mask_from_names(&["jump"]).is_err());
    }

    #[test]
    fn color_round_trip() {
        for c in Color::ALL {
            assert_eq!(Color::from_name(c.name()), Some(c));
            assert_eq!(Color::from_index(c.index() as i64), Some(c));
        }
        assert_eq!(Color::from_index(-1), None);
    }
}
