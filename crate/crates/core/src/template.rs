//! The MRBT construction template for sequences of object-interaction
//! subtasks.
//!
//! Each subtask `i` contributes the subtree
//! `Fallback(Condition(psi_i), Sequence(Navigation(phi_i), Interaction))`
//! under a Sequence root. The condition leaf emits the full action set, the
//! navigation leaf emits the subtask's navigation mask and the interaction
//! leaf its interaction mask.

use std::sync::Arc;

use thiserror::Error;

use crate::bt::{BtNode, LeafId, Mrbt, TreeError};
use crate::formula::{EvalError, Formula, TaskBinding, Valuation};
use crate::mbrm::{FormulaId, LabelSet, Mbrm, RewardConfig};
use crate::schema::{ActionMask, EnvSchema};

/// Largest number of subtasks whose `2k` formulas fit a [`LabelSet`].
pub const MAX_SUBTASKS: usize = LabelSet::CAPACITY / 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskSpec {
    pub name: String,
    /// Completion formula.
    pub psi: Formula,
    /// Object-proximity formula.
    pub phi: Formula,
    pub mask_nav: ActionMask,
    pub mask_interact: ActionMask,
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("the template needs at least one subtask")]
    NoSubtasks,
    #[error("at most {MAX_SUBTASKS} subtasks are supported, got {0}")]
    TooManySubtasks(usize),
    #[error("subtask {index} (`{name}`) does not match the environment schema: {reason}")]
    SchemaMismatch {
        index: usize,
        name: String,
        reason: &'static str,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub fn psi_id(subtask: usize) -> FormulaId {
    2 * subtask
}

pub fn phi_id(subtask: usize) -> FormulaId {
    2 * subtask + 1
}

pub fn condition_leaf(subtask: usize) -> LeafId {
    3 * subtask
}

pub fn navigation_leaf(subtask: usize) -> LeafId {
    3 * subtask + 1
}

pub fn interaction_leaf(subtask: usize) -> LeafId {
    3 * subtask + 2
}

/// Subtask index owning a template leaf.
pub fn subtask_of_leaf(leaf: LeafId) -> usize {
    leaf / 3
}

fn check_subtask(i: usize, st: &SubtaskSpec, schema: &EnvSchema) -> Result<(), TemplateError> {
    let mismatch = |reason| TemplateError::SchemaMismatch {
        index: i,
        name: st.name.clone(),
        reason,
    };
    let full = schema.full_mask();
    if st.mask_nav.is_empty() || st.mask_interact.is_empty() {
        return Err(mismatch("action masks must be non-empty"));
    }
    if !st.mask_nav.is_subset(full) || !st.mask_interact.is_subset(full) {
        return Err(mismatch("action mask names actions outside the schema"));
    }
    if !st.psi.agrees_with(schema) || !st.phi.agrees_with(schema) {
        return Err(mismatch("formula was parsed against a different schema"));
    }
    Ok(())
}

/// Builds the template MRBT from `k >= 1` subtasks.
pub fn build_template(
    subtasks: &[SubtaskSpec],
    schema: Arc<EnvSchema>,
    rewards: &RewardConfig,
) -> Result<Mrbt, TemplateError> {
    if subtasks.is_empty() {
        return Err(TemplateError::NoSubtasks);
    }
    if subtasks.len() > MAX_SUBTASKS {
        return Err(TemplateError::TooManySubtasks(subtasks.len()));
    }
    let full = schema.full_mask();
    let mut formulas = Vec::with_capacity(2 * subtasks.len());
    let mut leaves = Vec::with_capacity(3 * subtasks.len());
    let mut children = Vec::with_capacity(subtasks.len());
    for (i, st) in subtasks.iter().enumerate() {
        check_subtask(i, st, &schema)?;
        formulas.push(st.psi.clone());
        formulas.push(st.phi.clone());
        leaves.push(Mbrm::condition(psi_id(i), full, rewards));
        leaves.push(Mbrm::navigation(phi_id(i), st.mask_nav, rewards));
        leaves.push(Mbrm::interaction(st.mask_interact));
        children.push(BtNode::Fallback(vec![
            BtNode::Leaf(condition_leaf(i)),
            BtNode::Sequence(vec![
                BtNode::Leaf(navigation_leaf(i)),
                BtNode::Leaf(interaction_leaf(i)),
            ]),
        ]));
    }
    Ok(Mrbt::new(BtNode::Sequence(children), leaves, formulas, schema)?)
}

/// Labeling function over the template's formulas: `{psi_i | s,m |= psi_i} ∪ {phi_i | s,m |= phi_i}`.
pub fn label<V, T>(subtasks: &[SubtaskSpec], state: &V, task: &T) -> Result<LabelSet, EvalError>
where
    V: Valuation + ?Sized,
    T: TaskBinding + ?Sized,
{
    let mut out = LabelSet::EMPTY;
    for (i, st) in subtasks.iter().enumerate() {
        if st.psi.eval(state, task)? {
            out.insert(psi_id(i));
        }
        if st.phi.eval(state, task)? {
            out.insert(phi_id(i));
        }
    }
    Ok(out)
}

/// Size of a template MRBT with `k` subtasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructureMetrics {
    /// Behavior-tree nodes, control and leaf.
    pub behaviors: usize,
    /// Reward-machine states, counted as two per MBRM leaf.
    pub rm_states: usize,
    /// Reward-machine edges, counted as four per MBRM leaf (two self-loops
    /// and two flips).
    pub rm_edges: usize,
}

/// Reference size of the equivalent hierarchical reward machine for three
/// subtasks: `(states, edges)`.
pub const HRM_REFERENCE_K3: (usize, usize) = (13, 24);

pub fn structure_metrics(k: usize) -> StructureMetrics {
    StructureMetrics {
        behaviors: 1 + 5 * k,
        rm_states: 6 * k,
        rm_edges: 12 * k,
    }
}
