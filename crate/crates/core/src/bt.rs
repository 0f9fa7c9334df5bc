//! Behavior-tree engine for MRBTs.
//!
//! Control nodes are memoryless Sequence and Fallback; every tick restarts at
//! the root. Only ticked leaves transition; the tick's reward is the sum of
//! their step rewards and its mask is the mask of the last ticked leaf.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::formula::{EvalError, Formula, TaskBinding, Valuation};
use crate::mbrm::{LabelSet, Mbrm, MbrmState};
use crate::schema::{ActionMask, EnvSchema};

pub type LeafId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BtNode {
    Sequence(Vec<BtNode>),
    Fallback(Vec<BtNode>),
    Leaf(LeafId),
}

impl BtNode {
    pub fn count(&self) -> usize {
        match self {
            BtNode::Leaf(_) => 1,
            BtNode::Sequence(c) | BtNode::Fallback(c) => 1 + c.iter().map(BtNode::count).sum::<usize>(),
        }
    }

    /// Leaf ids in depth-first order.
    pub fn leaf_order(&self) -> Vec<LeafId> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<LeafId>) {
        match self {
            BtNode::Leaf(id) => out.push(*id),
            BtNode::Sequence(c) | BtNode::Fallback(c) => c.iter().for_each(|n| n.collect_leaves(out)),
        }
    }

    fn has_empty_control(&self) -> bool {
        match self {
            BtNode::Leaf(_) => false,
            BtNode::Sequence(c) | BtNode::Fallback(c) => c.is_empty() || c.iter().any(BtNode::has_empty_control),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("tree has no leaves")]
    Empty,
    #[error("control node without children")]
    EmptyControl,
    #[error("leaf {0} is referenced {1} times; every leaf must appear exactly once")]
    LeafMultiplicity(LeafId, usize),
    #[error("leaf {0} is not declared")]
    UnknownLeaf(LeafId),
    #[error("leaf {0} has an empty action mask or one outside the action set")]
    BadMask(LeafId),
    #[error("leaf {0} references formula {1}, but L has {2} formulas")]
    UnknownFormula(LeafId, usize, usize),
    #[error("at most 64 formulas are supported, got {0}")]
    TooManyFormulas(usize),
}

/// Outcome of one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TickResult {
    /// Ticked leaves in tick order (`epsilon_t`).
    pub ticked: Vec<LeafId>,
    pub reward: f64,
    pub mask: ActionMask,
    pub root_status: MbrmState,
}

/// A masking reward behavior tree with its current state assignment.
#[derive(Clone, Debug)]
pub struct Mrbt {
    root: BtNode,
    leaves: Vec<Mbrm>,
    assignment: Vec<MbrmState>,
    formulas: Vec<Formula>,
    schema: Arc<EnvSchema>,
}

impl Mrbt {
    pub fn new(
        root: BtNode,
        leaves: Vec<Mbrm>,
        formulas: Vec<Formula>,
        schema: Arc<EnvSchema>,
    ) -> Result<Self, TreeError> {
        if leaves.is_empty() {
            return Err(TreeError::Empty);
        }
        if root.has_empty_control() {
            return Err(TreeError::EmptyControl);
        }
        if formulas.len() > LabelSet::CAPACITY {
            return Err(TreeError::TooManyFormulas(formulas.len()));
        }
        let order = root.leaf_order();
        if let Some(&bad) = order.iter().find(|&&id| id >= leaves.len()) {
            return Err(TreeError::UnknownLeaf(bad));
        }
        for id in 0..leaves.len() {
            let n = order.iter().filter(|&&x| x == id).count();
            if n != 1 {
                return Err(TreeError::LeafMultiplicity(id, n));
            }
        }
        let full = schema.full_mask();
        for (id, leaf) in leaves.iter().enumerate() {
            if leaf.mask().is_empty() || !leaf.mask().is_subset(full) {
                return Err(TreeError::BadMask(id));
            }
            if let Some(rho) = leaf.rho() {
                if rho >= formulas.len() {
                    return Err(TreeError::UnknownFormula(id, rho, formulas.len()));
                }
            }
        }
        let assignment = leaves.iter().map(Mbrm::initial_state).collect();
        Ok(Self {
            root,
            leaves,
            assignment,
            formulas,
            schema,
        })
    }

    pub fn root(&self) -> &BtNode {
        &self.root
    }

    pub fn leaves(&self) -> &[Mbrm] {
        &self.leaves
    }

    pub fn formulas(&self) -> &[Formula] {
        &self.formulas
    }

    pub fn schema(&self) -> &Arc<EnvSchema> {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.root.count()
    }

    pub fn assignment(&self) -> &[MbrmState] {
        &self.assignment
    }

    /// Overwrites the state assignment. Panics on a length mismatch.
    pub fn set_assignment(&mut self, assignment: &[MbrmState]) {
        assert_eq!(assignment.len(), self.leaves.len());
        self.assignment.copy_from_slice(assignment);
    }

    /// Restores the initial state assignment `u0`.
    pub fn reset(&mut self) {
        for (u, leaf) in self.assignment.iter_mut().zip(&self.leaves) {
            *u = leaf.initial_state();
        }
    }

    /// Labeling function: the formulas of `L` satisfied by `(state, task)`.
    pub fn label<V, T>(&self, state: &V, task: &T) -> Result<LabelSet, EvalError>
    where
        V: Valuation + ?Sized,
        T: TaskBinding + ?Sized,
    {
        let mut out = LabelSet::EMPTY;
        for (i, f) in self.formulas.iter().enumerate() {
            if f.eval(state, task)? {
                out.insert(i);
            }
        }
        Ok(out)
    }

    /// Propagates one tick from the root under label assignment `sigma`.
    pub fn tick(&mut self, sigma: LabelSet) -> TickResult {
        debug_assert!(
            self.formulas.len() >= 64 || sigma.bits() >> self.formulas.len() == 0,
            "label assignment references formulas outside L"
        );
        let mut ticked = Vec::new();
        let mut reward = 0.0;
        let root_status = tick_node(&self.root, &self.leaves, &mut self.assignment, sigma, &mut ticked, &mut reward);
        let last = *ticked.last().expect("validated tree has at least one leaf");
        TickResult {
            mask: self.leaves[last].mask(),
            ticked,
            reward,
            root_status,
        }
    }
}

fn tick_node(
    node: &BtNode,
    leaves: &[Mbrm],
    assignment: &mut [MbrmState],
    sigma: LabelSet,
    ticked: &mut Vec<LeafId>,
    reward: &mut f64,
) -> MbrmState {
    match node {
        BtNode::Leaf(id) => {
            let (next, r) = leaves[*id].step(assignment[*id], sigma);
            assignment[*id] = next;
            ticked.push(*id);
            *reward += r;
            next
        }
        BtNode::Sequence(children) => {
            for c in children {
                let s = tick_node(c, leaves, assignment, sigma, ticked, reward);
                if s != MbrmState::Success {
                    return s;
                }
            }
            MbrmState::Success
        }
        BtNode::Fallback(children) => {
            for c in children {
                let s = tick_node(c, leaves, assignment, sigma, ticked, reward);
                if s != MbrmState::Failure {
                    return s;
                }
            }
            MbrmState::Failure
        }
    }
}

/// Writes per-tick debug lines `t,ticked,reward,mask,root_status` as CSV.
pub struct TickTraceWriter<W: Write> {
    out: W,
    num_actions: usize,
}

impl<W: Write> TickTraceWriter<W> {
    pub fn new(mut out: W, num_actions: usize) -> io::Result<Self> {
        writeln!(out, "t,ticked,reward,mask,root_status")?;
        Ok(Self { out, num_actions })
    }

    pub fn record(&mut self, t: usize, tick: &TickResult) -> io::Result<()> {
        let ids: Vec<String> = tick.ticked.iter().map(|i| i.to_string()).collect();
        writeln!(
            self.out,
            "{t},{},{},{},{}",
            ids.join(";"),
            tick.reward,
            tick.mask.to_bit_string(self.num_actions),
            tick.root_status
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
