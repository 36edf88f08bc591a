//! Define-by-run gradient tape.
//!
//! Every differentiable operation on a [`Var`] whose inputs require gradients
//! appends one node to the tape. Nodes are only ever appended, so the node
//! order is a topological order and [`Tape::backward`] is a single reverse
//! sweep.

use std::cell::{Cell, RefCell};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle of a recorded node.
pub type NodeId = usize;

pub(crate) type BackwardFn<E> = Box<dyn Fn(&Tensor<E>, &[bool]) -> Vec<Option<Tensor<E>>>>;

struct Node<E: Scalar> {
    op: &'static str,
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn<E>>,
}

/// ReLU activation patterns, captured from one pass and imposed on another.
#[derive(Default)]
enum MaskMode {
    #[default]
    Off,
    Record(Vec<Vec<bool>>),
    Replay(Vec<Vec<bool>>, usize),
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<E: Scalar = f32> {
    nodes: RefCell<Vec<Node<E>>>,
    events: RefCell<Vec<String>>,
    grad_enabled: bool,
    check_finite: Cell<bool>,
    audit: Cell<bool>,
    relu_masks: RefCell<MaskMode>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            events: RefCell::new(Vec::new()),
            grad_enabled: true,
            check_finite: Cell::new(true),
            audit: Cell::new(false),
            relu_masks: RefCell::new(MaskMode::Off),
        }
    }

    /// A tape that never records; every value it produces is a constant.
    pub fn no_grad() -> Self {
        Tape { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Toggles the post-op finiteness check (on by default).
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    /// Asks layers to note diagnostic summaries as events (off by default).
    pub fn set_audit(&self, on: bool) {
        self.audit.set(on);
    }

    pub fn audit(&self) -> bool {
        self.audit.get()
    }

    /// Starts capturing the on/off pattern of every ReLU evaluated on this tape.
    pub fn record_relu_masks(&self) {
        *self.relu_masks.borrow_mut() = MaskMode::Record(Vec::new());
    }

    /// Captured patterns, in evaluation order; recording stops.
    pub fn take_relu_masks(&self) -> Vec<Vec<bool>> {
        match std::mem::take(&mut *self.relu_masks.borrow_mut()) {
            MaskMode::Record(m) => m,
            _ => Vec::new(),
        }
    }

    /// Makes the ReLUs evaluated on this tape use the given patterns instead
    /// of the signs of their inputs, turning the network into a smooth
    /// function that agrees with the original in value and gradient at the
    /// point where the patterns were captured.
    pub fn replay_relu_masks(&self, masks: Vec<Vec<bool>>) {
        *self.relu_masks.borrow_mut() = MaskMode::Replay(masks, 0);
    }

    /// Hook used by `relu`: the imposed mask, or `None` after recording the
    /// natural one.
    pub(crate) fn relu_mask(&self, x: &Tensor<E>) -> Result<Option<Vec<bool>>> {
        let mut mode = self.relu_masks.borrow_mut();
        match &mut *mode {
            MaskMode::Off => Ok(None),
            MaskMode::Record(all) => {
                all.push(x.data().iter().map(|&v| v > E::zero()).collect());
                Ok(None)
            }
            MaskMode::Replay(all, next) => {
                let m =
                    all.get(*next).filter(|m| m.len() == x.numel()).cloned().ok_or_else(|| {
                        Error::Contract(format!("replayed relu mask {next} does not match this graph"))
                    })?;
                *next += 1;
                Ok(Some(m))
            }
        }
    }

    /// Leaf variable. Gradients are tracked when `requires_grad` is set and
    /// the tape records.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        let node = if requires_grad && self.grad_enabled {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node { op: "leaf", parents: Vec::new(), backward: None });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var { tape: self, node, value }
    }

    pub fn param(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op kinds of all recorded nodes in recording order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Appends a free-form trace event; used for structural instrumentation.
    pub fn note(&self, event: impl Into<String>) {
        self.events.borrow_mut().push(event.into());
    }

    pub fn events(&self) -> Vec<String> {
        self.events.borrow().clone()
    }

    pub(crate) fn push<'t>(
        &'t self,
        op: &'static str,
        value: Tensor<E>,
        parents: &[&Var<'t, E>],
        backward: impl Fn(&Tensor<E>, &[bool]) -> Vec<Option<Tensor<E>>> + 'static,
    ) -> Result<Var<'t, E>> {
        if self.check_finite.get() && !value.all_finite() {
            return Err(Error::Numeric(format!("{op} produced a non-finite value (output shape {:?})", value.shape())));
        }
        let tracked = self.grad_enabled && parents.iter().any(|p| p.node.is_some());
        let node = if tracked {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                op,
                parents: parents.iter().map(|p| p.node).collect(),
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Ok(Var { tape: self, node, value })
    }

    /// Reverse sweep from a scalar loss. Gradients of every tracked leaf are
    /// returned; a leaf used several times receives the sum of its paths.
    pub fn backward(&self, loss: &Var<'_, E>) -> Result<Gradients<E>> {
        if loss.value.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", loss.value.shape())));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; nodes.len()];
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::ones(loss.value.shape()));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let (Some(p), Some(pg)) = (parent, pg) else {
                    continue;
                };
                match &mut grads[*p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
pub struct Gradients<E: Scalar = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn get(&self, var: &Var<'_, E>) -> Option<&Tensor<E>> {
        var.node.and_then(|id| self.grads.get(id)?.as_ref())
    }

    /// Gradient of `var`, or zeros when it did not influence the loss.
    pub fn get_or_zeros(&self, var: &Var<'_, E>) -> Tensor<E> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// A tensor value bound to a tape.
///
/// Variables that do not require gradients carry no node and cost nothing to
/// record; this is how inference runs on a [`Tape::no_grad`] tape.
#[derive(Clone)]
pub struct Var<'t, E: Scalar = f32> {
    pub(crate) tape: &'t Tape<E>,
    pub(crate) node: Option<NodeId>,
    pub(crate) value: Tensor<E>,
}

impl<'t, E: Scalar> Var<'t, E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<E> {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn rank(&self) -> usize {
        self.value.rank()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t, E> {
        self.tape.constant(self.value.clone())
    }
}

impl<E: Scalar> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(node={:?}, {:?})", self.node, self.value)
    }
}
