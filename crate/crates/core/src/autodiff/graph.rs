use crate::error::{invalid, Result};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Maps the output gradient to one gradient per parent (same order).
pub(crate) type Backward = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// A tape of tensor operations. Nodes are appended in evaluation order, so
/// a reverse sweep visits every node once, after all of its consumers.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records no backward closures: parameters enter as
    /// constants. For inference.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A free input whose gradient is kept after [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = !self.no_grad;
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            param: None,
        })
    }

    /// Snapshot of a stored parameter; its gradient flows back through
    /// [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_node(Node {
            value: p.value.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad: p.requires_grad && !self.no_grad,
            param: Some(id),
        })
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&[f64]) -> Vec<Vec<f64>> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then(|| Box::new(backward) as Backward),
            requires_grad,
            param: None,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient from the last backward sweep, if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.backward_with_seed(root, &[1.0])
    }

    /// Vector-Jacobian product of `root` with `seed`.
    pub fn backward_with_seed(&mut self, root: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(invalid("seed length differs from root size"));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(seed.to_vec());
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(back) = &node.backward {
                let parent_grads = back(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    match &mut self.grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(pg),
                    }
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// `(param, gradient)` pairs reached by the last backward sweep.
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            let id = n.param?;
            let g = self.grads.get(i)?.as_deref()?;
            Some((id, g))
        })
    }
}
