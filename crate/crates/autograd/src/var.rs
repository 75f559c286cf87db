use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct GradModeGuard(bool);

impl GradModeGuard {
    fn set(enabled: bool) -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
        GradModeGuard(prev)
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        let prev = self.0;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::set(false);
    f()
}

/// Runs `f` with graph recording on, even inside [`no_grad`].
pub fn enable_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::set(true);
    f()
}

/// Backward rule: given the op inputs, its output, the incoming gradient and
/// a mask of which inputs need a gradient, returns one entry per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[Var], &Var, &Var, &[bool]) -> Vec<Option<Var>>>;

struct GradFn {
    name: &'static str,
    inputs: Vec<Var>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// A tensor value tracked in the autodiff graph.
///
/// Cloning a `Var` is cheap: it shares the node.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl Var {
    fn make(value: Tensor, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Self {
        Self::make(value, false, None)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Tensor) -> Self {
        Self::make(value, true, None)
    }

    pub(crate) fn from_op(name: &'static str, value: Tensor, inputs: Vec<Var>, backward: BackwardFn) -> Self {
        if is_grad_enabled() && inputs.iter().any(Var::requires_grad) {
            Self::make(
                value,
                true,
                Some(GradFn {
                    name,
                    inputs,
                    backward,
                }),
            )
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.0.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Name of the op that produced this value, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    /// Copy of the value cut from the graph.
    pub fn detach(&self) -> Var {
        if self.requires_grad() {
            Var::constant(self.value().clone())
        } else {
            self.clone()
        }
    }

    fn inputs(&self) -> &[Var] {
        self.0.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[])
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id())
            .field("op", &self.op_name())
            .field("requires_grad", &self.requires_grad())
            .field("value", self.value())
            .finish()
    }
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are themselves part of the
/// graph and can be differentiated again. Entries are `None` when `output`
/// does not depend on that variable.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(
        output.numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    if !output.requires_grad() {
        return vec![None; wrt.len()];
    }

    // Ids grow monotonically with creation, so sorting by id is a topological order.
    let mut nodes: Vec<Var> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![output.clone()];
    seen.insert(output.id());
    while let Some(v) = stack.pop() {
        for i in v.inputs() {
            if i.requires_grad() && seen.insert(i.id()) {
                stack.push(i.clone());
            }
        }
        nodes.push(v);
    }
    nodes.sort_by_key(Var::id);

    let targets: HashSet<u64> = wrt.iter().map(Var::id).collect();
    let mut needed: HashSet<u64> = HashSet::new();
    for v in &nodes {
        if targets.contains(&v.id()) || v.inputs().iter().any(|i| needed.contains(&i.id())) {
            needed.insert(v.id());
        }
    }

    let _mode = GradModeGuard::set(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
    let mut found: HashMap<u64, Var> = HashMap::new();

    for v in nodes.iter().rev() {
        if !needed.contains(&v.id()) {
            continue;
        }
        let Some(g) = grads.remove(&v.id()) else {
            continue;
        };
        if targets.contains(&v.id()) {
            found.insert(v.id(), g.clone());
        }
        let Some(gf) = v.0.grad_fn.as_ref() else {
            continue;
        };
        let needs: Vec<bool> = gf
            .inputs
            .iter()
            .map(|i| i.requires_grad() && needed.contains(&i.id()))
            .collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        let input_grads = (gf.backward)(&gf.inputs, v, &g, &needs);
        debug_assert_eq!(input_grads.len(), gf.inputs.len(), "backward of {} returned wrong arity", gf.name);
        for ((inp, gi), need) in gf.inputs.iter().zip(input_grads).zip(&needs) {
            let (Some(gi), true) = (gi, *need) else {
                continue;
            };
            debug_assert_eq!(gi.shape(), inp.shape(), "gradient shape mismatch in {}", gf.name);
            let acc = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&gi),
                None => gi,
            };
            grads.insert(inp.id(), acc);
        }
    }

    wrt.iter().map(|w| found.get(&w.id()).cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_grad_produces_constants_and_restores_mode() {
        let x = Var::leaf(Tensor::scalar(2.0));
        let y = no_grad(|| x.mul(&x));
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
        let z = x.mul(&x);
        assert!(z.requires_grad());
    }

    #[test]
    fn shared_input_accumulates() {
        let x = Var::leaf(Tensor::scalar(3.0));
        let y = x.mul(&x).add(&x); // x^2 + x
        let g = grad(&y, &[x.clone()], false)[0].clone().unwrap();
        assert_eq!(g.value().item(), 7.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let x = Var::leaf(Tensor::scalar(1.5));
        let y = x.mul(&x).mul(&x);
        let g = grad(&y, &[x.clone()], true)[0].clone().unwrap();
        assert!((g.value().item() - 3.0 * 2.25).abs() < 1e-12);
        let gg = grad(&g, &[x.clone()], false)[0].clone().unwrap();
        assert!((gg.value().item() - 6.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn unrelated_variable_has_no_gradient() {
        let x = Var::leaf(Tensor::scalar(1.0));
        let y = Var::leaf(Tensor::scalar(2.0));
        let z = x.scale(3.0);
        let g = grad(&z, &[x, y], false);
        assert!(g[0].is_some());
        assert!(g[1].is_none());
    }

    #[test]
    fn gradients_without_create_graph_are_constants() {
        let x = Var::leaf(Tensor::scalar(2.0));
        let y = x.mul(&x);
        let g = grad(&y, &[x], false)[0].clone().unwrap();
        assert!(!g.requires_grad());
    }
}
