//! Dense tensors with a reverse-mode gradient tape.
//!
//! A [`Tensor`] is an immutable value once built; only its gradient slot
//! changes. Every primitive that touches a tensor requiring grad records a
//! backward closure on the output node, and [`Tensor::backward`] walks the
//! recorded graph once, consuming it.

mod gradcheck;
mod ops;
mod optim;
mod params;

pub use gradcheck::{finite_difference_check, grad_check, GradCheckReport, PRIMITIVES};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::ParamStore;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Storage precision for primitive outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

thread_local! {
    static PRECISION: Cell<Precision> = const { Cell::new(Precision::F32) };
}

pub fn precision() -> Precision {
    PRECISION.with(|p| p.get())
}

/// Runs `f` with the thread's precision set to `p`, restoring it afterwards.
pub fn with_precision<R>(p: Precision, f: impl FnOnce() -> R) -> R {
    struct Restore(Precision);
    impl Drop for Restore {
        fn drop(&mut self) {
            PRECISION.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(PRECISION.with(|c| c.replace(p)));
    f()
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: RefCell<Option<GradFn>>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn round_to_precision(data: &mut [f64]) {
    if precision() == Precision::F32 {
        for v in data.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, mut data: Vec<f64>, requires_grad: bool) -> Self {
        round_to_precision(&mut data);
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: RefCell::new(None),
        }))
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(crate::error::shape_err(
                "new",
                format!("zero extent in {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(crate::error::shape_err(
                "new",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        let t = Self::leaf(shape.to_vec(), data, false);
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("new"));
        }
        Ok(t)
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        assert!(v.is_finite(), "fill value must be finite");
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self::leaf(shape.to_vec(), vec![v; numel(shape)], false)
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let data = (0..numel(shape))
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..numel(shape))
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A fresh leaf with the same values that records gradients.
    pub fn requires_grad(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true)
    }

    /// A fresh leaf with the same values, cut from any graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on a tensor with {} values",
            self.numel()
        );
        self.0.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    /// Same values, new shape, no graph; used by non-differentiable paths.
    pub fn with_shape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.0.data.clone())
    }

    /// Builds the output of a primitive. `backward` maps the output gradient
    /// to one optional gradient per parent.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        mut data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len());
        round_to_precision(&mut data);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let grad_fn = if requires_grad {
            Some(GradFn {
                parents,
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Ok(Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: RefCell::new(grad_fn),
        })))
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Leaf gradients are accumulated into their grad slots and also returned
    /// keyed by tensor id. The recorded graph is consumed.
    pub fn backward(&self) -> Result<HashMap<usize, Vec<f64>>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.0.requires_grad {
            return Err(Error::DetachedGraph);
        }

        // Post-order DFS gives parents before children; reverse it.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.0.grad_fn.borrow().as_ref() {
                for p in &gf.parents {
                    if p.0.requires_grad && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        let mut leaves = HashMap::new();
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.0.id) else {
                continue;
            };
            let grad_fn = t.0.grad_fn.borrow_mut().take();
            match grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.0.requires_grad {
                            continue;
                        }
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                }
                None => {
                    accumulate(&t.0.grad, &g);
                    leaves.insert(t.0.id, g);
                }
            }
        }
        Ok(leaves)
    }
}

fn accumulate(slot: &RefCell<Option<Vec<f64>>>, g: &[f64]) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length_and_finiteness() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(
            Tensor::new(&[1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn f32_mode_rounds_storage() {
        let x = Tensor::from_vec(vec![0.1]).unwrap();
        assert_eq!(x.item(), 0.1f32 as f64);
        let y = with_precision(Precision::F64, || Tensor::from_vec(vec![0.1]).unwrap());
        assert_eq!(y.item(), 0.1);
        assert_eq!(precision(), Precision::F32);
    }

    #[test]
    fn backward_sum_is_ones() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0])
            .unwrap()
            .requires_grad();
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap().requires_grad();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
        assert_eq!(grads[&x.id()], vec![2.0, 4.0]);
    }

    #[test]
    fn backward_errors() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap().requires_grad();
        assert!(matches!(
            x.scale(2.0).unwrap().backward(),
            Err(Error::NonScalarLoss(_))
        ));
        let c = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(matches!(c.backward(), Err(Error::DetachedGraph)));
    }

    #[test]
    fn tape_is_consumed() {
        let x = Tensor::from_vec(vec![3.0]).unwrap().requires_grad();
        let loss = x.scale(2.0).unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        // Second sweep has no recorded ops left to reach the leaf.
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::from_vec(vec![2.0]).unwrap().requires_grad();
        let y = x.scale(3.0).unwrap();
        let loss = y.add(&y).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }
}
