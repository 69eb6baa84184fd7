//! Minimal reverse-mode autodiff over `ndarray`, specialized for the NCHW
//! convolutional pipeline in this crate.
//!
//! A [`Graph`] is rebuilt for every forward pass. Ops execute eagerly and
//! record a backward closure; [`Graph::backward`] walks the tape in reverse
//! creation order (a valid topological order, since parents always precede
//! children). Nodes reachable only from non-trainable leaves are skipped
//! during backward, so a momentum-encoder forward costs nothing extra.
//!
//! All kernels are deterministic: parallel work is split along fixed
//! boundaries that do not depend on thread count.

pub mod conv;
pub mod gradcheck;
pub mod loss_ops;
pub mod norm;
pub mod params;
pub mod pool;

use crate::float::Scalar;
use ndarray::{ArrayD, Axis, IxDyn, Slice};

pub use params::{ParamKind, ParamStore};

pub type NodeId = usize;

/// Per-channel batch statistics captured by train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnBatchStats<F> {
    pub mean: Vec<F>,
    /// Biased variance (divided by N), as used for normalization.
    pub var: Vec<F>,
    /// Element count per channel (B*H*W).
    pub count: usize,
}

pub(crate) trait Backward<F: Scalar> {
    /// Gradients w.r.t. each parent, given the gradient at the output.
    fn backward(
        &self,
        grad_out: &ArrayD<F>,
        inputs: &[&ArrayD<F>],
        output: &ArrayD<F>,
    ) -> Vec<Option<ArrayD<F>>>;
}

pub(crate) struct Node<F: Scalar> {
    pub value: ArrayD<F>,
    pub parents: Vec<NodeId>,
    pub op: Option<Box<dyn Backward<F>>>,
    pub needs_grad: bool,
}

pub struct Graph<F: Scalar> {
    pub(crate) nodes: Vec<Node<F>>,
    train_mode: bool,
    /// Trainable param leaves registered by `param()`, in registration order.
    pub(crate) param_nodes: Vec<(String, NodeId)>,
    /// Batch statistics collected by train-mode batch norm, keyed by layer prefix.
    pub(crate) bn_stats: Vec<(String, BnBatchStats<F>)>,
}

impl<F: Scalar> Graph<F> {
    pub fn new(train_mode: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            train_mode,
            param_nodes: Vec::new(),
            bn_stats: Vec::new(),
        }
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn leaf(&mut self, value: ArrayD<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: to_standard(value),
            parents: Vec::new(),
            op: None,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: ArrayD<F>) -> NodeId {
        self.leaf(value, false)
    }

    /// Load a parameter from the store as a leaf. Trainable leaves are
    /// registered so their gradients can be collected by name after backward.
    pub fn param(&mut self, store: &ParamStore<F>, name: &str, trainable: bool) -> NodeId {
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not in store"))
            .clone();
        let trainable = trainable && store.kind(name) != ParamKind::Buffer;
        let id = self.leaf(value, trainable);
        if trainable {
            self.param_nodes.push((name.to_string(), id));
        }
        id
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<F> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> F {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.len(), 1);
        v.iter().copied().next().unwrap()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<F>,
        parents: Vec<NodeId>,
        op: Box<dyn Backward<F>>,
    ) -> NodeId {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value: to_standard(value),
            parents,
            op: Some(op),
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub(crate) fn record_bn_stats(&mut self, name: &str, stats: BnBatchStats<F>) {
        self.bn_stats.push((name.to_string(), stats));
    }

    pub fn take_bn_stats(&mut self) -> Vec<(String, BnBatchStats<F>)> {
        std::mem::take(&mut self.bn_stats)
    }

    /// Reverse-mode sweep from `root` (any shape; seeded with ones).
    pub fn backward(&self, root: NodeId) -> Gradients<F> {
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(ArrayD::ones(self.nodes[root].value.raw_dim()));
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            let (op, grad_out) = match (&node.op, &grads[id]) {
                (Some(op), Some(_)) => (op, grads[id].take().unwrap()),
                _ => continue,
            };
            if !node.needs_grad {
                continue;
            }
            let inputs: Vec<&ArrayD<F>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = op.backward(&grad_out, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (slot, g) in node.parents.iter().zip(parent_grads) {
                if let Some(g) = g {
                    if self.nodes[*slot].needs_grad {
                        accumulate(&mut grads[*slot], g);
                    }
                }
            }
            // grads[id] already taken; intermediate gradient is dropped here.
        }
        Gradients { grads }
    }

    /// Like [`backward`](Self::backward), but keeps every intermediate
    /// gradient (needed when inspecting activations, e.g. Grad-CAM).
    pub fn backward_retaining(&self, root: NodeId) -> Gradients<F> {
        let mut grads: Vec<Option<ArrayD<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(ArrayD::ones(self.nodes[root].value.raw_dim()));
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if node.op.is_none() || grads[id].is_none() || !node.needs_grad {
                continue;
            }
            let grad_out = grads[id].clone().unwrap();
            let inputs: Vec<&ArrayD<F>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = node.op.as_ref().unwrap().backward(&grad_out, &inputs, &node.value);
            for (slot, g) in node.parents.iter().zip(parent_grads) {
                if let Some(g) = g {
                    if self.nodes[*slot].needs_grad {
                        accumulate(&mut grads[*slot], g);
                    }
                }
            }
        }
        Gradients { grads }
    }

    /// Collect gradients of registered trainable params, keyed by name.
    /// Params that received no gradient are omitted.
    pub fn param_grads(&self, grads: &Gradients<F>) -> Vec<(String, ArrayD<F>)> {
        self.param_nodes
            .iter()
            .filter_map(|(name, id)| grads.get(*id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<ArrayD<F>>, g: ArrayD<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(to_standard(g)),
    }
}

/// Ops assume dense row-major buffers; normalize once at node creation.
fn to_standard<F: Scalar>(value: ArrayD<F>) -> ArrayD<F> {
    if value.is_standard_layout() {
        value
    } else {
        value.as_standard_layout().to_owned()
    }
}

pub struct Gradients<F: Scalar> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<F>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

struct ReluBack;
impl<F: Scalar> Backward<F> for ReluBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _out: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let x = inputs[0];
        let mut dx = g.clone();
        dx.zip_mut_with(x, |d, &v| {
            if v <= F::zero() {
                *d = F::zero();
            }
        });
        vec![Some(dx)]
    }
}

struct SigmoidBack;
impl<F: Scalar> Backward<F> for SigmoidBack {
    fn backward(&self, g: &ArrayD<F>, _inputs: &[&ArrayD<F>], out: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let mut dx = g.clone();
        dx.zip_mut_with(out, |d, &y| *d = *d * y * (F::one() - y));
        vec![Some(dx)]
    }
}

struct AddBack;
impl<F: Scalar> Backward<F> for AddBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

struct MulGateBack;
impl<F: Scalar> Backward<F> for MulGateBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let (x, gate) = (inputs[0], inputs[1]);
        let dx = g * &gate.broadcast(x.raw_dim()).unwrap();
        let mut dgate_full = g.clone();
        dgate_full *= x;
        vec![Some(dx), Some(reduce_to_shape(&dgate_full, gate.shape()))]
    }
}

/// Sum `g` down to `shape` (which must be broadcast-compatible with it).
pub(crate) fn reduce_to_shape<F: Scalar>(g: &ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    let mut r = g.clone();
    for ax in 0..shape.len() {
        if shape[ax] == 1 && r.shape()[ax] != 1 {
            r = r.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    r
}

struct ScaleBack<F> {
    alpha: F,
}
impl<F: Scalar> Backward<F> for ScaleBack<F> {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        vec![Some(g * self.alpha)]
    }
}

struct ScaleAddBack<F> {
    alpha: F,
    beta: F,
}
impl<F: Scalar> Backward<F> for ScaleAddBack<F> {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        vec![Some(g * self.alpha), Some(g * self.beta)]
    }
}

struct SumAllBack {
    shape: IxDyn,
}
impl<F: Scalar> Backward<F> for SumAllBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let s = g.iter().copied().next().unwrap();
        vec![Some(ArrayD::from_elem(self.shape.clone(), s))]
    }
}

struct MeanAllBack {
    shape: IxDyn,
    n: usize,
}
impl<F: Scalar> Backward<F> for MeanAllBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let s = g.iter().copied().next().unwrap() / F::from_usize(self.n);
        vec![Some(ArrayD::from_elem(self.shape.clone(), s))]
    }
}

struct ConcatBack {
    axis: usize,
    widths: Vec<usize>,
}
impl<F: Scalar> Backward<F> for ConcatBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let mut out = Vec::with_capacity(self.widths.len());
        let mut start = 0isize;
        for &w in &self.widths {
            let part = g
                .slice_axis(Axis(self.axis), Slice::new(start, Some(start + w as isize), 1))
                .to_owned();
            out.push(Some(part));
            start += w as isize;
        }
        out
    }
}

struct SliceBack {
    axis: usize,
    start: usize,
    full: usize,
}
impl<F: Scalar> Backward<F> for SliceBack {
    fn backward(&self, g: &ArrayD<F>, inputs: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let mut dx = ArrayD::zeros(inputs[0].raw_dim());
        debug_assert_eq!(dx.shape()[self.axis], self.full);
        dx.slice_axis_mut(
            Axis(self.axis),
            Slice::new(
                self.start as isize,
                Some((self.start + g.shape()[self.axis]) as isize),
                1,
            ),
        )
        .assign(g);
        vec![Some(dx)]
    }
}

struct TransposeHwBack;
impl<F: Scalar> Backward<F> for TransposeHwBack {
    fn backward(&self, g: &ArrayD<F>, _i: &[&ArrayD<F>], _o: &ArrayD<F>) -> Vec<Option<ArrayD<F>>> {
        let mut v = g.view();
        v.swap_axes(2, 3);
        vec![Some(v.to_owned())]
    }
}

impl<F: Scalar> Graph<F> {
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.mapv(|v| if v > F::zero() { v } else { F::zero() });
        self.push(y, vec![x], Box::new(ReluBack))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x].value.mapv(|v| F::one() / (F::one() + (-v).exp()));
        self.push(y, vec![x], Box::new(SigmoidBack))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let y = &self.nodes[a].value + &self.nodes[b].value;
        self.push(y, vec![a, b], Box::new(AddBack))
    }

    /// Elementwise product with broadcasting in `gate` (dims of size 1 expand).
    pub fn mul_gate(&mut self, x: NodeId, gate: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gate].value;
        let y = xv * &gv.broadcast(xv.raw_dim()).unwrap();
        self.push(y, vec![x, gate], Box::new(MulGateBack))
    }

    pub fn scale(&mut self, x: NodeId, alpha: F) -> NodeId {
        let y = &self.nodes[x].value * alpha;
        self.push(y, vec![x], Box::new(ScaleBack { alpha }))
    }

    /// alpha*a + beta*b, elementwise (same shapes).
    pub fn scale_add(&mut self, a: NodeId, alpha: F, b: NodeId, beta: F) -> NodeId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let y = &self.nodes[a].value * alpha + &self.nodes[b].value * beta;
        self.push(y, vec![a, b], Box::new(ScaleAddBack { alpha, beta }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let s = v.sum();
        let shape = v.raw_dim();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            vec![x],
            Box::new(SumAllBack { shape }),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let n = v.len();
        let s = v.sum() / F::from_usize(n);
        let shape = v.raw_dim();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            vec![x],
            Box::new(MeanAllBack { shape, n }),
        )
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let y = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let widths = parts.iter().map(|&p| self.nodes[p].value.shape()[axis]).collect();
        self.push(y, parts.to_vec(), Box::new(ConcatBack { axis, widths }))
    }

    pub fn slice_axis(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let full = self.nodes[x].value.shape()[axis];
        let y = self.nodes[x]
            .value
            .slice_axis(Axis(axis), Slice::new(start as isize, Some((start + len) as isize), 1))
            .to_owned();
        self.push(y, vec![x], Box::new(SliceBack { axis, start, full }))
    }

    /// Swap the two spatial axes of an NCHW tensor.
    pub fn transpose_hw(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.view();
        v.swap_axes(2, 3);
        let y = v.to_owned();
        self.push(y, vec![x], Box::new(TransposeHwBack))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grad, rand_array};
    use ndarray::IxDyn;

    #[test]
    fn backward_skips_constant_branches() {
        let mut g: Graph<f64> = Graph::new(false);
        let a = g.leaf(rand_array(&[2, 3], 1), true);
        let b = g.constant(rand_array(&[2, 3], 2));
        let s = g.add(a, b);
        let r = g.relu(s);
        let loss = g.sum_all(r);
        let grads = g.backward(loss);
        assert!(grads.get(a).is_some());
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        check_grad(&[2, 3, 4, 5], 11, |g, x| {
            let y = g.sigmoid(x);
            let z = g.relu(y);
            g.mean_all(z)
        });
        check_grad(&[2, 4, 3, 3], 12, |g, x| {
            let gate = g.slice_axis(x, 2, 0, 1); // (2,4,1,3)
            let y = g.mul_gate(x, gate);
            g.sum_all(y)
        });
        check_grad(&[1, 3, 4, 4], 13, |g, x| {
            let t = g.transpose_hw(x);
            let c = g.concat(1, &[x, x]);
            let s1 = g.sum_all(t);
            let s2 = g.sum_all(c);
            g.scale_add(s1, 0.7, s2, -0.3)
        });
    }

    #[test]
    fn scalar_reads_back() {
        let mut g: Graph<f32> = Graph::new(false);
        let x = g.constant(ArrayD::from_elem(IxDyn(&[1]), 2.5f32));
        assert_eq!(g.scalar(x), 2.5);
    }
}
