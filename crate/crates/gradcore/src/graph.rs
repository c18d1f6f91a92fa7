use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// Multiplies every `(n, c)` plane by a constant `h x w` map.
    MulMap(Var, Vec<T>),
    AbsDiff(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    BceLogits(Var, T),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatChannels(Var, Var),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    pub grad: Option<Vec<T>>,
}

/// Append-only computation tape.
///
/// Nodes are recorded in creation order, which is a topological order, so
/// the backward pass is a single reverse sweep.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Leaf gradients are accumulated, so calling this twice without
    /// [`Graph::zero_grad`] doubles them. Interior gradients are transient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(GradError::Argument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut grads = Grads { slots: (0..=root.0).map(|_| None).collect() };
        grads.slots[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gout) = grads.slots[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&gout).for_each(|(a, g)| *a += *g),
                    None => node.grad = Some(gout),
                }
                continue;
            }
            self.backward_node(i, &gout, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut Grads<T>) {
        let node = &self.nodes[i];
        let ctx = Ctx { nodes: &self.nodes };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                ctx.acc(grads, *a, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y));
                ctx.acc(grads, *b, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y));
            }
            Op::Sub(a, b) => {
                ctx.acc(grads, *a, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y));
                ctx.acc(grads, *b, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= *y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (ctx.val(*a), ctx.val(*b));
                ctx.acc(grads, *a, |g| {
                    for ((x, y), w) in g.iter_mut().zip(gout).zip(bv) {
                        *x += *y * *w;
                    }
                });
                ctx.acc(grads, *b, |g| {
                    for ((x, y), w) in g.iter_mut().zip(gout).zip(av) {
                        *x += *y * *w;
                    }
                });
            }
            Op::Scale(a, s) => {
                ctx.acc(grads, *a, |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += *y * *s));
            }
            Op::MulMap(a, map) => {
                ctx.acc(grads, *a, |g| {
                    for (plane, gplane) in g.chunks_mut(map.len()).zip(gout.chunks(map.len())) {
                        for ((x, y), w) in plane.iter_mut().zip(gplane).zip(map) {
                            *x += *y * *w;
                        }
                    }
                });
            }
            Op::AbsDiff(a, b) => {
                let (av, bv) = (ctx.val(*a), ctx.val(*b));
                let sign = |p: T, q: T| {
                    if p > q {
                        T::one()
                    } else if p < q {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                ctx.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * sign(av[i], bv[i]);
                    }
                });
                ctx.acc(grads, *b, |g| {
                    for i in 0..g.len() {
                        g[i] -= gout[i] * sign(av[i], bv[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let av = ctx.val(*a);
                ctx.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        if av[i] > T::zero() {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = ctx.val(*a);
                ctx.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += if av[i] > T::zero() { gout[i] } else { gout[i] * *slope };
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                ctx.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (T::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Sum(a) => {
                ctx.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += gout[0]));
            }
            Op::Mean(a) => {
                let n = T::from_usize(ctx.val(*a).len()).unwrap();
                ctx.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += gout[0] / n));
            }
            Op::BceLogits(a, target) => {
                let av = ctx.val(*a);
                ctx.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        let s = T::one() / (T::one() + (-av[i]).exp());
                        g[i] += gout[i] * (s - *target);
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                crate::ops::conv::conv2d_backward(&ctx, grads, node, *x, *w, *b, *stride, *pad, gout);
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                crate::ops::conv::conv_transpose2d_backward(&ctx, grads, node, *x, *w, *b, *stride, *pad, gout);
            }
            Op::InstanceNorm { x, gain, shift, xhat, inv_std } => {
                crate::ops::norm::instance_norm_backward(&ctx, grads, *x, *gain, *shift, xhat, inv_std, gout);
            }
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = ctx.dims(*a);
                let cb = ctx.dims(*b)[1];
                let plane = h * w;
                let per = (ca + cb) * plane;
                ctx.acc(grads, *a, |g| {
                    for s in 0..n {
                        let src = &gout[s * per..s * per + ca * plane];
                        g[s * ca * plane..(s + 1) * ca * plane]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += *y);
                    }
                });
                ctx.acc(grads, *b, |g| {
                    for s in 0..n {
                        let src = &gout[s * per + ca * plane..(s + 1) * per];
                        g[s * cb * plane..(s + 1) * cb * plane]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += *y);
                    }
                });
            }
        }
    }
}

pub(crate) struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

pub(crate) struct Ctx<'a, T> {
    nodes: &'a [Node<T>],
}

impl<T: Real> Ctx<'_, T> {
    pub fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn dims(&self, v: Var) -> [usize; 4] {
        crate::tensor::dims4(self.nodes[v.0].value.shape()).expect("validated at forward")
    }

    /// Runs `f` on the gradient slot of `v` when `v` takes part in differentiation.
    pub fn acc(&self, grads: &mut Grads<T>, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads.slots[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}
