//! Reverse-mode tape over dense f64 tensors.
//!
//! A [`Tape`] owns an arena of nodes; building ops appends nodes and returns
//! [`DiffTensor`] handles. [`Tape::backward`] walks the arena in reverse and
//! accumulates adjoints additively. Backward may be run repeatedly on the
//! same tape with different seed cotangents (used by the implicit
//! fixed-point solve).

use std::sync::Arc;

use ndarray::{ArrayD, ArrayViewD, Ix2, Ix3, IxDyn};

use crate::error::{PatError, Result};
use crate::linop::FieldOp;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffTensor {
    pub(crate) id: usize,
}

enum Op {
    /// Differentiable input (data or parameter).
    Leaf,
    /// Value without gradient tracking.
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    /// input (cin,H,W), weight (cout,cin,3,3), bias (cout) -> (cout,H,W).
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
    },
    /// k rank-2 fields -> (k,H,W).
    Stack(Vec<usize>),
    /// (C,H,W) -> (H,W).
    Channel(usize, usize),
    Sum(usize),
    SumSquares(usize),
    /// Linear operator with exact transpose (e.g. the fast forward/inverse).
    Linear(usize, Arc<dyn FieldOp>),
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by a backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the seeded output w.r.t. `t`; `None` if `t` is not on the
    /// differentiable path (its gradient is identically zero).
    pub fn get(&self, t: DiffTensor) -> Option<&ArrayD<f64>> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, t: DiffTensor, shape: &[usize]) -> ArrayD<f64> {
        match self.get(t) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}

fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: DiffTensor) -> &ArrayD<f64> {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: DiffTensor) -> &[usize] {
        self.nodes[t.id].value.shape()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> DiffTensor {
        self.nodes.push(Node { op, value });
        DiffTensor {
            id: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: ArrayD<f64>) -> DiffTensor {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> DiffTensor {
        self.push(Op::Constant, value)
    }

    fn check_same_shape(&self, what: &str, a: DiffTensor, b: DiffTensor) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(PatError::shape(
                what,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.check_same_shape("add", a, b)?;
        let v = &self.nodes[a.id].value + &self.nodes[b.id].value;
        Ok(self.push(Op::Add(a.id, b.id), v))
    }

    pub fn sub(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.check_same_shape("sub", a, b)?;
        let v = &self.nodes[a.id].value - &self.nodes[b.id].value;
        Ok(self.push(Op::Sub(a.id, b.id), v))
    }

    pub fn mul(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.check_same_shape("mul", a, b)?;
        let v = &self.nodes[a.id].value * &self.nodes[b.id].value;
        Ok(self.push(Op::Mul(a.id, b.id), v))
    }

    pub fn scale(&mut self, a: DiffTensor, factor: f64) -> DiffTensor {
        let v = &self.nodes[a.id].value * factor;
        self.push(Op::Scale(a.id, factor), v)
    }

    pub fn leaky_relu(&mut self, a: DiffTensor, slope: f64) -> DiffTensor {
        let v = self.nodes[a.id].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a.id, slope), v)
    }

    pub fn conv2d(&mut self, input: DiffTensor, weight: DiffTensor, bias: DiffTensor) -> Result<DiffTensor> {
        let x = &self.nodes[input.id].value;
        let w = &self.nodes[weight.id].value;
        let b = &self.nodes[bias.id].value;
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(PatError::shape(
                "conv2d",
                "input rank 3, weight rank 4, bias rank 1",
                format!("{}/{}/{}", xs.len(), ws.len(), bs.len()),
            ));
        }
        if ws[1] != xs[0] || ws[0] != bs[0] || ws[2] != 3 || ws[3] != 3 {
            return Err(PatError::shape(
                "conv2d",
                format!("weight ({},{},3,3), bias ({})", bs[0], xs[0], bs[0]),
                format!("weight {ws:?}, bias {bs:?}"),
            ));
        }
        let bias1 = b
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("rank checked")
            .to_owned();
        let v = conv2d_plain(
            &x.view().into_dimensionality::<Ix3>().expect("rank checked"),
            &w.view(),
            &bias1,
        );
        Ok(self.push(
            Op::Conv2d {
                input: input.id,
                weight: weight.id,
                bias: bias.id,
            },
            v.into_dyn(),
        ))
    }

    pub fn stack(&mut self, parts: &[DiffTensor]) -> Result<DiffTensor> {
        if parts.is_empty() {
            return Err(PatError::Invalid("stack: no inputs".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 2 {
            return Err(PatError::shape("stack", "rank 2 parts", format!("{first:?}")));
        }
        for &p in parts {
            if self.shape(p) != first.as_slice() {
                return Err(PatError::shape(
                    "stack",
                    format!("{first:?}"),
                    format!("{:?}", self.shape(p)),
                ));
            }
        }
        let (h, w) = (first[0], first[1]);
        let mut v = ArrayD::zeros(IxDyn(&[parts.len(), h, w]));
        for (c, &p) in parts.iter().enumerate() {
            v.index_axis_mut(ndarray::Axis(0), c)
                .assign(&self.nodes[p.id].value);
        }
        Ok(self.push(Op::Stack(parts.iter().map(|p| p.id).collect()), v))
    }

    pub fn channel(&mut self, a: DiffTensor, c: usize) -> Result<DiffTensor> {
        let s = self.shape(a);
        if s.len() != 3 || c >= s[0] {
            return Err(PatError::shape(
                "channel",
                format!("rank 3 with channel {c}"),
                format!("{s:?}"),
            ));
        }
        let v = self.nodes[a.id]
            .value
            .index_axis(ndarray::Axis(0), c)
            .to_owned();
        Ok(self.push(Op::Channel(a.id, c), v))
    }

    pub fn sum(&mut self, a: DiffTensor) -> DiffTensor {
        let v = scalar(self.nodes[a.id].value.sum());
        self.push(Op::Sum(a.id), v)
    }

    pub fn sum_squares(&mut self, a: DiffTensor) -> DiffTensor {
        let v = scalar(self.nodes[a.id].value.iter().map(|x| x * x).sum());
        self.push(Op::SumSquares(a.id), v)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        let n = self.nodes[a.id].value.len() as f64;
        let diff = self.sub(a, b)?;
        let ss = self.sum_squares(diff);
        Ok(self.scale(ss, 1.0 / n))
    }

    /// Applies a linear operator with exact transpose to a rank-2 node.
    pub fn linear(&mut self, a: DiffTensor, op: Arc<dyn FieldOp>) -> Result<DiffTensor> {
        let s = self.shape(a);
        if s.len() != 2 || (s[0], s[1]) != op.domain_shape() {
            return Err(PatError::shape(
                "linear",
                format!("{:?}", op.domain_shape()),
                format!("{s:?}"),
            ));
        }
        let x = self.nodes[a.id]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("rank checked");
        let v = op.apply(&x.to_owned());
        Ok(self.push(Op::Linear(a.id, op), v.into_dyn()))
    }

    /// Backward pass from a scalar loss with unit seed.
    pub fn backward(&self, loss: DiffTensor) -> Result<Gradients> {
        if !self.shape(loss).is_empty() {
            return Err(PatError::Invalid(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_with(loss, &scalar(1.0))
    }

    /// Backward pass seeding `output` with an explicit cotangent.
    pub fn backward_with(&self, output: DiffTensor, cotangent: &ArrayD<f64>) -> Result<Gradients> {
        if output.id >= self.nodes.len() {
            return Err(PatError::Invalid("backward: output not on this tape".into()));
        }
        if cotangent.shape() != self.shape(output) {
            return Err(PatError::shape(
                "backward_with",
                format!("{:?}", self.shape(output)),
                format!("{:?}", cotangent.shape()),
            ));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(cotangent.clone());

        for id in (0..=output.id).rev() {
            let Some(adj) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf | Op::Constant => {
                    grads[id] = Some(adj);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], adj.view());
                    accumulate(&mut grads[*b], adj.view());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*a], adj.view());
                    accumulate_neg(&mut grads[*b], adj.view());
                }
                Op::Mul(a, b) => {
                    let ga = &adj * &self.nodes[*b].value;
                    let gb = &adj * &self.nodes[*a].value;
                    accumulate(&mut grads[*a], ga.view());
                    accumulate(&mut grads[*b], gb.view());
                }
                Op::Scale(a, f) => {
                    let ga = &adj * *f;
                    accumulate(&mut grads[*a], ga.view());
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[*a].value;
                    let mut ga = adj.clone();
                    ga.zip_mut_with(x, |g, &xv| {
                        if xv <= 0.0 {
                            *g *= slope;
                        }
                    });
                    accumulate(&mut grads[*a], ga.view());
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.nodes[*input].value.view();
                    let w = self.nodes[*weight].value.view();
                    let gout = adj.view().into_dimensionality::<Ix3>().expect("conv output rank 3");
                    let (gx, gw, gb) = conv2d_backward(
                        &x.into_dimensionality::<Ix3>().expect("conv input rank 3"),
                        &w,
                        &gout,
                    );
                    accumulate(&mut grads[*input], gx.view().into_dyn());
                    accumulate(&mut grads[*weight], gw.view());
                    accumulate(&mut grads[*bias], gb.view().into_dyn());
                }
                Op::Stack(parts) => {
                    for (c, p) in parts.iter().enumerate() {
                        let slice = adj.index_axis(ndarray::Axis(0), c);
                        accumulate(&mut grads[*p], slice);
                    }
                }
                Op::Channel(a, c) => {
                    let shape = self.nodes[*a].value.shape();
                    let mut ga = ArrayD::zeros(IxDyn(shape));
                    ga.index_axis_mut(ndarray::Axis(0), *c).assign(&adj);
                    accumulate(&mut grads[*a], ga.view());
                }
                Op::Sum(a) => {
                    let s = adj.iter().next().copied().unwrap_or(0.0);
                    let ga = ArrayD::from_elem(IxDyn(self.nodes[*a].value.shape()), s);
                    accumulate(&mut grads[*a], ga.view());
                }
                Op::SumSquares(a) => {
                    let s = adj.iter().next().copied().unwrap_or(0.0);
                    let ga = self.nodes[*a].value.mapv(|x| 2.0 * x * s);
                    accumulate(&mut grads[*a], ga.view());
                }
                Op::Linear(a, op) => {
                    let cot = adj
                        .view()
                        .into_dimensionality::<Ix2>()
                        .expect("linear output rank 2")
                        .to_owned();
                    let ga = op.apply_transpose(&cot);
                    accumulate(&mut grads[*a], ga.view().into_dyn());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<ArrayD<f64>>, grad: ArrayViewD<'_, f64>) {
    match slot {
        Some(existing) => *existing += &grad,
        None => *slot = Some(grad.to_owned()),
    }
}

fn accumulate_neg(slot: &mut Option<ArrayD<f64>>, grad: ArrayViewD<'_, f64>) {
    match slot {
        Some(existing) => *existing -= &grad,
        None => *slot = Some(grad.mapv(|v| -v)),
    }
}

/// dst[y, x] += w * src[y + dy, x + dx] over the valid overlap.
fn add_shifted(
    dst: &mut ndarray::ArrayViewMut2<'_, f64>,
    src: &ndarray::ArrayView2<'_, f64>,
    dy: isize,
    dx: isize,
    w: f64,
) {
    if w == 0.0 {
        return;
    }
    let (h, wd) = dst.dim();
    let sy0 = dy.max(0) as usize;
    let sy1 = (h as isize + dy.min(0)) as usize;
    let sx0 = dx.max(0) as usize;
    let sx1 = (wd as isize + dx.min(0)) as usize;
    if sy0 >= sy1 || sx0 >= sx1 {
        return;
    }
    let dy0 = (-dy).max(0) as usize;
    let dx0 = (-dx).max(0) as usize;
    let rows = sy1 - sy0;
    let cols = sx1 - sx0;
    let mut d = dst.slice_mut(ndarray::s![dy0..dy0 + rows, dx0..dx0 + cols]);
    let s = src.slice(ndarray::s![sy0..sy0 + rows, sx0..sx0 + cols]);
    d.zip_mut_with(&s, |a, &b| *a += w * b);
}

/// sum over y,x of a[y, x] * b[y + dy, x + dx] over the valid overlap.
fn dot_shifted(
    a: &ndarray::ArrayView2<'_, f64>,
    b: &ndarray::ArrayView2<'_, f64>,
    dy: isize,
    dx: isize,
) -> f64 {
    let (h, w) = a.dim();
    let sy0 = dy.max(0) as usize;
    let sy1 = (h as isize + dy.min(0)) as usize;
    let sx0 = dx.max(0) as usize;
    let sx1 = (w as isize + dx.min(0)) as usize;
    if sy0 >= sy1 || sx0 >= sx1 {
        return 0.0;
    }
    let ay0 = (-dy).max(0) as usize;
    let ax0 = (-dx).max(0) as usize;
    let rows = sy1 - sy0;
    let cols = sx1 - sx0;
    let av = a.slice(ndarray::s![ay0..ay0 + rows, ax0..ax0 + cols]);
    let bv = b.slice(ndarray::s![sy0..sy0 + rows, sx0..sx0 + cols]);
    av.iter().zip(bv.iter()).map(|(x, y)| x * y).sum()
}

/// Cross-correlation with 3x3 kernels and same (zero) padding. Shared by
/// the tape op and the plain (non-recording) net forward so both paths are
/// bit-identical.
pub(crate) fn conv2d_plain(
    x: &ndarray::ArrayView3<'_, f64>,
    w: &ArrayViewD<'_, f64>,
    b: &ndarray::Array1<f64>,
) -> ndarray::Array3<f64> {
    let (cin, h, wd) = x.dim();
    let cout = w.shape()[0];
    let mut out = ndarray::Array3::zeros((cout, h, wd));
    for o in 0..cout {
        let mut plane = out.index_axis_mut(ndarray::Axis(0), o);
        plane.fill(b[o]);
        for i in 0..cin {
            let src = x.index_axis(ndarray::Axis(0), i);
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let wv = w[[o, i, ky, kx]];
                    add_shifted(&mut plane, &src, ky as isize - 1, kx as isize - 1, wv);
                }
            }
        }
    }
    out
}

/// Transpose of the conv's linear part applied to a (cout,H,W) cotangent.
pub(crate) fn conv2d_input_transpose(
    gout: &ndarray::ArrayView3<'_, f64>,
    w: &ArrayViewD<'_, f64>,
    cin: usize,
) -> ndarray::Array3<f64> {
    let (cout, h, wd) = gout.dim();
    let mut gx = ndarray::Array3::zeros((cin, h, wd));
    for o in 0..cout {
        let go = gout.index_axis(ndarray::Axis(0), o);
        for i in 0..cin {
            let mut gxi = gx.index_axis_mut(ndarray::Axis(0), i);
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    add_shifted(&mut gxi, &go, -dy, -dx, w[[o, i, ky, kx]]);
                }
            }
        }
    }
    gx
}

fn conv2d_backward(
    x: &ndarray::ArrayView3<'_, f64>,
    w: &ArrayViewD<'_, f64>,
    gout: &ndarray::ArrayView3<'_, f64>,
) -> (ndarray::Array3<f64>, ArrayD<f64>, ndarray::Array1<f64>) {
    let cin = x.dim().0;
    let cout = gout.dim().0;
    let gx = conv2d_input_transpose(gout, w, cin);
    let mut gw = ArrayD::zeros(IxDyn(w.shape()));
    let mut gb = ndarray::Array1::zeros(cout);
    for o in 0..cout {
        let go = gout.index_axis(ndarray::Axis(0), o);
        gb[o] = go.sum();
        for i in 0..cin {
            let xi = x.index_axis(ndarray::Axis(0), i);
            for ky in 0..3usize {
                for kx in 0..3usize {
                    gw[[o, i, ky, kx]] =
                        dot_shifted(&go, &xi, ky as isize - 1, kx as isize - 1);
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Vector-Jacobian product of `f` at `at` with the given cotangent: builds a
/// fresh tape, runs `f`, and reads back the input adjoint. Row-assembles the
/// exact Jacobian transpose when called with basis cotangents.
pub fn vjp<F>(f: F, at: &ArrayD<f64>, cotangent: &ArrayD<f64>) -> Result<ArrayD<f64>>
where
    F: FnOnce(&mut Tape, DiffTensor) -> Result<DiffTensor>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(at.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward_with(y, cotangent)?;
    Ok(grads.get_or_zeros(x, at.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = sum(w * x): d/dw = x exactly.
        let mut t = Tape::new();
        let w = t.leaf(array![[2.0, -1.0], [0.5, 3.0]].into_dyn());
        let x = t.constant(array![[1.0, 4.0], [-2.0, 0.25]].into_dyn());
        let p = t.mul(w, x).unwrap();
        let loss = t.sum(p);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), t.value(x));
    }

    #[test]
    fn constant_branch_has_no_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(array![[1.0]].into_dyn());
        let unused = t.leaf(array![[5.0]].into_dyn());
        let loss0 = t.sum_squares(w);
        let _ = unused;
        let g = t.backward(loss0).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let w = t.leaf(array![[1.0, 2.0]].into_dyn());
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn vjp_of_square_at_three_is_six() {
        let at = ArrayD::from_elem(IxDyn(&[]), 3.0);
        let cot = ArrayD::from_elem(IxDyn(&[]), 1.0);
        let g = vjp(
            |t, x| {
                let y = t.mul(x, x)?;
                Ok(y)
            },
            &at,
            &cot,
        )
        .unwrap();
        assert!((g[[]] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn repeated_backward_on_one_tape_is_deterministic() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, -2.0], [3.0, 0.5]].into_dyn());
        let s = t.scale(x, 2.0);
        let loss = t.sum_squares(s);
        let g1 = t.backward(loss).unwrap();
        let g2 = t.backward(loss).unwrap();
        assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
    }
}
