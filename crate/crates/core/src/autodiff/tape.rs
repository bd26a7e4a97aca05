//! Recording tape and differentiable variables.
//!
//! Every op appends a node to the tape. Node ids are assigned in creation
//! order, which is a topological order because an op can only reference
//! nodes that already exist. [`Tape::backward`] walks the ids in reverse.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug)]
struct ConvAttrs {
    stride: (usize, usize),
    padding: (usize, usize),
    output_padding: (usize, usize),
    /// True when the op was built from 1D inputs (`[B, C, L]`).
    one_d: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Conv(usize, usize, ConvAttrs),
    ConvTranspose(usize, usize, ConvAttrs),
    /// Input and the normal CDF at each input value.
    Gelu(usize, Rc<Vec<f64>>),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Narrow(usize, usize),
    Scale(usize, f64),
    ScaleRows(usize, Rc<Vec<f64>>),
    NormL1Rows(usize),
    NormL2Rows(usize),
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
///
/// A tape is single-threaded; build one per worker when sharding a batch.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// dLoss/dVar, or `None` when no gradient reached the node.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(var.id)?.as_ref()?;
        Tensor::new(&self.shapes[var.id], g.clone()).ok()
    }

    /// dLoss/dVar as a raw slice.
    pub fn get_slice(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id)?.as_deref()
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that receives gradients.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        // Ops on constants collapse into constant leaves: nothing to record.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients of nodes used more than once are summed. A tape can be
    /// swept only once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(AutodiffError::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            self.consumed.set(false);
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let pushes = backward_node(&nodes, node, &g)?;
            for (input, gi) in pushes {
                if nodes[input].requires_grad {
                    accumulate(&mut grads[input], gi);
                }
            }
            grads[id] = Some(g);
        }
        let shapes = nodes[..n]
            .iter()
            .map(|nd| nd.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn conv_geom(x: &Tensor, w: &Tensor, a: &ConvAttrs, transpose: bool) -> Result<ConvGeom> {
    let name = if transpose { "conv_transpose" } else { "conv" };
    let (xs, ws) = (x.shape(), w.shape());
    let (batch, cin, h, wd, kh, kw, wc_in, cout) = if a.one_d {
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err(
                name,
                format!(
                    "1D conv needs rank-3 input and weight, got {:?} and {:?}",
                    xs, ws
                ),
            ));
        }
        let (wc_in, cout) = if transpose {
            (ws[0], ws[1])
        } else {
            (ws[1], ws[0])
        };
        (xs[0], xs[1], 1, xs[2], 1, ws[2], wc_in, cout)
    } else {
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err(
                name,
                format!(
                    "2D conv needs rank-4 input and weight, got {:?} and {:?}",
                    xs, ws
                ),
            ));
        }
        let (wc_in, cout) = if transpose {
            (ws[0], ws[1])
        } else {
            (ws[1], ws[0])
        };
        (xs[0], xs[1], xs[2], xs[3], ws[2], ws[3], wc_in, cout)
    };
    if wc_in != cin {
        return Err(shape_err(
            name,
            format!("input has {} channels, weight expects {}", cin, wc_in),
        ));
    }
    let (sh, sw) = a.stride;
    let (ph, pw) = a.padding;
    let (oph, opw) = a.output_padding;
    if sh == 0 || sw == 0 {
        return Err(AutodiffError::UnsupportedAttr(
            "stride must be positive".into(),
        ));
    }
    let (oh, ow) = if transpose {
        if oph >= sh || opw >= sw {
            return Err(AutodiffError::UnsupportedAttr(
                "output padding must be smaller than stride".into(),
            ));
        }
        let full_h = (h - 1) * sh + kh + oph;
        let full_w = (wd - 1) * sw + kw + opw;
        if full_h <= 2 * ph || full_w <= 2 * pw {
            return Err(AutodiffError::UnsupportedAttr(
                "padding removes the whole output".into(),
            ));
        }
        (full_h - 2 * ph, full_w - 2 * pw)
    } else {
        if any_output_padding(a) {
            return Err(AutodiffError::UnsupportedAttr(
                "output padding only applies to transposed convolutions".into(),
            ));
        }
        if h + 2 * ph < kh || wd + 2 * pw < kw {
            return Err(shape_err(
                name,
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh,
                    kw,
                    h + 2 * ph,
                    wd + 2 * pw
                ),
            ));
        }
        ((h + 2 * ph - kh) / sh + 1, (wd + 2 * pw - kw) / sw + 1)
    };
    Ok(ConvGeom {
        batch,
        cin,
        cout,
        h,
        w: wd,
        kh,
        kw,
        sh,
        sw,
        ph,
        pw,
        oh,
        ow,
    })
}

fn any_output_padding(a: &ConvAttrs) -> bool {
    a.output_padding != (0, 0)
}

fn conv_out_shape(g: &ConvGeom, one_d: bool) -> Vec<usize> {
    if one_d {
        vec![g.batch, g.cout, g.ow]
    } else {
        vec![g.batch, g.cout, g.oh, g.ow]
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backward_node(nodes: &[Node], node: &Node, g: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let req = |i: usize| nodes[i].requires_grad;
    let out = match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            vec![
                (*a, g.iter().zip(bv).map(|(g, b)| g * b).collect()),
                (*b, g.iter().zip(av).map(|(g, a)| g * a).collect()),
            ]
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            vec![
                (*a, g.iter().zip(bv).map(|(g, b)| g / b).collect()),
                (
                    *b,
                    g.iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect(),
                ),
            ]
        }
        Op::MatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
            let mut v = Vec::new();
            if req(*a) {
                v.push((*a, kernels::matmul_grad_a(g, bt.data(), m, k, n)));
            }
            if req(*b) {
                v.push((*b, kernels::matmul_grad_b(at.data(), g, m, k, n)));
            }
            v
        }
        Op::AddBias(x, b) => {
            let xs = val(*x).shape();
            let (outer, c, inner) = split_axis(xs, 1);
            let mut gb = vec![0.0; c];
            for o in 0..outer {
                for (ci, gbc) in gb.iter_mut().enumerate() {
                    let base = (o * c + ci) * inner;
                    *gbc += g[base..base + inner].iter().sum::<f64>();
                }
            }
            vec![(*x, g.to_vec()), (*b, gb)]
        }
        Op::Conv(x, w, attrs) => {
            let (xt, wt) = (val(*x), val(*w));
            let geom = conv_geom(xt, wt, attrs, false)?;
            let (dx, dw) = kernels::conv_backward(&geom, xt.data(), wt.data(), g, req(*x), req(*w));
            dx.map(|d| (*x, d))
                .into_iter()
                .chain(dw.map(|d| (*w, d)))
                .collect()
        }
        Op::ConvTranspose(x, w, attrs) => {
            let (xt, wt) = (val(*x), val(*w));
            let geom = conv_geom(xt, wt, attrs, true)?;
            let (dx, dw) =
                kernels::conv_transpose_backward(&geom, xt.data(), wt.data(), g, req(*x), req(*w));
            dx.map(|d| (*x, d))
                .into_iter()
                .chain(dw.map(|d| (*w, d)))
                .collect()
        }
        Op::Gelu(x, cdf) => {
            let xv = val(*x).data();
            vec![(
                *x,
                g.iter()
                    .zip(xv)
                    .zip(cdf.iter())
                    .map(|((g, x), c)| g * (c + x * INV_SQRT_2PI * (-0.5 * x * x).exp()))
                    .collect(),
            )]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Concat(inputs, axis) => {
            let out_shape = node.value.shape();
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            let mut v = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let ext = val(i).shape()[*axis];
                let mut gi = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gi.extend_from_slice(&g[start..start + ext * inner]);
                }
                offset += ext;
                v.push((i, gi));
            }
            v
        }
        Op::Narrow(x, start) => {
            let xt = val(*x);
            let (_, row) = xt.rows();
            let mut gx = vec![0.0; xt.len()];
            gx[start * row..start * row + g.len()].copy_from_slice(g);
            vec![(*x, gx)]
        }
        Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
        Op::ScaleRows(x, s) => {
            let (_, row) = val(*x).rows();
            let gx = g
                .chunks(row.max(1))
                .zip(s.iter())
                .flat_map(|(chunk, sv)| chunk.iter().map(move |v| v * sv))
                .collect();
            vec![(*x, gx)]
        }
        Op::NormL1Rows(x) => {
            let xt = val(*x);
            let (_, row) = xt.rows();
            let gx = xt
                .data()
                .chunks(row.max(1))
                .zip(g)
                .flat_map(|(chunk, gr)| chunk.iter().map(move |v| gr * sign(*v)))
                .collect();
            vec![(*x, gx)]
        }
        Op::NormL2Rows(x) => {
            let xt = val(*x);
            let (_, row) = xt.rows();
            let norms = node.value.data();
            let gx = xt
                .data()
                .chunks(row.max(1))
                .zip(g.iter().zip(norms))
                .flat_map(|(chunk, (gr, nr))| {
                    let f = if *nr > 0.0 { gr / nr } else { 0.0 };
                    chunk.iter().map(move |v| f * v)
                })
                .collect();
            vec![(*x, gx)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        Op::Mean(x) => {
            let n = val(*x).len();
            vec![(*x, vec![g[0] / n as f64; n])]
        }
    };
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Current forward value.
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value; `None` if the tensor holds more than one element.
    pub fn item(&self) -> Option<f64> {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(a.shape(), data)?;
        self.tape
            .push(name, t, op(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient.
    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "div", |x, y| x / y, Op::Div)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let t = Tensor::new(&[m, n], kernels::matmul(a.data(), b.data(), m, k, n))?;
        self.tape.push(
            "matmul",
            t,
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        )
    }

    /// Adds `bias[c]` along axis 1 of a `[B, C, ...]` tensor.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let (x, b) = (self.value(), bias.value());
        if x.ndim() < 2 || b.ndim() != 1 || x.shape()[1] != b.shape()[0] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", x.shape(), b.shape()),
            ));
        }
        let (outer, c, inner) = split_axis(x.shape(), 1);
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for (ci, bv) in b.data().iter().enumerate() {
                let base = (o * c + ci) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let t = Tensor::new(x.shape(), data)?;
        self.tape.push(
            "add_bias",
            t,
            Op::AddBias(self.id, bias.id),
            &[self.id, bias.id],
        )
    }

    fn conv_impl(&self, weight: Var<'t>, attrs: ConvAttrs, transpose: bool) -> Result<Var<'t>> {
        self.same_tape(&weight);
        let (x, w) = (self.value(), weight.value());
        let geom = conv_geom(&x, &w, &attrs, transpose)?;
        let data = if transpose {
            kernels::conv_transpose_forward(&geom, x.data(), w.data())
        } else {
            kernels::conv_forward(&geom, x.data(), w.data())
        };
        let t = Tensor::new(&conv_out_shape(&geom, attrs.one_d), data)?;
        let (name, op) = if transpose {
            (
                "conv_transpose",
                Op::ConvTranspose(self.id, weight.id, attrs),
            )
        } else {
            ("conv", Op::Conv(self.id, weight.id, attrs))
        };
        self.tape.push(name, t, op, &[self.id, weight.id])
    }

    /// `[B, Cin, L]` conv `[Cout, Cin, K]` -> `[B, Cout, (L + 2p - K) / s + 1]`
    pub fn conv1d(&self, weight: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let attrs = ConvAttrs {
            stride: (1, stride),
            padding: (0, padding),
            output_padding: (0, 0),
            one_d: true,
        };
        self.conv_impl(weight, attrs, false)
    }

    /// `[B, Cin, H, W]` conv `[Cout, Cin, K, K]`, same stride and padding on both axes.
    pub fn conv2d(&self, weight: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let attrs = ConvAttrs {
            stride: (stride, stride),
            padding: (padding, padding),
            output_padding: (0, 0),
            one_d: false,
        };
        self.conv_impl(weight, attrs, false)
    }

    /// `[B, Cin, L]` with weight `[Cin, Cout, K]` ->
    /// `[B, Cout, (L - 1) s - 2p + K + output_padding]`
    pub fn conv_transpose1d(
        &self,
        weight: Var<'t>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var<'t>> {
        let attrs = ConvAttrs {
            stride: (1, stride),
            padding: (0, padding),
            output_padding: (0, output_padding),
            one_d: true,
        };
        self.conv_impl(weight, attrs, true)
    }

    pub fn conv_transpose2d(
        &self,
        weight: Var<'t>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var<'t>> {
        let attrs = ConvAttrs {
            stride: (stride, stride),
            padding: (padding, padding),
            output_padding: (output_padding, output_padding),
            one_d: false,
        };
        self.conv_impl(weight, attrs, true)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self) -> Result<Var<'t>> {
        let x = self.value();
        let cdf: Vec<f64> = x.data().iter().map(|v| normal_cdf(*v)).collect();
        let t = Tensor::new(
            x.shape(),
            x.data().iter().zip(&cdf).map(|(v, c)| v * c).collect(),
        )?;
        self.tape
            .push("gelu", t, Op::Gelu(self.id, Rc::new(cdf)), &[self.id])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let t = (*self.value()).clone().reshaped(shape)?;
        self.tape
            .push("reshape", t, Op::Reshape(self.id), &[self.id])
    }

    /// Collapses every axis after the first.
    pub fn flatten(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let b = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product();
        self.reshape(&[b, rest])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let values: Vec<Rc<Tensor>> = parts
            .iter()
            .map(|p| {
                first.same_tape(p);
                p.value()
            })
            .collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err(
                "concat",
                format!("axis {} out of range for {:?}", axis, base),
            ));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, e)| i != axis && *e != base[i])
            {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs {:?} on axis {}", base, s, axis),
                ));
            }
        }
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let ext = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let t = Tensor::new(&shape, data)?;
        first
            .tape
            .push("concat", t, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (b, row) = x.rows();
        if x.ndim() == 0 || start + len > b {
            return Err(shape_err(
                "narrow",
                format!("rows {}..{} of {:?}", start, start + len, x.shape()),
            ));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let t = Tensor::new(&shape, x.data()[start * row..(start + len) * row].to_vec())?;
        self.tape
            .push("narrow", t, Op::Narrow(self.id, start), &[self.id])
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let x = self.value();
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v * c).collect())?;
        self.tape
            .push("scale", t, Op::Scale(self.id, c), &[self.id])
    }

    /// Multiplies row `i` (leading axis) by the constant `factors[i]`.
    pub fn scale_rows(&self, factors: Rc<Vec<f64>>) -> Result<Var<'t>> {
        let x = self.value();
        let (b, row) = x.rows();
        if x.ndim() == 0 || factors.len() != b {
            return Err(shape_err(
                "scale_rows",
                format!("{} factors for {:?}", factors.len(), x.shape()),
            ));
        }
        let data = x
            .data()
            .chunks(row.max(1))
            .zip(factors.iter())
            .flat_map(|(c, f)| c.iter().map(move |v| v * f))
            .collect();
        let t = Tensor::new(x.shape(), data)?;
        self.tape
            .push("scale_rows", t, Op::ScaleRows(self.id, factors), &[self.id])
    }

    fn row_reduce(&self, name: &'static str, f: impl Fn(&[f64]) -> f64, op: Op) -> Result<Var<'t>> {
        let x = self.value();
        if x.ndim() == 0 {
            return Err(shape_err(name, "needs at least one axis".into()));
        }
        let (b, row) = x.rows();
        let data: Vec<f64> = if row == 0 {
            vec![0.0; b]
        } else {
            x.data().chunks(row).map(f).collect()
        };
        let t = Tensor::new(&[b], data)?;
        self.tape.push(name, t, op, &[self.id])
    }

    /// L1 norm of each leading-axis row: `[B, ...] -> [B]`.
    pub fn norm_l1_rows(&self) -> Result<Var<'t>> {
        self.row_reduce(
            "norm_l1",
            |r| r.iter().map(|v| v.abs()).sum(),
            Op::NormL1Rows(self.id),
        )
    }

    /// L2 norm of each leading-axis row: `[B, ...] -> [B]`.
    pub fn norm_l2_rows(&self) -> Result<Var<'t>> {
        self.row_reduce(
            "norm_l2",
            |r| r.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Op::NormL2Rows(self.id),
        )
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let x = self.value();
        let t = Tensor::scalar(x.data().iter().sum());
        self.tape.push("sum", t, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let t = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.tape.push("mean", t, Op::Mean(self.id), &[self.id])
    }

    /// Same values, detached: nothing upstream receives gradient through it.
    pub fn stop_gradient(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }
}
