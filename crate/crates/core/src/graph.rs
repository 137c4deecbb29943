//! Dynamic computation tape with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are 2-D matrices in
//! row-major order; vectors are `1×n`. Frozen weights enter as borrowed
//! constants, so binding them costs nothing and they never receive a
//! gradient. Gradients flow *through* constants to upstream trainable nodes.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Parameter, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, F),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gelu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    MaskedSq {
        pred: Var,
        target: Var,
        mask: Vec<bool>,
        denom: F,
    },
}

struct Node<'a, F: Scalar> {
    value: Cow<'a, [F]>,
    rows: usize,
    cols: usize,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<'a, F: Scalar> {
    nodes: Vec<Node<'a, F>>,
    grads: Vec<Option<Vec<F>>>,
    bindings: Vec<(String, Var)>,
    bound: HashMap<String, Var>,
    record_grads: bool,
}

impl<F: Scalar> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn dim_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension {
        op,
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
}

impl<'a, F: Scalar> Graph<'a, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bindings: Vec::new(),
            bound: HashMap::new(),
            record_grads: true,
        }
    }

    /// A graph on which nothing requires a gradient.
    pub fn inference() -> Self {
        Self {
            record_grads: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [F]>, rows: usize, cols: usize, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad: requires_grad && self.record_grads,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a node out as a `rows×cols` tensor (with its gradient, if any).
    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let (r, c) = self.dims(v);
        let mut t = Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape is consistent");
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g).expect("grad shape is consistent");
        }
        t
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Owned leaf that does not require a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        let (r, c) = (t.rows(), t.cols());
        self.push(Cow::Owned(t.into_data()), r, c, Op::Leaf, false)
    }

    /// Borrowed constant leaf; no copy is made.
    pub fn constant_ref(&mut self, t: &'a Tensor<F>) -> Var {
        self.push(Cow::Borrowed(t.data()), t.rows(), t.cols(), Op::Leaf, false)
    }

    /// Borrowed constant built from a raw slice viewed as `rows×cols`.
    pub fn constant_slice(&mut self, data: &'a [F], rows: usize, cols: usize) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(dim_err("constant_slice", (rows, cols), (data.len(), 1)));
        }
        Ok(self.push(Cow::Borrowed(data), rows, cols, Op::Leaf, false))
    }

    /// Owned leaf that honours the tensor's `requires_grad` flag.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let (r, c, rg) = (t.rows(), t.cols(), t.requires_grad());
        self.push(Cow::Owned(t.into_data()), r, c, Op::Leaf, rg)
    }

    /// Binds a parameter (once per graph); trainable ones become gradient leaves.
    pub fn param(&mut self, p: &'a Parameter<F>) -> Var {
        if let Some(&v) = self.bound.get(&p.name) {
            return v;
        }
        let t = p.tensor();
        let v = self.push(Cow::Borrowed(t.data()), t.rows(), t.cols(), Op::Leaf, p.is_trainable());
        self.bound.insert(p.name.clone(), v);
        if p.is_trainable() {
            self.bindings.push((p.name.clone(), v));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(dim_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(out), m, n, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(Cow::Owned(out), c, r, Op::Transpose(a), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F) -> Result<Vec<F>> {
        if self.dims(a) != self.dims(b) {
            return Err(dim_err(name, self.dims(a), self.dims(b)));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let (r, c) = self.dims(a);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(out), r, c, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let (r, c) = self.dims(a);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(out), r, c, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let (r, c) = self.dims(a);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(out), r, c, Op::Mul(a, b), rg))
    }

    /// Adds a `1×n` (or length-`n`) bias to every row. The only broadcast supported.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(bias);
        if br * bc != c {
            return Err(dim_err("add_row", (r, c), (br, bc)));
        }
        let b = self.value(bias);
        let out: Vec<F> = self
            .value(a)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(Cow::Owned(out), r, c, Op::AddRow(a, bias), rg))
    }

    /// `a·scale + shift` with constant scalars.
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x * scale + shift).collect();
        let rg = self.any_grad(&[a]);
        self.push(Cow::Owned(out), r, c, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.affine(a, s, F::zero())
    }

    /// Row-wise softmax, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_rows_masked(x, None)
    }

    /// Row-wise softmax where `allowed[i*cols+j] == false` forces probability 0.
    pub fn softmax_rows_masked(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(m) = allowed {
            if m.len() != r * c {
                return Err(dim_err("softmax mask", (r, c), (m.len(), 1)));
            }
        }
        let src = self.value(x);
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN input to softmax".into()));
        }
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let ok = |j: usize| allowed.map_or(true, |m| m[i * c + j]);
            let mut max = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) && v > max {
                    max = v;
                }
            }
            if max == F::neg_infinity() {
                return Err(Error::Degenerate(format!("softmax row {i} has no admissible entry")));
            }
            let dst = &mut out[i * c..(i + 1) * c];
            let mut sum = F::zero();
            for (j, &v) in row.iter().enumerate() {
                if ok(j) {
                    let e = (v - max).exp();
                    dst[j] = e;
                    sum = sum + e;
                }
            }
            let inv = F::one() / sum;
            dst.iter_mut().for_each(|v| *v = *v * inv);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Cow::Owned(out), r, c, Op::Softmax(x), rg))
    }

    /// Per-row layer normalisation (population variance) with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (r, c) = self.dims(x);
        for p in [gamma, beta] {
            let (pr, pc) = self.dims(p);
            if pr * pc != c {
                return Err(dim_err("layer_norm", (r, c), (pr, pc)));
            }
        }
        let n = F::of(c as f64);
        let src = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = vec![F::zero(); r * c];
        let mut xhat = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            Cow::Owned(out),
            r,
            c,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let (k, a) = (F::of(GELU_C), F::of(GELU_A));
        let half = F::of(0.5);
        let out = self
            .value(x)
            .iter()
            .map(|&v| half * v * (F::one() + (k * (v + a * v * v * v)).tanh()))
            .collect();
        let rg = self.any_grad(&[x]);
        self.push(Cow::Owned(out), r, c, Op::Gelu(x), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let c = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(dim_err("concat_rows", self.dims(first), (pr, pc)));
            }
            rows += pr;
            out.extend_from_slice(self.value(p));
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Cow::Owned(out), rows, c, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let r = self.dims(first).0;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(dim_err("concat_cols", self.dims(first), (pr, pc)));
            }
            cols += pc;
        }
        let mut out = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Cow::Owned(out), r, cols, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start > end || end > r {
            return Err(Error::Bounds {
                what: "row slice",
                index: end,
                len: r,
            });
        }
        let out = self.value(a)[start * c..end * c].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Cow::Owned(out), end - start, c, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start > end || end > c {
            return Err(Error::Bounds {
                what: "column slice",
                index: end,
                len: c,
            });
        }
        let src = self.value(a);
        let out = (0..r)
            .flat_map(|i| src[i * c + start..i * c + end].iter().copied())
            .collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Cow::Owned(out), r, end - start, Op::SliceCols(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(dim_err("reshape", (r, c), (rows, cols)));
        }
        let out = self.value(a).to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Cow::Owned(out), rows, cols, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.any_grad(&[a]);
        self.push(Cow::Owned(vec![s]), 1, 1, Op::Sum(a), rg)
    }

    /// `Σ_{mask} (pred − target)² / denom`.
    pub fn masked_sq_error(&mut self, pred: Var, target: Var, mask: &[bool], denom: F) -> Result<Var> {
        if self.dims(pred) != self.dims(target) {
            return Err(dim_err("masked_sq_error", self.dims(pred), self.dims(target)));
        }
        let (r, c) = self.dims(pred);
        if mask.len() != r * c {
            return Err(dim_err("masked_sq_error mask", (r, c), (mask.len(), 1)));
        }
        if !(denom > F::zero()) {
            return Err(Error::Degenerate("non-positive loss denominator".into()));
        }
        let s = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &t), _)| (p - t) * (p - t))
            .sum::<F>()
            / denom;
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(
            Cow::Owned(vec![s]),
            1,
            1,
            Op::MaskedSq {
                pred,
                target,
                mask: mask.to_vec(),
                denom,
            },
            rg,
        ))
    }

    /// Mean squared error over mask-true cells only.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Degenerate("masked MSE over zero observed cells".into()));
        }
        self.masked_sq_error(pred, target, mask, F::of(count as f64))
    }

    /// Reverse pass from a scalar `loss`. Node gradients are reset first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.dims(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    /// Gradients of every bound trainable parameter reached by the last backward pass.
    pub fn param_grads(&self) -> Vec<(String, Vec<F>)> {
        self.bindings
            .iter()
            .filter_map(|(name, v)| self.grad(*v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }

    fn backprop_node(&mut self, i: usize, gout: &[F]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let (r, c) = (node.rows, node.cols);

        // Lazily allocated accumulator for an input that needs a gradient.
        fn buf<'g, F: Scalar>(
            grads: &'g mut [Option<Vec<F>>],
            nodes: &[Node<'_, F>],
            v: Var,
        ) -> Option<&'g mut Vec<F>> {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n.value.len()]))
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                if let Some(ga) = buf(grads, nodes, *a) {
                    gemm(m, n, k, gout, false, &nodes[b.0].value, true, ga, true);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    gemm(k, m, n, &nodes[a.0].value, true, gout, false, gb, true);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    // node is r×c, input is c×r
                    for p in 0..r {
                        for q in 0..c {
                            ga[q * r + p] = ga[q * r + p] + gout[p * c + q];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = buf(grads, nodes, v) {
                        g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x + d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = buf(grads, nodes, *a) {
                    g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x + d);
                }
                if let Some(g) = buf(grads, nodes, *b) {
                    g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x - d);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(g) = buf(grads, nodes, *a) {
                    for ((x, &d), &y) in g.iter_mut().zip(gout).zip(vb.iter()) {
                        *x = *x + d * y;
                    }
                }
                if let Some(g) = buf(grads, nodes, *b) {
                    for ((x, &d), &y) in g.iter_mut().zip(gout).zip(va.iter()) {
                        *x = *x + d * y;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(g) = buf(grads, nodes, *a) {
                    g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x + d);
                }
                if let Some(g) = buf(grads, nodes, *bias) {
                    for row in gout.chunks(c.max(1)) {
                        g.iter_mut().zip(row).for_each(|(x, &d)| *x = *x + d);
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(g) = buf(grads, nodes, *a) {
                    g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x + d * *scale);
                }
            }
            Op::Softmax(x) => {
                if let Some(g) = buf(grads, nodes, *x) {
                    let y = &node.value;
                    for row in 0..r {
                        let ys = &y[row * c..(row + 1) * c];
                        let ds = &gout[row * c..(row + 1) * c];
                        let dot: F = ys.iter().zip(ds).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            let idx = row * c + j;
                            g[idx] = g[idx] + ys[j] * (ds[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = &nodes[gamma.0].value;
                if let Some(g) = buf(grads, nodes, *x) {
                    let n = F::of(c as f64);
                    for row in 0..r {
                        let base = row * c;
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..c {
                            let dh = gout[base + j] * gam[j];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xhat[base + j];
                        }
                        let (m1, m2) = (s1 / n, s2 / n);
                        for j in 0..c {
                            let dh = gout[base + j] * gam[j];
                            g[base + j] = g[base + j] + rstd[row] * (dh - m1 - xhat[base + j] * m2);
                        }
                    }
                }
                if let Some(g) = buf(grads, nodes, *gamma) {
                    for row in 0..r {
                        for j in 0..c {
                            g[j] = g[j] + gout[row * c + j] * xhat[row * c + j];
                        }
                    }
                }
                if let Some(g) = buf(grads, nodes, *beta) {
                    for row in gout.chunks(c.max(1)) {
                        g.iter_mut().zip(row).for_each(|(x, &d)| *x = *x + d);
                    }
                }
            }
            Op::Gelu(x) => {
                let src = &nodes[x.0].value;
                if let Some(g) = buf(grads, nodes, *x) {
                    let (k, a) = (F::of(GELU_C), F::of(GELU_A));
                    let half = F::of(0.5);
                    let three_a = F::of(3.0 * GELU_A);
                    for ((acc, &d), &v) in g.iter_mut().zip(gout).zip(src.iter()) {
                        let t = (k * (v + a * v * v * v)).tanh();
                        let dt = k * (F::one() + three_a * v * v);
                        let dy = half * (F::one() + t) + half * v * (F::one() - t * t) * dt;
                        *acc = *acc + d * dy;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(g) = buf(grads, nodes, p) {
                        g.iter_mut()
                            .zip(&gout[offset..offset + len])
                            .for_each(|(x, &d)| *x = *x + d);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let pc = nodes[p.0].cols;
                    if let Some(g) = buf(grads, nodes, p) {
                        for row in 0..r {
                            for j in 0..pc {
                                g[row * pc + j] = g[row * pc + j] + gout[row * c + col + j];
                            }
                        }
                    }
                    col += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let ac = nodes[a.0].cols;
                if let Some(g) = buf(grads, nodes, *a) {
                    g[start * ac..start * ac + gout.len()]
                        .iter_mut()
                        .zip(gout)
                        .for_each(|(x, &d)| *x = *x + d);
                }
            }
            Op::SliceCols(a, start) => {
                let ac = nodes[a.0].cols;
                if let Some(g) = buf(grads, nodes, *a) {
                    for row in 0..r {
                        for j in 0..c {
                            let idx = row * ac + start + j;
                            g[idx] = g[idx] + gout[row * c + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = buf(grads, nodes, *a) {
                    g.iter_mut().zip(gout).for_each(|(x, &d)| *x = *x + d);
                }
            }
            Op::Sum(a) => {
                if let Some(g) = buf(grads, nodes, *a) {
                    g.iter_mut().for_each(|x| *x = *x + gout[0]);
                }
            }
            Op::MaskedSq {
                pred,
                target,
                mask,
                denom,
            } => {
                let two = F::of(2.0);
                let scale = gout[0] * two / *denom;
                let (vp, vt) = (&nodes[pred.0].value, &nodes[target.0].value);
                let diff = |j: usize| if mask[j] { (vp[j] - vt[j]) * scale } else { F::zero() };
                if let Some(g) = buf(grads, nodes, *pred) {
                    for (j, x) in g.iter_mut().enumerate() {
                        *x = *x + diff(j);
                    }
                }
                if let Some(g) = buf(grads, nodes, *target) {
                    for (j, x) in g.iter_mut().enumerate() {
                        *x = *x - diff(j);
                    }
                }
            }
        }
    }
}
