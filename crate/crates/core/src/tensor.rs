//! Dense row-major tensors and named parameters.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type of every tensor.
///
/// `f32` is the default for inference and training; `f64` exists so that
/// gradient checks can run with tight tolerances.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const DTYPE: &'static str;

    /// `c = a·b + beta·c` over strided operands (see [`gemm`]).
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the extents were checked above and the strides passed in by
                // `gemm` address exactly `m*k`, `k*n` and `m*n` elements.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Row-major matrix product into `c` (`m×n`), optionally accumulating.
///
/// `a` is stored `m×k` (or `k×m` when `trans_a`), `b` is stored `k×n`
/// (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    trans_a: bool,
    b: &[F],
    trans_b: bool,
    c: &mut [F],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { F::one() } else { F::zero() };
    F::gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
}

/// Dense tensor with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(Error::Argument(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Rows of a 2-D tensor (or 1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[F]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Plain (non-recorded) matrix product, used on inference-only paths.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, false);
        Tensor::matrix(m, n, out)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::of(x.f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

/// A named tensor that either trains or stays frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    tensor: Tensor<F>,
    trainable: bool,
}

impl<F: Scalar> Parameter<F> {
    pub fn trainable(name: impl Into<String>, tensor: Tensor<F>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, tensor: Tensor<F>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.with_requires_grad(false),
            trainable: false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn data(&self) -> &[F] {
        self.tensor.data()
    }

    /// Mutable access to the values; refused for frozen parameters.
    pub fn data_mut(&mut self) -> Result<&mut [F]> {
        if !self.trainable {
            return Err(Error::Contract(format!(
                "attempt to mutate frozen parameter `{}`",
                self.name
            )));
        }
        Ok(self.tensor.data_mut())
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.tensor.grad()
    }

    pub fn zero_grad(&mut self) {
        self.tensor.zero_grad();
    }

    pub fn accumulate_grad(&mut self, g: &[F]) -> Result<()> {
        if !self.trainable {
            return Err(Error::Contract(format!(
                "gradient routed to frozen parameter `{}`",
                self.name
            )));
        }
        self.tensor.accumulate_grad(g)
    }

    /// Replaces the values, keeping shape; used when restoring checkpoints.
    pub fn assign(&mut self, data: &[F]) -> Result<()> {
        let len = self.tensor.numel();
        if len != data.len() {
            return Err(Error::Validation {
                tensor: self.name.clone(),
                msg: format!("expected {len} elements, got {}", data.len()),
            });
        }
        self.data_mut()?.copy_from_slice(data);
        Ok(())
    }
}

/// Anything exposing an ordered list of parameters.
pub trait ParameterSet<F: Scalar> {
    fn parameters(&self) -> Vec<&Parameter<F>>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>>;

    fn trainable_parameters(&self) -> Vec<&Parameter<F>> {
        self.parameters().into_iter().filter(|p| p.is_trainable()).collect()
    }

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Accumulates named gradients (as produced by a backward pass).
    fn accumulate_grads(&mut self, grads: &[(String, Vec<F>)]) -> Result<()> {
        let mut params = self.parameters_mut();
        for (name, g) in grads {
            let p = params
                .iter_mut()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            p.accumulate_grad(g)?;
        }
        Ok(())
    }

    fn trainable_count(&self) -> usize {
        self.trainable_parameters().iter().map(|p| p.tensor().numel()).sum()
    }
}

impl<F: Scalar> ParameterSet<F> for Vec<Parameter<F>> {
    fn parameters(&self) -> Vec<&Parameter<F>> {
        self.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.iter_mut().collect()
    }
}
