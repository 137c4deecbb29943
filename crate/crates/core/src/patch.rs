//! Temporal patching and patch embedding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::tensor::{Parameter, Scalar, Tensor};

/// `⌊(T−ℓ)/s⌋ + 2`, the number of patches [`segment`] produces.
pub fn patch_count(t: usize, len: usize, stride: usize) -> Result<usize> {
    if len == 0 || stride == 0 {
        return Err(Error::Argument("patch length and stride must be at least 1".into()));
    }
    if t < len {
        return Err(Error::Argument(format!(
            "series length {t} is shorter than patch length {len}"
        )));
    }
    Ok((t - len) / stride + 2)
}

/// Overlapping windows over a series, row-major `m×ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub patches: Vec<f64>,
    /// A patch counts as observed if any of its visits was.
    pub patch_mask: Vec<bool>,
    pub m: usize,
    pub len: usize,
    pub stride: usize,
}

impl PatchSequence {
    pub fn patch(&self, i: usize) -> &[f64] {
        &self.patches[i * self.len..(i + 1) * self.len]
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::from_fn(&[self.m, self.len], |i| F::of(self.patches[i]))
    }
}

/// Pads the end with `stride` copies of the last value, then windows at `stride`.
pub fn segment(series: &[f64], mask: &[bool], len: usize, stride: usize) -> Result<PatchSequence> {
    if series.len() != mask.len() {
        return Err(Error::Dimension {
            op: "segment",
            lhs: vec![1, series.len()],
            rhs: vec![1, mask.len()],
        });
    }
    let t = series.len();
    let m = patch_count(t, len, stride)?;
    let mut xs = series.to_vec();
    let mut ms = mask.to_vec();
    xs.extend(std::iter::repeat_n(series[t - 1], stride));
    ms.extend(std::iter::repeat_n(mask[t - 1], stride));
    let mut patches = Vec::with_capacity(m * len);
    let mut patch_mask = Vec::with_capacity(m);
    for i in 0..m {
        let start = i * stride;
        patches.extend_from_slice(&xs[start..start + len]);
        patch_mask.push(ms[start..start + len].iter().any(|&b| b));
    }
    Ok(PatchSequence {
        patches,
        patch_mask,
        m,
        len,
        stride,
    })
}

/// Extends a series on the left to at least `len` entries by replicating its
/// first value and mask bit.
pub fn left_extend(series: &[f64], mask: &[bool], len: usize) -> (Vec<f64>, Vec<bool>) {
    if series.is_empty() || series.len() >= len {
        return (series.to_vec(), mask.to_vec());
    }
    let k = len - series.len();
    let xs = std::iter::repeat_n(series[0], k)
        .chain(series.iter().copied())
        .collect();
    let ms = std::iter::repeat_n(mask[0], k).chain(mask.iter().copied()).collect();
    (xs, ms)
}

/// Affine patch map `ℓ → de`, optionally through one GELU hidden layer.
#[derive(Clone, Debug)]
pub struct PatchEmbedder<F: Scalar> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
    pub hidden: Option<(Parameter<F>, Parameter<F>)>,
}

impl<F: Scalar> PatchEmbedder<F> {
    pub fn linear(len: usize, d_embed: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Parameter::trainable("patch_embed.weight", init::xavier(len, d_embed, rng)),
            bias: Parameter::trainable("patch_embed.bias", Tensor::zeros(&[1, d_embed])),
            hidden: None,
        }
    }

    pub fn mlp(len: usize, hidden: usize, d_embed: usize, rng: &mut impl Rng) -> Self {
        let w1 = Parameter::trainable("patch_embed.hidden.weight", init::xavier(len, hidden, rng));
        let b1 = Parameter::trainable("patch_embed.hidden.bias", Tensor::zeros(&[1, hidden]));
        Self {
            weight: Parameter::trainable("patch_embed.weight", init::xavier(hidden, d_embed, rng)),
            bias: Parameter::trainable("patch_embed.bias", Tensor::zeros(&[1, d_embed])),
            hidden: Some((w1, b1)),
        }
    }

    pub fn from_parts(weight: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        if bias.numel() != weight.cols() {
            return Err(Error::Dimension {
                op: "patch embedder",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight: Parameter::trainable("patch_embed.weight", weight),
            bias: Parameter::trainable("patch_embed.bias", bias),
            hidden: None,
        })
    }

    pub fn patch_len(&self) -> usize {
        match &self.hidden {
            Some((w1, _)) => w1.tensor().rows(),
            None => self.weight.tensor().rows(),
        }
    }

    pub fn d_embed(&self) -> usize {
        self.weight.tensor().cols()
    }

    /// `m×ℓ` patches to `m×de` embeddings.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a, F>, patches: Var) -> Result<Var> {
        let mut x = patches;
        if let Some((w1, b1)) = &self.hidden {
            let (w, b) = (g.param(w1), g.param(b1));
            let h = g.matmul(x, w)?;
            let h = g.add_row(h, b)?;
            x = g.gelu(h);
        }
        let (w, b) = (g.param(&self.weight), g.param(&self.bias));
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Inference-only embedding of a patch sequence.
    pub fn embed(&self, p: &PatchSequence) -> Result<Tensor<F>> {
        if p.len != self.patch_len() {
            return Err(Error::Dimension {
                op: "embed",
                lhs: vec![p.m, p.len],
                rhs: vec![self.patch_len(), self.d_embed()],
            });
        }
        let mut g = Graph::inference();
        let x = g.constant(p.to_tensor());
        let y = self.forward(&mut g, x)?;
        Ok(g.tensor(y))
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        if let Some((w1, b1)) = &self.hidden {
            out.extend([w1, b1]);
        }
        out.extend([&self.weight, &self.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        if let Some((w1, b1)) = &mut self.hidden {
            out.extend([w1, b1]);
        }
        out.extend([&mut self.weight, &mut self.bias]);
        out
    }
}
