//! Frozen pre-layer-norm transformer stack.
//!
//! Tensor names follow the GPT-2 checkpoint layout so converted weights load
//! directly: `wte.weight`, `wpe.weight`, `h.{i}.ln_1.weight`,
//! `h.{i}.attn.c_attn.weight` (`dh×3dh`), `h.{i}.attn.c_proj.weight`,
//! `h.{i}.ln_2.weight`, `h.{i}.mlp.c_fc.weight` (`dh×4dh`),
//! `h.{i}.mlp.c_proj.weight`, `ln_f.weight` and the matching `.bias` tensors.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Container, NamedTensor};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::tensor::{Parameter, Scalar, Tensor};

const LN_EPS: f64 = 1e-5;
const INIT_SD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
    /// Causal (decoder) attention; `false` gives bidirectional attention.
    pub causal: bool,
}

impl Default for BackboneConfig {
    /// Twelve layers at desk width.
    fn default() -> Self {
        Self {
            layers: 12,
            heads: 4,
            d_model: 64,
            vocab_size: 512,
            max_seq: 128,
            seed: 0,
            causal: true,
        }
    }
}

impl BackboneConfig {
    /// Two-layer desk-scale stack.
    pub fn desk() -> Self {
        Self {
            layers: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Argument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model == 0 || self.vocab_size == 0 || self.max_seq == 0 {
            return Err(Error::Argument("backbone extents must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Block<F: Scalar> {
    pub ln_1: (Parameter<F>, Parameter<F>),
    pub c_attn: (Parameter<F>, Parameter<F>),
    pub attn_proj: (Parameter<F>, Parameter<F>),
    pub ln_2: (Parameter<F>, Parameter<F>),
    pub c_fc: (Parameter<F>, Parameter<F>),
    pub mlp_proj: (Parameter<F>, Parameter<F>),
}

impl<F: Scalar> Block<F> {
    fn params(&self) -> [&Parameter<F>; 12] {
        [
            &self.ln_1.0,
            &self.ln_1.1,
            &self.c_attn.0,
            &self.c_attn.1,
            &self.attn_proj.0,
            &self.attn_proj.1,
            &self.ln_2.0,
            &self.ln_2.1,
            &self.c_fc.0,
            &self.c_fc.1,
            &self.mlp_proj.0,
            &self.mlp_proj.1,
        ]
    }
}

/// Options for one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'m> {
    /// Run only the first `n` blocks.
    pub first_layers: Option<usize>,
    /// Keys whose entry is `false` receive no attention (a row may still attend to itself).
    pub key_mask: Option<&'m [bool]>,
}

/// Frozen weights plus their configuration. Every tensor is non-trainable.
#[derive(Clone, Debug)]
pub struct Backbone<F: Scalar> {
    pub config: BackboneConfig,
    pub wte: Parameter<F>,
    pub wpe: Parameter<F>,
    pub blocks: Vec<Block<F>>,
    pub ln_f: (Parameter<F>, Parameter<F>),
}

fn expected_shapes(cfg: &BackboneConfig) -> Vec<(String, Vec<usize>)> {
    let (d, v, p) = (cfg.d_model, cfg.vocab_size, cfg.max_seq);
    let mut out = vec![
        ("wte.weight".to_string(), vec![v, d]),
        ("wpe.weight".to_string(), vec![p, d]),
    ];
    for i in 0..cfg.layers {
        let pre = format!("h.{i}");
        out.extend([
            (format!("{pre}.ln_1.weight"), vec![d]),
            (format!("{pre}.ln_1.bias"), vec![d]),
            (format!("{pre}.attn.c_attn.weight"), vec![d, 3 * d]),
            (format!("{pre}.attn.c_attn.bias"), vec![3 * d]),
            (format!("{pre}.attn.c_proj.weight"), vec![d, d]),
            (format!("{pre}.attn.c_proj.bias"), vec![d]),
            (format!("{pre}.ln_2.weight"), vec![d]),
            (format!("{pre}.ln_2.bias"), vec![d]),
            (format!("{pre}.mlp.c_fc.weight"), vec![d, 4 * d]),
            (format!("{pre}.mlp.c_fc.bias"), vec![4 * d]),
            (format!("{pre}.mlp.c_proj.weight"), vec![4 * d, d]),
            (format!("{pre}.mlp.c_proj.bias"), vec![d]),
        ]);
    }
    out.push(("ln_f.weight".into(), vec![d]));
    out.push(("ln_f.bias".into(), vec![d]));
    out
}

fn is_layer_norm(name: &str) -> bool {
    name.starts_with("ln_f.") || name.contains(".ln_1.") || name.contains(".ln_2.")
}

impl<F: Scalar> Backbone<F> {
    /// Deterministic GPT-2 style initialisation from `cfg.seed`.
    pub fn random_init(cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tensors = HashMap::new();
        for (name, shape) in expected_shapes(cfg) {
            let t = if is_layer_norm(&name) {
                init::constant(&shape, if name.ends_with(".weight") { 1.0 } else { 0.0 })
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                init::normal(&shape, INIT_SD, &mut rng)
            };
            tensors.insert(name, t);
        }
        Self::assemble(cfg.clone(), tensors)
    }

    fn assemble(config: BackboneConfig, mut tensors: HashMap<String, Tensor<F>>) -> Result<Self> {
        let mut take = |name: String| -> Result<Parameter<F>> {
            let t = tensors.remove(&name).ok_or_else(|| Error::Validation {
                tensor: name.clone(),
                msg: "missing".into(),
            })?;
            // vectors become 1×n rows so they bind directly as bias rows
            let t = if t.shape().len() == 1 {
                let n = t.numel();
                t.reshape(vec![1, n])?
            } else {
                t
            };
            Ok(Parameter::frozen(name, t))
        };
        let wte = take("wte.weight".into())?;
        let wpe = take("wpe.weight".into())?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let mut pair = |part: &str| -> Result<(Parameter<F>, Parameter<F>)> {
                Ok((
                    take(format!("h.{i}.{part}.weight"))?,
                    take(format!("h.{i}.{part}.bias"))?,
                ))
            };
            blocks.push(Block {
                ln_1: pair("ln_1")?,
                c_attn: pair("attn.c_attn")?,
                attn_proj: pair("attn.c_proj")?,
                ln_2: pair("ln_2")?,
                c_fc: pair("mlp.c_fc")?,
                mlp_proj: pair("mlp.c_proj")?,
            });
        }
        let ln_f = (take("ln_f.weight".into())?, take("ln_f.bias".into())?);
        Ok(Self {
            config,
            wte,
            wpe,
            blocks,
            ln_f,
        })
    }

    /// All tensors in canonical order.
    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = vec![&self.wte, &self.wpe];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend([&self.ln_f.0, &self.ln_f.1]);
        out
    }

    /// Token embedding matrix `E` (`V×dh`).
    pub fn embedding(&self) -> &Tensor<F> {
        self.wte.tensor()
    }

    /// Rows of `E` for `ids`; an out-of-range id is a bounds error.
    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor<F>> {
        let e = self.embedding();
        let (v, d) = (e.rows(), e.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(Error::Bounds {
                    what: "token id",
                    index: id,
                    len: v,
                });
            }
            data.extend_from_slice(e.row(id));
        }
        Tensor::new(vec![ids.len(), d], data)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        let cfg = &self.config;
        for (k, v) in [
            ("format", "transformer-backbone".to_string()),
            ("heads", cfg.heads.to_string()),
            ("causal", cfg.causal.to_string()),
            ("seed", cfg.seed.to_string()),
        ] {
            c.metadata.insert(k.into(), v);
        }
        let shapes = expected_shapes(cfg);
        for (p, (name, shape)) in self.parameters().into_iter().zip(shapes) {
            debug_assert_eq!(p.name, name);
            let t = p.tensor().clone().reshape(shape).expect("same element count");
            c.push(NamedTensor::native(name, &t));
        }
        c
    }

    /// SHA-256 over every weight's name, shape and bytes.
    pub fn digest(&self) -> String {
        self.to_container().tensor_digest()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Infers the configuration from tensor shapes; head count comes from the
    /// `heads` metadata entry (default `dh/64`, at least 1).
    pub fn from_container(c: &Container) -> Result<Self> {
        let shape_of = |name: &str| -> Result<&[usize]> {
            c.get(name)
                .map(|t| t.shape.as_slice())
                .ok_or_else(|| Error::Validation {
                    tensor: name.into(),
                    msg: "missing".into(),
                })
        };
        let wte = shape_of("wte.weight")?;
        let wpe = shape_of("wpe.weight")?;
        if wte.len() != 2 || wpe.len() != 2 || wpe[1] != wte[1] {
            return Err(Error::Validation {
                tensor: "wpe.weight".into(),
                msg: format!("embedding shapes {wte:?} and {wpe:?} disagree"),
            });
        }
        let d = wte[1];
        let mut layers = 0;
        while c.get(&format!("h.{layers}.ln_1.weight")).is_some() {
            layers += 1;
        }
        let meta = |k: &str| c.metadata.get(k);
        let heads = match meta("heads") {
            Some(h) => h
                .parse()
                .map_err(|_| Error::Format(format!("metadata `heads` is not a count: `{h}`")))?,
            None => (d / 64).max(1),
        };
        let config = BackboneConfig {
            layers,
            heads,
            d_model: d,
            vocab_size: wte[0],
            max_seq: wpe[0],
            seed: meta("seed").and_then(|s| s.parse().ok()).unwrap_or(0),
            causal: meta("causal").is_none_or(|s| s != "false"),
        };
        config.validate()?;
        let expected = expected_shapes(&config);
        let known: HashMap<&str, &Vec<usize>> = expected.iter().map(|(n, s)| (n.as_str(), s)).collect();
        let mut tensors = HashMap::new();
        for t in &c.tensors {
            match known.get(t.name.as_str()) {
                None => log::warn!("ignoring unknown backbone tensor `{}`", t.name),
                Some(&shape) if *shape != t.shape => {
                    return Err(Error::Validation {
                        tensor: t.name.clone(),
                        msg: format!("expected shape {shape:?}, found {:?}", t.shape),
                    })
                }
                Some(_) => {
                    tensors.insert(t.name.clone(), t.to_tensor::<F>()?);
                }
            }
        }
        Self::assemble(config, tensors)
    }

    /// Copy keeping only the first `n` blocks.
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.blocks.truncate(n);
        out.config.layers = out.blocks.len();
        out
    }

    /// Contextualises an `L×dh` input of embeddings.
    ///
    /// Positional embeddings `0..L` are added; no weight receives a gradient,
    /// but gradients flow back to `input`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a, F>, input: Var, opts: ForwardOptions<'_>) -> Result<Var> {
        let cfg = &self.config;
        let (l, d) = g.dims(input);
        if d != cfg.d_model {
            return Err(Error::Dimension {
                op: "backbone input",
                lhs: vec![l, d],
                rhs: vec![cfg.max_seq, cfg.d_model],
            });
        }
        if l > cfg.max_seq {
            return Err(Error::Capacity {
                len: l,
                max: cfg.max_seq,
            });
        }
        if let Some(m) = opts.key_mask {
            if m.len() != l {
                return Err(Error::Dimension {
                    op: "key mask",
                    lhs: vec![l, d],
                    rhs: vec![m.len(), 1],
                });
            }
        }
        let allowed = self.attention_mask(l, opts.key_mask);
        let wpe = g.param(&self.wpe);
        let pos = g.slice_rows(wpe, 0, l)?;
        let mut x = g.add(input, pos)?;
        let n = opts.first_layers.unwrap_or(self.blocks.len()).min(self.blocks.len());
        for block in &self.blocks[..n] {
            x = self.block_forward(g, block, x, allowed.as_deref())?;
        }
        let (gamma, beta) = (g.param(&self.ln_f.0), g.param(&self.ln_f.1));
        g.layer_norm(x, gamma, beta, F::of(LN_EPS))
    }

    fn attention_mask(&self, l: usize, key_mask: Option<&[bool]>) -> Option<Vec<bool>> {
        if !self.config.causal && key_mask.is_none() {
            return None;
        }
        let mut allowed = vec![true; l * l];
        for i in 0..l {
            for j in 0..l {
                let causal_ok = !self.config.causal || j <= i;
                let key_ok = key_mask.is_none_or(|m| m[j]) || j == i;
                allowed[i * l + j] = causal_ok && key_ok;
            }
        }
        Some(allowed)
    }

    fn block_forward<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        b: &'a Block<F>,
        x: Var,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let hd = d / heads;
        let eps = F::of(LN_EPS);

        let (g1, b1) = (g.param(&b.ln_1.0), g.param(&b.ln_1.1));
        let a = g.layer_norm(x, g1, b1, eps)?;
        let (w, bias) = (g.param(&b.c_attn.0), g.param(&b.c_attn.1));
        let qkv = g.matmul(a, w)?;
        let qkv = g.add_row(qkv, bias)?;
        let scale = F::of(1.0 / (hd as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = g.slice_cols(qkv, h * hd, (h + 1) * hd)?;
            let k = g.slice_cols(qkv, d + h * hd, d + (h + 1) * hd)?;
            let v = g.slice_cols(qkv, 2 * d + h * hd, 2 * d + (h + 1) * hd)?;
            let kt = g.transpose(k);
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, scale);
            let p = g.softmax_rows_masked(s, allowed)?;
            outs.push(g.matmul(p, v)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let (w, bias) = (g.param(&b.attn_proj.0), g.param(&b.attn_proj.1));
        let o = g.matmul(cat, w)?;
        let o = g.add_row(o, bias)?;
        let x = g.add(x, o)?;

        let (g2, b2) = (g.param(&b.ln_2.0), g.param(&b.ln_2.1));
        let a = g.layer_norm(x, g2, b2, eps)?;
        let (w, bias) = (g.param(&b.c_fc.0), g.param(&b.c_fc.1));
        let hmid = g.matmul(a, w)?;
        let hmid = g.add_row(hmid, bias)?;
        let hmid = g.gelu(hmid);
        let (w, bias) = (g.param(&b.mlp_proj.0), g.param(&b.mlp_proj.1));
        let m = g.matmul(hmid, w)?;
        let m = g.add_row(m, bias)?;
        g.add(x, m)
    }

    /// Inference-only forward of a plain tensor.
    pub fn run(&self, input: &Tensor<F>, opts: ForwardOptions<'_>) -> Result<Tensor<F>> {
        let mut g = Graph::inference();
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, x, opts)?;
        Ok(g.tensor(y))
    }
}
