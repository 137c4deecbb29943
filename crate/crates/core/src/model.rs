//! End-to-end forecaster: normalise, patch, embed, reprogram, prepend the
//! prompt, run the frozen backbone, read out with a linear head, denormalise.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, ForwardOptions};
use crate::container::{Container, NamedTensor};
use crate::data::{visit_slot, SubjectRecord, N_VISITS, PRIMARY_VARIABLE, VISIT_MONTHS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::patch::{left_extend, patch_count, segment, PatchEmbedder, PatchSequence};
use crate::prompt::{PromptBuilder, PromptFields, PromptTemplate, Vocab, DEFAULT_MAX_PROMPT_TOKENS};
use crate::reprogram::{CrossAttention, KeyValues, PrototypeBank, PrototypeMode};
use crate::revin::{normalize, RevinState};
use crate::tensor::{Parameter, ParameterSet, Scalar, Tensor};

pub const CHECKPOINT_FILE: &str = "model.tensors";
pub const CHECKPOINT_MANIFEST: &str = "model.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// One prompt per (subject, variable).
    #[default]
    PerVariable,
    /// The primary variable's prompt is reused for every variable.
    Shared,
    /// No prompt rows (`ℓp = 0`).
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub stride: usize,
    pub d_embed: usize,
    /// Cross-attention heads `K`.
    pub heads: usize,
    /// Text prototypes `V′`.
    pub prototypes: usize,
    pub prototype_mode: PrototypeMode,
    /// Forecast steps `h` over the following scheduled visits.
    pub horizon_steps: usize,
    /// Visit month being forecast; earlier visits form the input window.
    pub upto_month: u32,
    /// Input window length in visit slots.
    pub window: usize,
    pub revin: bool,
    pub prompt: PromptMode,
    pub max_prompt_tokens: usize,
    /// Run only the first `n` backbone blocks.
    pub llm_layers: Option<usize>,
    /// Hide fully unobserved patches from backbone attention.
    pub mask_unobserved_patches: bool,
    /// Hidden width of an MLP patch embedder; `None` is a single affine map.
    pub embed_hidden: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_len: 2,
            stride: 1,
            d_embed: 16,
            heads: 8,
            prototypes: 100,
            prototype_mode: PrototypeMode::Linear,
            horizon_steps: 1,
            upto_month: 12,
            window: N_VISITS - 1,
            revin: true,
            prompt: PromptMode::PerVariable,
            max_prompt_tokens: DEFAULT_MAX_PROMPT_TOKENS,
            llm_layers: None,
            mask_unobserved_patches: false,
            embed_hidden: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_len == 0 || self.stride == 0 || self.d_embed == 0 || self.window == 0 {
            return Err(Error::Argument(
                "patch length, stride, d_embed and window must be positive".into(),
            ));
        }
        if self.heads == 0 || self.prototypes == 0 || self.horizon_steps == 0 {
            return Err(Error::Argument(
                "heads, prototypes and horizon steps must be positive".into(),
            ));
        }
        match visit_slot(self.upto_month) {
            Some(s) if s > 0 => Ok(()),
            _ => Err(Error::Argument(format!(
                "upto month must be a follow-up visit {:?}, got {}",
                &VISIT_MONTHS[1..],
                self.upto_month
            ))),
        }
    }

    /// Number of patches the head reads.
    pub fn patches(&self) -> usize {
        patch_count(self.window.max(self.patch_len), self.patch_len, self.stride).expect("validated config")
    }
}

/// Linear read-out from flattened patch outputs to `h` values.
#[derive(Clone, Debug)]
pub struct ForecastHead<F: Scalar> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

impl<F: Scalar> ForecastHead<F> {
    pub fn new(inputs: usize, horizon: usize, rng: &mut impl rand::Rng) -> Self {
        Self {
            weight: Parameter::trainable("head.weight", init::xavier(inputs, horizon, rng)),
            bias: Parameter::trainable("head.bias", Tensor::zeros(&[1, horizon])),
        }
    }
}

/// One (subject, variable) ready for the network.
#[derive(Clone, Debug)]
pub struct VariableInput {
    pub variable: usize,
    /// Normalised window (unobserved cells are 0).
    pub series: Vec<f64>,
    pub mask: Vec<bool>,
    pub state: RevinState,
    pub patches: PatchSequence,
    pub prompt_ids: Vec<u32>,
    /// Clinical-unit targets; unobserved cells hold 0 and are masked.
    pub target: Vec<f64>,
    pub target_mask: Vec<bool>,
}

impl VariableInput {
    pub fn observed_targets(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }
}

/// Forecast for one subject across all variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastOutput {
    /// `d×h` in clinical units; skipped variables hold `NaN`.
    pub y_hat: Vec<Vec<f64>>,
    pub y_norm: Vec<Vec<f64>>,
    pub states: Vec<Option<RevinState>>,
    /// Variables without any observed history.
    pub skipped: Vec<usize>,
}

/// Keys and values of every cross-attention head, computed once per parameter snapshot.
#[derive(Clone, Debug)]
pub struct KvCache<F: Scalar> {
    keys_t: Vec<Tensor<F>>,
    values: Vec<Tensor<F>>,
}

/// Everything trained and frozen, plus the prompt machinery.
#[derive(Clone, Debug)]
pub struct ModelBundle<F: Scalar> {
    pub config: ModelConfig,
    pub variables: Vec<String>,
    pub patch: PatchEmbedder<F>,
    pub protos: PrototypeBank<F>,
    pub attn: CrossAttention<F>,
    pub head: ForecastHead<F>,
    pub backbone: Arc<Backbone<F>>,
    pub prompt: PromptBuilder,
}

impl<F: Scalar> ModelBundle<F> {
    /// Builtin vocabulary sized to the backbone and the default template.
    pub fn new(config: ModelConfig, backbone: Arc<Backbone<F>>, variables: Vec<String>) -> Result<Self> {
        let vocab = Vocab::builtin(backbone.config.vocab_size)?;
        let prompt = PromptBuilder::new(PromptTemplate::default(), vocab, config.max_prompt_tokens);
        Self::with_prompt(config, backbone, variables, prompt)
    }

    pub fn with_prompt(
        config: ModelConfig,
        backbone: Arc<Backbone<F>>,
        variables: Vec<String>,
        mut prompt: PromptBuilder,
    ) -> Result<Self> {
        config.validate()?;
        if variables.is_empty() {
            return Err(Error::Argument("model needs at least one variable".into()));
        }
        if prompt.vocab.len() > backbone.config.vocab_size {
            return Err(Error::Argument(format!(
                "vocabulary of {} tokens exceeds the backbone's {}",
                prompt.vocab.len(),
                backbone.config.vocab_size
            )));
        }
        prompt.max_tokens = config.max_prompt_tokens;
        let dh = backbone.config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let patch = match config.embed_hidden {
            Some(hidden) => PatchEmbedder::mlp(config.patch_len, hidden, config.d_embed, &mut rng),
            None => PatchEmbedder::linear(config.patch_len, config.d_embed, &mut rng),
        };
        let vocab = backbone.config.vocab_size;
        let protos = match config.prototype_mode {
            PrototypeMode::Linear => PrototypeBank::linear(config.prototypes, vocab, &mut rng),
            PrototypeMode::Subset => PrototypeBank::random_subset(config.prototypes, vocab, &mut rng)?,
        };
        let attn = CrossAttention::new(config.d_embed, dh, config.heads, &mut rng)?;
        let head = ForecastHead::new(config.patches() * dh, config.horizon_steps, &mut rng);
        let max_len = config.max_prompt_tokens + config.patches();
        if max_len > backbone.config.max_seq {
            log::warn!(
                "prompt cap {} plus {} patches exceeds backbone capacity {}",
                config.max_prompt_tokens,
                config.patches(),
                backbone.config.max_seq
            );
        }
        Ok(Self {
            config,
            variables,
            patch,
            protos,
            attn,
            head,
            backbone,
            prompt,
        })
    }

    pub fn d_model(&self) -> usize {
        self.backbone.config.d_model
    }

    fn forward_options<'m>(&self, key_mask: Option<&'m [bool]>) -> ForwardOptions<'m> {
        ForwardOptions {
            first_layers: self.config.llm_layers,
            key_mask,
        }
    }

    /// Window slots (`None` for left padding) and target slots for `upto`.
    fn slots(&self, upto: u32) -> Result<(Vec<Option<usize>>, Vec<Option<usize>>)> {
        let end = visit_slot(upto)
            .filter(|&s| s > 0)
            .ok_or_else(|| Error::Argument(format!("upto month {upto} is not a follow-up visit")))?;
        let w = self.config.window;
        let window = (0..w).map(|i| (end + i).checked_sub(w)).collect();
        let targets = (0..self.config.horizon_steps)
            .map(|k| Some(end + k).filter(|&s| s < N_VISITS))
            .collect();
        Ok((window, targets))
    }

    /// Normalised, patched, prompted input for one variable; `None` when the
    /// window holds no observation of it.
    pub fn prepare_variable(&self, subject: &SubjectRecord, var: usize, upto: u32) -> Result<Option<VariableInput>> {
        self.prepare_inner(subject, var, upto, None)
    }

    fn prepare_inner(
        &self,
        subject: &SubjectRecord,
        var: usize,
        upto: u32,
        shared_prompt: Option<&[u32]>,
    ) -> Result<Option<VariableInput>> {
        if var >= subject.n_variables() {
            return Err(Error::Bounds {
                what: "variable",
                index: var,
                len: subject.n_variables(),
            });
        }
        let (window, targets) = self.slots(upto)?;
        let raw: Vec<f64> = window
            .iter()
            .map(|s| s.and_then(|t| subject.value(var, t)).unwrap_or(0.0))
            .collect();
        let mask: Vec<bool> = window
            .iter()
            .map(|s| s.is_some_and(|t| subject.is_observed(var, t)))
            .collect();
        if !mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let (series, state) = if self.config.revin {
            normalize(&raw, &mask)?
        } else {
            (raw.clone(), RevinState::identity())
        };
        let (padded, padded_mask) = left_extend(&series, &mask, self.config.patch_len);
        let patches = segment(&padded, &padded_mask, self.config.patch_len, self.config.stride)?;
        let prompt_ids = match (self.config.prompt, shared_prompt) {
            (PromptMode::Off, _) => Vec::new(),
            (PromptMode::Shared, Some(ids)) => ids.to_vec(),
            _ => {
                let months: Vec<u32> = window.iter().map(|s| s.map_or(0, |t| VISIT_MONTHS[t])).collect();
                let fields = PromptFields::new(&subject.demographics, &months, &raw, &mask, &self.variables[var], upto);
                self.prompt.tokens(&fields)?
            }
        };
        let target_mask: Vec<bool> = targets
            .iter()
            .map(|s| s.is_some_and(|t| subject.is_observed(var, t)))
            .collect();
        let target = targets
            .iter()
            .map(|s| s.and_then(|t| subject.value(var, t)).unwrap_or(0.0))
            .collect();
        Ok(Some(VariableInput {
            variable: var,
            series,
            mask,
            state,
            patches,
            prompt_ids,
            target,
            target_mask,
        }))
    }

    /// Inputs for every variable of a subject (`None` marks a skipped variable).
    pub fn prepare_subject(&self, subject: &SubjectRecord, upto: u32) -> Result<Vec<Option<VariableInput>>> {
        if subject.n_variables() != self.variables.len() {
            return Err(Error::Dimension {
                op: "prepare_subject",
                lhs: vec![subject.n_variables(), N_VISITS],
                rhs: vec![self.variables.len(), N_VISITS],
            });
        }
        let shared = if self.config.prompt == PromptMode::Shared {
            let primary = self.variables.iter().position(|v| v == PRIMARY_VARIABLE).unwrap_or(0);
            self.prepare_inner(subject, primary, upto, None)?.map(|p| p.prompt_ids)
        } else {
            None
        };
        (0..self.variables.len())
            .map(|v| self.prepare_inner(subject, v, upto, shared.as_deref()))
            .collect()
    }

    fn prototype_kv<'a>(&'a self, g: &mut Graph<'a, F>) -> Result<KeyValues> {
        let ep = self.protos.build(g, self.backbone.embedding())?;
        self.attn.key_values(g, ep)
    }

    pub fn kv_cache(&self) -> Result<KvCache<F>> {
        let mut g = Graph::inference();
        let kv = self.prototype_kv(&mut g)?;
        Ok(KvCache {
            keys_t: kv.keys_t.iter().map(|&v| g.tensor(v)).collect(),
            values: kv.values.iter().map(|&v| g.tensor(v)).collect(),
        })
    }

    /// Graph for one input; returns `(normalised 1×h forecast, backbone output)`.
    fn sample_forward<'a>(&'a self, g: &mut Graph<'a, F>, kv: &KeyValues, inp: &VariableInput) -> Result<(Var, Var)> {
        let x = g.constant(inp.patches.to_tensor());
        let xe = self.patch.forward(g, x)?;
        let (z, _) = self.attn.attend(g, xe, kv)?;
        let lp = inp.prompt_ids.len();
        let seq = if lp == 0 {
            z
        } else {
            let p = g.constant(self.backbone.embed_tokens(&inp.prompt_ids)?);
            g.concat_rows(&[p, z])?
        };
        let key_mask: Option<Vec<bool>> = self.config.mask_unobserved_patches.then(|| {
            std::iter::repeat_n(true, lp)
                .chain(inp.patches.patch_mask.iter().copied())
                .collect()
        });
        let h = self
            .backbone
            .forward(g, seq, self.forward_options(key_mask.as_deref()))?;
        let m = inp.patches.m;
        let hp = g.slice_rows(h, lp, lp + m)?;
        let flat = g.reshape(hp, 1, m * self.d_model())?;
        let (w, b) = (g.param(&self.head.weight), g.param(&self.head.bias));
        let y = g.matmul(flat, w)?;
        Ok((g.add_row(y, b)?, h))
    }

    fn bind_cache<'a>(g: &mut Graph<'a, F>, cache: &'a KvCache<F>, grad: bool) -> KeyValues {
        let bind = |g: &mut Graph<'a, F>, t: &'a Tensor<F>| {
            if grad {
                g.input(t.clone().with_requires_grad(true))
            } else {
                g.constant_ref(t)
            }
        };
        KeyValues {
            keys_t: cache.keys_t.iter().map(|t| bind(g, t)).collect(),
            values: cache.values.iter().map(|t| bind(g, t)).collect(),
        }
    }

    /// Normalised `h`-step forecast of one prepared input.
    pub fn forecast_input(&self, cache: &KvCache<F>, inp: &VariableInput) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let kv = Self::bind_cache(&mut g, cache, false);
        let (y, _) = self.sample_forward(&mut g, &kv, inp)?;
        Ok(g.value(y).iter().map(|v| v.f64()).collect())
    }

    /// Backbone input length and output for one prepared input (inspection aid).
    pub fn backbone_output(&self, inp: &VariableInput) -> Result<Tensor<F>> {
        let cache = self.kv_cache()?;
        let mut g = Graph::inference();
        let kv = Self::bind_cache(&mut g, &cache, false);
        let (_, h) = self.sample_forward(&mut g, &kv, inp)?;
        Ok(g.tensor(h))
    }

    /// Normalised forecast and RevIN state of variable `var`; `None` when skipped.
    pub fn forward_variable(
        &self,
        subject: &SubjectRecord,
        var: usize,
        upto: u32,
    ) -> Result<Option<(Vec<f64>, RevinState)>> {
        let inputs = self.prepare_subject(subject, upto)?;
        let Some(inp) = inputs.into_iter().nth(var).flatten() else {
            return Ok(None);
        };
        let cache = self.kv_cache()?;
        Ok(Some((self.forecast_input(&cache, &inp)?, inp.state)))
    }

    /// Forecasts every forecastable variable of `subject` for the visit at `upto`.
    pub fn forward_all(&self, subject: &SubjectRecord, upto: u32) -> Result<ForecastOutput> {
        let cache = self.kv_cache()?;
        self.forward_all_cached(&cache, subject, upto)
    }

    pub fn forward_all_cached(&self, cache: &KvCache<F>, subject: &SubjectRecord, upto: u32) -> Result<ForecastOutput> {
        let h = self.config.horizon_steps;
        let d = self.variables.len();
        let mut out = ForecastOutput {
            y_hat: vec![vec![f64::NAN; h]; d],
            y_norm: vec![vec![f64::NAN; h]; d],
            states: vec![None; d],
            skipped: Vec::new(),
        };
        for (v, inp) in self.prepare_subject(subject, upto)?.into_iter().enumerate() {
            match inp {
                None => out.skipped.push(v),
                Some(inp) => {
                    let y = self.forecast_input(cache, &inp)?;
                    out.y_hat[v] = y.iter().map(|&x| inp.state.inverse(x)).collect();
                    out.y_norm[v] = y;
                    out.states[v] = Some(inp.state);
                }
            }
        }
        if out.skipped.len() == d {
            return Err(Error::Degenerate(format!(
                "subject `{}` has no observed history before month {upto}",
                subject.subject_id
            )));
        }
        Ok(out)
    }

    /// Uses every visit before `upto` to forecast the visit at `upto`.
    pub fn predict_next_visit(&self, subject: &SubjectRecord, upto: u32) -> Result<ForecastOutput> {
        self.forward_all(subject, upto)
    }

    /// Sum of squared clinical-unit errors over observed targets divided by
    /// `denom`, with gradients of every trainable parameter.
    pub fn loss_and_grads(&self, inputs: &[&VariableInput], denom: f64) -> Result<(f64, Vec<(String, Vec<F>)>)> {
        if !(denom > 0.0) {
            return Err(Error::Degenerate("loss over zero observed targets".into()));
        }
        let cache = self.kv_cache()?;
        let mut grads: BTreeMap<String, Vec<F>> = BTreeMap::new();
        let mut add = |name: String, g: &[F]| {
            let e = grads.entry(name).or_insert_with(|| vec![F::zero(); g.len()]);
            e.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        };
        let heads = cache.keys_t.len();
        let mut d_keys: Vec<Vec<F>> = cache.keys_t.iter().map(|t| vec![F::zero(); t.numel()]).collect();
        let mut d_values: Vec<Vec<F>> = cache.values.iter().map(|t| vec![F::zero(); t.numel()]).collect();
        let mut total = 0.0;
        for inp in inputs {
            if inp.observed_targets() == 0 {
                continue;
            }
            let mut g = Graph::new();
            let kv = Self::bind_cache(&mut g, &cache, true);
            let (y, _) = self.sample_forward(&mut g, &kv, inp)?;
            let s = inp.state.scale();
            let pred = g.affine(y, F::of(s), F::of(inp.state.mean));
            let target = g.constant(Tensor::from_fn(&[1, inp.target.len()], |i| F::of(inp.target[i])));
            let loss = g.masked_sq_error(pred, target, &inp.target_mask, F::of(denom))?;
            let lv = g.value(loss)[0];
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss for variable {}", inp.variable)));
            }
            total += lv.f64();
            g.backward(loss)?;
            for (name, gr) in g.param_grads() {
                add(name, &gr);
            }
            for k in 0..heads {
                if let Some(gk) = g.grad(kv.keys_t[k]) {
                    d_keys[k].iter_mut().zip(gk).for_each(|(a, &b)| *a = *a + b);
                }
                if let Some(gv) = g.grad(kv.values[k]) {
                    d_values[k].iter_mut().zip(gv).for_each(|(a, &b)| *a = *a + b);
                }
            }
        }
        // push the accumulated key/value gradients back into prototypes and projections
        let mut g = Graph::new();
        let kv = self.prototype_kv(&mut g)?;
        let mut terms = Vec::with_capacity(2 * heads);
        for k in 0..heads {
            for (var, gr) in [(kv.keys_t[k], &d_keys[k]), (kv.values[k], &d_values[k])] {
                let (r, c) = g.dims(var);
                let up = g.constant(Tensor::matrix(r, c, gr.clone())?);
                let prod = g.mul(var, up)?;
                terms.push(g.sum(prod));
            }
        }
        let mut proxy = terms[0];
        for &t in &terms[1..] {
            proxy = g.add(proxy, t)?;
        }
        g.backward(proxy)?;
        for (name, gr) in g.param_grads() {
            add(name, &gr);
        }
        Ok((total, grads.into_iter().collect()))
    }

    /// Sum of squared clinical-unit errors and observed-target count.
    pub fn sse(&self, cache: &KvCache<F>, inputs: &[&VariableInput]) -> Result<(f64, usize)> {
        let mut sse = 0.0;
        let mut n = 0;
        for inp in inputs {
            if inp.observed_targets() == 0 {
                continue;
            }
            let y = self.forecast_input(cache, inp)?;
            for ((&p, &t), &m) in y.iter().zip(&inp.target).zip(&inp.target_mask) {
                if m {
                    let e = inp.state.inverse(p) - t;
                    sse += e * e;
                    n += 1;
                }
            }
        }
        Ok((sse, n))
    }

    pub fn frozen_parameters(&self) -> Vec<&Parameter<F>> {
        self.backbone.parameters()
    }

    /// Writes the trainable tensors and a JSON manifest into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            variables: self.variables.clone(),
            d_model: self.d_model(),
            backbone_digest: self.backbone.digest(),
            trainable: self.parameters().iter().map(|p| p.name.clone()).collect(),
        };
        let mut c = Container::default();
        c.metadata.insert("format".into(), "forecaster-checkpoint".into());
        c.metadata
            .insert("backbone_digest".into(), manifest.backbone_digest.clone());
        for p in self.parameters() {
            c.push(NamedTensor::native(p.name.clone(), p.tensor()));
        }
        c.save(dir.join(CHECKPOINT_FILE))?;
        let path = dir.join(CHECKPOINT_MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Rebuilds a bundle from a checkpoint; the backbone must match the recorded digest.
    pub fn load_checkpoint(dir: impl AsRef<Path>, backbone: Arc<Backbone<F>>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(CHECKPOINT_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let digest = backbone.digest();
        if digest != manifest.backbone_digest {
            return Err(Error::Validation {
                tensor: "backbone".into(),
                msg: format!("digest {digest} does not match checkpoint {}", manifest.backbone_digest),
            });
        }
        let mut bundle = Self::new(manifest.config, backbone, manifest.variables)?;
        let c = Container::load(dir.join(CHECKPOINT_FILE))?;
        for p in bundle.parameters_mut() {
            let t = c.get(&p.name).ok_or_else(|| Error::Validation {
                tensor: p.name.clone(),
                msg: "missing from checkpoint".into(),
            })?;
            if t.shape != p.shape() {
                return Err(Error::Validation {
                    tensor: p.name.clone(),
                    msg: format!("expected shape {:?}, found {:?}", p.shape(), t.shape),
                });
            }
            p.assign(&t.data.to_scalar::<F>())?;
        }
        Ok(bundle)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub variables: Vec<String>,
    pub d_model: usize,
    pub backbone_digest: String,
    pub trainable: Vec<String>,
}

/// The trainable set: patch embedder, prototype map (linear mode),
/// cross-attention and head. Backbone weights are reached through
/// [`ModelBundle::frozen_parameters`].
impl<F: Scalar> ParameterSet<F> for ModelBundle<F> {
    fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = self.patch.parameters();
        out.extend(self.protos.parameters());
        out.extend(self.attn.parameters());
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = self.patch.parameters_mut();
        out.extend(self.protos.parameters_mut());
        out.extend(self.attn.parameters_mut());
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }
}
