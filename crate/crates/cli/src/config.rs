//! Model, training and backbone settings: defaults, then a TOML config file,
//! then explicitly passed flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Args;
use cogcast::backbone::{Backbone, BackboneConfig};
use cogcast::{ModelConfig, PromptMode, PrototypeMode, TrainConfig};
use serde::{Deserialize, Serialize};

fn parse_prompt_mode(s: &str) -> Result<PromptMode, String> {
    match s {
        "per-variable" => Ok(PromptMode::PerVariable),
        "shared" => Ok(PromptMode::Shared),
        "off" => Ok(PromptMode::Off),
        _ => Err(format!("expected per-variable, shared or off, got `{s}`")),
    }
}

fn parse_prototype_mode(s: &str) -> Result<PrototypeMode, String> {
    match s {
        "linear" => Ok(PrototypeMode::Linear),
        "subset" => Ok(PrototypeMode::Subset),
        _ => Err(format!("expected linear or subset, got `{s}`")),
    }
}

/// Every tunable setting. Unset fields fall through to the config file and
/// then to the defaults shown in `--help`.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// Patch length ℓ [default: 2]
    #[arg(long)]
    pub patch_len: Option<usize>,
    /// Patch stride s [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Patch embedding width de [default: 16]
    #[arg(long)]
    pub d_embed: Option<usize>,
    /// Reprogramming attention heads K [default: 8]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Text prototypes V′ [default: 100]
    #[arg(long)]
    pub prototypes: Option<usize>,
    /// Prototype construction: linear or subset [default: linear]
    #[arg(long, value_parser = parse_prototype_mode)]
    pub prototype_mode: Option<PrototypeMode>,
    /// Backbone layers run by the model [default: 12]
    #[arg(long)]
    pub llm_layers: Option<usize>,
    /// Input window in visit slots [default: 6]
    #[arg(long)]
    pub window: Option<usize>,
    /// Forecast steps over the following visits [default: 1]
    #[arg(long)]
    pub horizon_steps: Option<usize>,
    /// Reversible instance normalisation [default: true]
    #[arg(long)]
    pub revin: Option<bool>,
    /// Prompt: per-variable, shared or off [default: per-variable]
    #[arg(long, value_parser = parse_prompt_mode)]
    pub prompt: Option<PromptMode>,
    /// Prompt token cap [default: 64]
    #[arg(long)]
    pub max_prompt_tokens: Option<usize>,
    /// Hide unobserved patches from backbone attention [default: false]
    #[arg(long)]
    pub mask_unobserved_patches: Option<bool>,
    /// Hidden width of an MLP patch embedder (omit for a linear embedder)
    #[arg(long)]
    pub embed_hidden: Option<usize>,
    /// Initial learning rate [default: 0.005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Subjects per batch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Decoupled weight decay [default: 0]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Global gradient-norm clip (omit for none)
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Cosine learning-rate decay [default: false]
    #[arg(long)]
    pub cosine: Option<bool>,
    /// Layers of a randomly initialised backbone [default: --llm-layers]
    #[arg(long)]
    pub backbone_layers: Option<usize>,
    /// Attention heads of a randomly initialised backbone [default: 4]
    #[arg(long)]
    pub backbone_heads: Option<usize>,
    /// Hidden width dh of a randomly initialised backbone [default: 64]
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Vocabulary size of a randomly initialised backbone [default: 512]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Position capacity of a randomly initialised backbone [default: 128]
    #[arg(long)]
    pub max_seq: Option<usize>,
    /// Seed of a randomly initialised backbone [default: 0]
    #[arg(long)]
    pub backbone_seed: Option<u64>,
    /// Bidirectional instead of causal backbone attention [default: false]
    #[arg(long)]
    pub bidirectional: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Overrides {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(mut self, top: &Overrides) -> Self {
        overlay!(self, top;
            patch_len, stride, d_embed, heads, prototypes, prototype_mode, llm_layers, window,
            horizon_steps, revin, prompt, max_prompt_tokens, mask_unobserved_patches, embed_hidden,
            lr, epochs, batch_size, weight_decay, clip_norm, cosine, backbone_layers, backbone_heads,
            d_model, vocab_size, max_seq, backbone_seed, bidirectional);
        self
    }

    /// Merges an optional config file under the flags and fills defaults.
    pub fn resolve(&self, config: Option<&Path>, backbone: Option<&Path>) -> anyhow::Result<Settings> {
        let merged = match config {
            Some(p) => Overrides::load(p)?.overlay(self),
            None => self.clone(),
        };
        Settings::from_overrides(&merged, backbone)
    }
}

/// Where the frozen backbone comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSource {
    /// Container file; `None` means a random initialisation from `config`.
    pub path: Option<PathBuf>,
    pub config: BackboneConfig,
}

impl BackboneSource {
    pub fn build(&self) -> anyhow::Result<Arc<Backbone<f32>>> {
        let b = match &self.path {
            Some(p) => Backbone::load(p).with_context(|| format!("loading backbone {}", p.display()))?,
            None => Backbone::random_init(&self.config)?,
        };
        Ok(Arc::new(b))
    }
}

/// Fully resolved settings, recorded verbatim in manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub backbone: BackboneSource,
}

impl Settings {
    pub fn from_overrides(o: &Overrides, backbone: Option<&Path>) -> anyhow::Result<Self> {
        let dm = ModelConfig::default();
        let dt = TrainConfig::default();
        let db = BackboneConfig::default();
        let bcfg = match backbone {
            Some(p) => Backbone::<f32>::load(p)
                .with_context(|| format!("loading backbone {}", p.display()))?
                .config
                .clone(),
            None => {
                let bcfg = BackboneConfig {
                    layers: o.backbone_layers.or(o.llm_layers).unwrap_or(db.layers),
                    heads: o.backbone_heads.unwrap_or(db.heads),
                    d_model: o.d_model.unwrap_or(db.d_model),
                    vocab_size: o.vocab_size.unwrap_or(db.vocab_size),
                    max_seq: o.max_seq.unwrap_or(db.max_seq),
                    seed: o.backbone_seed.unwrap_or(db.seed),
                    causal: !o.bidirectional.unwrap_or(false),
                };
                bcfg.validate()?;
                bcfg
            }
        };
        let layers = bcfg.layers;
        let llm_layers = o.llm_layers.unwrap_or(layers);
        if llm_layers == 0 {
            bail!("--llm-layers must be at least 1");
        }
        if llm_layers > layers {
            bail!("--llm-layers {llm_layers} exceeds the backbone's {layers} layers");
        }
        let model = ModelConfig {
            patch_len: o.patch_len.unwrap_or(dm.patch_len),
            stride: o.stride.unwrap_or(dm.stride),
            d_embed: o.d_embed.unwrap_or(dm.d_embed),
            heads: o.heads.unwrap_or(dm.heads),
            prototypes: o.prototypes.unwrap_or(dm.prototypes),
            prototype_mode: o.prototype_mode.unwrap_or(dm.prototype_mode),
            horizon_steps: o.horizon_steps.unwrap_or(dm.horizon_steps),
            window: o.window.unwrap_or(dm.window),
            revin: o.revin.unwrap_or(dm.revin),
            prompt: o.prompt.unwrap_or(dm.prompt),
            max_prompt_tokens: o.max_prompt_tokens.unwrap_or(dm.max_prompt_tokens),
            llm_layers: (llm_layers < layers).then_some(llm_layers),
            mask_unobserved_patches: o.mask_unobserved_patches.unwrap_or(dm.mask_unobserved_patches),
            embed_hidden: o.embed_hidden.or(dm.embed_hidden),
            ..dm
        };
        let train = TrainConfig {
            lr: o.lr.unwrap_or(dt.lr),
            epochs: o.epochs.unwrap_or(dt.epochs),
            batch_size: o.batch_size.unwrap_or(dt.batch_size),
            weight_decay: o.weight_decay.unwrap_or(dt.weight_decay),
            clip_norm: o.clip_norm.or(dt.clip_norm),
            cosine: o.cosine.unwrap_or(dt.cosine),
            ..dt
        };
        train.validate()?;
        Ok(Self {
            model,
            train,
            backbone: BackboneSource {
                path: backbone.map(Path::to_path_buf),
                config: bcfg,
            },
        })
    }

    /// Overrides that reproduce these settings without a config file.
    pub fn to_overrides(&self) -> Overrides {
        let (m, t, b) = (&self.model, &self.train, &self.backbone.config);
        Overrides {
            patch_len: Some(m.patch_len),
            stride: Some(m.stride),
            d_embed: Some(m.d_embed),
            heads: Some(m.heads),
            prototypes: Some(m.prototypes),
            prototype_mode: Some(m.prototype_mode),
            llm_layers: Some(m.llm_layers.unwrap_or(b.layers)),
            window: Some(m.window),
            horizon_steps: Some(m.horizon_steps),
            revin: Some(m.revin),
            prompt: Some(m.prompt),
            max_prompt_tokens: Some(m.max_prompt_tokens),
            mask_unobserved_patches: Some(m.mask_unobserved_patches),
            embed_hidden: m.embed_hidden,
            lr: Some(t.lr),
            epochs: Some(t.epochs),
            batch_size: Some(t.batch_size),
            weight_decay: Some(t.weight_decay),
            clip_norm: t.clip_norm,
            cosine: Some(t.cosine),
            backbone_layers: Some(b.layers),
            backbone_heads: Some(b.heads),
            d_model: Some(b.d_model),
            vocab_size: Some(b.vocab_size),
            max_seq: Some(b.max_seq),
            backbone_seed: Some(b.seed),
            bidirectional: Some(!b.causal),
        }
    }
}
