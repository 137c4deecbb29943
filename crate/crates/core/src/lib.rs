//! Forecasting longitudinal clinical scores with a frozen transformer.
//!
//! Each univariate visit series is instance-normalised, cut into overlapping
//! patches, embedded, and reprogrammed into the backbone's hidden space by
//! cross-attention over a small bank of text prototypes. A clinical prompt is
//! prepended, the frozen backbone contextualises the sequence, and a linear
//! head maps the patch outputs to the forecast, which is then denormalised.
//! Only the patch embedder, the reprogramming layer and the head train.

pub mod backbone;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod model;
pub mod patch;
pub mod prompt;
pub mod reprogram;
pub mod revin;
pub mod tensor;
pub mod train;

pub use backbone::{Backbone, BackboneConfig};
pub use container::Container;
pub use data::{Cohort, Demographics, Sex, SplitSpec, SubjectRecord};
pub use error::{Error, Result};
pub use eval::{AblationVariant, EvalReport, Forecaster, ProtocolConfig};
pub use graph::{Graph, Var};
pub use model::{ForecastOutput, ModelBundle, ModelConfig, PromptMode};
pub use reprogram::PrototypeMode;
pub use revin::RevinState;
pub use tensor::{Parameter, ParameterSet, Scalar, Tensor};
pub use train::{MaskedBatch, TrainConfig};
