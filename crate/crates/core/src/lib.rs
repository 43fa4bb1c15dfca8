//! Nested named-entity tagging toolkit.
//!
//! Two-level entity annotations are turned into per-token tags (IO or IOB2,
//! level-1, level-2 or joint labels), learned by a small hashed-feature linear
//! tagger under three strategies (independent layers, joint labels with
//! cross-entropy, joint labels with hierarchical cross-entropy), and scored
//! with exact-match span metrics over several scopes. The `align` module
//! transfers gold annotations onto noisy OCR text.
//!
//! Numeric code is generic over the scalar type through [`Scalar`]; the
//! aliases below pin the common instantiations.

pub mod align;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod hxe;
pub mod metrics;
pub mod scalar;
pub mod schema;
pub mod tagcodec;
pub mod tagger;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schema::{JointLabel, LabelSchema, LabelTree, Level};
pub use tagcodec::{AnnotatedEntry, Entity, Format, Mode, TagSequence, Token};
pub use tagger::{Strategy, TrainConfig};

/// Tagger with single-precision weights.
pub type ModelF32 = tagger::Model<f32>;
/// Tagger with double-precision weights.
pub type ModelF64 = tagger::Model<f64>;
/// Default model precision used by the experiment runner and the CLI.
pub type Model = ModelF64;

pub type HxeConfigF32 = hxe::HxeConfig<f32>;
pub type HxeConfigF64 = hxe::HxeConfig<f64>;
pub type HxeConfig = HxeConfigF64;

pub type LeafDistributionF64 = hxe::LeafDistribution<f64>;
