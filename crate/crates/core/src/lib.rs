//! Selective ECC protection of neural-network weights.
//!
//! The crate is a small laboratory for functional error correction: weights
//! are encoded as bits ([`codec`]), corrupted by a seeded bit-error channel
//! ([`channel`]), partially protected by an error-correcting code whose cost
//! is accounted exactly ([`ecc`]), and evaluated with a minimal inference
//! engine ([`nn`]). [`scheme`] defines per-layer bit-mask protection plans and
//! their rewards; [`drl`] learns such plans with a layer-sequential DDPG
//! agent built on the MLPs in [`gradnet`].

pub mod channel;
pub mod codec;
pub mod drl;
pub mod ecc;
mod error;
pub mod gradnet;
mod linalg;
pub mod nn;
pub mod scheme;
pub mod stats;

pub use channel::{ChannelSpec, Direction};
pub use codec::{Bits32, BitsM, FixedPointSpec, LayerBits, WeightRepr};
pub use ecc::{EccSpec, RedundancyReport};
pub use error::{Error, Result};
pub use nn::{Dataset, EdgeLayer, LayerKind, LayerMeta, NetworkModel};
pub use scheme::{BitMaskVector, EvaluationResult, ProtectionPlan, RewardParams};
