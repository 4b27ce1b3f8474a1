//! Differentially-private training and membership-inference auditing.
//!
//! The crate trains small image classifiers with DP-SGD / DP-Adam under an
//! explicit `(ε, δ)` budget, attacks the trained models with black-box
//! membership-inference attacks, and reports the measured membership
//! advantage next to the theoretical `e^ε − 1 + δ` ceiling.
//!
//! Module map:
//!
//! * [`nn`] – a small f64 network engine with exact per-sample gradients.
//! * [`optim`] – per-sample clipping, Gaussian noising and SGD/Adam updates.
//! * [`train`] – the private (or non-private) training loop.
//! * [`accountant`] – Rényi accounting for the subsampled Gaussian mechanism.
//! * [`data`] – ingestion, rebalancing, splitting, normalization, augmentation.
//! * [`mia`] – feature construction and the four attackers.
//! * [`metrics`] – advantage, confidence intervals, the DP bound, F1.
//! * [`bounds`] – randomized response as an exact-ε reference mechanism.
//! * [`harness`] – experiment configs, sweeps and report emission.

pub mod accountant;
pub mod bounds;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod mia;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod serde_ext;
pub mod tensor;
pub mod train;

pub use accountant::{MechanismParams, PrivacyBudget, RdpCurve};
pub use data::{ClassWeights, LabeledDataset};
pub use nn::{Activation, LayerSpec, Network, NetworkSpec, PerSampleGrads};
pub use tensor::Tensor;
