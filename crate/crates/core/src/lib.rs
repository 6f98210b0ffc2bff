//! Width-elastic, compression-aware federated learning simulator.
//!
//! Devices train channel-pruned sub-models, upload sparsified and quantized
//! updates, and the server fuses them element-wise with divergence-optimal
//! weights. Per-device shrink ratio, compression rate and CPU frequency
//! come from a closed-form solver under latency and energy budgets.

pub mod aggregate;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod rng;
pub mod shrink;
pub mod strategy;
pub mod sysmodel;

pub use aggregate::{aio_aggregate, apply_global_update, optimal_coefficients, AggregationWeights, GlobalUpdate};
pub use codec::{CompressionPlan, EncodedUpdate, QuantizedUpdate, RatePredictor, SparseUpdate};
pub use config::{ExperimentConfig, Mode};
pub use error::{Error, Result};
pub use metrics::{ExperimentReport, MetricsRow, RoundMetrics};
pub use model::{DataShard, Evaluation, GlobalModel, GradientUpdate, LayerParams, ModelArch, UpdateMask};
pub use orchestrator::{run_experiment, Simulation};
pub use shrink::{ChannelPermutation, SubModelSpec};
pub use strategy::{Budget, TaskProfile, TrainingStrategy};
pub use sysmodel::{ChannelState, CostBreakdown, DeviceProfile};
