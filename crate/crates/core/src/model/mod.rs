//! DRSAN architecture: configuration, parameters, forward pass, accounting
//! and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod count;
pub mod network;
pub mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, OptimizerState};
pub use config::{ConnectionMode, DrmActivation, NetworkConfig, Preset};
pub use count::{count_multi_adds, count_params, hd_frame};
pub use network::{param_specs, ForwardProbe, Model, ParamKind, ParamSpec};
pub use params::{Param, ParameterStore};
