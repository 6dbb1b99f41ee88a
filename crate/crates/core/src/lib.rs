//! Inference energy estimation for feed-forward networks on edge boards.
//!
//! Energy is modeled from MAC counts: a convolution with `ofm` kernels
//! costs `kclc · (a_c + b_c · ofm)` joules, a fully connected layer
//! `clf · a_f`. The device coefficients are calibrated from timeslotted
//! power traces of single-layer runs.
//!
//! - [`arch`]: layer/network types and MAC counts
//! - [`trace`]: trace ingestion, integration and per-config statistics
//! - [`calibrate`]: per-`ofm` slopes, hyperbolic fit, FC slope
//! - [`estimate`]: per-layer and whole-network estimates
//! - [`synth`]: seeded synthetic campaigns
//! - [`profile`]: device profiles, including the bundled Jetson boards

pub mod arch;
pub mod calibrate;
pub mod error;
pub mod estimate;
pub mod profile;
pub mod synth;
pub mod trace;

pub use arch::{
    ArchParseOptions, ConvLayerSpec, FcLayerSpec, LayerKind, LayerShape, LayerSpec, LoadMode, MacCount, NetworkArch,
};
pub use error::{Error, Result};
pub use estimate::{estimate_network, LayerEnergy, NetworkEstimate};
pub use profile::DeviceProfile;
