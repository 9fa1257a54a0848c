//! Simulation and finite-length scaling laws for spatially coupled LDPC
//! codes on the binary erasure channel.
//!
//! The crate samples `(dv, dc, L, N)` coupled ensembles, decodes them with
//! peeling, flooding BP and sliding-window BP, and predicts their frame
//! error rate from a table of scaling parameters estimated by density
//! evolution and Monte-Carlo runs. Limited-iteration sliding-window
//! decoding is modelled as a race between the decoding wave and the window,
//! solved with a Fokker-Planck discretization.

pub mod de;
pub mod decoder;
pub mod error;
pub mod graph;
pub mod laws;
pub mod params;
pub mod pipeline;
pub mod predict;
pub mod race;
pub mod rng;
pub mod sim;
pub mod stats;

pub use decoder::{DecoderMode, DecodingTrace, ErasurePattern, WindowConfig};
pub use error::{Error, Result};
pub use graph::{EnsembleSpec, TannerGraph, Termination};
pub use laws::{NpdDistribution, NpdModel, OuParams, UnlimitedVariant};
pub use params::{PointParams, ScalingParams};
pub use race::{FpOptions, FpProblem, FpSolution};
pub use sim::{DecoderKind, FerPoint, SimConfig};
