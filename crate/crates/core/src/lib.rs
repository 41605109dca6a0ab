//! Synthesis, simulation and numerical verification of globally convergent
//! reduced-order nonlinear observers.
//!
//! The pipeline: represent a plant `dx = f_x(x,y,u)`, `dy = f_y(x,y,u)` with
//! measured state `y`, search for a coordinate change `z = phi(x,y)` and a
//! contraction certificate by compiling the monotonicity, correctness and
//! contraction conditions into a semidefinite feasibility problem, then run
//! the resulting observer `dxi = f_z(xhat,y,u)`, `xhat = phi^L(xi,y)` and
//! check every certificate condition numerically.

pub mod benchmarks;
pub mod model;
pub mod observer;
pub mod poly;
pub mod sdp;
pub mod sim;
pub mod sos;
pub mod synth;
pub mod verify;

pub use benchmarks::{benchmark, Benchmark, BenchmarkError, Expected, HgoParams, MaglevParams};
pub use model::{AugmentedModel, Domain, InputSignal, SystemModel, Transformation};
pub use observer::{Observer, ObserverState};
pub use poly::{PolyError, PolyMatrix, Polynomial};
pub use sdp::{SdpProblem, SdpSolution, SdpStatus, SolveOptions};
pub use sim::{SimConfig, Trajectory};
pub use synth::{CertificateForm, ObserverSpec, SynthMode, SynthesisConfig};
pub use verify::{CheckReport, CheckStatus};
