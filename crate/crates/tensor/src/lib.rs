//! Minimal dense tensor engine for 3D video CNNs.
//!
//! Forward passes are recorded on a [`Graph`] tape and differentiated in
//! reverse mode. Every operation reports its multiply-accumulate count to the
//! graph's [`FlopCounter`], labelled by the active scope.

pub mod element;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod serialize;
pub mod tensor;

pub use element::{DType, Element, MatRef};
pub use error::{Result, TensorError};
pub use flops::{macs_to_gflops, FlopCounter};
pub use graph::{Gradients, Graph, Mode, Var};
pub use ops::conv::{conv_out_dim, Conv3dGeometry};
pub use ops::loss::BCE_CLAMP;
pub use ops::norm::BN_EPS;
pub use ops::pool::Pool3dGeometry;
pub use optim::{sgd_momentum_step, DEFAULT_MOMENTUM};
pub use param::{ParamId, ParamStore, Parameter, RunningStats, StatUpdate, StatsId, BN_MOMENTUM};
pub use tensor::Tensor;
