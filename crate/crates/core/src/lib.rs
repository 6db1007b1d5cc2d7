//! Geometric approximate minimum-energy (GAME) filtering for cooperative
//! localisation of `n` robots on SE(3)^n.
//!
//! * [`lie`]: SO(3)/SE(3) maps, exponential and logarithm, projections and
//!   the `F`/`G` linearisation operators.
//! * [`measurement`]: velocity, landmark and robot-to-robot measurement
//!   records and their gradient/Hessian terms.
//! * [`central`]: the joint filter, with a Hessian (`P`) backend and an
//!   inverse-Hessian (`Sigma`) backend.
//! * [`decoupled`]: per-robot nodes that reproduce the central estimate by
//!   exchanging propagation tokens and low-rank update broadcasts.
//! * [`wire`]: the binary message format.
//!
//! Everything is generic over [`Real`]; the aliases below fix `f64`.

pub mod central;
pub mod decoupled;
pub mod error;
pub mod lie;
pub mod measurement;
pub mod scalar;
pub mod wire;

pub use error::{FilterError, LieError, WireError};
pub use scalar::Real;

pub type Pose = lie::Pose<f64>;
pub type Rotation = lie::Rotation<f64>;
pub type Twist = lie::Twist<f64>;
pub type StackedTwist = lie::StackedTwist<f64>;
pub type GlobalEstimate = central::GlobalEstimate<f64>;
pub type HessianMatrix = central::HessianMatrix<f64>;
pub type InverseHessian = central::InverseHessian<f64>;
pub type CentralFilter = central::CentralFilter<f64>;
pub type VelocityMeasurement = measurement::VelocityMeasurement<f64>;
pub type LandmarkMeasurement = measurement::LandmarkMeasurement<f64>;
pub type RobotMeasurement = measurement::RobotMeasurement<f64>;
pub type RobotNode = decoupled::RobotNode<f64>;
pub type PropagationToken = decoupled::PropagationToken<f64>;
pub type PeerState = decoupled::PeerState<f64>;
pub type UpdateBroadcast = decoupled::UpdateBroadcast<f64>;
pub type DecoupledNetwork = decoupled::DecoupledNetwork<f64>;
pub type Message = wire::Message<f64>;
