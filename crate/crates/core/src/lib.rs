//! RL-augmented convex MPC for quadruped locomotion.

pub mod bench;
pub mod checkpoint;
pub mod controller;
pub mod episode;
pub mod error;
pub mod gait;
pub mod kinematics;
pub mod log;
pub mod metrics;
pub mod model;
pub mod mpc;
pub mod nn;
pub mod par;
pub mod policy;
pub mod ppo;
pub mod qp;
pub mod robot;
pub mod scenario;
pub mod sim;
pub mod terrain;

pub use error::{Error, Result};
