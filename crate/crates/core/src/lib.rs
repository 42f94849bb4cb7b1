//! Reach-avoid-stay sets and policies for discrete-time systems under
//! bounded adversarial disturbance.

pub mod artifact;
pub mod ddpg;
pub mod grid;
pub mod sim;
pub mod solver;
pub mod system;
