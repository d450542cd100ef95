//! Planar closed-chain cycling simulator.

pub mod config;
pub mod gap;
pub mod kinematics;
pub mod muscle;
pub mod sim;

pub use config::{wrap_angle, CyclingConfig, ValidatedConfig};
pub use gap::RealityGapConfig;
pub use kinematics::{joint_jacobian, pedal_position, solve_leg_ik, JointAngles, JointRates, Side};
pub use muscle::{activation_step, muscle_joint_torques, MuscleName, MuscleParams};
pub use sim::{sim_step_count, to_rpm, Plant, SimState, StartAssist, CONTROL_DT};
