//! Grasp synthesis on point clouds: cloud utilities, a parallel-jaw gripper
//! model, grasp fitness, simulated annealing, dataset generation, a
//! forward-only capsule network with its training losses, and inference
//! post-processing.

pub mod annealer;
pub mod capsnet;
pub mod config;
pub mod datasetgen;
pub mod fitness;
pub mod gradcheck;
pub mod gripper;
pub mod losses;
pub mod pointcloud;
pub mod postprocess;
pub mod synthetic;
