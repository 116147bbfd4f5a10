//! Elastic provisioning for a simulated serving cluster, driven by short-term-memory
//! tabular Q-learning.
//!
//! Two learning agents sit on top of a deterministic time-stepped cluster simulator:
//! an admission controller that learns an ADMIT/DROP policy over quantized VM
//! utilization levels, and a horizontal scaler that learns when to add or remove
//! VMs from per-VM-count action cards. An extended Kalman filter provisioner and
//! static provisioning serve as baselines. The harness wires workloads, agents,
//! and reporting into seeded, reproducible experiments.

pub mod admission;
pub mod baselines;
pub mod cloudsim;
pub mod harness;
pub mod qcurve;
pub mod rl_core;
pub mod scaler;
