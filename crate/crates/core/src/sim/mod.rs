//! Simulated planar assembly cell standing in for the physical rig.

pub mod force;
pub mod human;
pub mod push;
pub mod robot;
pub mod scenario;
pub mod scripts;
pub mod workspace;
