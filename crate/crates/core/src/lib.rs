//! Hierarchical intention tracking for human-robot collaborative assembly.
//!
//! [`engine::Engine`] runs the tree filter and the mode supervisor one frame
//! at a time. [`sim`] closes the loop with a scripted human, a robot and part
//! pushes; [`trace`], [`metrics`], [`replay`] and [`sweep`] turn runs into
//! reports, and [`live`] serves the loop to an interactive client.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behavior;
pub mod config;
pub mod engine;
pub mod filter;
pub mod live;
pub mod metrics;
pub mod par;
pub mod replay;
pub mod sim;
pub mod supervisor;
pub mod sweep;
pub mod trace;
pub mod tracker;
pub mod tree;
