//! Dual-task neural architecture performance predictor.
//!
//! A shared directed GCN encodes every cell of an architecture in sequence,
//! feeding each cell the pooled features of the one before it. The mean of
//! the cell features drives an accuracy regressor, while the per-node
//! features drive a shared hypernetwork that generates the weights of the
//! architecture itself; the generated network's cross-entropy on an
//! auxiliary dataset is a second training task. The two losses are combined
//! by a learned, preference-scaled uncertainty weighting.
//!
//! Around that core sit the evaluation protocol (Kendall's tau and Spearman
//! on train/test splits), an evolutionary search driven by the trained
//! predictor, and a small synthetic benchmark generator that supplies ground
//! truth at desk scale.

pub mod archspace;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hypernet;
pub mod minibench;
pub mod model;
pub mod multitask;
pub mod numerics;
pub mod predictor;
pub mod rng;
pub mod search;
pub mod trainer;

pub use error::{Error, Result};
