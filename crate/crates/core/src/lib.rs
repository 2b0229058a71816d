//! Hybrid depth-of-field renderer.
//!
//! A gather-based post-process DoF branch is augmented with adaptively
//! ray-traced, temporally accumulated and spatially reconstructed
//! semi-transparencies, then composited against a sharp visibility pass.

pub mod composite;
pub mod fixtures;
pub mod image;
pub mod lens;
pub mod pipeline;
pub mod postprocess;
pub mod raymask;
pub mod reconstruct;
pub mod reference;
pub mod rtdof;
pub mod scene;
pub mod taa;
pub mod temporal;
pub mod visibility;
