//! Deep implicit semantic templates for a class of shapes.
//!
//! Each instance is represented by a learned warp into a shared template
//! space. A single signed-distance field describes the template geometry and
//! a texture field defined on the template surface describes color. Shape and
//! texture codes are decoupled: geometry never reads the texture code.

pub mod autodiff;
pub mod geometry;
pub mod synth;
pub mod fields;
pub mod training;
pub mod extraction;
pub mod toolkit;
