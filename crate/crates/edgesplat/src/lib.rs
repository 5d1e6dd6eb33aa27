//! Reconstruction of parametric 3D edges from multi-view edge maps.
//!
//! The representation is a set of *sketches* — line segments and cubic Bézier
//! curves over a shared pool of optimizable 3D control points, each sketch
//! carrying an opacity and an anisotropic scale. Sketches are sampled at a
//! constant arc-length step, every sample is splatted as an anisotropic 3D
//! Gaussian aligned with the local tangent, and the splats are rasterized
//! into monochrome edge images with a differentiable alpha-compositing
//! renderer. An analytic backward pass propagates a sampled L1 image loss to
//! control points, opacities and scales; Adam updates the parameters, and
//! periodic topology passes (endpoint / overlap / co-linear merging, plus a
//! final visibility filter) keep the representation compact.
//!
//! Modules:
//! * [`sketch`] — control-point pool, sketches, arc-length sampling.
//! * [`camera`] / [`image`] — pinhole cameras and image buffers.
//! * [`raster`] — tangent-aligned splat construction, EWA projection, tiled
//!   forward rendering and the analytic backward pass.
//! * [`loss`] — class-balanced sampled L1 loss on edge images.
//! * [`optim`] — Adam, per-epoch gradient accumulation, the training loop.
//! * [`topology`] — merge and visibility-filter passes.
//! * [`detector`] — edge-map extraction from alpha/depth/normal maps.
//! * [`metrics`] — accuracy / completeness / precision-recall-F against
//!   ground-truth edges.
//! * [`scene`] / [`io`] — scene container, normalization, synthetic scene
//!   generation, init perturbations, and on-disk formats.

pub mod camera;
pub mod cli;
pub mod detector;
pub mod error;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod sketch;
pub mod topology;

pub use error::{Error, Result};
