pub mod cli;
pub mod flow;
pub mod frames;
pub mod geometry;
pub mod interpolation;
pub mod segmentation;
pub mod smoothing;
pub mod synth;
