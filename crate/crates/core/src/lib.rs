//! Discovery of latent directions from two-class image sorting, and traversal
//! along them.
//!
//! A user sorts generated images into a left and a right group; a linear SVM
//! separates the two groups and the unit normal of its hyperplane becomes a
//! direction `d`. Any image can then be moved along `d` by rendering
//! `G(z + λd)` (scene level), or by editing an intermediate layer's
//! activations along a direction learned in activation space (detail level).

pub mod engine;
pub mod eval;
pub mod generator;
pub mod ids;
pub mod image;
pub mod latent;
pub mod store;
pub mod svm;
