//! Fault-line localization from bus voltage magnitudes.
//!
//! Synthetic fault records are reduced with piecewise aggregate approximation,
//! turned into unthresholded recurrence plots, compressed to a 2-D latent space
//! by a convolutional variational autoencoder and classified with a linear SVM.

pub mod classifier;
pub mod datagen;
pub mod nnet;
pub mod pipeline;
pub mod recurrence;
pub mod seed;
pub mod tsproc;
