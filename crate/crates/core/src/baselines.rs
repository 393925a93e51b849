//! Classical baselines for the model comparison: a Gaussian kernel density
//! estimator with cross-validated bandwidth, and a one-vs-rest RBF-kernel
//! SVM trained by Pegasos-style stochastic subgradient descent.

pub mod kde;
pub mod svm;

pub use kde::{
    kde_density, kde_fit, kde_hotspot_classify, subsample_points, HotspotComparison, KdeModel,
};
pub use svm::{rbf_kernel_matrix, svm_predict, svm_train, SvmModel};
