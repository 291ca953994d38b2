//! SVM classification head and evaluation metrics.

pub mod metrics;
pub mod svm;

pub use metrics::{confusion, metrics, ConfusionMatrix, Metric, Metrics};
pub use svm::{svm_predict, svm_solve, svm_train, Kernel, SvmModel, SvmParams};
