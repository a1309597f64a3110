//! Texture descriptors and two-stage classification for mammogram patches.
//!
//! The crate covers the whole path from patch images to evaluation reports:
//!
//! * [`patchio`]: manifest parsing, image decoding and density slicing.
//! * [`enhance`]: min-max normalization and two-stage CLAHE.
//! * [`gabor`]: gradient and Gabor-bank magnitude/orientation fields.
//! * [`hox`]: the cell/block histogram framework behind HOG and HOT.
//! * [`pbdct`]: 2-D DCT and the pass-band coefficient pool.
//! * [`dpselect`]: discrimination-potentiality ranking and prefix search.
//! * [`svm`]: soft-margin SVM trained with SMO.
//! * [`pipeline`]: normal/abnormal then benign/malignant orchestration.
//! * [`eval`]: repeated two-fold cross-validation, metrics and reports.
//! * [`cli`]: the `texdesc` batch front end.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dpselect;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod features;
pub mod gabor;
pub mod hox;
pub mod patch;
pub mod patchio;
pub mod pbdct;
pub mod pipeline;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
pub use patch::ImagePatch;
