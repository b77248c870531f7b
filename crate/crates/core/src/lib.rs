//! Learning and inference for distributional logic programs over relational
//! data.
//!
//! The crate covers the whole pipeline:
//!
//! * [`syntax`]: the `.dc` clause language (parser, unification, validation).
//! * [`dist`]: distribution values, densities, sampling, and the linear,
//!   logistic, and softmax model atoms.
//! * [`fit`]: weighted maximum-likelihood estimation for those models.
//! * [`engine`]: sampling-based inference (forward world construction,
//!   backward proving, likelihood weighting).
//! * [`data`]: relational tables with missing values and their translation
//!   to and from clause form.
//! * [`learner`]: distributional logic tree induction over a whole schema.
//! * [`em`]: stochastic EM for learning from incomplete tables.
//! * [`eval`]: pseudo-log-likelihood, NRMSE, and AUC metrics.

pub mod data;
pub mod dist;
pub mod em;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fit;
pub mod learner;
pub mod rng;
pub mod syntax;

pub use error::Error;
