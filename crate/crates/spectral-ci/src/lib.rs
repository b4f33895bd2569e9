//! Conditional independence testing with learned spectral features.
//!
//! The library trains small feature networks to capture the leading
//! singular subspaces of the partial cross-covariance operator of a
//! triple (X, Y, Z), then tests X ⊥ Y | Z with an HSIC-like statistic
//! calibrated against a chi-squared null.
//!
//! Module map:
//! - [`numkit`]: dense linear algebra and chi-squared quantiles
//! - [`featnet`]: feed-forward feature maps with exact gradients
//! - [`emploss`]: empirical contrastive losses and regularizers
//! - [`trainer`]: the bi-level training loop and whitening
//! - [`citest`]: the test statistic and decision rule
//! - [`datagen`]: seeded synthetic data generators
//! - [`oracle`]: exact operators on finite discrete spaces
//! - [`bench`]: Monte-Carlo benchmark harness

pub mod bench;
pub mod citest;
pub mod datagen;
pub mod emploss;
pub mod featnet;
pub mod numkit;
pub mod oracle;
pub mod trainer;

pub use citest::TestOutcome;
pub use datagen::Dataset;
pub use numkit::Matrix;
pub use trainer::{RepresentationBundle, TrainConfig};
