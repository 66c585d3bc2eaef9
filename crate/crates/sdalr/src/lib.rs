//! Source-free domain adaptation for vibration-signal fault diagnosis.
//!
//! A source model (1-D residual encoder + weight-normalized classifier) is
//! pre-trained on a labeled source domain, then adapted to an unlabeled
//! target domain with no access to the source data: augmentation-ballot
//! voting splits target samples into reliable and unreliable groups, and a
//! four-part objective (label-smoothing cross-entropy, entropy maximization
//! on unreliable samples, information maximization, and a cohesion/repulsion
//! feature loss) drives the encoder.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod labeling;
pub mod losses;
pub mod network;
pub mod nn;
pub mod report;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
