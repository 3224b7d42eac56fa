//! Category-level regularization: centers, triplet loss, pseudo-label
//! thresholds, and target-domain consistency.

mod centers;
mod consistency;
mod pseudo;
mod thresholds;
mod triplet;

pub use centers::{compute_centers, CategoryCenters};
pub use consistency::consistency_loss;
pub use pseudo::{generate_pseudo_labels, PseudoLabelImage, PseudoLabelSet};
pub use thresholds::{compute_thresholds, ThresholdConfig};
pub use triplet::{triplet_loss, NegativeMode, TripletConfig};
pub(crate) use triplet::instance_is_smooth;
