//! Evaluation protocol: Hungarian matching of predicted clusters to
//! ground-truth classes, then MoF, segment F1 and mIoU.

mod hungarian;
mod metrics;
mod plot;

pub use hungarian::{assignment_cost, hungarian};
pub use metrics::{
    compute_metrics, match_labels, run_length_encode, ClassIou, ConfusionMatrix, MatchLevel, MetricsReport, Segment,
};
pub use plot::{band_svg, label_color, PALETTE};
