//! Evaluation: Chamfer distance, BEV IoU, average precision, mAP ratio.

mod ap;
mod chamfer;
mod eval;
mod iou;
mod report;

pub use ap::{average_precision, map_ratio, DEFAULT_IOU_THRESHOLD};
pub use chamfer::{chamfer, chamfer_with};
pub use eval::{score_pair, visible_truth, EvalOptions, PairScores};
pub use iou::{bev_iou, convex_clip, polygon_area};
pub use report::{build_report, EvalReport, ReportRow};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("chamfer distance is undefined for an empty cloud")]
    EmptyCloud,
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("mAP ratio is undefined when the clean mAP is zero")]
    ZeroCleanMap,
    #[error("{detections} detection frames but {truths} ground-truth frames")]
    FrameCountMismatch { detections: usize, truths: usize },
}
