//! Segmentation model, instance extraction and precision-at-IoU evaluation.

pub mod eval;
pub mod instances;
pub mod model;

pub use eval::{
    ap_at, ap_at_set, ap_range, aupc, coco_thresholds, evaluate_set, iou, match_greedy, precision_curve, trapezoid,
    ApRange, EvalRow, ImageEval, MatchRecord, SetEvaluation,
};
pub use instances::{instances_from_probability, predict_instances, InstanceConfig, InstancePrediction};
pub use model::{pixel_loss, train_seg, FocalParams, SegArch, SegModel, SegSample, SegTrainConfig, SegTrainReport};
