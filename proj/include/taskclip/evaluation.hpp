#pragma once

// IoU, AP@0.5 per task with VOC-2010 all-point interpolation, mAP across
// tasks, and g-means threshold calibration.

#include <optional>
#include <string>
#include <vector>

#include "taskclip/data.hpp"

namespace taskclip {

double iou(const BBox& a, const BBox& b);

struct ScoredPred {
  std::string image_id;
  BBox bbox;
  double score = 0.0;
};

struct GtBox {
  std::string image_id;
  BBox bbox;
};

// Per-prediction match outcome plus the count of ground-truth boxes no
// prediction claimed. Each ground-truth box is matched at most once.
struct MatchResult {
  std::vector<std::optional<int>> matched_gt;  // index into the gts vector
  std::vector<bool> is_tp;
  int unmatched_gt = 0;
};

// Predictions ranked by descending score (stable on ties), each greedily
// matched to the unmatched same-image ground truth with highest IoU >= thresh.
// The order of `preds` is the tie-break order and must be the submission
// order. Indices in the result refer to the rank-sorted prediction order,
// returned alongside via `rank_order` when needed.
MatchResult match_predictions(const std::vector<ScoredPred>& preds,
                              const std::vector<GtBox>& gts,
                              double iou_thresh,
                              std::vector<int>* rank_order = nullptr);

// AP@iou_thresh over one task; nullopt when the task has no ground truth.
// Optionally reports TP/FP/FN counts at full recall.
std::optional<double> average_precision(const std::vector<ScoredPred>& preds,
                                        const std::vector<GtBox>& gts,
                                        double iou_thresh,
                                        TaskEval* counts = nullptr);

// Arithmetic mean of the defined per-task APs; throws when all are null.
double mean_ap(const std::vector<std::optional<double>>& per_task_ap);

struct SweepRow {
  double delta = 0.0;
  double tpr = 0.0, fpr = 0.0, gmeans = 0.0;
};

struct CalibrationResult {
  double delta = 0.0;
  double tpr = 0.0, fpr = 0.0, gmeans = 0.0;
  std::vector<SweepRow> sweep;
};

// Sweeps midpoints between consecutive distinct scores plus {0,1} and picks
// the threshold maximizing sqrt(TPR * (1 - FPR)); ties go to the smallest
// delta. Decision rule is score >= delta at box level.
CalibrationResult calibrate_threshold(const std::vector<double>& scores,
                                      const std::vector<int>& labels);

// Joins predictions and scenes by (image_id, task_id) and produces the
// per-task AP@iou report with mAP and the class-imbalance echo.
Report evaluate(const std::vector<PredictionRecord>& preds,
                const std::vector<SceneRecord>& scenes, double iou_thresh);

}  // namespace taskclip
