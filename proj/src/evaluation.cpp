#include "taskclip/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace taskclip {

double iou(const BBox& a, const BBox& b) {
  if (!(a.x_max > a.x_min) || !(a.y_max > a.y_min) || !(b.x_max > b.x_min) ||
      !(b.y_max > b.y_min)) {
    throw SchemaError("iou: degenerate box");
  }
  double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

MatchResult match_predictions(const std::vector<ScoredPred>& preds,
                              const std::vector<GtBox>& gts,
                              double iou_thresh,
                              std::vector<int>* rank_order) {
  // Rank by descending score; stable on ties so submission order decides.
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds[static_cast<size_t>(a)].score >
           preds[static_cast<size_t>(b)].score;
  });
  if (rank_order) *rank_order = order;

  std::unordered_map<std::string, std::vector<int>> gt_by_image;
  for (size_t g = 0; g < gts.size(); ++g) {
    gt_by_image[gts[g].image_id].push_back(static_cast<int>(g));
  }

  MatchResult res;
  res.matched_gt.assign(preds.size(), std::nullopt);
  res.is_tp.assign(preds.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (size_t r = 0; r < order.size(); ++r) {
    const ScoredPred& p = preds[static_cast<size_t>(order[r])];
    auto it = gt_by_image.find(p.image_id);
    if (it == gt_by_image.end()) continue;
    double best = 0.0;
    int best_g = -1;
    for (int g : it->second) {
      if (taken[static_cast<size_t>(g)]) continue;
      double v = iou(p.bbox, gts[static_cast<size_t>(g)].bbox);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g >= 0 && best >= iou_thresh) {
      taken[static_cast<size_t>(best_g)] = true;
      res.matched_gt[r] = best_g;
      res.is_tp[r] = true;
    }
  }
  res.unmatched_gt =
      static_cast<int>(std::count(taken.begin(), taken.end(), false));
  return res;
}

std::optional<double> average_precision(const std::vector<ScoredPred>& preds,
                                        const std::vector<GtBox>& gts,
                                        double iou_thresh, TaskEval* counts) {
  if (gts.empty()) {
    if (counts) {
      counts->ap = std::nullopt;
      counts->tp = 0;
      counts->fp = static_cast<int>(preds.size());
      counts->fn = 0;
    }
    return std::nullopt;
  }
  if (preds.empty()) {
    if (counts) {
      counts->ap = 0.0;
      counts->tp = 0;
      counts->fp = 0;
      counts->fn = static_cast<int>(gts.size());
    }
    return 0.0;
  }
  MatchResult match = match_predictions(preds, gts, iou_thresh);
  const size_t n = preds.size();
  std::vector<double> recall(n), precision(n);
  int tp = 0;
  for (size_t k = 0; k < n; ++k) {
    if (match.is_tp[k]) ++tp;
    recall[k] = static_cast<double>(tp) / static_cast<double>(gts.size());
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  // All-point area under the monotone precision envelope.
  std::vector<double> envelope(n);
  double running = 0.0;
  for (size_t k = n; k-- > 0;) {
    running = std::max(running, precision[k]);
    envelope[k] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * envelope[k];
    prev_recall = recall[k];
  }
  if (counts) {
    counts->ap = ap;
    counts->tp = tp;
    counts->fp = static_cast<int>(n) - tp;
    counts->fn = static_cast<int>(gts.size()) - tp;
  }
  return ap;
}

double mean_ap(const std::vector<std::optional<double>>& per_task_ap) {
  double sum = 0.0;
  int defined = 0;
  for (const auto& ap : per_task_ap) {
    if (ap.has_value()) {
      sum += *ap;
      ++defined;
    }
  }
  if (defined == 0) throw EvalError("mean_ap: no task has a defined AP");
  return sum / defined;
}

CalibrationResult calibrate_threshold(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("calibrate_threshold: " + std::to_string(scores.size()) +
                     " scores vs " + std::to_string(labels.size()) +
                     " labels");
  }
  int pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++pos;
    } else if (l == 0) {
      ++neg;
    } else {
      throw CalibrationError("labels must be binary, got " +
                             std::to_string(l));
    }
  }
  if (pos == 0 || neg == 0) {
    throw CalibrationError("calibration needs at least one sample per class (" +
                           std::to_string(pos) + " positive, " +
                           std::to_string(neg) + " negative)");
  }

  std::vector<double> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()),
                 distinct.end());
  std::set<double> candidates = {0.0, 1.0};
  for (size_t i = 0; i + 1 < distinct.size(); ++i) {
    candidates.insert(0.5 * (distinct[i] + distinct[i + 1]));
  }

  CalibrationResult best;
  best.gmeans = -1.0;
  for (double delta : candidates) {
    int tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= delta) {
        if (labels[i] == 1) {
          ++tp;
        } else {
          ++fp;
        }
      }
    }
    double tpr = static_cast<double>(tp) / pos;
    double fpr = static_cast<double>(fp) / neg;
    double g = std::sqrt(tpr * (1.0 - fpr));
    best.sweep.push_back({delta, tpr, fpr, g});
    if (g > best.gmeans) {  // ascending candidates: first max = smallest delta
      best.gmeans = g;
      best.delta = delta;
      best.tpr = tpr;
      best.fpr = fpr;
    }
  }
  return best;
}

Report evaluate(const std::vector<PredictionRecord>& preds,
                const std::vector<SceneRecord>& scenes, double iou_thresh) {
  std::map<std::pair<std::string, int>, const SceneRecord*> scene_index;
  for (const auto& s : scenes) {
    scene_index[{s.image_id, s.task_id}] = &s;
  }
  std::string missing;
  for (const auto& p : preds) {
    if (!scene_index.count({p.image_id, p.task_id})) {
      if (!missing.empty()) missing += ", ";
      missing += "(" + p.image_id + ", task " + std::to_string(p.task_id) + ")";
    }
  }
  if (!missing.empty()) {
    throw EvalError("predictions reference scenes absent from the scene file: " +
                    missing);
  }

  // Only positive-decision predictions are scored, ranked by score.
  std::map<int, std::vector<ScoredPred>> preds_by_task;
  for (const auto& p : preds) {
    for (const auto& b : p.boxes) {
      if (b.decision != 1) continue;
      preds_by_task[p.task_id].push_back({p.image_id, b.bbox, b.score});
    }
  }
  std::map<int, std::vector<GtBox>> gts_by_task;
  long total_pos = 0, total_neg = 0;
  std::set<int> task_ids;
  for (const auto& s : scenes) {
    task_ids.insert(s.task_id);
    for (size_t bi = 0; bi < s.boxes.size(); ++bi) {
      const auto& b = s.boxes[bi];
      if (!b.gt_label.has_value()) {
        throw DataError("scene '" + s.image_id + "' box " + std::to_string(bi) +
                        " is missing gt_label; evaluation needs labels");
      }
      if (*b.gt_label == 1) {
        gts_by_task[s.task_id].push_back({s.image_id, b.bbox});
        ++total_pos;
      } else {
        ++total_neg;
      }
    }
  }

  Report report;
  std::vector<std::optional<double>> aps;
  for (int task_id : task_ids) {
    TaskEval ev;
    static const std::vector<ScoredPred> kNoPreds;
    static const std::vector<GtBox> kNoGts;
    const auto pit = preds_by_task.find(task_id);
    const auto git = gts_by_task.find(task_id);
    average_precision(pit == preds_by_task.end() ? kNoPreds : pit->second,
                      git == gts_by_task.end() ? kNoGts : git->second,
                      iou_thresh, &ev);
    aps.push_back(ev.ap);
    report.per_task[task_id] = ev;
  }
  report.map = mean_ap(aps);
  if (total_pos > 0) {
    report.imbalance_ratio = static_cast<double>(total_neg) / total_pos;
  }
  return report;
}

}  // namespace taskclip
