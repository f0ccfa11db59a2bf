#include "taskclip/scorer.hpp"

#include <algorithm>

namespace taskclip {

std::vector<int> decide(const std::vector<double>& scores, double delta) {
  std::vector<int> p(scores.size(), 0);
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = scores[i] >= delta ? 1 : 0;
  }
  return p;
}

DecisionSet make_decision_set(const std::vector<double>& scores,
                              double delta) {
  DecisionSet ds;
  ds.scores = scores;
  ds.ranking_scores = scores;
  ds.decisions = decide(scores, delta);
  ds.provenance.assign(scores.size(), Provenance::kDirect);
  ds.threshold = delta;
  return ds;
}

DecisionSet select_by_grouping(const DecisionSet& in,
                               const std::vector<BBox>& boxes,
                               const GroupingConfig& cfg) {
  if (boxes.size() != in.decisions.size()) {
    throw ShapeError("select_by_grouping: " + std::to_string(boxes.size()) +
                     " boxes vs " + std::to_string(in.decisions.size()) +
                     " decisions");
  }
  DecisionSet out = in;
  out.beta_g = cfg.beta_g;
  const size_t n = boxes.size();
  for (size_t i = 0; i < n; ++i) {
    if (in.decisions[i] != 1 || !(boxes[i].class_conf > cfg.beta_g)) continue;
    for (size_t j = 0; j < n; ++j) {
      if (boxes[j].class_id != boxes[i].class_id) continue;
      if (!(boxes[j].class_conf > cfg.beta_g)) continue;
      if (in.decisions[j] == 1) continue;  // already selected, leave as is
      if (out.decisions[j] == 0) {
        out.decisions[j] = 1;
        out.provenance[j] = Provenance::kGrouped;
        out.ranking_scores[j] = in.scores[j];
      }
      out.ranking_scores[j] =
          std::max(out.ranking_scores[j], in.scores[i]);
    }
  }
  return out;
}

}  // namespace taskclip
