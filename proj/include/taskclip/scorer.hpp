#pragma once

// Threshold decisions and the select-by-grouping expansion.

#include <vector>

#include "taskclip/data.hpp"

namespace taskclip {

struct GroupingConfig {
  double beta_g = 0.8;  // detector-confidence gate
  bool enabled = false;
};

struct DecisionSet {
  std::vector<double> scores;          // original per-box scores S_p
  std::vector<double> ranking_scores;  // what AP ranking uses; grouped boxes
                                       // carry max(own, trigger)
  std::vector<int> decisions;          // P, 0|1
  std::vector<Provenance> provenance;
  double threshold = 0.0;
  double beta_g = 0.8;

  bool operator==(const DecisionSet&) const = default;
};

// P[i] = 1 iff scores[i] >= delta; the boundary is inclusive.
std::vector<int> decide(const std::vector<double>& scores, double delta);

DecisionSet make_decision_set(const std::vector<double>& scores, double delta);

// Every selected box with class confidence above beta_g propagates its
// decision to all same-class boxes above the gate. Newly set boxes are
// marked grouped and rank at max(own score, best trigger score); boxes
// already selected are left untouched, which makes the pass idempotent.
DecisionSet select_by_grouping(const DecisionSet& in,
                               const std::vector<BBox>& boxes,
                               const GroupingConfig& cfg);

}  // namespace taskclip
