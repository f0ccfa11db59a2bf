#pragma once

// End-to-end optimization of adapters, global attention, aligner, and score
// function under MSE loss, with decoupled-weight-decay Adam.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "taskclip/data.hpp"
#include "taskclip/model.hpp"

namespace taskclip {

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  bool shuffle = true;
  // batch is one scene
};

// Elevated-rate preset for the synthetic overfit experiment.
inline TrainConfig synth_overfit_preset() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-3;
  return cfg;
}

// Moment buffers are kept in double regardless of parameter precision.
struct AdamWState {
  std::vector<std::vector<double>> m, v;
  long t = 0;
};

// One decoupled-weight-decay step over the parameter list. Missing grad
// buffers (never-touched parameters) count as zero gradient.
template <class S>
void adamw_step(std::vector<Tensor<S>>& params, AdamWState& state,
                const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    const auto& grads = params[pi].grad();
    for (size_t i = 0; i < vals.size(); ++i) {
      double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
      double& m = state.m[pi][i];
      double& v = state.v[pi][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      double mhat = m / bc1;
      double vhat = v / bc2;
      double p = static_cast<double>(vals[i]);
      double update = mhat / (std::sqrt(vhat) + cfg.eps) +
                      cfg.weight_decay * p;  // decay decoupled from the moments
      vals[i] = static_cast<S>(p - cfg.learning_rate * update);
    }
  }
}

struct TrainResult {
  TrainingMeta meta;
  std::vector<double> epoch_loss;  // mean over scenes, one entry per epoch
};

// Per scene: recalibrate -> score -> MSE -> backward -> optimizer step.
// Deterministic for a fixed seed. Scenes with no boxes are skipped.
TrainResult train(const std::vector<SceneRecord>& scenes,
                  const std::map<int, TaskSpec>& tasks,
                  ModelParams<float>& params, const TrainConfig& cfg);

}  // namespace taskclip
