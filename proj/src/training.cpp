#include "taskclip/training.hpp"

#include <cmath>
#include <numeric>

#include "taskclip/pipeline.hpp"
#include "taskclip/rng.hpp"

namespace taskclip {

TrainResult train(const std::vector<SceneRecord>& scenes,
                  const std::map<int, TaskSpec>& tasks,
                  ModelParams<float>& params, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) {
    throw ConfigError("train: learning rate must be positive");
  }
  if (scenes.empty()) throw DataError("train: no scenes");
  for (const auto& s : scenes) {
    if (!tasks.count(s.task_id)) {
      throw DataError("train: scene '" + s.image_id +
                      "' references unknown task_id " +
                      std::to_string(s.task_id));
    }
    for (size_t bi = 0; bi < s.boxes.size(); ++bi) {
      if (!s.boxes[bi].gt_label.has_value()) {
        throw DataError("train: scene '" + s.image_id + "' box " +
                        std::to_string(bi) + " is missing gt_label");
      }
    }
  }

  std::vector<Tensor<float>> param_list;
  visit_params(params, [&](const std::string&, Tensor<float>& t) {
    param_list.push_back(t);
  });
  AdamWState opt_state;

  std::vector<size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed);

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t idx : order) {
      const SceneRecord& scene = scenes[idx];
      if (scene.boxes.empty()) continue;
      const TaskSpec& task = tasks.at(scene.task_id);
      float loss_value = 0.0f;
      {
        Tape<float> tape;
        Tensor<float> scores = pipeline_scores(scene, task, params);
        Tensor<float> target = gt_target<float>(scene);
        Tensor<float> loss = mse_loss(scores, target);
        loss_value = loss.value();
        if (!std::isfinite(loss_value)) {
          throw NanError("train: non-finite loss at epoch " +
                         std::to_string(epoch) + ", scene '" + scene.image_id +
                         "'");
        }
        zero_grads(params);
        tape.backward(loss);
      }
      adamw_step(param_list, opt_state, cfg);
      loss_sum += static_cast<double>(loss_value);
      ++seen;
    }
    if (seen == 0) throw DataError("train: every scene is empty");
    result.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
  }
  result.meta.epochs = cfg.epochs;
  result.meta.seed = cfg.seed;
  result.meta.final_loss = result.epoch_loss.back();
  return result;
}

}  // namespace taskclip
