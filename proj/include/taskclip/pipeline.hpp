#pragma once

// Glue between file records and the tensor pipeline: scene/task tensor
// conversion, per-scene scoring, and batch inference.

#include <map>
#include <string>
#include <vector>

#include "taskclip/data.hpp"
#include "taskclip/model.hpp"
#include "taskclip/scorer.hpp"
#include "taskclip/threads.hpp"

namespace taskclip {

template <class S>
Tensor<S> matrix_tensor(const std::vector<std::vector<float>>& rows,
                        const char* what) {
  if (rows.empty() || rows[0].empty()) {
    throw ShapeError(std::string(what) + ": empty matrix");
  }
  Tensor<S> t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw ShapeError(std::string(what) + ": ragged rows");
    }
    for (size_t j = 0; j < rows[i].size(); ++j) {
      t.at(static_cast<int>(i), static_cast<int>(j)) =
          static_cast<S>(rows[i][j]);
    }
  }
  return t;
}

template <class S>
Tensor<S> scene_box_tensor(const SceneRecord& scene) {
  if (scene.boxes.empty()) {
    throw ShapeError("scene '" + scene.image_id + "' has no boxes");
  }
  const size_t d = scene.boxes[0].embedding.size();
  Tensor<S> t(static_cast<int>(scene.boxes.size()), static_cast<int>(d));
  for (size_t i = 0; i < scene.boxes.size(); ++i) {
    const auto& e = scene.boxes[i].embedding;
    if (e.size() != d) {
      throw ShapeError("scene '" + scene.image_id +
                       "': inconsistent embedding dimension");
    }
    for (size_t j = 0; j < d; ++j) {
      t.at(static_cast<int>(i), static_cast<int>(j)) = static_cast<S>(e[j]);
    }
  }
  return t;
}

template <class S>
Tensor<S> scene_global_tensor(const SceneRecord& scene) {
  if (scene.global_tokens.empty()) {
    throw DataError("scene '" + scene.image_id + "' has no global tokens");
  }
  return matrix_tensor<S>(scene.global_tokens, "global_tokens");
}

template <class S>
Tensor<S> task_word_tensor(const TaskSpec& task) {
  return matrix_tensor<S>(task.word_embeddings, "word_embeddings");
}

// Ground-truth score vector [1 x N_bbox]; throws when a label is missing.
template <class S>
Tensor<S> gt_target(const SceneRecord& scene) {
  Tensor<S> t(1, static_cast<int>(scene.boxes.size()));
  for (size_t i = 0; i < scene.boxes.size(); ++i) {
    if (!scene.boxes[i].gt_label.has_value()) {
      throw DataError("scene '" + scene.image_id + "' box " +
                      std::to_string(i) + " is missing gt_label");
    }
    t.at(0, static_cast<int>(i)) = static_cast<S>(*scene.boxes[i].gt_label);
  }
  return t;
}

template <class S>
Tensor<S> recalibrate(const SceneRecord& scene, const TaskSpec& task,
                      const ModelParams<S>& params) {
  return recalibrate(scene_box_tensor<S>(scene), task_word_tensor<S>(task),
                     scene_global_tensor<S>(scene), params);
}

// Full forward pass for one scene; [1 x N_bbox] scores.
template <class S>
Tensor<S> pipeline_scores(const SceneRecord& scene, const TaskSpec& task,
                          const ModelParams<S>& params) {
  Tensor<S> affinity = recalibrate(scene, task, params);
  return score_forward(affinity, params.score_fn, params.config.heads);
}

template <class S>
std::vector<double> scene_scores(const SceneRecord& scene,
                                 const TaskSpec& task,
                                 const ModelParams<S>& params) {
  if (scene.boxes.empty()) return {};
  Tensor<S> s = pipeline_scores(scene, task, params);
  std::vector<double> out(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    out[i] = static_cast<double>(s.values()[i]);
  }
  return out;
}

struct InferOptions {
  double threshold = 0.15;
  std::map<int, double> per_task_thresholds;  // overrides threshold when set
  GroupingConfig grouping;
};

inline double threshold_for_task(const InferOptions& opt, int task_id) {
  auto it = opt.per_task_thresholds.find(task_id);
  return it == opt.per_task_thresholds.end() ? opt.threshold : it->second;
}

inline PredictionRecord infer_scene(const SceneRecord& scene,
                                    const TaskSpec& task,
                                    const ModelParams<float>& params,
                                    const InferOptions& opt) {
  PredictionRecord rec;
  rec.image_id = scene.image_id;
  rec.task_id = scene.task_id;
  if (scene.boxes.empty()) return rec;
  std::vector<double> scores = scene_scores(scene, task, params);
  DecisionSet ds =
      make_decision_set(scores, threshold_for_task(opt, scene.task_id));
  if (opt.grouping.enabled) {
    std::vector<BBox> boxes;
    boxes.reserve(scene.boxes.size());
    for (const auto& b : scene.boxes) boxes.push_back(b.bbox);
    ds = select_by_grouping(ds, boxes, opt.grouping);
  }
  rec.boxes.reserve(scene.boxes.size());
  for (size_t i = 0; i < scene.boxes.size(); ++i) {
    PredBox pb;
    pb.index = static_cast<int>(i);
    pb.score = ds.ranking_scores[i];
    pb.decision = ds.decisions[i];
    pb.provenance = ds.provenance[i];
    pb.bbox = scene.boxes[i].bbox;
    rec.boxes.push_back(pb);
  }
  return rec;
}

// Inference across scenes; parallel over scenes, output order preserved.
inline std::vector<PredictionRecord> run_inference(
    const std::vector<SceneRecord>& scenes,
    const std::map<int, TaskSpec>& tasks, const ModelParams<float>& params,
    const InferOptions& opt) {
  for (const auto& scene : scenes) {
    if (!tasks.count(scene.task_id)) {
      throw DataError("scene '" + scene.image_id +
                      "' references unknown task_id " +
                      std::to_string(scene.task_id));
    }
  }
  std::vector<PredictionRecord> out(scenes.size());
  parallel_for(scenes.size(), [&](size_t i) {
    out[i] = infer_scene(scenes[i], tasks.at(scenes[i].task_id), params, opt);
  });
  return out;
}

}  // namespace taskclip
