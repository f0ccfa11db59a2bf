#pragma once

// File formats: scenes with precomputed embeddings (JSON lines), task
// attribute specs (JSON), binary checkpoints, predictions, reports,
// per-task threshold maps.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "taskclip/errors.hpp"
#include "taskclip/model.hpp"

namespace taskclip {

struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int class_id = 0;
  double class_conf = 0;
};

struct SceneBox {
  BBox bbox;
  std::vector<float> embedding;
  std::optional<int> gt_label;  // 0|1 when present
};

// One image under one task. Box order is stable and defines the box index.
struct SceneRecord {
  std::string image_id;
  int task_id = 0;
  std::vector<std::vector<float>> global_tokens;  // [G x D], G >= 1
  std::vector<SceneBox> boxes;
};

struct TaskSpec {
  int task_id = 0;
  std::string task_name;
  std::vector<std::string> attribute_words;
  std::vector<std::vector<float>> word_embeddings;  // row-aligned with words
};

struct TrainingMeta {
  int epochs = 0;
  uint64_t seed = 0;
  double final_loss = 0.0;
};

enum class Provenance { kDirect, kGrouped };

inline const char* provenance_name(Provenance p) {
  return p == Provenance::kDirect ? "direct" : "grouped";
}

struct PredBox {
  int index = 0;
  double score = 0.0;
  int decision = 0;
  Provenance provenance = Provenance::kDirect;
  BBox bbox;
};

struct PredictionRecord {
  std::string image_id;
  int task_id = 0;
  std::vector<PredBox> boxes;
};

struct TaskEval {
  std::optional<double> ap;  // null when the task has no ground truth
  int tp = 0, fp = 0, fn = 0;
};

struct Report {
  std::map<int, TaskEval> per_task;
  double map = 0.0;
  // Negatives per positive over the ground-truth labels; informational.
  std::optional<double> imbalance_ratio;
};

std::vector<SceneRecord> load_scenes(const std::string& path);
void save_scenes(const std::vector<SceneRecord>& scenes,
                 const std::string& path);

TaskSpec load_task(const std::string& path);
void save_task(const TaskSpec& task, const std::string& path);
// Each entry may be a task.json file or a directory of *.json task files.
std::map<int, TaskSpec> load_tasks(const std::vector<std::string>& paths);

struct LoadedCheckpoint {
  ModelParams<float> params;
  TrainingMeta meta;
};

void save_checkpoint(ModelParams<float>& params, const TrainingMeta& meta,
                     const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

void save_predictions(const std::vector<PredictionRecord>& preds,
                      const std::string& path);
std::vector<PredictionRecord> load_predictions(const std::string& path);

void save_report(const Report& report, const std::string& path);

void save_thresholds(const std::map<int, double>& thresholds,
                     const std::string& path);
std::map<int, double> load_thresholds(const std::string& path);

void save_loss_csv(const std::vector<double>& epoch_loss,
                   const std::string& path);

}  // namespace taskclip
