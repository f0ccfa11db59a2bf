#pragma once

// Deterministic synthetic datasets with planted, learnable attribute
// structure: task latents, word embeddings clustered around them, positive
// box embeddings as a fixed linear (orthonormal) image of matching latents.

#include <string>
#include <vector>

#include "taskclip/data.hpp"

namespace taskclip {

struct SynthConfig {
  int n_tasks = 3;
  int scenes_per_task = 40;     // train split; val/test derive from it
  int boxes_min = 3;
  int boxes_max = 8;
  int d = 32;
  int n_word = 20;
  double positive_rate = 1.0 / 15.0;
  double noise_std = 0.05;
  uint64_t seed = 0;
  int val_scenes_per_task = 0;   // 0 -> max(4, scenes_per_task / 4)
  int test_scenes_per_task = 0;  // 0 -> max(4, scenes_per_task / 4)
};

struct SynthOutput {
  std::string train_path, val_path, test_path;
  std::vector<std::string> task_paths;
};

// Writes train/val/test scene files and one task.json per task under
// out_dir. Byte-identical output for identical config.
SynthOutput generate(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace taskclip
