#include "taskclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "taskclip/rng.hpp"

namespace taskclip {

namespace fs = std::filesystem;

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(Vec& v) {
  double n = std::sqrt(dot(v, v));
  if (n > 0.0) {
    for (auto& x : v) x /= n;
  }
}

Vec gaussian(int d, Rng& rng) {
  Vec v(static_cast<size_t>(d));
  for (auto& x : v) x = rng.normal();
  return v;
}

// Gram-Schmidt against previously accepted rows.
Vec orthonormal_against(const std::vector<Vec>& basis, int d, Rng& rng,
                        const Vec* seed_dir = nullptr) {
  for (;;) {
    Vec v = seed_dir ? *seed_dir : gaussian(d, rng);
    if (seed_dir) seed_dir = nullptr;  // fall back to random on retry
    for (const auto& b : basis) {
      double c = dot(v, b);
      for (size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
    }
    double n = std::sqrt(dot(v, v));
    if (n > 1e-6) {
      for (auto& x : v) x /= n;
      return v;
    }
  }
}

std::vector<float> to_float(const Vec& v) {
  std::vector<float> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

constexpr int kVariantsPerTask = 4;
constexpr double kVariantSpread = 0.15;
constexpr double kWordNoise = 0.05;
// The vision-side map is a mild rotation: enough residual alignment for the
// score function to find signal at initialization, enough misalignment that
// the aligner has a real correction to learn.
constexpr double kMixPerturbation = 0.6;

struct LatentModel {
  std::vector<Vec> mix_rows;               // orthonormal D x D map rows
  std::vector<std::vector<Vec>> variants;  // [source][variant], unit vectors

  Vec embed(int source, int variant, double noise_std, Rng& rng) const {
    const Vec& u = variants[static_cast<size_t>(source)]
                           [static_cast<size_t>(variant)];
    Vec e(mix_rows.size(), 0.0);
    for (size_t i = 0; i < mix_rows.size(); ++i) e[i] = dot(mix_rows[i], u);
    if (noise_std > 0.0) {
      for (auto& x : e) x += noise_std * rng.normal();
    }
    return e;
  }
};

LatentModel build_latents(const SynthConfig& cfg, Rng& rng) {
  LatentModel model;
  const double unit = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (int i = 0; i < cfg.d; ++i) {
    Vec seed(static_cast<size_t>(cfg.d), 0.0);
    seed[static_cast<size_t>(i)] = 1.0;
    for (auto& x : seed) x += kMixPerturbation * unit * rng.normal();
    model.mix_rows.push_back(
        orthonormal_against(model.mix_rows, cfg.d, rng, &seed));
  }
  // One base direction per task plus a distractor source, all orthonormal so
  // each task's positives stay linearly separable from every other source.
  int n_sources = cfg.n_tasks + 1;
  std::vector<Vec> bases;
  for (int t = 0; t < n_sources; ++t) {
    bases.push_back(orthonormal_against(bases, cfg.d, rng));
  }
  model.variants.resize(static_cast<size_t>(n_sources));
  for (int t = 0; t < n_sources; ++t) {
    for (int k = 0; k < kVariantsPerTask; ++k) {
      Vec v = bases[static_cast<size_t>(t)];
      Vec g = gaussian(cfg.d, rng);
      for (size_t i = 0; i < v.size(); ++i) v[i] += kVariantSpread * g[i];
      normalize(v);
      model.variants[static_cast<size_t>(t)].push_back(std::move(v));
    }
  }
  return model;
}

BBox random_geometry(Rng& rng) {
  BBox b;
  double w = rng.uniform(24.0, 96.0);
  double h = rng.uniform(24.0, 96.0);
  b.x_min = rng.uniform(0.0, 640.0 - w);
  b.y_min = rng.uniform(0.0, 480.0 - h);
  b.x_max = b.x_min + w;
  b.y_max = b.y_min + h;
  return b;
}

std::vector<SceneRecord> make_split(const SynthConfig& cfg,
                                    const LatentModel& model,
                                    const std::string& split, int scenes_per_task,
                                    Rng& rng) {
  std::vector<SceneRecord> scenes;
  for (int t = 0; t < cfg.n_tasks; ++t) {
    // Per (task, split) block: box counts first, then an exact positive
    // quota spread over the block so the rate holds and both classes exist.
    std::vector<int> box_counts;
    int total_boxes = 0;
    for (int s = 0; s < scenes_per_task; ++s) {
      int n = rng.uniform_int(cfg.boxes_min, cfg.boxes_max);
      box_counts.push_back(n);
      total_boxes += n;
    }
    int n_pos = std::max(
        1, static_cast<int>(std::llround(total_boxes * cfg.positive_rate)));
    n_pos = std::min(n_pos, total_boxes - 1);
    std::vector<int> slots(static_cast<size_t>(total_boxes));
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(slots);
    std::vector<bool> is_pos(static_cast<size_t>(total_boxes), false);
    for (int i = 0; i < n_pos; ++i) is_pos[static_cast<size_t>(slots[i])] = true;

    int slot = 0;
    for (int s = 0; s < scenes_per_task; ++s) {
      SceneRecord scene;
      scene.image_id = "synth_" + split + "_t" + std::to_string(t + 1) + "_" +
                       std::to_string(s);
      scene.task_id = t + 1;
      Vec mean(static_cast<size_t>(cfg.d), 0.0);
      for (int b = 0; b < box_counts[static_cast<size_t>(s)]; ++b, ++slot) {
        SceneBox box;
        bool positive = is_pos[static_cast<size_t>(slot)];
        int source;
        if (positive) {
          source = t;
        } else {
          // negatives come from other tasks' latents or the distractor
          source = rng.uniform_int(0, cfg.n_tasks - 1);
          if (source >= t) ++source;  // skip own task; n_tasks = distractor

        }
        int variant = rng.uniform_int(0, kVariantsPerTask - 1);
        Vec e = model.embed(source, variant, cfg.noise_std, rng);
        box.embedding = to_float(e);
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
        box.bbox = random_geometry(rng);
        box.bbox.class_id = source * kVariantsPerTask + variant;
        box.bbox.class_conf = rng.uniform(0.5, 1.0);
        box.gt_label = positive ? 1 : 0;
        scene.boxes.push_back(std::move(box));
      }
      for (auto& x : mean) x /= static_cast<double>(scene.boxes.size());
      if (cfg.noise_std > 0.0) {
        for (auto& x : mean) x += cfg.noise_std * rng.normal();
      }
      scene.global_tokens.push_back(to_float(mean));
      scenes.push_back(std::move(scene));
    }
  }
  return scenes;
}

}  // namespace

SynthOutput generate(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.n_tasks < 1) throw ConfigError("synth: n_tasks must be >= 1");
  if (cfg.scenes_per_task < 1) {
    throw ConfigError("synth: scenes_per_task must be >= 1");
  }
  if (cfg.boxes_min < 1 || cfg.boxes_max < cfg.boxes_min) {
    throw ConfigError("synth: bad boxes_per_scene range");
  }
  if (!(cfg.positive_rate > 0.0 && cfg.positive_rate < 1.0)) {
    throw ConfigError("synth: positive_rate must lie in (0,1)");
  }
  if (cfg.n_tasks + 1 > cfg.d) {
    throw ConfigError("synth: need d >= n_tasks + 1 for orthogonal latents");
  }
  if (cfg.n_word < 1) throw ConfigError("synth: n_word must be >= 1");

  fs::create_directories(out_dir);
  Rng rng(cfg.seed);
  LatentModel model = build_latents(cfg, rng);

  SynthOutput out;
  std::vector<TaskSpec> tasks;
  for (int t = 0; t < cfg.n_tasks; ++t) {
    TaskSpec task;
    task.task_id = t + 1;
    task.task_name = "synthetic task " + std::to_string(t + 1);
    for (int j = 0; j < cfg.n_word; ++j) {
      task.attribute_words.push_back("task" + std::to_string(t + 1) +
                                     "_attr" + std::to_string(j));
      int variant = j % kVariantsPerTask;
      Vec w = model.variants[static_cast<size_t>(t)]
                            [static_cast<size_t>(variant)];
      Vec g = gaussian(cfg.d, rng);
      for (size_t i = 0; i < w.size(); ++i) w[i] += kWordNoise * g[i];
      normalize(w);
      task.word_embeddings.push_back(to_float(w));
    }
    tasks.push_back(std::move(task));
  }

  int val_n = cfg.val_scenes_per_task > 0 ? cfg.val_scenes_per_task
                                          : std::max(4, cfg.scenes_per_task / 4);
  int test_n = cfg.test_scenes_per_task > 0
                   ? cfg.test_scenes_per_task
                   : std::max(4, cfg.scenes_per_task / 4);

  auto train_scenes = make_split(cfg, model, "train", cfg.scenes_per_task, rng);
  auto val_scenes = make_split(cfg, model, "val", val_n, rng);
  auto test_scenes = make_split(cfg, model, "test", test_n, rng);

  out.train_path = (fs::path(out_dir) / "train.jsonl").string();
  out.val_path = (fs::path(out_dir) / "val.jsonl").string();
  out.test_path = (fs::path(out_dir) / "test.jsonl").string();
  save_scenes(train_scenes, out.train_path);
  save_scenes(val_scenes, out.val_path);
  save_scenes(test_scenes, out.test_path);
  for (const auto& task : tasks) {
    std::string p =
        (fs::path(out_dir) / ("task_" + std::to_string(task.task_id) + ".json"))
            .string();
    save_task(task, p);
    out.task_paths.push_back(p);
  }
  return out;
}

}  // namespace taskclip
