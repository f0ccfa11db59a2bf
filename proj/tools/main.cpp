// taskclip command-line front end: synth, train, infer, calibrate, eval,
// gradcheck. Every subcommand prints its resolved configuration to stdout
// and reports failures as one JSON object on stderr with a category-specific
// exit code.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taskclip/data.hpp"
#include "taskclip/evaluation.hpp"
#include "taskclip/gradcheck.hpp"
#include "taskclip/pipeline.hpp"
#include "taskclip/synth.hpp"
#include "taskclip/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace taskclip;

namespace {

void print_resolved(const std::string& command, const ordered_json& cfg) {
  ordered_json j;
  j["command"] = command;
  j["config"] = cfg;
  std::cout << j.dump() << std::endl;
}

std::string default_loss_csv(const std::string& ckpt_path) {
  fs::path p(ckpt_path);
  p.replace_extension(".loss.csv");
  return p.string();
}

struct SynthArgs {
  std::string out_dir = "data";
  SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
  ordered_json cfg;
  cfg["out"] = a.out_dir;
  cfg["tasks"] = a.cfg.n_tasks;
  cfg["scenes_per_task"] = a.cfg.scenes_per_task;
  cfg["boxes_min"] = a.cfg.boxes_min;
  cfg["boxes_max"] = a.cfg.boxes_max;
  cfg["d"] = a.cfg.d;
  cfg["n_word"] = a.cfg.n_word;
  cfg["positive_rate"] = a.cfg.positive_rate;
  cfg["noise_std"] = a.cfg.noise_std;
  cfg["seed"] = a.cfg.seed;
  print_resolved("synth", cfg);
  SynthOutput out = generate(a.cfg, a.out_dir);
  std::cout << "wrote " << out.train_path << ", " << out.val_path << ", "
            << out.test_path << " and " << out.task_paths.size()
            << " task files" << std::endl;
  return 0;
}

struct TrainArgs {
  std::string scenes_path;
  std::vector<std::string> task_paths;
  std::string ckpt_path = "model.ckpt";
  std::string loss_csv;
  ModelConfig model;
  TrainConfig tcfg;
  bool synth_preset = false;
  bool verbose = false;
};

ordered_json model_config_json(const ModelConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["d_hidden_adapter"] = c.d_hidden_adapter;
  j["aligner_layers"] = c.aligner_layers;
  j["heads"] = c.heads;
  j["d_prime"] = c.d_prime;
  j["alpha"] = c.alpha;
  j["beta_adapter"] = c.beta_adapter;
  j["ffn_dim"] = c.ffn_dim;
  j["n_word"] = c.n_word;
  return j;
}

int cmd_train(TrainArgs& a) {
  std::vector<SceneRecord> scenes = load_scenes(a.scenes_path);
  std::map<int, TaskSpec> tasks = load_tasks(a.task_paths);
  if (scenes.empty()) throw DataError("train: scene file is empty");
  if (a.model.d == 0) {
    for (const auto& s : scenes) {
      if (!s.boxes.empty()) {
        a.model.d = static_cast<int>(s.boxes[0].embedding.size());
        break;
      }
    }
  }
  if (a.model.n_word == 20 && !tasks.empty()) {
    a.model.n_word = static_cast<int>(tasks.begin()->second.attribute_words.size());
  }
  if (a.synth_preset) {
    TrainConfig preset = synth_overfit_preset();
    preset.seed = a.tcfg.seed;
    preset.shuffle = a.tcfg.shuffle;
    a.tcfg = preset;
  }
  ModelConfig resolved = a.model.resolved();
  ordered_json cfg;
  cfg["scenes"] = a.scenes_path;
  cfg["tasks"] = a.task_paths;
  cfg["ckpt"] = a.ckpt_path;
  cfg["loss_csv"] = a.loss_csv.empty() ? default_loss_csv(a.ckpt_path)
                                       : a.loss_csv;
  cfg["model"] = model_config_json(resolved);
  cfg["epochs"] = a.tcfg.epochs;
  cfg["learning_rate"] = a.tcfg.learning_rate;
  cfg["weight_decay"] = a.tcfg.weight_decay;
  cfg["seed"] = a.tcfg.seed;
  cfg["shuffle"] = a.tcfg.shuffle;
  print_resolved("train", cfg);

  ModelParams<float> params = init_params<float>(resolved, a.tcfg.seed);
  TrainResult result = train(scenes, tasks, params, a.tcfg);
  if (a.verbose) {
    for (size_t e = 0; e < result.epoch_loss.size(); ++e) {
      std::cout << "epoch " << (e + 1) << " mean_loss "
                << result.epoch_loss[e] << "\n";
    }
  }
  save_checkpoint(params, result.meta, a.ckpt_path);
  save_loss_csv(result.epoch_loss,
                a.loss_csv.empty() ? default_loss_csv(a.ckpt_path)
                                   : a.loss_csv);
  std::cout << "final mean loss " << result.meta.final_loss << ", wrote "
            << a.ckpt_path << std::endl;
  return 0;
}

struct InferArgs {
  std::string scenes_path;
  std::vector<std::string> task_paths;
  std::string ckpt_path;
  std::string out_path = "preds.jsonl";
  std::string thresholds_path;
  double threshold = 0.15;
  bool grouping = false;
  double group_conf = 0.8;
};

int cmd_infer(const InferArgs& a) {
  ordered_json cfg;
  cfg["scenes"] = a.scenes_path;
  cfg["tasks"] = a.task_paths;
  cfg["ckpt"] = a.ckpt_path;
  cfg["out"] = a.out_path;
  cfg["threshold"] = a.threshold;
  cfg["thresholds_file"] = a.thresholds_path;
  cfg["grouping"] = a.grouping;
  cfg["group_conf"] = a.group_conf;
  print_resolved("infer", cfg);

  std::vector<SceneRecord> scenes = load_scenes(a.scenes_path);
  std::map<int, TaskSpec> tasks = load_tasks(a.task_paths);
  LoadedCheckpoint ck = load_checkpoint(a.ckpt_path);
  InferOptions opt;
  opt.threshold = a.threshold;
  if (!a.thresholds_path.empty()) {
    opt.per_task_thresholds = load_thresholds(a.thresholds_path);
  }
  opt.grouping.enabled = a.grouping;
  opt.grouping.beta_g = a.group_conf;
  std::vector<PredictionRecord> preds =
      run_inference(scenes, tasks, ck.params, opt);
  save_predictions(preds, a.out_path);
  std::cout << "wrote " << preds.size() << " prediction records to "
            << a.out_path << std::endl;
  return 0;
}

struct CalibrateArgs {
  std::string scenes_path;
  std::vector<std::string> task_paths;
  std::string ckpt_path;
  std::string out_path = "thresholds.json";
  bool verbose = false;
};

int cmd_calibrate(const CalibrateArgs& a) {
  ordered_json cfg;
  cfg["scenes"] = a.scenes_path;
  cfg["tasks"] = a.task_paths;
  cfg["ckpt"] = a.ckpt_path;
  cfg["out"] = a.out_path;
  print_resolved("calibrate", cfg);

  std::vector<SceneRecord> scenes = load_scenes(a.scenes_path);
  std::map<int, TaskSpec> tasks = load_tasks(a.task_paths);
  LoadedCheckpoint ck = load_checkpoint(a.ckpt_path);

  std::map<int, std::vector<double>> scores_by_task;
  std::map<int, std::vector<int>> labels_by_task;
  for (const auto& scene : scenes) {
    if (scene.boxes.empty()) continue;
    if (!tasks.count(scene.task_id)) {
      throw DataError("calibrate: scene '" + scene.image_id +
                      "' references unknown task_id " +
                      std::to_string(scene.task_id));
    }
    std::vector<double> s =
        scene_scores(scene, tasks.at(scene.task_id), ck.params);
    for (size_t i = 0; i < s.size(); ++i) {
      if (!scene.boxes[i].gt_label.has_value()) {
        throw DataError("calibrate: scene '" + scene.image_id + "' box " +
                        std::to_string(i) + " is missing gt_label");
      }
      scores_by_task[scene.task_id].push_back(s[i]);
      labels_by_task[scene.task_id].push_back(*scene.boxes[i].gt_label);
    }
  }
  if (scores_by_task.empty()) throw DataError("calibrate: no scored boxes");

  std::map<int, double> thresholds;
  double delta_sum = 0.0;
  for (const auto& [task_id, scores] : scores_by_task) {
    CalibrationResult res =
        calibrate_threshold(scores, labels_by_task.at(task_id));
    thresholds[task_id] = res.delta;
    delta_sum += res.delta;
    if (a.verbose) {
      std::cout << "task " << task_id << ": delta " << res.delta << " tpr "
                << res.tpr << " fpr " << res.fpr << " gmeans " << res.gmeans
                << "\n";
    }
  }
  save_thresholds(thresholds, a.out_path);
  std::cout << "average delta "
            << delta_sum / static_cast<double>(thresholds.size())
            << " over " << thresholds.size() << " tasks, wrote " << a.out_path
            << std::endl;
  return 0;
}

struct EvalArgs {
  std::string preds_path;
  std::string scenes_path;
  std::string out_path = "report.json";
  double iou_thresh = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  ordered_json cfg;
  cfg["preds"] = a.preds_path;
  cfg["scenes"] = a.scenes_path;
  cfg["out"] = a.out_path;
  cfg["iou"] = a.iou_thresh;
  print_resolved("eval", cfg);

  std::vector<PredictionRecord> preds = load_predictions(a.preds_path);
  std::vector<SceneRecord> scenes = load_scenes(a.scenes_path);
  Report report = evaluate(preds, scenes, a.iou_thresh);
  save_report(report, a.out_path);
  std::cout << "mAP@" << a.iou_thresh << " = " << report.map << " over "
            << report.per_task.size() << " tasks, wrote " << a.out_path
            << std::endl;
  return 0;
}

struct GradcheckArgs {
  int d = 16;
  int heads = 2;
  int n_word = 20;
  uint64_t seed = 11;
  double block_tol = 1e-5;
  double e2e_tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  ordered_json cfg;
  cfg["d"] = a.d;
  cfg["heads"] = a.heads;
  cfg["n_word"] = a.n_word;
  cfg["seed"] = a.seed;
  cfg["block_tol"] = a.block_tol;
  cfg["e2e_tol"] = a.e2e_tol;
  print_resolved("gradcheck", cfg);

  std::vector<BlockCheck> checks = run_gradcheck_suite(
      a.d, a.heads, a.n_word, a.seed, a.block_tol, a.e2e_tol);
  bool ok = true;
  double worst = 0.0;
  for (const auto& c : checks) {
    std::cout << c.name << ": rel_err " << c.rel_err << " (tol "
              << c.tolerance << ") " << (c.passed() ? "PASS" : "FAIL")
              << std::endl;
    ok = ok && c.passed();
    worst = std::max(worst, c.rel_err);
  }
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << ", worst rel_err "
            << worst << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-conditioned object scoring over precomputed embeddings"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--out", synth_args.out_dir, "output directory");
  synth_cmd->add_option("--tasks", synth_args.cfg.n_tasks, "number of tasks");
  synth_cmd->add_option("--scenes-per-task", synth_args.cfg.scenes_per_task,
                        "training scenes per task");
  synth_cmd->add_option("--boxes-min", synth_args.cfg.boxes_min);
  synth_cmd->add_option("--boxes-max", synth_args.cfg.boxes_max);
  synth_cmd->add_option("--d", synth_args.cfg.d, "embedding dimension");
  synth_cmd->add_option("--n-word", synth_args.cfg.n_word,
                        "attribute words per task");
  synth_cmd->add_option("--positive-rate", synth_args.cfg.positive_rate);
  synth_cmd->add_option("--noise-std", synth_args.cfg.noise_std);
  synth_cmd->add_option("--seed", synth_args.cfg.seed);
  synth_cmd->add_option("--val-scenes-per-task",
                        synth_args.cfg.val_scenes_per_task);
  synth_cmd->add_option("--test-scenes-per-task",
                        synth_args.cfg.test_scenes_per_task);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--scenes", train_args.scenes_path, "scenes.jsonl")
      ->required();
  train_cmd->add_option("--tasks", train_args.task_paths,
                        "task.json files or directories")
      ->required();
  train_cmd->add_option("--ckpt", train_args.ckpt_path, "output checkpoint");
  train_cmd->add_option("--loss-csv", train_args.loss_csv,
                        "loss history csv (default: <ckpt>.loss.csv)");
  train_cmd->add_option("--d", train_args.model.d,
                        "embedding dim (default: inferred)");
  train_cmd->add_option("--layers", train_args.model.aligner_layers,
                        "aligner layers (m)");
  train_cmd->add_option("--heads", train_args.model.heads);
  train_cmd->add_option("--d-prime", train_args.model.d_prime);
  train_cmd->add_option("--d-hidden-adapter", train_args.model.d_hidden_adapter);
  train_cmd->add_option("--ffn-dim", train_args.model.ffn_dim);
  train_cmd->add_option("--alpha", train_args.model.alpha);
  train_cmd->add_option("--beta", train_args.model.beta_adapter);
  train_cmd->add_option("--epochs", train_args.tcfg.epochs);
  train_cmd->add_option("--lr", train_args.tcfg.learning_rate);
  train_cmd->add_option("--weight-decay", train_args.tcfg.weight_decay);
  train_cmd->add_option("--seed", train_args.tcfg.seed);
  train_cmd->add_flag("--no-shuffle{false}", train_args.tcfg.shuffle,
                      "disable per-epoch shuffling");
  train_cmd->add_flag("--preset-synth-overfit", train_args.synth_preset,
                      "elevated-lr preset for synthetic overfit runs");
  train_cmd->add_flag("-v,--verbose", train_args.verbose);

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "score scenes and decide");
  infer_cmd->add_option("--scenes", infer_args.scenes_path)->required();
  infer_cmd->add_option("--tasks", infer_args.task_paths)->required();
  infer_cmd->add_option("--ckpt", infer_args.ckpt_path)->required();
  infer_cmd->add_option("--out", infer_args.out_path);
  infer_cmd->add_option("--threshold", infer_args.threshold,
                        "global decision threshold");
  infer_cmd->add_option("--thresholds", infer_args.thresholds_path,
                        "per-task thresholds.json (overrides --threshold)");
  infer_cmd->add_flag("--grouping", infer_args.grouping,
                      "enable select-by-grouping");
  infer_cmd->add_option("--group-conf", infer_args.group_conf,
                        "grouping confidence gate");

  CalibrateArgs cal_args;
  auto* cal_cmd =
      app.add_subcommand("calibrate", "per-task g-means threshold selection");
  cal_cmd->add_option("--scenes", cal_args.scenes_path, "validation scenes")
      ->required();
  cal_cmd->add_option("--tasks", cal_args.task_paths)->required();
  cal_cmd->add_option("--ckpt", cal_args.ckpt_path)->required();
  cal_cmd->add_option("--out", cal_args.out_path);
  cal_cmd->add_flag("-v,--verbose", cal_args.verbose);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "AP@IoU report");
  eval_cmd->add_option("--preds", eval_args.preds_path)->required();
  eval_cmd->add_option("--scenes", eval_args.scenes_path)->required();
  eval_cmd->add_option("--out", eval_args.out_path);
  eval_cmd->add_option("--iou", eval_args.iou_thresh);

  GradcheckArgs gc_args;
  auto* gc_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc_cmd->add_option("--d", gc_args.d);
  gc_cmd->add_option("--heads", gc_args.heads);
  gc_cmd->add_option("--n-word", gc_args.n_word);
  gc_cmd->add_option("--seed", gc_args.seed);
  gc_cmd->add_option("--block-tol", gc_args.block_tol);
  gc_cmd->add_option("--e2e-tol", gc_args.e2e_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    ordered_json err;
    err["error"] = e.what();
    err["kind"] = "usage";
    err["code"] = kExitUsage;
    std::cerr << err.dump() << std::endl;
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (infer_cmd->parsed()) return cmd_infer(infer_args);
    if (cal_cmd->parsed()) return cmd_calibrate(cal_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_args);
  } catch (const Error& e) {
    ordered_json err;
    err["error"] = e.what();
    err["kind"] = e.kind();
    err["code"] = e.exit_code();
    std::cerr << err.dump() << std::endl;
    return e.exit_code();
  } catch (const std::exception& e) {
    ordered_json err;
    err["error"] = e.what();
    err["kind"] = "internal";
    err["code"] = 1;
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 0;
}
