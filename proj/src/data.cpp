#include "taskclip/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace taskclip {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace {

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::vector<float>> parse_matrix(const ordered_json& j,
                                             const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw SchemaError(where + ": expected a non-empty array of rows");
  }
  std::vector<std::vector<float>> rows;
  rows.reserve(j.size());
  for (const auto& row : j) {
    if (!row.is_array() || row.empty()) {
      throw SchemaError(where + ": expected non-empty numeric rows");
    }
    std::vector<float> r;
    r.reserve(row.size());
    for (const auto& v : row) {
      if (!v.is_number()) throw SchemaError(where + ": non-numeric entry");
      r.push_back(static_cast<float>(v.get<double>()));
    }
    if (!rows.empty() && r.size() != rows[0].size()) {
      throw SchemaError(where + ": ragged rows");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

ordered_json matrix_json(const std::vector<std::vector<float>>& m) {
  ordered_json j = ordered_json::array();
  for (const auto& row : m) {
    ordered_json r = ordered_json::array();
    for (float v : row) r.push_back(static_cast<double>(v));
    j.push_back(std::move(r));
  }
  return j;
}

BBox parse_bbox(const ordered_json& j, const std::string& where) {
  BBox b;
  b.x_min = j.at("x_min").get<double>();
  b.y_min = j.at("y_min").get<double>();
  b.x_max = j.at("x_max").get<double>();
  b.y_max = j.at("y_max").get<double>();
  b.class_id = j.at("class_id").get<int>();
  b.class_conf = j.at("class_conf").get<double>();
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) {
    throw SchemaError(where + ": degenerate box extents");
  }
  if (b.class_conf < 0.0 || b.class_conf > 1.0) {
    throw SchemaError(where + ": class_conf outside [0,1]");
  }
  return b;
}

void write_bbox_fields(ordered_json& j, const BBox& b) {
  j["x_min"] = b.x_min;
  j["y_min"] = b.y_min;
  j["x_max"] = b.x_max;
  j["y_max"] = b.y_max;
  j["class_id"] = b.class_id;
  j["class_conf"] = b.class_conf;
}

SceneRecord parse_scene(const ordered_json& j, const std::string& where,
                        size_t& dim_ref) {
  SceneRecord s;
  s.image_id = j.at("image_id").get<std::string>();
  s.task_id = j.at("task_id").get<int>();
  s.global_tokens = parse_matrix(j.at("global_tokens"), where + " global_tokens");
  const auto& boxes = j.at("boxes");
  if (!boxes.is_array()) throw SchemaError(where + ": boxes must be an array");
  for (size_t bi = 0; bi < boxes.size(); ++bi) {
    const auto& bj = boxes[bi];
    std::string bw = where + " box " + std::to_string(bi);
    SceneBox box;
    box.bbox = parse_bbox(bj, bw);
    if (bj.contains("gt_label")) {
      int gt = bj.at("gt_label").get<int>();
      if (gt != 0 && gt != 1) {
        throw SchemaError(bw + ": gt_label must be 0 or 1, got " +
                          std::to_string(gt));
      }
      box.gt_label = gt;
    }
    const auto& emb = bj.at("embedding");
    if (!emb.is_array() || emb.empty()) {
      throw SchemaError(bw + ": embedding must be a non-empty array");
    }
    box.embedding.reserve(emb.size());
    for (const auto& v : emb) {
      if (!v.is_number()) throw SchemaError(bw + ": non-numeric embedding");
      box.embedding.push_back(static_cast<float>(v.get<double>()));
    }
    s.boxes.push_back(std::move(box));
  }
  // Every embedding and global token row in the file must share one D.
  for (size_t bi = 0; bi < s.boxes.size(); ++bi) {
    size_t d = s.boxes[bi].embedding.size();
    if (dim_ref == 0) dim_ref = d;
    if (d != dim_ref) {
      throw SchemaError(where + " box " + std::to_string(bi) +
                        ": embedding dimension " + std::to_string(d) +
                        " != " + std::to_string(dim_ref));
    }
  }
  for (const auto& row : s.global_tokens) {
    if (dim_ref == 0) dim_ref = row.size();
    if (row.size() != dim_ref) {
      throw SchemaError(where + ": global token dimension " +
                        std::to_string(row.size()) + " != " +
                        std::to_string(dim_ref));
    }
  }
  return s;
}

}  // namespace

std::vector<SceneRecord> load_scenes(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<SceneRecord> scenes;
  std::string line;
  size_t dim = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      scenes.push_back(
          parse_scene(j, path + ":" + std::to_string(line_no), dim));
    } catch (const Error&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scenes;
}

void save_scenes(const std::vector<SceneRecord>& scenes,
                 const std::string& path) {
  std::ofstream out = open_out(path);
  for (const auto& s : scenes) {
    ordered_json j;
    j["image_id"] = s.image_id;
    j["task_id"] = s.task_id;
    j["global_tokens"] = matrix_json(s.global_tokens);
    ordered_json boxes = ordered_json::array();
    for (const auto& b : s.boxes) {
      ordered_json bj;
      write_bbox_fields(bj, b.bbox);
      if (b.gt_label.has_value()) bj["gt_label"] = *b.gt_label;
      ordered_json emb = ordered_json::array();
      for (float v : b.embedding) emb.push_back(static_cast<double>(v));
      bj["embedding"] = std::move(emb);
      boxes.push_back(std::move(bj));
    }
    j["boxes"] = std::move(boxes);
    out << j.dump() << "\n";
  }
}

TaskSpec load_task(const std::string& path) {
  std::ifstream in = open_in(path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  TaskSpec t;
  try {
    t.task_id = j.at("task_id").get<int>();
    t.task_name = j.at("task_name").get<std::string>();
    for (const auto& w : j.at("attribute_words")) {
      t.attribute_words.push_back(w.get<std::string>());
    }
    t.word_embeddings = parse_matrix(j.at("word_embeddings"),
                                     path + " word_embeddings");
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
  if (t.attribute_words.empty()) {
    throw SchemaError(path + ": attribute_words is empty");
  }
  if (t.attribute_words.size() != t.word_embeddings.size()) {
    throw SchemaError(path + ": " + std::to_string(t.attribute_words.size()) +
                      " words but " + std::to_string(t.word_embeddings.size()) +
                      " embedding rows");
  }
  return t;
}

void save_task(const TaskSpec& task, const std::string& path) {
  ordered_json j;
  j["task_id"] = task.task_id;
  j["task_name"] = task.task_name;
  j["attribute_words"] = task.attribute_words;
  j["word_embeddings"] = matrix_json(task.word_embeddings);
  open_out(path) << j.dump(2) << "\n";
}

std::map<int, TaskSpec> load_tasks(const std::vector<std::string>& paths) {
  std::vector<std::string> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> here;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.path().extension() == ".json") {
          here.push_back(entry.path().string());
        }
      }
      std::sort(here.begin(), here.end());
      files.insert(files.end(), here.begin(), here.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) throw IoError("no task files found");
  std::map<int, TaskSpec> tasks;
  for (const auto& f : files) {
    TaskSpec t = load_task(f);
    if (tasks.count(t.task_id)) {
      throw SchemaError(f + ": duplicate task_id " + std::to_string(t.task_id));
    }
    tasks.emplace(t.task_id, std::move(t));
  }
  return tasks;
}

// Checkpoint layout: "TCKP", u32 version, u64 manifest length, manifest JSON
// (config, metadata, tensor names/shapes/offsets), then raw little-endian
// float32 blobs in manifest order.
namespace {

constexpr char kMagic[4] = {'T', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

ordered_json config_json(const ModelConfig& c) {
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

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.d_hidden_adapter = j.at("d_hidden_adapter").get<int>();
  c.aligner_layers = j.at("aligner_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_prime = j.at("d_prime").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.beta_adapter = j.at("beta_adapter").get<double>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.n_word = j.at("n_word").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(ModelParams<float>& params, const TrainingMeta& meta,
                     const std::string& path) {
  ordered_json manifest;
  manifest["format_version"] = kVersion;
  manifest["config"] = config_json(params.config);
  ordered_json meta_j;
  meta_j["epochs"] = meta.epochs;
  meta_j["seed"] = meta.seed;
  meta_j["final_loss"] = meta.final_loss;
  manifest["meta"] = std::move(meta_j);

  ordered_json tensors = ordered_json::array();
  uint64_t offset = 0;
  std::vector<std::pair<std::string, Tensor<float>>> entries =
      named_params(params);
  for (auto& [name, t] : entries) {
    ordered_json tj;
    tj["name"] = name;
    tj["rows"] = t.rows();
    tj["cols"] = t.cols();
    tj["offset"] = offset;
    offset += t.size() * sizeof(float);
    tensors.push_back(std::move(tj));
  }
  manifest["tensors"] = std::move(tensors);

  std::string mstr = manifest.dump();
  std::ofstream out = open_out(path, /*binary=*/true);
  out.write(kMagic, 4);
  uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t mlen = mstr.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (auto& [name, t] : entries) {
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in = open_in(path, /*binary=*/true);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError(CheckpointFault::kMagicMismatch,
                          path + ": bad checkpoint magic");
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (in.gcount() != sizeof(version)) {
    throw CheckpointError(CheckpointFault::kTruncated,
                          path + ": truncated header");
  }
  if (version != kVersion) {
    throw CheckpointError(CheckpointFault::kVersionUnsupported,
                          path + ": unsupported checkpoint version " +
                              std::to_string(version));
  }
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (in.gcount() != sizeof(mlen)) {
    throw CheckpointError(CheckpointFault::kTruncated,
                          path + ": truncated header");
  }
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (static_cast<uint64_t>(in.gcount()) != mlen) {
    throw CheckpointError(CheckpointFault::kTruncated,
                          path + ": truncated manifest");
  }
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointFault::kBadManifest,
                          path + ": manifest parse failure: " + e.what());
  }

  LoadedCheckpoint ck;
  try {
    ModelConfig cfg = config_from_json(manifest.at("config"));
    ck.params = init_params<float>(cfg, /*seed=*/0);
    ck.meta.epochs = manifest.at("meta").at("epochs").get<int>();
    ck.meta.seed = manifest.at("meta").at("seed").get<uint64_t>();
    ck.meta.final_loss = manifest.at("meta").at("final_loss").get<double>();

    std::vector<std::pair<std::string, Tensor<float>>> entries =
        named_params(ck.params);
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != entries.size()) {
      throw CheckpointError(
          CheckpointFault::kBadManifest,
          path + ": manifest lists " + std::to_string(tensors.size()) +
              " tensors, config implies " + std::to_string(entries.size()));
    }
    for (size_t i = 0; i < entries.size(); ++i) {
      const auto& tj = tensors[i];
      auto& [name, t] = entries[i];
      if (tj.at("name").get<std::string>() != name ||
          tj.at("rows").get<int>() != t.rows() ||
          tj.at("cols").get<int>() != t.cols()) {
        throw CheckpointError(CheckpointFault::kBadManifest,
                              path + ": tensor layout mismatch at '" + name +
                                  "'");
      }
      in.read(reinterpret_cast<char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
      if (static_cast<size_t>(in.gcount()) != t.size() * sizeof(float)) {
        throw CheckpointError(CheckpointFault::kTruncated,
                              path + ": truncated blob at '" + name + "'");
      }
    }
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointFault::kBadManifest,
                          path + ": bad manifest: " + e.what());
  }
  return ck;
}

void save_predictions(const std::vector<PredictionRecord>& preds,
                      const std::string& path) {
  std::ofstream out = open_out(path);
  for (const auto& p : preds) {
    ordered_json j;
    j["image_id"] = p.image_id;
    j["task_id"] = p.task_id;
    ordered_json boxes = ordered_json::array();
    for (const auto& b : p.boxes) {
      ordered_json bj;
      bj["index"] = b.index;
      bj["score"] = b.score;
      bj["decision"] = b.decision;
      bj["provenance"] = provenance_name(b.provenance);
      write_bbox_fields(bj, b.bbox);
      boxes.push_back(std::move(bj));
    }
    j["boxes"] = std::move(boxes);
    out << j.dump() << "\n";
  }
}

std::vector<PredictionRecord> load_predictions(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<PredictionRecord> preds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = path + ":" + std::to_string(line_no);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      PredictionRecord p;
      p.image_id = j.at("image_id").get<std::string>();
      p.task_id = j.at("task_id").get<int>();
      for (const auto& bj : j.at("boxes")) {
        PredBox b;
        b.index = bj.at("index").get<int>();
        b.score = bj.at("score").get<double>();
        b.decision = bj.at("decision").get<int>();
        std::string prov = bj.at("provenance").get<std::string>();
        if (prov == "direct") {
          b.provenance = Provenance::kDirect;
        } else if (prov == "grouped") {
          b.provenance = Provenance::kGrouped;
        } else {
          throw SchemaError(where + ": unknown provenance '" + prov + "'");
        }
        if (b.decision != 0 && b.decision != 1) {
          throw SchemaError(where + ": decision must be 0 or 1");
        }
        b.bbox = parse_bbox(bj, where);
        p.boxes.push_back(std::move(b));
      }
      preds.push_back(std::move(p));
    } catch (const Error&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(where + ": " + e.what());
    }
  }
  return preds;
}

void save_report(const Report& report, const std::string& path) {
  ordered_json j;
  ordered_json per_task;
  for (const auto& [task_id, ev] : report.per_task) {
    ordered_json tj;
    if (ev.ap.has_value()) {
      tj["ap"] = *ev.ap;
    } else {
      tj["ap"] = nullptr;
    }
    tj["tp"] = ev.tp;
    tj["fp"] = ev.fp;
    tj["fn"] = ev.fn;
    per_task[std::to_string(task_id)] = std::move(tj);
  }
  j["per_task"] = std::move(per_task);
  j["map"] = report.map;
  if (report.imbalance_ratio.has_value()) {
    j["imbalance_ratio"] = *report.imbalance_ratio;
  } else {
    j["imbalance_ratio"] = nullptr;
  }
  open_out(path) << j.dump(2) << "\n";
}

void save_thresholds(const std::map<int, double>& thresholds,
                     const std::string& path) {
  ordered_json j;
  for (const auto& [task_id, delta] : thresholds) {
    j[std::to_string(task_id)] = delta;
  }
  open_out(path) << j.dump(2) << "\n";
}

std::map<int, double> load_thresholds(const std::string& path) {
  std::ifstream in = open_in(path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::map<int, double> out;
  for (const auto& [key, value] : j.items()) {
    try {
      out[std::stoi(key)] = value.get<double>();
    } catch (const std::exception&) {
      throw SchemaError(path + ": bad threshold entry '" + key + "'");
    }
  }
  return out;
}

void save_loss_csv(const std::vector<double>& epoch_loss,
                   const std::string& path) {
  std::ofstream out = open_out(path);
  out << "epoch,mean_loss\n";
  out << std::setprecision(12);
  for (size_t i = 0; i < epoch_loss.size(); ++i) {
    out << (i + 1) << "," << epoch_loss[i] << "\n";
  }
}

}  // namespace taskclip
