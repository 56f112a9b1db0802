#include "histoad/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "histoad/error.hpp"

namespace histoad {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::model: return "model";
    case ScorerKind::knn: return "knn";
    case ScorerKind::embedded_knn: return "embedded_knn";
  }
  return "model";
}

ScorerKind parse_scorer_kind(const std::string& s) {
  if (s == "model") return ScorerKind::model;
  if (s == "knn") return ScorerKind::knn;
  if (s == "embedded_knn") return ScorerKind::embedded_knn;
  fail(ErrorCode::config, "unknown scorer '" + s + "' (expected model|knn|embedded_knn)");
}

TrainConfig PipelineConfig::train_config(Objective o) const {
  TrainConfig c = o == Objective::compactness   ? train_occ
                  : o == Objective::autoencoder ? train_ae
                                                : train_oe;
  c.objective = o;
  return c;
}

void PipelineConfig::validate() const {
  tile.validate();
  heatmap_tile().validate();
  oe_filter.validate();
  aggregation.validate();
  for (auto o : {Objective::bce, Objective::compactness, Objective::autoencoder})
    train_config(o).validate();
  require(knn.k >= 1, ErrorCode::config, "knn.k must be >= 1");
  require(tta.n_views >= 1, ErrorCode::config, "tta.n_views must be >= 1");
  require(eval.folds >= 2, ErrorCode::config, "eval.folds must be >= 2");
  require(jobs >= 1, ErrorCode::config, "jobs must be >= 1");
  colormap_by_name(colormap);
  if (stain_target) stain_target->validate();
}

namespace {

ordered_json train_json(const TrainConfig& c) {
  ordered_json j;
  j["objective"] = to_string(c.objective);
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["grad_clip_norm"] = c.grad_clip_norm ? json(*c.grad_clip_norm) : json(nullptr);
  j["seed"] = c.seed;
  j["hidden_width"] = c.hidden_width;
  j["embedding_dim"] = c.embedding_dim;
  j["bottleneck_dim"] = c.bottleneck_dim;
  j["near_fraction_of_oe"] = c.near_fraction_of_oe;
  return j;
}

TrainConfig train_from(const json& j, TrainConfig c) {
  if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  if (j.contains("grad_clip_norm")) {
    if (j["grad_clip_norm"].is_null())
      c.grad_clip_norm.reset();
    else
      c.grad_clip_norm = j["grad_clip_norm"].get<double>();
  }
  c.seed = j.value("seed", c.seed);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.bottleneck_dim = j.value("bottleneck_dim", c.bottleneck_dim);
  c.near_fraction_of_oe = j.value("near_fraction_of_oe", c.near_fraction_of_oe);
  return c;
}

ordered_json stats_json(const LabStats& s) {
  return ordered_json::parse(to_json(s));
}

}  // namespace

std::string train_config_to_json(const TrainConfig& config) { return train_json(config).dump(); }

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  try {
    return train_from(json::parse(text), base);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("train config: ") + e.what());
  }
}

std::string to_json(const PipelineConfig& c) {
  ordered_json j;
  j["tile"] = {{"patch_size", c.tile.patch_size},
               {"stride", c.tile.stride},
               {"max_background_fraction", c.tile.max_background_fraction}};
  j["heatmap_overlap"] = c.heatmap_overlap;
  j["tissue"] = {{"saturation_min", c.tissue.saturation_min},
                 {"value_max", c.tissue.value_max},
                 {"smoothing_passes", c.tissue.smoothing_passes}};
  j["stain_target"] = c.stain_target ? stats_json(*c.stain_target) : ordered_json(nullptr);
  j["oe_filter"] = {{"cosine_threshold", c.oe_filter.cosine_threshold}};
  j["objective"] = to_string(c.objective);
  j["scorer"] = to_string(c.scorer);
  j["train_oe"] = train_json(c.train_oe);
  j["train_occ"] = train_json(c.train_occ);
  j["train_ae"] = train_json(c.train_ae);
  j["knn"] = {{"k", c.knn.k}, {"mode", to_string(c.knn.mode)}};
  j["aggregation"] = {{"top_fraction", c.aggregation.top_fraction}};
  j["tta"] = {{"n_views", c.tta.n_views}};
  j["eval"] = {{"folds", c.eval.folds}, {"sensitivity_targets", c.eval.sensitivity_targets}};
  j["colormap"] = c.colormap;
  j["jobs"] = c.jobs;
  return j.dump(2);
}

PipelineConfig config_from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const auto j = json::parse(text);
    require(j.is_object(), ErrorCode::config, "config: expected a JSON object");
    static const std::set<std::string> known = {
        "tile", "heatmap_overlap", "tissue", "stain_target", "oe_filter", "objective",
        "scorer", "train_oe", "train_occ", "train_ae", "knn", "aggregation", "tta",
        "eval", "colormap", "jobs"};
    for (const auto& [key, _] : j.items())
      require(known.contains(key), ErrorCode::config, "config: unknown key '" + key + "'");
    if (j.contains("tile")) {
      const auto& t = j["tile"];
      c.tile.patch_size = t.value("patch_size", c.tile.patch_size);
      c.tile.stride = t.value("stride", c.tile.stride);
      c.tile.max_background_fraction =
          t.value("max_background_fraction", c.tile.max_background_fraction);
    }
    c.heatmap_overlap = j.value("heatmap_overlap", c.heatmap_overlap);
    if (j.contains("tissue")) {
      const auto& t = j["tissue"];
      c.tissue.saturation_min = t.value("saturation_min", c.tissue.saturation_min);
      c.tissue.value_max = t.value("value_max", c.tissue.value_max);
      c.tissue.smoothing_passes = t.value("smoothing_passes", c.tissue.smoothing_passes);
    }
    if (j.contains("stain_target") && !j["stain_target"].is_null())
      c.stain_target = lab_stats_from_json(j["stain_target"].dump());
    if (j.contains("oe_filter"))
      c.oe_filter.cosine_threshold =
          j["oe_filter"].value("cosine_threshold", c.oe_filter.cosine_threshold);
    if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
    if (j.contains("scorer")) c.scorer = parse_scorer_kind(j["scorer"].get<std::string>());
    if (j.contains("train_oe")) c.train_oe = train_from(j["train_oe"], c.train_oe);
    if (j.contains("train_occ")) c.train_occ = train_from(j["train_occ"], c.train_occ);
    if (j.contains("train_ae")) c.train_ae = train_from(j["train_ae"], c.train_ae);
    if (j.contains("knn")) {
      c.knn.k = j["knn"].value("k", c.knn.k);
      if (j["knn"].contains("mode"))
        c.knn.mode = parse_knn_mode(j["knn"]["mode"].get<std::string>());
    }
    if (j.contains("aggregation"))
      c.aggregation.top_fraction =
          j["aggregation"].value("top_fraction", c.aggregation.top_fraction);
    if (j.contains("tta")) c.tta.n_views = j["tta"].value("n_views", c.tta.n_views);
    if (j.contains("eval")) {
      c.eval.folds = j["eval"].value("folds", c.eval.folds);
      if (j["eval"].contains("sensitivity_targets"))
        c.eval.sensitivity_targets =
            j["eval"]["sensitivity_targets"].get<std::vector<double>>();
    }
    c.colormap = j.value("colormap", c.colormap);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace histoad
