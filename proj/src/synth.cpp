#include "histoad/synth.hpp"

#include <cmath>
#include <json.hpp>

#include "histoad/error.hpp"
#include "histoad/rng.hpp"

namespace histoad {

using nlohmann::json;

Eigen::VectorXd SynthSpec::resolved_mean() const {
  return normal_mean.size() ? normal_mean : Eigen::VectorXd::Zero(dim);
}

Eigen::VectorXd SynthSpec::resolved_stddev() const {
  return stddev.size() ? stddev : Eigen::VectorXd::Ones(dim);
}

Eigen::VectorXd SynthSpec::resolved_shift() const {
  if (shift.size()) return shift;
  return Eigen::VectorXd::Constant(dim, shift_norm / std::sqrt(static_cast<double>(dim)));
}

Eigen::VectorXd SynthSpec::resolved_far_mean() const {
  if (far_mean.size()) return far_mean;
  Eigen::VectorXd dir(dim);
  for (int i = 0; i < dim; ++i) dir[i] = i % 2 == 0 ? 1.0 : -1.0;
  return resolved_mean() + far_distance * dir.normalized();
}

void SynthSpec::validate() const {
  require(dim >= 1, ErrorCode::config, "synth: dim must be positive");
  require(n_normal >= 1 && n_anomalous >= 0 && n_near_oe >= 0 && n_far_oe >= 0 &&
              n_heldout_normal >= 0,
          ErrorCode::config, "synth: counts must be non-negative (n_normal positive)");
  for (const auto* v : {&normal_mean, &stddev, &shift, &far_mean})
    require(v->size() == 0 || v->size() == dim, ErrorCode::dim_mismatch,
            "synth: vector field length differs from dim");
  require((resolved_stddev().array() > 0.0).all(), ErrorCode::config,
          "synth: variances must be positive");
  require(patches_per_slide >= 1, ErrorCode::config, "synth: patches_per_slide must be >= 1");
  require(anomaly_fraction_per_slide > 0.0 && anomaly_fraction_per_slide <= 1.0,
          ErrorCode::config, "synth: anomaly_fraction_per_slide must lie in (0, 1]");
}

namespace {

Eigen::VectorXd to_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json from_vec(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

PatchCoord grid_coord(const std::string& slide, int index) {
  constexpr int kCols = 8;
  return {slide, (index % kCols) * kDefaultPatchSize, (index / kCols) * kDefaultPatchSize};
}

std::string slide_name(const std::string& prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%04d", i);
  return prefix + buf;
}

void draw_rows(FeatureMatrix& out, int count, const Eigen::VectorXd& mean,
               const Eigen::VectorXd& sd, CounterRng& rng, const std::string& prefix,
               int per_slide, TissueClass tc, Label label) {
  Eigen::VectorXd row(mean.size());
  for (int i = 0; i < count; ++i) {
    for (Eigen::Index d = 0; d < mean.size(); ++d) row[d] = mean[d] + sd[d] * rng.normal();
    out.append(row, {grid_coord(slide_name(prefix, i / per_slide), i % per_slide), tc, label});
  }
}

}  // namespace

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    const auto j = json::parse(text);
    s.dim = j.value("dim", s.dim);
    s.n_normal = j.value("n_normal", s.n_normal);
    s.n_anomalous = j.value("n_anomalous", s.n_anomalous);
    s.n_near_oe = j.value("n_near_oe", s.n_near_oe);
    s.n_far_oe = j.value("n_far_oe", s.n_far_oe);
    s.n_heldout_normal = j.value("n_heldout_normal", s.n_heldout_normal);
    if (j.contains("normal_mean")) s.normal_mean = to_vec(j["normal_mean"]);
    if (j.contains("stddev")) s.stddev = to_vec(j["stddev"]);
    if (j.contains("shift")) s.shift = to_vec(j["shift"]);
    s.shift_norm = j.value("shift_norm", s.shift_norm);
    if (j.contains("far_mean")) s.far_mean = to_vec(j["far_mean"]);
    s.far_distance = j.value("far_distance", s.far_distance);
    s.patches_per_slide = j.value("patches_per_slide", s.patches_per_slide);
    s.anomaly_fraction_per_slide = j.value("anomaly_fraction_per_slide", s.anomaly_fraction_per_slide);
    if (j.contains("diagnosis_groups"))
      s.diagnosis_groups = j["diagnosis_groups"].get<std::vector<std::string>>();
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["dim"] = s.dim;
  j["n_normal"] = s.n_normal;
  j["n_anomalous"] = s.n_anomalous;
  j["n_near_oe"] = s.n_near_oe;
  j["n_far_oe"] = s.n_far_oe;
  j["n_heldout_normal"] = s.n_heldout_normal;
  j["normal_mean"] = from_vec(s.resolved_mean());
  j["stddev"] = from_vec(s.resolved_stddev());
  j["shift"] = from_vec(s.resolved_shift());
  j["far_mean"] = from_vec(s.resolved_far_mean());
  j["patches_per_slide"] = s.patches_per_slide;
  j["anomaly_fraction_per_slide"] = s.anomaly_fraction_per_slide;
  j["diagnosis_groups"] = s.diagnosis_groups;
  j["seed"] = s.seed;
  return j.dump(2);
}

SynthPools gen_features(const SynthSpec& spec) {
  spec.validate();
  const CounterRng root(spec.seed);
  const Eigen::VectorXd mu = spec.resolved_mean();
  const Eigen::VectorXd sd = spec.resolved_stddev();
  const Eigen::VectorXd delta = spec.resolved_shift();
  const int pps = spec.patches_per_slide;

  SynthPools pools;
  pools.normal = FeatureMatrix(spec.dim);
  pools.anomalous = FeatureMatrix(spec.dim);
  pools.near_oe = FeatureMatrix(spec.dim);
  pools.far_oe = FeatureMatrix(spec.dim);
  pools.heldout_normal = FeatureMatrix(spec.dim);

  CounterRng rng = root.split(0);
  draw_rows(pools.normal, spec.n_normal, mu, sd, rng, "normal", pps,
            TissueClass::normal_target, Label::normal);

  rng = root.split(1);
  CounterRng filler = root.split(5);
  const int anomalous_per_slide =
      std::max(1, static_cast<int>(std::ceil(spec.anomaly_fraction_per_slide * pps)));
  Eigen::VectorXd row(spec.dim);
  for (int i = 0, slide = 0; i < spec.n_anomalous; ++slide) {
    const std::string id = slide_name("anomalous", slide);
    if (!spec.diagnosis_groups.empty())
      pools.slide_group[id] =
          spec.diagnosis_groups[static_cast<std::size_t>(slide) % spec.diagnosis_groups.size()];
    int slot = 0;
    for (; slot < anomalous_per_slide && i < spec.n_anomalous; ++slot, ++i) {
      for (int d = 0; d < spec.dim; ++d) row[d] = mu[d] + delta[d] + sd[d] * rng.normal();
      pools.anomalous.append(row, {grid_coord(id, slot), TissueClass::eval, Label::anomalous});
    }
    if (anomalous_per_slide < pps) {
      for (; slot < pps; ++slot) {
        for (int d = 0; d < spec.dim; ++d) row[d] = mu[d] + sd[d] * filler.normal();
        pools.anomalous.append(row, {grid_coord(id, slot), TissueClass::eval, Label::normal});
      }
    }
  }

  rng = root.split(2);
  draw_rows(pools.near_oe, spec.n_near_oe, mu + 0.5 * delta, sd, rng, "near_oe", pps,
            TissueClass::near_oe, Label::anomalous);
  rng = root.split(3);
  draw_rows(pools.far_oe, spec.n_far_oe, spec.resolved_far_mean(), sd, rng, "far_oe", pps,
            TissueClass::far_oe, Label::anomalous);
  rng = root.split(4);
  draw_rows(pools.heldout_normal, spec.n_heldout_normal, mu, sd, rng, "heldout", pps,
            TissueClass::eval, Label::normal);
  return pools;
}

// --- rasters ----------------------------------------------------------------------

std::array<std::uint8_t, 3> default_region_color(const std::string& kind) {
  if (kind == "tissue") return {200, 80, 120};
  if (kind == "diagnosis_defining") return {120, 40, 150};
  if (kind == "other_anomalous") return {170, 60, 140};
  if (kind == "artifact") return {30, 110, 60};
  fail(ErrorCode::invalid_input, "unknown raster region kind '" + kind + "'");
}

RasterLayout raster_layout_from_json(const std::string& text) {
  RasterLayout layout;
  try {
    const auto j = json::parse(text);
    layout.slide_id = j.value("slide_id", layout.slide_id);
    layout.width = j.at("width").get<int>();
    layout.height = j.at("height").get<int>();
    if (j.contains("background"))
      layout.background = j["background"].get<std::array<std::uint8_t, 3>>();
    layout.noise = j.value("noise", 0);
    layout.seed = j.value("seed", std::uint64_t{0});
    for (const auto& r : j.value("regions", json::array())) {
      RasterRegion region;
      region.kind = r.value("kind", std::string("tissue"));
      const auto rect = r.at("rect").get<std::array<int, 4>>();
      region.x = rect[0];
      region.y = rect[1];
      region.width = rect[2];
      region.height = rect[3];
      region.color = r.contains("color") ? r["color"].get<std::array<std::uint8_t, 3>>()
                                         : default_region_color(region.kind);
      layout.regions.push_back(region);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("raster layout: ") + e.what());
  }
  return layout;
}

SynthSlide gen_raster(const RasterLayout& layout) {
  require(layout.width >= 1 && layout.height >= 1, ErrorCode::invalid_input,
          "raster layout: dimensions must be positive");
  for (const auto& r : layout.regions) {
    default_region_color(r.kind);
    require(r.width >= 1 && r.height >= 1 && r.x >= 0 && r.y >= 0 &&
                r.x + r.width <= layout.width && r.y + r.height <= layout.height,
            ErrorCode::invalid_input, "raster layout: region outside the canvas");
  }
  for (std::size_t a = 0; a < layout.regions.size(); ++a)
    for (std::size_t b = a + 1; b < layout.regions.size(); ++b) {
      const auto& ra = layout.regions[a];
      const auto& rb = layout.regions[b];
      if (ra.kind == "tissue" || rb.kind == "tissue" || ra.kind == rb.kind) continue;
      const bool overlap = ra.x < rb.x + rb.width && rb.x < ra.x + ra.width &&
                           ra.y < rb.y + rb.height && rb.y < ra.y + ra.height;
      require(!overlap, ErrorCode::invalid_input,
              "raster layout: contradictory overlapping regions (" + ra.kind + " vs " +
                  rb.kind + ")");
    }

  SynthSlide out;
  out.raster = SlideRaster(layout.slide_id, layout.width, layout.height);
  out.raster.fill_rect(0, 0, layout.width, layout.height, layout.background[0],
                       layout.background[1], layout.background[2]);
  out.mask = TissueMask(layout.width, layout.height);
  for (const auto& r : layout.regions) {
    out.raster.fill_rect(r.x, r.y, r.width, r.height, r.color[0], r.color[1], r.color[2]);
    out.mask.set_rect(r.x, r.y, r.width, r.height, true);
    if (r.kind != "tissue") {
      Annotation a;
      a.kind = parse_annotation_kind(r.kind);
      const double x0 = r.x, y0 = r.y, x1 = r.x + r.width, y1 = r.y + r.height;
      a.polygon = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
      out.annotations.push_back(std::move(a));
    }
  }
  if (layout.noise > 0) {
    CounterRng rng(layout.seed);
    for (std::size_t i = 0; i < out.raster.pixel_count(); ++i) {
      if (!out.mask.bits[i]) continue;
      for (int c = 0; c < 3; ++c) {
        auto& v = out.raster.pixels[3 * i + c];
        const int jitter =
            static_cast<int>(rng.uniform_index(2 * static_cast<std::uint64_t>(layout.noise) + 1)) -
            layout.noise;
        v = static_cast<std::uint8_t>(std::clamp(v + jitter, 0, 255));
      }
    }
  }
  return out;
}

}  // namespace histoad
