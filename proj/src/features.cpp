#include "histoad/features.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "histoad/error.hpp"

namespace histoad {

const char* to_string(TissueClass c) {
  switch (c) {
    case TissueClass::normal_target: return "normal_target";
    case TissueClass::near_oe: return "near_oe";
    case TissueClass::far_oe: return "far_oe";
    case TissueClass::eval: return "eval";
  }
  return "eval";
}

const char* to_string(Label l) {
  switch (l) {
    case Label::normal: return "normal";
    case Label::anomalous: return "anomalous";
    case Label::unknown: return "unknown";
  }
  return "unknown";
}

TissueClass parse_tissue_class(const std::string& s) {
  if (s == "normal_target") return TissueClass::normal_target;
  if (s == "near_oe") return TissueClass::near_oe;
  if (s == "far_oe") return TissueClass::far_oe;
  if (s == "eval") return TissueClass::eval;
  fail(ErrorCode::invalid_input, "unknown tissue_class '" + s + "'");
}

Label parse_label(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "anomalous") return Label::anomalous;
  if (s == "unknown" || s.empty()) return Label::unknown;
  fail(ErrorCode::invalid_input, "unknown label '" + s + "'");
}

void FeatureMatrix::append(const FeatureMatrix& other) {
  if (other.empty()) return;
  if (empty() && rows.cols() != other.rows.cols()) rows.resize(0, other.dim());
  require(other.dim() == dim(), ErrorCode::dim_mismatch,
          "cannot append feature rows of different dimension");
  const Eigen::Index n = rows.rows();
  rows.conservativeResize(n + other.rows.rows(), Eigen::NoChange);
  rows.bottomRows(other.rows.rows()) = other.rows;
  meta.insert(meta.end(), other.meta.begin(), other.meta.end());
}

FeatureMatrix FeatureMatrix::select(const std::vector<std::size_t>& indices) const {
  FeatureMatrix out(dim());
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), dim());
  out.meta.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.rows.row(static_cast<Eigen::Index>(i)) =
        rows.row(static_cast<Eigen::Index>(indices[i]));
    out.meta.push_back(meta[indices[i]]);
  }
  return out;
}

void FeatureMatrix::validate() const {
  require(static_cast<std::size_t>(rows.rows()) == meta.size(),
          ErrorCode::invalid_input, "feature rows and metadata lengths differ");
}

// --- file format -----------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& buf, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 8;

}  // namespace

void write_features(const FeatureMatrix& m, const std::string& path) {
  m.validate();
  require(m.dim() >= 1, ErrorCode::dim_mismatch, "feature dimension must be positive");
  std::string buf;
  buf.append(kFeatureMagic, 4);
  put_le<std::uint16_t>(buf, kFeatureVersion);
  put_le<std::uint16_t>(buf, 0);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(m.dim()));
  put_le<std::uint64_t>(buf, m.size());
  buf.reserve(buf.size() + m.size() * m.dim() * 4);
  for (Eigen::Index i = 0; i < m.rows.rows(); ++i)
    for (Eigen::Index j = 0; j < m.rows.cols(); ++j)
      put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(m.rows(i, j)));

  std::string lines;
  for (const auto& meta : m.meta) {
    nlohmann::ordered_json j;
    j["slide_id"] = meta.coord.slide_id;
    j["x"] = meta.coord.x;
    j["y"] = meta.coord.y;
    j["tissue_class"] = to_string(meta.tissue_class);
    j["label"] = to_string(meta.label);
    lines += j.dump();
    lines += '\n';
  }
  put_le<std::uint64_t>(buf, lines.size());
  buf += lines;

  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCode::io, "write failed: " + path);
}

FeatureMatrix read_features(const std::string& path, std::optional<int> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path);
  const std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());

  require(data.size() >= 4 && std::memcmp(bytes, kFeatureMagic, 4) == 0,
          ErrorCode::bad_magic, path + ": not a feature file (magic mismatch)");
  require(data.size() >= kHeaderBytes, ErrorCode::truncated_payload,
          path + ": truncated header");
  const auto version = get_le<std::uint16_t>(bytes + 4);
  require(version == kFeatureVersion, ErrorCode::unsupported_version,
          path + ": unsupported feature file version " + std::to_string(version));
  const auto dim = get_le<std::uint32_t>(bytes + 8);
  const auto n = get_le<std::uint64_t>(bytes + 12);
  require(dim >= 1, ErrorCode::dim_mismatch, path + ": zero feature dimension");
  if (expected_dim)
    require(static_cast<int>(dim) == *expected_dim, ErrorCode::dim_mismatch,
            path + ": feature dimension " + std::to_string(dim) + ", expected " +
                std::to_string(*expected_dim));

  const std::size_t available = data.size() - kHeaderBytes;
  require(n <= available / (4ULL * dim), ErrorCode::truncated_payload,
          path + ": declared " + std::to_string(n) + " rows but payload is shorter");
  const std::size_t payload = static_cast<std::size_t>(n) * dim * 4;

  FeatureMatrix m(static_cast<int>(dim));
  m.rows.resize(static_cast<Eigen::Index>(n), dim);
  const unsigned char* p = bytes + kHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < dim; ++j, p += 4)
      m.rows(static_cast<Eigen::Index>(i), j) =
          std::bit_cast<float>(get_le<std::uint32_t>(p));

  std::size_t offset = kHeaderBytes + payload;
  require(data.size() >= offset + 8, ErrorCode::truncated_payload,
          path + ": missing metadata length");
  const auto meta_len = get_le<std::uint64_t>(bytes + offset);
  offset += 8;
  require(data.size() - offset >= meta_len, ErrorCode::truncated_payload,
          path + ": truncated metadata block");

  std::istringstream lines(data.substr(offset, meta_len));
  std::string line;
  m.meta.reserve(n);
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PatchMeta meta;
      meta.coord.slide_id = j.at("slide_id").get<std::string>();
      meta.coord.x = j.at("x").get<int>();
      meta.coord.y = j.at("y").get<int>();
      meta.tissue_class = parse_tissue_class(j.at("tissue_class").get<std::string>());
      meta.label = parse_label(j.at("label").get<std::string>());
      m.meta.push_back(std::move(meta));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::malformed_metadata, path + ": bad metadata line: " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::malformed_metadata, path + ": " + e.what());
    }
  }
  require(m.meta.size() == n, ErrorCode::malformed_metadata,
          path + ": metadata has " + std::to_string(m.meta.size()) +
              " records for " + std::to_string(n) + " rows");
  return m;
}

// --- dedup and sampling -----------------------------------------------------

void OeFilterConfig::validate() const {
  require(cosine_threshold >= -1.0 && cosine_threshold <= 1.0, ErrorCode::config,
          "cosine_threshold must lie in [-1, 1]");
}

FeatureMatrix dedup_oe(const FeatureMatrix& oe, const FeatureMatrix& normal,
                       const OeFilterConfig& config) {
  config.validate();
  if (oe.empty()) return oe;
  require(normal.empty() || oe.dim() == normal.dim(), ErrorCode::dim_mismatch,
          "dedup_oe: OE and normal features differ in dimension");

  // Unit-normalized normal rows; one matrix-vector product per OE row.
  Eigen::MatrixXd unit = normal.rows.cast<double>();
  for (Eigen::Index j = 0; j < unit.rows(); ++j) {
    const double norm = unit.row(j).norm();
    require(norm > 0.0, ErrorCode::undefined_similarity,
            "dedup_oe: zero normal feature vector");
    unit.row(j) /= norm;
  }
  std::vector<std::size_t> keep;
  for (Eigen::Index i = 0; i < oe.rows.rows(); ++i) {
    const Eigen::VectorXd q = oe.rows.row(i).cast<double>().transpose();
    const double norm = q.norm();
    require(norm > 0.0, ErrorCode::undefined_similarity,
            "dedup_oe: zero OE feature vector");
    const double max_sim = unit.rows() == 0
                               ? -std::numeric_limits<double>::infinity()
                               : (unit * q).maxCoeff() / norm;
    const bool duplicate = max_sim >= kSameDirectionCosine;
    if (!(max_sim > config.cosine_threshold) && !duplicate) keep.push_back(static_cast<std::size_t>(i));
  }
  return oe.select(keep);
}

void OeSamplerConfig::validate() const {
  require(batch_size > 0 && batch_size % 4 == 0, ErrorCode::config,
          "batch_size must be a positive multiple of 4");
  require(normal_fraction >= 0.0 && normal_fraction <= 1.0 &&
              near_fraction_of_oe >= 0.0 && near_fraction_of_oe <= 1.0,
          ErrorCode::config, "sampler fractions must lie in [0, 1]");
}

FeatureMatrix sample_batch(const FeatureMatrix& normal, const FeatureMatrix& near,
                           const FeatureMatrix& far, const OeSamplerConfig& config,
                           CounterRng& rng) {
  config.validate();
  require(!normal.empty() && !near.empty() && !far.empty(), ErrorCode::config,
          "sample_batch: every pool (normal, near OE, far OE) must be nonempty");
  require(normal.dim() == near.dim() && normal.dim() == far.dim(),
          ErrorCode::dim_mismatch, "sample_batch: pools differ in dimension");
  const int n_normal = static_cast<int>(std::lround(config.batch_size * config.normal_fraction));
  const int n_oe = config.batch_size - n_normal;
  const int n_near = static_cast<int>(std::lround(n_oe * config.near_fraction_of_oe));
  const int n_far = n_oe - n_near;

  FeatureMatrix batch(normal.dim());
  batch.rows.resize(config.batch_size, normal.dim());
  batch.meta.reserve(static_cast<std::size_t>(config.batch_size));
  Eigen::Index row = 0;
  auto draw = [&](const FeatureMatrix& pool, int count, Label label) {
    for (int i = 0; i < count; ++i) {
      const auto idx = static_cast<Eigen::Index>(rng.uniform_index(pool.size()));
      batch.rows.row(row++) = pool.rows.row(idx);
      PatchMeta meta = pool.meta[static_cast<std::size_t>(idx)];
      meta.label = label;
      batch.meta.push_back(std::move(meta));
    }
  };
  draw(normal, n_normal, Label::normal);
  draw(near, n_near, Label::anomalous);
  draw(far, n_far, Label::anomalous);
  return batch;
}

// --- manifest --------------------------------------------------------------

namespace {
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read manifest " + path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "slide_id,path,tissue_class,label,diagnosis_group",
          ErrorCode::invalid_input,
          path + ": expected header slide_id,path,tissue_class,label,diagnosis_group");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == 5, ErrorCode::invalid_input,
            path + ": expected 5 fields in line '" + line + "'");
    ManifestEntry e;
    e.slide_id = f[0];
    std::filesystem::path p(f[1]);
    e.path = (p.is_relative() ? base / p : p).string();
    e.tissue_class = parse_tissue_class(f[2]);
    e.label = parse_label(f[3]);
    e.diagnosis_group = f[4];
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << "slide_id,path,tissue_class,label,diagnosis_group\n";
  for (const auto& e : entries)
    out << e.slide_id << ',' << e.path << ',' << to_string(e.tissue_class) << ','
        << to_string(e.label) << ',' << e.diagnosis_group << '\n';
}

}  // namespace histoad
