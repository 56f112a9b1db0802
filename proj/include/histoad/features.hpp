#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "histoad/error.hpp"
#include "histoad/rng.hpp"
#include "histoad/tiler.hpp"

namespace histoad {

enum class TissueClass { normal_target, near_oe, far_oe, eval };
enum class Label { normal, anomalous, unknown };

const char* to_string(TissueClass c);
const char* to_string(Label l);
TissueClass parse_tissue_class(const std::string& s);
Label parse_label(const std::string& s);

struct PatchMeta {
  PatchCoord coord;
  TissueClass tissue_class = TissueClass::eval;
  Label label = Label::unknown;

  friend bool operator==(const PatchMeta&, const PatchMeta&) = default;
};

using FeatureRows =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x D patch embeddings with one metadata record per row.
struct FeatureMatrix {
  FeatureRows rows;
  std::vector<PatchMeta> meta;

  FeatureMatrix() = default;
  explicit FeatureMatrix(int dim) : rows(0, dim) {}

  int dim() const { return static_cast<int>(rows.cols()); }
  std::size_t size() const { return meta.size(); }
  bool empty() const { return meta.empty(); }

  template <typename Derived>
  void append(const Eigen::MatrixBase<Derived>& row, PatchMeta m) {
    const Eigen::Index n = rows.rows();
    rows.conservativeResize(n + 1, Eigen::NoChange);
    rows.row(n) = row.template cast<float>();
    meta.push_back(std::move(m));
  }
  void append(const FeatureMatrix& other);
  FeatureMatrix select(const std::vector<std::size_t>& indices) const;
  void validate() const;
};

inline constexpr char kFeatureMagic[4] = {'H', 'A', 'D', 'F'};
inline constexpr std::uint16_t kFeatureVersion = 1;

/// Binary little-endian container: magic "HADF", u16 version, u16 flags,
/// u32 D, u64 N, N*D float32 row-major, u64 metadata byte length, then one
/// JSON object per line {slide_id,x,y,tissue_class,label}.
void write_features(const FeatureMatrix& m, const std::string& path);
/// Errors: bad_magic, unsupported_version, dim_mismatch (including a mismatch
/// against `expected_dim`), truncated_payload, malformed_metadata.
FeatureMatrix read_features(const std::string& path,
                            std::optional<int> expected_dim = std::nullopt);

/// u.v / (|u||v|), accumulated in double. Zero vectors throw
/// undefined_similarity.
template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& u,
                         const Eigen::MatrixBase<B>& v);

struct OeFilterConfig {
  double cosine_threshold = 0.9;
  void validate() const;
};

/// Cosine at or above this counts as the same direction regardless of the
/// threshold (rounding keeps computed cosines of parallel rows near, not above, 1).
inline constexpr double kSameDirectionCosine = 1.0 - 1e-12;

/// Keeps OE rows whose maximum cosine similarity to every normal row is at
/// most the threshold, in input order. Exact all-pairs, O(N*M*D).
FeatureMatrix dedup_oe(const FeatureMatrix& oe, const FeatureMatrix& normal,
                       const OeFilterConfig& config = {});

struct OeSamplerConfig {
  int batch_size = 32;
  double normal_fraction = 0.5;
  double near_fraction_of_oe = 0.5;
  void validate() const;
};

/// Rows drawn uniformly with replacement: batch/2 normal rows (label
/// normal), batch/4 near and batch/4 far rows (label anomalous), in that
/// order. Advances `rng`.
FeatureMatrix sample_batch(const FeatureMatrix& normal, const FeatureMatrix& near,
                           const FeatureMatrix& far, const OeSamplerConfig& config,
                           CounterRng& rng);

/// `slide_id,path,tissue_class,label,diagnosis_group`
struct ManifestEntry {
  std::string slide_id;
  std::string path;
  TissueClass tissue_class = TissueClass::eval;
  Label label = Label::unknown;
  std::string diagnosis_group;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// ---------------------------------------------------------------------------

template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& u,
                         const Eigen::MatrixBase<B>& v) {
  require(u.size() == v.size(), ErrorCode::dim_mismatch,
          "cosine_similarity: dimension mismatch");
  const auto ud = u.template cast<double>().eval();
  const auto vd = v.template cast<double>().eval();
  const double nu = ud.norm();
  const double nv = vd.norm();
  require(nu > 0.0 && nv > 0.0, ErrorCode::undefined_similarity,
          "cosine_similarity: zero vector");
  return ud.cwiseProduct(vd).sum() / (nu * nv);
}

}  // namespace histoad
