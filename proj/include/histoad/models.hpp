#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "histoad/error.hpp"
#include "histoad/features.hpp"
#include "histoad/rng.hpp"

namespace histoad {

enum class Activation { relu, identity };
enum class Objective { bce, hsc, deepsad, compactness, autoencoder };

const char* to_string(Activation a);
const char* to_string(Objective o);
Activation parse_activation(const std::string& s);
/// Throws config for unknown names.
Objective parse_objective(const std::string& s);

/// True for the objectives trained against outlier-exposure batches.
constexpr bool uses_outlier_exposure(Objective o) {
  return o == Objective::bce || o == Objective::hsc || o == Objective::deepsad;
}
/// True for the objectives scored by distance to a frozen center.
constexpr bool uses_center(Objective o) {
  return o == Objective::deepsad || o == Objective::compactness;
}

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;
  Activation activation = Activation::identity;
};

template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Layer order, weight (row-major) then bias.
  Vector<Scalar> flatten() const {
    Vector<Scalar> flat(parameter_count());
    Eigen::Index k = 0;
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[k++] = l.weight(r, c);
      flat.segment(k, l.bias.size()) = l.bias;
      k += l.bias.size();
    }
    return flat;
  }

  void assign(const Eigen::Ref<const Vector<Scalar>>& flat) {
    require(flat.size() == parameter_count(), ErrorCode::dim_mismatch,
            "parameter vector length does not match the architecture");
    Eigen::Index k = 0;
    for (auto& l : layers) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
      l.bias = flat.segment(k, l.bias.size());
      k += l.bias.size();
    }
  }

  Mlp zeros_like() const {
    Mlp z = *this;
    for (auto& l : z.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (const auto& l : layers)
      out.layers.push_back({l.weight.template cast<Other>(),
                            l.bias.template cast<Other>(), l.activation});
    return out;
  }

  void validate() const {
    require(!layers.empty(), ErrorCode::invalid_input, "MLP has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      require(layers[i].bias.size() == layers[i].weight.rows(), ErrorCode::dim_mismatch,
              "MLP layer bias length differs from its output width");
      if (i > 0)
        require(layers[i].weight.cols() == layers[i - 1].weight.rows(),
                ErrorCode::dim_mismatch, "consecutive MLP layer widths disagree");
    }
  }
};

using MlpParams = Mlp<double>;

/// Layer widths {in, h1, ..., out}: relu on hidden layers, identity on the
/// last. Weights and biases uniform in +-1/sqrt(fan_in).
MlpParams make_mlp(const std::vector<int>& widths, CounterRng& rng);
/// Same, with one activation per layer.
MlpParams make_mlp(const std::vector<int>& widths,
                   const std::vector<Activation>& activations, CounterRng& rng);

template <typename Scalar>
Scalar apply_activation(Activation a, Scalar z) {
  return a == Activation::relu ? (z > Scalar(0) ? z : Scalar(0)) : z;
}

template <typename Scalar>
Vector<Scalar> forward(const Mlp<Scalar>& params,
                       const Eigen::Ref<const Vector<Scalar>>& x) {
  require(x.size() == params.input_dim(), ErrorCode::dim_mismatch,
          "forward: input width " + std::to_string(x.size()) + " != " +
              std::to_string(params.input_dim()));
  Vector<Scalar> h = x;
  for (const auto& l : params.layers) {
    h = l.weight * h + l.bias;
    if (l.activation == Activation::relu) h = h.cwiseMax(Scalar(0));
  }
  return h;
}

/// Activations kept for the backward pass. inputs[i] feeds layer i;
/// pre[i] is its pre-activation.
template <typename Scalar>
struct ForwardTrace {
  std::vector<Vector<Scalar>> inputs;
  std::vector<Vector<Scalar>> pre;
  Vector<Scalar> output;
};

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Mlp<Scalar>& params,
                                   const Eigen::Ref<const Vector<Scalar>>& x) {
  require(x.size() == params.input_dim(), ErrorCode::dim_mismatch,
          "forward: input dimension mismatch");
  ForwardTrace<Scalar> t;
  Vector<Scalar> h = x;
  for (const auto& l : params.layers) {
    t.inputs.push_back(h);
    Vector<Scalar> z = l.weight * h + l.bias;
    h = l.activation == Activation::relu ? Vector<Scalar>(z.cwiseMax(Scalar(0))) : z;
    t.pre.push_back(std::move(z));
  }
  t.output = std::move(h);
  return t;
}

/// grads += scale * d(output . d_out)/d(params).
template <typename Scalar>
void backward(const Mlp<Scalar>& params, const ForwardTrace<Scalar>& trace,
              Vector<Scalar> d_out, Mlp<Scalar>& grads, Scalar scale = Scalar(1)) {
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    const auto& l = params.layers[i];
    if (l.activation == Activation::relu)
      d_out = (trace.pre[i].array() > Scalar(0)).select(d_out, Scalar(0));
    grads.layers[i].weight.noalias() += scale * d_out * trace.inputs[i].transpose();
    grads.layers[i].bias += scale * d_out;
    if (i > 0) d_out = l.weight.transpose() * d_out;
  }
}

// --- objectives --------------------------------------------------------------

template <typename Scalar>
struct ScalarLoss {
  Scalar loss;
  Scalar grad;
};

template <typename Scalar>
struct VectorLoss {
  Scalar loss;
  Vector<Scalar> grad;
};

inline constexpr double kHscEpsilon = 1e-9;
inline constexpr double kDeepSadEpsilon = 1e-6;

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

/// Binary cross-entropy on a logit, label 1 = anomalous (OE).
template <typename Scalar>
ScalarLoss<Scalar> bce_loss_grad(Scalar logit, int label) {
  const Scalar y = label ? Scalar(1) : Scalar(0);
  const Scalar loss = std::max(logit, Scalar(0)) - logit * y +
                      std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - y};
}

/// sqrt(|phi|^2 + 1) - 1, written to avoid cancellation near the origin.
template <typename Scalar>
Scalar pseudo_huber_radius(const Eigen::Ref<const Vector<Scalar>>& phi) {
  const Scalar sq = phi.squaredNorm();
  return sq / (std::sqrt(sq + Scalar(1)) + Scalar(1));
}

/// Hypersphere classification: s for normals, -log(1 - exp(-max(s, eps)))
/// for anomalies.
template <typename Scalar>
VectorLoss<Scalar> hsc_loss_grad(const Eigen::Ref<const Vector<Scalar>>& phi,
                                 int label) {
  const Scalar s = pseudo_huber_radius<Scalar>(phi);
  const Vector<Scalar> ds = phi / std::sqrt(phi.squaredNorm() + Scalar(1));
  if (!label) return {s, ds};
  const Scalar eps = Scalar(kHscEpsilon);
  if (s < eps) return {-std::log(-std::expm1(-eps)), Vector<Scalar>::Zero(phi.size())};
  return {-std::log(-std::expm1(-s)), ds * (Scalar(-1) / std::expm1(s))};
}

/// DeepSAD: |phi - c|^2 for normals, 1 / max(|phi - c|^2, eps) for anomalies.
template <typename Scalar>
VectorLoss<Scalar> deepsad_loss_grad(const Eigen::Ref<const Vector<Scalar>>& phi,
                                     const Eigen::Ref<const Vector<Scalar>>& center,
                                     int label) {
  require(phi.size() == center.size(), ErrorCode::dim_mismatch,
          "deepsad: embedding and center dimensions differ");
  const Vector<Scalar> diff = phi - center;
  const Scalar d2 = diff.squaredNorm();
  if (!label) return {d2, Scalar(2) * diff};
  const Scalar eps = Scalar(kDeepSadEpsilon);
  if (d2 < eps) return {Scalar(1) / eps, Vector<Scalar>::Zero(phi.size())};
  return {Scalar(1) / d2, Scalar(-2) * diff / (d2 * d2)};
}

template <typename Scalar>
VectorLoss<Scalar> compactness_loss_grad(const Eigen::Ref<const Vector<Scalar>>& phi,
                                         const Eigen::Ref<const Vector<Scalar>>& center) {
  require(phi.size() == center.size(), ErrorCode::dim_mismatch,
          "compactness: embedding and center dimensions differ");
  const Vector<Scalar> diff = phi - center;
  return {diff.squaredNorm(), Scalar(2) * diff};
}

template <typename Scalar>
struct ModelLoss {
  Scalar loss;
  Mlp<Scalar> grads;
};

/// (1/D) |decode(encode(x)) - x|^2 with gradients for every layer.
template <typename Scalar>
ModelLoss<Scalar> autoencoder_loss_grad(const Mlp<Scalar>& params,
                                        const Eigen::Ref<const Vector<Scalar>>& x) {
  require(params.output_dim() == x.size(), ErrorCode::dim_mismatch,
          "autoencoder output width must equal input width");
  const auto trace = forward_trace(params, x);
  const Vector<Scalar> diff = trace.output - x;
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(x.size());
  ModelLoss<Scalar> out{diff.squaredNorm() * inv_d, params.zeros_like()};
  backward(params, trace, Vector<Scalar>(Scalar(2) * inv_d * diff), out.grads);
  return out;
}

/// Loss of one sample under `objective`, accumulating scale * gradient into
/// `grads` when given. `center` is required for deepsad and compactness.
template <typename Scalar>
Scalar sample_loss_grad(const Mlp<Scalar>& params, Objective objective,
                        const Eigen::Ref<const Vector<Scalar>>& x, int label,
                        const Vector<Scalar>* center, Mlp<Scalar>* grads,
                        Scalar scale = Scalar(1)) {
  if (objective == Objective::autoencoder) {
    auto r = autoencoder_loss_grad(params, x);
    if (grads)
      for (std::size_t i = 0; i < grads->layers.size(); ++i) {
        grads->layers[i].weight += scale * r.grads.layers[i].weight;
        grads->layers[i].bias += scale * r.grads.layers[i].bias;
      }
    return r.loss;
  }
  if (uses_center(objective))
    require(center != nullptr, ErrorCode::invalid_input,
            std::string(to_string(objective)) + " objective needs a center");
  const auto trace = forward_trace(params, x);
  Scalar loss{};
  Vector<Scalar> d_out;
  switch (objective) {
    case Objective::bce: {
      require(trace.output.size() == 1, ErrorCode::dim_mismatch,
              "bce objective needs a width-1 head");
      const auto r = bce_loss_grad(trace.output[0], label);
      loss = r.loss;
      d_out = Vector<Scalar>::Constant(1, r.grad);
      break;
    }
    case Objective::hsc: {
      auto r = hsc_loss_grad<Scalar>(trace.output, label);
      loss = r.loss;
      d_out = std::move(r.grad);
      break;
    }
    case Objective::deepsad: {
      auto r = deepsad_loss_grad<Scalar>(trace.output, *center, label);
      loss = r.loss;
      d_out = std::move(r.grad);
      break;
    }
    case Objective::compactness: {
      auto r = compactness_loss_grad<Scalar>(trace.output, *center);
      loss = r.loss;
      d_out = std::move(r.grad);
      break;
    }
    case Objective::autoencoder:
      break;
  }
  if (grads) backward(params, trace, std::move(d_out), *grads, scale);
  return loss;
}

// --- optimizer -----------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::optional<double> grad_clip_norm;
};

struct SgdState {
  Eigen::VectorXd velocity;
};

/// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v.
/// g is first rescaled to grad_clip_norm when its L2 norm exceeds it.
/// Non-finite gradients throw ErrorCode::numeric.
void sgd_step(Eigen::Ref<Eigen::VectorXd> weights, Eigen::VectorXd grad,
              SgdState& state, const SgdConfig& config);
void sgd_step(MlpParams& params, const MlpParams& grads, SgdState& state,
              const SgdConfig& config);

// --- gradient verification -----------------------------------------------------

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  bool passed = false;
};

/// Central differences with step h. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
FiniteDiffReport finite_diff_check(
    const Eigen::VectorXd& params,
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const Eigen::VectorXd& analytic, double tolerance, double h = 1e-5,
    double abs_floor = 1e-7);

/// True when some relu pre-activation for input x lies within `margin` of
/// zero, where central differences straddle the kink.
bool near_relu_kink(const MlpParams& params, const Eigen::VectorXd& x,
                    double margin);

// --- training --------------------------------------------------------------------

struct TrainConfig {
  Objective objective = Objective::bce;
  double learning_rate = 5e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int steps = 10000;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 0;
  int hidden_width = 128;
  int embedding_dim = 32;
  /// Autoencoder code width; 0 selects max(1, D / 4).
  int bottleneck_dim = 0;
  double near_fraction_of_oe = 0.5;

  /// SGD with momentum 0.9, lr 5e-4, wd 1e-4, batch 32.
  static TrainConfig outlier_exposure(Objective objective = Objective::bce);
  /// SGD, lr 1e-2, batch 32, gradient norm clipped to 1e-3.
  static TrainConfig one_class();
  /// Objective-appropriate defaults.
  static TrainConfig defaults_for(Objective objective);

  SgdConfig sgd() const {
    return {learning_rate, momentum, weight_decay, grad_clip_norm};
  }
  void validate() const;
};

/// Architecture used by `train` for a given objective and input width:
/// classifier D-h-1, metric heads D-h-E, autoencoder D-h-b-h-D with a
/// linear code layer.
std::vector<int> default_widths(const TrainConfig& config, int input_dim);
MlpParams init_params(const TrainConfig& config, int input_dim, CounterRng& rng);

/// A trained scorer: head parameters plus the frozen center for
/// center-based objectives.
struct AnomalyModel {
  Objective objective = Objective::bce;
  MlpParams params;
  Eigen::VectorXd center;
  TrainConfig config;
};

struct TrainResult {
  AnomalyModel model;
  std::vector<double> loss_trace;
};

struct TrainingPools {
  const FeatureMatrix* normal = nullptr;
  const FeatureMatrix* near_oe = nullptr;
  const FeatureMatrix* far_oe = nullptr;
};

/// Mean embedding of `rows` under `params`.
Eigen::VectorXd mean_embedding(const MlpParams& params, const FeatureMatrix& rows);

/// Mean loss and gradient over a batch; per-sample contributions are summed
/// in row order.
double batch_loss_grad(const AnomalyModel& model, const FeatureMatrix& batch,
                       MlpParams& grads);

/// Runs config.steps SGD steps. OE objectives draw balanced normal/near/far
/// batches; compactness and autoencoder draw normal rows only. Deterministic
/// in config.seed. A non-finite loss throws ErrorCode::numeric.
TrainResult train(const TrainingPools& pools, const TrainConfig& config);

/// Larger = more anomalous: sigmoid(logit) for bce, the pseudo-Huber radius
/// for hsc, squared center distance for deepsad/compactness, reconstruction
/// error for the autoencoder.
double anomaly_score(const AnomalyModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Checkpoint: "HADC", u64 header length, JSON header (architecture,
/// objective, config, seed), then the float64 little-endian parameter blob in
/// layer order (weights row-major, then bias) followed by the center.
void save_checkpoint(const AnomalyModel& model, const std::string& path);
AnomalyModel load_checkpoint(const std::string& path);

}  // namespace histoad
