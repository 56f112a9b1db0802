#include "histoad/models.hpp"

#include <algorithm>

namespace histoad {

const char* to_string(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

const char* to_string(Objective o) {
  switch (o) {
    case Objective::bce: return "bce";
    case Objective::hsc: return "hsc";
    case Objective::deepsad: return "deepsad";
    case Objective::compactness: return "compactness";
    case Objective::autoencoder: return "autoencoder";
  }
  return "bce";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  fail(ErrorCode::config, "unknown activation '" + s + "'");
}

Objective parse_objective(const std::string& s) {
  if (s == "bce") return Objective::bce;
  if (s == "hsc") return Objective::hsc;
  if (s == "deepsad") return Objective::deepsad;
  if (s == "compactness") return Objective::compactness;
  if (s == "autoencoder") return Objective::autoencoder;
  fail(ErrorCode::config, "unknown objective '" + s +
                              "' (expected bce|hsc|deepsad|compactness|autoencoder)");
}

MlpParams make_mlp(const std::vector<int>& widths,
                   const std::vector<Activation>& activations, CounterRng& rng) {
  require(widths.size() >= 2 && activations.size() == widths.size() - 1,
          ErrorCode::config, "make_mlp: need n+1 widths for n activations");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int in = widths[i];
    const int out = widths[i + 1];
    require(in >= 1 && out >= 1, ErrorCode::config, "make_mlp: widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer<double> layer;
    layer.weight.resize(out, in);
    layer.bias.resize(out);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) layer.bias[r] = rng.uniform(-bound, bound);
    layer.activation = activations[i];
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams make_mlp(const std::vector<int>& widths, CounterRng& rng) {
  std::vector<Activation> acts(widths.size() - 1, Activation::relu);
  acts.back() = Activation::identity;
  return make_mlp(widths, acts, rng);
}

// --- optimizer -----------------------------------------------------------------

void sgd_step(Eigen::Ref<Eigen::VectorXd> weights, Eigen::VectorXd grad,
              SgdState& state, const SgdConfig& config) {
  require(grad.size() == weights.size(), ErrorCode::dim_mismatch,
          "sgd_step: gradient and weight shapes differ");
  require(grad.allFinite(), ErrorCode::numeric, "sgd_step: non-finite gradient");
  if (config.grad_clip_norm) {
    const double norm = grad.norm();
    if (norm > *config.grad_clip_norm) grad *= *config.grad_clip_norm / norm;
  }
  if (state.velocity.size() != weights.size())
    state.velocity = Eigen::VectorXd::Zero(weights.size());
  state.velocity = config.momentum * state.velocity + grad + config.weight_decay * weights;
  weights -= config.learning_rate * state.velocity;
}

void sgd_step(MlpParams& params, const MlpParams& grads, SgdState& state,
              const SgdConfig& config) {
  Eigen::VectorXd w = params.flatten();
  sgd_step(w, grads.flatten(), state, config);
  params.assign(w);
}

// --- gradient verification -----------------------------------------------------

FiniteDiffReport finite_diff_check(
    const Eigen::VectorXd& params,
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const Eigen::VectorXd& analytic, double tolerance, double h, double abs_floor) {
  require(analytic.size() == params.size(), ErrorCode::dim_mismatch,
          "finite_diff_check: gradient length differs from parameter count");
  FiniteDiffReport report;
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + h;
    const double up = loss(probe);
    probe[i] = params[i] - h;
    const double down = loss(probe);
    probe[i] = params[i];
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (!(rel <= report.max_relative_error)) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

bool near_relu_kink(const MlpParams& params, const Eigen::VectorXd& x, double margin) {
  const auto trace = forward_trace<double>(params, x);
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    if (params.layers[i].activation == Activation::relu &&
        (trace.pre[i].array().abs() < margin).any())
      return true;
  return false;
}

// --- training --------------------------------------------------------------------

TrainConfig TrainConfig::outlier_exposure(Objective objective) {
  TrainConfig c;
  c.objective = objective;
  c.learning_rate = 5e-4;
  c.momentum = 0.9;
  c.weight_decay = 1e-4;
  c.batch_size = 32;
  return c;
}

TrainConfig TrainConfig::one_class() {
  TrainConfig c;
  c.objective = Objective::compactness;
  c.learning_rate = 1e-2;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.batch_size = 32;
  c.grad_clip_norm = 1e-3;
  return c;
}

TrainConfig TrainConfig::defaults_for(Objective objective) {
  if (objective == Objective::compactness) return one_class();
  if (objective == Objective::autoencoder) {
    TrainConfig c = outlier_exposure(Objective::autoencoder);
    c.learning_rate = 1e-2;
    c.weight_decay = 0.0;
    return c;
  }
  return outlier_exposure(objective);
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::config, "learning_rate must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::config,
          "momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::config, "weight_decay must be >= 0");
  require(steps >= 0, ErrorCode::config, "steps must be >= 0");
  require(batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  if (uses_outlier_exposure(objective))
    require(batch_size % 4 == 0, ErrorCode::config,
            "outlier-exposure batch_size must be a multiple of 4");
  require(!grad_clip_norm || *grad_clip_norm > 0.0, ErrorCode::config,
          "grad_clip_norm must be > 0 when set");
  require(hidden_width >= 1 && embedding_dim >= 1 && bottleneck_dim >= 0,
          ErrorCode::config, "layer widths must be positive");
}

std::vector<int> default_widths(const TrainConfig& config, int input_dim) {
  const int h = config.hidden_width;
  switch (config.objective) {
    case Objective::bce:
      return {input_dim, h, 1};
    case Objective::hsc:
    case Objective::deepsad:
    case Objective::compactness:
      return {input_dim, h, config.embedding_dim};
    case Objective::autoencoder: {
      const int b = config.bottleneck_dim > 0 ? config.bottleneck_dim
                                              : std::max(1, input_dim / 4);
      return {input_dim, h, b, h, input_dim};
    }
  }
  return {input_dim, h, 1};
}

MlpParams init_params(const TrainConfig& config, int input_dim, CounterRng& rng) {
  const auto widths = default_widths(config, input_dim);
  if (config.objective == Objective::autoencoder)
    return make_mlp(widths,
                    {Activation::relu, Activation::identity, Activation::relu,
                     Activation::identity},
                    rng);
  return make_mlp(widths, rng);
}

Eigen::VectorXd mean_embedding(const MlpParams& params, const FeatureMatrix& rows) {
  require(!rows.empty(), ErrorCode::invalid_input, "mean_embedding: no rows");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(params.output_dim());
  for (Eigen::Index i = 0; i < rows.rows.rows(); ++i)
    sum += forward<double>(params, rows.rows.row(i).cast<double>().transpose());
  return sum / static_cast<double>(rows.size());
}

double batch_loss_grad(const AnomalyModel& model, const FeatureMatrix& batch,
                       MlpParams& grads) {
  require(!batch.empty(), ErrorCode::invalid_input, "empty training batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  const Eigen::VectorXd* center = uses_center(model.objective) ? &model.center : nullptr;
  double total = 0.0;
  Eigen::VectorXd x(batch.dim());
  for (Eigen::Index i = 0; i < batch.rows.rows(); ++i) {
    x = batch.rows.row(i).cast<double>().transpose();
    const int label = batch.meta[static_cast<std::size_t>(i)].label == Label::anomalous;
    total += sample_loss_grad<double>(model.params, model.objective, x, label, center,
                                      &grads, scale);
  }
  return total * scale;
}

namespace {

FeatureMatrix sample_normals(const FeatureMatrix& pool, int count, CounterRng& rng) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(count));
  for (auto& i : idx) i = rng.uniform_index(pool.size());
  FeatureMatrix batch = pool.select(idx);
  for (auto& m : batch.meta) m.label = Label::normal;
  return batch;
}

}  // namespace

TrainResult train(const TrainingPools& pools, const TrainConfig& config) {
  config.validate();
  require(pools.normal != nullptr && !pools.normal->empty(), ErrorCode::config,
          "training needs a nonempty normal pool");
  const bool oe = uses_outlier_exposure(config.objective);
  if (oe)
    require(pools.near_oe && pools.far_oe && !pools.near_oe->empty() &&
                !pools.far_oe->empty(),
            ErrorCode::config,
            std::string(to_string(config.objective)) +
                " training needs nonempty near and far OE pools");

  const CounterRng root(config.seed);
  CounterRng init_rng = root.split(1);
  CounterRng batch_rng = root.split(2);

  TrainResult result;
  AnomalyModel& model = result.model;
  model.objective = config.objective;
  model.config = config;
  model.params = init_params(config, pools.normal->dim(), init_rng);
  if (uses_center(config.objective))
    model.center = mean_embedding(model.params, *pools.normal);

  const OeSamplerConfig sampler{config.batch_size, 0.5, config.near_fraction_of_oe};
  const SgdConfig sgd = config.sgd();
  SgdState state;
  result.loss_trace.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const FeatureMatrix batch =
        oe ? sample_batch(*pools.normal, *pools.near_oe, *pools.far_oe, sampler, batch_rng)
           : sample_normals(*pools.normal, config.batch_size, batch_rng);
    MlpParams grads = model.params.zeros_like();
    const double loss = batch_loss_grad(model, batch, grads);
    require(std::isfinite(loss), ErrorCode::numeric,
            "training diverged: non-finite loss at step " + std::to_string(step));
    result.loss_trace.push_back(loss);
    sgd_step(model.params, grads, state, sgd);
  }
  return result;
}

double anomaly_score(const AnomalyModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  switch (model.objective) {
    case Objective::bce: {
      const Eigen::VectorXd out = forward<double>(model.params, x);
      require(out.size() == 1, ErrorCode::dim_mismatch, "classifier head must have width 1");
      return sigmoid(out[0]);
    }
    case Objective::hsc:
      return pseudo_huber_radius<double>(forward<double>(model.params, x));
    case Objective::deepsad:
    case Objective::compactness:
      return (forward<double>(model.params, x) - model.center).squaredNorm();
    case Objective::autoencoder:
      return (forward<double>(model.params, x) - x).squaredNorm() /
             static_cast<double>(x.size());
  }
  return 0.0;
}

}  // namespace histoad
