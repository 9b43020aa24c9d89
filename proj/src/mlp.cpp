#include "keyforge/mlp.hpp"

#include <cmath>
#include <numeric>

#include "keyforge/error.hpp"
#include "keyforge/random.hpp"

namespace keyforge {

namespace {

struct LayerCache {
  RowMatrix input;  // activation fed into the layer (after dropout, if any)
  RowMatrix pre;  // output after the optional batch norm, before relu
  RowMatrix normalized;  // x-hat of batch norm
  Eigen::RowVectorXd inv_std;
  Eigen::RowVectorXd batch_mean;
  Eigen::RowVectorXd batch_var;
};

void softmax_inplace(RowMatrix& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - peak).exp();
    logits.row(r) /= logits.row(r).sum();
  }
}

// Training-mode forward pass. Returns class probabilities.
RowMatrix forward_train(const MlpModel& model, const RowMatrix& x, const RowMatrix* dropout_mask,
                        std::vector<LayerCache>& caches) {
  const std::size_t n_layers = model.layers.size();
  caches.resize(n_layers);
  RowMatrix activation = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    LayerCache& cache = caches[l];
    if (l + 1 == n_layers && dropout_mask) activation = activation.cwiseProduct(*dropout_mask);
    cache.input = activation;
    RowMatrix z = activation * model.layers[l].weight;
    if (model.layers[l].bias.size()) z.rowwise() += model.layers[l].bias;
    if (const auto& bn = model.norms[l]) {
      const double batch = static_cast<double>(z.rows());
      cache.batch_mean = z.colwise().mean();
      z.rowwise() -= cache.batch_mean;
      cache.batch_var = z.array().square().colwise().sum() / batch;
      cache.inv_std = (cache.batch_var.array() + model.config.bn_epsilon).rsqrt();
      cache.normalized = z.array().rowwise() * cache.inv_std.array();
      z = (cache.normalized.array().rowwise() * bn->gamma.array()).rowwise() + bn->beta.array();
    }
    cache.pre = z;
    if (l + 1 < n_layers) {
      activation = z.cwiseMax(0.0);
    } else {
      activation = std::move(z);
    }
  }
  softmax_inplace(activation);
  return activation;
}

template <typename Matrix>
void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, const MlpConfig& cfg, double correction1,
               double correction2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  param.array() -= cfg.learning_rate * (m.array() / correction1) /
                   ((v.array() / correction2).sqrt() + cfg.epsilon);
}

MlpGradients zeros_like(const MlpModel& model) {
  MlpGradients g;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    g.weight.push_back(RowMatrix::Zero(model.layers[l].weight.rows(), model.layers[l].weight.cols()));
    g.bias.push_back(Eigen::RowVectorXd::Zero(model.layers[l].bias.size()));
    const auto width = model.norms[l] ? model.norms[l]->gamma.size() : 0;
    g.gamma.push_back(Eigen::RowVectorXd::Zero(width));
    g.beta.push_back(Eigen::RowVectorXd::Zero(width));
  }
  return g;
}

}  // namespace

MlpModel mlp_init(std::size_t n_inputs, std::size_t n_classes, const MlpConfig& cfg) {
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (n_classes < 2) throw ConfigError("MLP needs at least 2 classes");
  for (int w : cfg.hidden) {
    if (w < 1) throw ConfigError("hidden widths must be >= 1");
  }
  MlpModel model;
  model.config = cfg;
  model.n_inputs = n_inputs;
  model.n_classes = n_classes;

  std::vector<int> widths(cfg.hidden);
  widths.push_back(static_cast<int>(n_classes));
  Rng rng(derive_seed(cfg.seed, 0));
  auto fan_in = static_cast<Eigen::Index>(n_inputs);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const bool norm = l < cfg.batch_norm.size() && cfg.batch_norm[l] && l + 1 < widths.size();
    DenseLayer layer;
    layer.weight.resize(fan_in, widths[l]);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.normal(0.0, scale);
    if (!norm) layer.bias = Eigen::RowVectorXd::Zero(widths[l]);
    model.layers.push_back(std::move(layer));
    if (norm) {
      BatchNorm bn;
      bn.gamma = Eigen::RowVectorXd::Ones(widths[l]);
      bn.beta = Eigen::RowVectorXd::Zero(widths[l]);
      bn.running_mean = Eigen::RowVectorXd::Zero(widths[l]);
      bn.running_var = Eigen::RowVectorXd::Ones(widths[l]);
      model.norms.emplace_back(std::move(bn));
    } else {
      model.norms.emplace_back(std::nullopt);
    }
    fan_in = widths[l];
  }
  return model;
}

namespace {

double loss_and_gradients(const MlpModel& model, const RowMatrix& x, std::span<const int> y, MlpGradients* grads,
                          const RowMatrix* dropout_mask, std::vector<LayerCache>& caches) {
  const RowMatrix proba = forward_train(model, x, dropout_mask, caches);
  const auto batch = x.rows();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) loss -= std::log(std::max(proba(i, y[i]), 1e-300));
  loss /= static_cast<double>(batch);
  if (!grads) return loss;

  *grads = zeros_like(model);
  RowMatrix delta = proba;  // d loss / d pre of the current layer
  for (Eigen::Index i = 0; i < batch; ++i) delta(i, y[i]) -= 1.0;
  delta /= static_cast<double>(batch);

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const LayerCache& cache = caches[l];
    if (l + 1 < model.layers.size()) delta = delta.cwiseProduct((cache.pre.array() > 0.0).cast<double>().matrix());
    if (const auto& bn = model.norms[l]) {
      grads->gamma[l] = delta.cwiseProduct(cache.normalized).colwise().sum();
      grads->beta[l] = delta.colwise().sum();
      const RowMatrix dxhat = delta.array().rowwise() * bn->gamma.array();
      const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
      const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(cache.normalized).colwise().sum();
      const double n = static_cast<double>(batch);
      RowMatrix dz = (n * dxhat).rowwise() - sum_dxhat;
      dz -= (cache.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      delta = (dz.array().rowwise() * (cache.inv_std.array() / n)).matrix();
    } else {
      grads->bias[l] = delta.colwise().sum();
    }
    grads->weight[l] = cache.input.transpose() * delta;
    if (l > 0) {
      delta = delta * model.layers[l].weight.transpose();
      if (l + 1 == model.layers.size() && dropout_mask) delta = delta.cwiseProduct(*dropout_mask);
    }
  }
  return loss;
}

}  // namespace

double mlp_loss_and_gradients(const MlpModel& model, const RowMatrix& x, std::span<const int> y,
                              MlpGradients* grads, const RowMatrix* dropout_mask) {
  std::vector<LayerCache> caches;
  return loss_and_gradients(model, x, y, grads, dropout_mask, caches);
}

std::vector<double> mlp_parameters(const MlpModel& model) {
  std::vector<double> out;
  const auto append = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    append(model.layers[l].weight);
    append(model.layers[l].bias);
    if (model.norms[l]) {
      append(model.norms[l]->gamma);
      append(model.norms[l]->beta);
    }
  }
  return out;
}

void mlp_set_parameters(MlpModel& model, std::span<const double> values) {
  std::size_t offset = 0;
  const auto assign = [&](auto& m) {
    if (offset + static_cast<std::size_t>(m.size()) > values.size()) throw ShapeError("parameter vector too short");
    std::copy_n(values.data() + offset, m.size(), m.data());
    offset += static_cast<std::size_t>(m.size());
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    assign(model.layers[l].weight);
    assign(model.layers[l].bias);
    if (model.norms[l]) {
      assign(model.norms[l]->gamma);
      assign(model.norms[l]->beta);
    }
  }
  if (offset != values.size()) throw ShapeError("parameter vector too long");
}

std::vector<double> flatten(const MlpGradients& grads) {
  std::vector<double> out;
  const auto append = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  for (std::size_t l = 0; l < grads.weight.size(); ++l) {
    append(grads.weight[l]);
    append(grads.bias[l]);
    append(grads.gamma[l]);
    append(grads.beta[l]);
  }
  return out;
}

MlpModel mlp_fit(const LabeledMatrix& train, const MlpConfig& cfg, const EpochCallback& on_epoch) {
  if (train.rows() == 0) throw TrainingError("MLP needs a non-empty training set");
  MlpModel model = mlp_init(train.cols(), train.n_classes(), cfg);
  const RowMatrix x = train.x;
  const auto n = static_cast<std::size_t>(x.rows());

  MlpGradients m = zeros_like(model);
  MlpGradients v = zeros_like(model);
  MlpGradients g;
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long long step = 0;
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  const double keep = 1.0 - cfg.dropout;
  std::vector<LayerCache> caches;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
      const std::size_t end = std::min(n, begin + batch_size);
      // A single-row batch has no batch statistics; fold it into the epoch's
      // next shuffle instead.
      if (end - begin < 2 && n >= 2) continue;
      RowMatrix xb(static_cast<Eigen::Index>(end - begin), x.cols());
      std::vector<int> yb(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(order[i]));
        yb[i - begin] = train.y[order[i]];
      }
      RowMatrix mask;
      if (cfg.dropout > 0.0) {
        const auto& last = model.layers.back().weight;
        mask.resize(xb.rows(), last.rows());
        for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
      }
      const double loss = loss_and_gradients(model, xb, yb, &g, cfg.dropout > 0.0 ? &mask : nullptr, caches);
      if (!std::isfinite(loss)) throw TrainingError("training loss diverged in epoch " + std::to_string(epoch));
      epoch_loss += loss;
      ++batches;

      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        if (!model.norms[l]) continue;
        auto& bn = *model.norms[l];
        const double rows = static_cast<double>(xb.rows());
        const Eigen::RowVectorXd unbiased = caches[l].batch_var * (rows / (rows - 1.0));
        bn.running_mean = (1.0 - cfg.bn_momentum) * bn.running_mean + cfg.bn_momentum * caches[l].batch_mean;
        bn.running_var = (1.0 - cfg.bn_momentum) * bn.running_var + cfg.bn_momentum * unbiased;
      }

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        adam_step(model.layers[l].weight, g.weight[l], m.weight[l], v.weight[l], cfg, c1, c2);
        if (model.layers[l].bias.size()) adam_step(model.layers[l].bias, g.bias[l], m.bias[l], v.bias[l], cfg, c1, c2);
        if (model.norms[l]) {
          adam_step(model.norms[l]->gamma, g.gamma[l], m.gamma[l], v.gamma[l], cfg, c1, c2);
          adam_step(model.norms[l]->beta, g.beta[l], m.beta[l], v.beta[l], cfg, c1, c2);
        }
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1));
    if (!std::isfinite(mean_loss)) throw TrainingError("training loss diverged in epoch " + std::to_string(epoch));
    model.loss_history.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return model;
}

Eigen::MatrixXd mlp_predict(const MlpModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.n_inputs) {
    throw ShapeError("query has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.n_inputs));
  }
  RowMatrix activation = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    RowMatrix z = activation * model.layers[l].weight;
    if (model.layers[l].bias.size()) z.rowwise() += model.layers[l].bias;
    if (const auto& bn = model.norms[l]) {
      const Eigen::RowVectorXd scale =
          bn->gamma.array() * (bn->running_var.array() + model.config.bn_epsilon).rsqrt();
      z = ((z.rowwise() - bn->running_mean).array().rowwise() * scale.array()).rowwise() + bn->beta.array();
    }
    activation = l + 1 < model.layers.size() ? RowMatrix(z.cwiseMax(0.0)) : z;
  }
  softmax_inplace(activation);
  return activation;
}

}  // namespace keyforge
