#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "keyforge/dataset.hpp"

namespace keyforge {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpConfig {
  /// Hidden widths; the output layer (one unit per class) is appended.
  std::vector<int> hidden = {512, 256, 144};
  /// Batch normalization after hidden layer i (before the relu).
  std::vector<bool> batch_norm = {true, true, false};
  /// Dropout on the input of the output layer. Training mode only.
  double dropout = 0.2;
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = kDefaultSeed;
};

struct DenseLayer {
  RowMatrix weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;  // empty when followed by batch norm
};

struct BatchNorm {
  Eigen::RowVectorXd gamma;
  Eigen::RowVectorXd beta;
  Eigen::RowVectorXd running_mean;
  Eigen::RowVectorXd running_var;
};

struct MlpModel {
  MlpConfig config;
  std::size_t n_inputs = 0;
  std::size_t n_classes = 0;
  std::vector<DenseLayer> layers;
  std::vector<std::optional<BatchNorm>> norms;  // one slot per layer
  std::vector<double> loss_history;  // mean training loss per epoch
};

/// Same shapes as the trainable parameters of an MlpModel.
struct MlpGradients {
  std::vector<RowMatrix> weight;
  std::vector<Eigen::RowVectorXd> bias;
  std::vector<Eigen::RowVectorXd> gamma;
  std::vector<Eigen::RowVectorXd> beta;
};

/// Freshly initialized network (He-normal weights, zero biases, unit gamma).
MlpModel mlp_init(std::size_t n_inputs, std::size_t n_classes, const MlpConfig& cfg);

/// Mean cross-entropy of a batch in training mode (batch statistics) and its
/// gradient. `dropout_mask`, when given, holds the already-scaled keep mask
/// for the output layer's input; without it no dropout is applied.
double mlp_loss_and_gradients(const MlpModel& model, const RowMatrix& x, std::span<const int> y,
                              MlpGradients* grads, const RowMatrix* dropout_mask = nullptr);

/// Flattened view of every trainable parameter, in a fixed order.
std::vector<double> mlp_parameters(const MlpModel& model);
void mlp_set_parameters(MlpModel& model, std::span<const double> values);
std::vector<double> flatten(const MlpGradients& grads);

using EpochCallback = std::function<void(int, double)>;

/// Minibatch Adam on cross-entropy. Inputs are expected to be standardized.
MlpModel mlp_fit(const LabeledMatrix& train, const MlpConfig& cfg, const EpochCallback& on_epoch = {});

/// Inference mode: batch norm uses running statistics, no dropout.
Eigen::MatrixXd mlp_predict(const MlpModel& model, const Eigen::MatrixXd& x);

}  // namespace keyforge
