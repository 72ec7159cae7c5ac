#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "zsecg/types.hpp"

namespace zsecg::cnn {

// Fixed 1-D convolutional classifier over beat pairs.
//
// Input layout: one column per sample, 256 rows; rows 0..127 hold the
// single-beat window, rows 128..255 the beat-trio window. Labels are
// 0 = Normal, 1 = Abnormal.
//
// Topology (length chain 128 -> 122 -> 40 -> 34 -> 11 -> 5 -> 1):
//   conv(2->32, k=7) -> maxpool(w=3, s=3) -> tanh
//   conv(32->16, k=7) -> maxpool -> tanh
//   conv(16->16, k=7) -> maxpool -> tanh
//   flatten(16) -> dense(32) -> relu -> dense(2) -> log-softmax

inline constexpr int kCnnInputLength = kBeatLength;
inline constexpr int kCnnInChannels = 2;
inline constexpr int kCnnKernel = 7;
inline constexpr int kCnnPoolWidth = 3;
inline constexpr int kCnnChannels1 = 32;
inline constexpr int kCnnChannels2 = 16;
inline constexpr int kCnnChannels3 = 16;
inline constexpr int kCnnHidden = 32;
inline constexpr int kCnnClasses = 2;

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  Eigen::MatrixXd weight;  // out_channels x (in_channels * kernel)
  Eigen::VectorXd bias;    // out_channels
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct CnnModel {
  ConvLayer conv1, conv2, conv3;
  DenseLayer fc1, fc2;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, drawn row-major in
  // the fixed order conv1.w, conv1.b, ..., fc2.w, fc2.b from one generator.
  static CnnModel init(std::uint64_t seed);
};

// Parameter-shaped gradient container.
struct CnnGradients {
  ConvLayer conv1, conv2, conv3;
  DenseLayer fc1, fc2;
};

// Log class probabilities, kCnnClasses x batch. Inputs must have 256 rows.
Eigen::MatrixXd cnn_log_probs(const CnnModel& model, const Eigen::MatrixXd& inputs);

// Mean negative log likelihood over the batch; fills parameter gradients of
// that mean when grads is non-null.
double cnn_loss_and_gradients(const CnnModel& model, const Eigen::MatrixXd& inputs,
                              const std::vector<int>& labels, CnnGradients* grads);

struct CnnDecision {
  Verdict verdict = Verdict::Normal;
  double confidence = 0.0;  // max softmax probability, in [0.5, 1] for 2 classes
  Eigen::Vector2d log_probs = Eigen::Vector2d::Zero();
};

CnnDecision cnn_classify(const CnnModel& model, const Eigen::VectorXd& single,
                         const Eigen::VectorXd& trio);

// Stacks beat windows into the 256-row input layout.
Eigen::MatrixXd stack_beat_inputs(const std::vector<BeatPair>& beats);

// Exact flop count of one inference forward pass. Convention: multiply-add
// counts 2, bias add 1, pool comparison 1, tanh/relu/exp/log 1 each.
long long cnn_forward_flops();

struct CnnTrainOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;  // decoupled, applied to every parameter tensor
  int batch_size = 128;
  int max_epochs = 500;
  int patience = 15;  // epochs without val-loss improvement before stopping
  std::uint64_t seed = 0;
};

struct CnnTrainResult {
  CnnModel model;  // parameters from the best validation epoch
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;  // 0-based index into the loss histories
  double best_val_loss = 0.0;
};

CnnTrainResult cnn_train(const Eigen::MatrixXd& train_inputs, const std::vector<int>& train_labels,
                         const Eigen::MatrixXd& val_inputs, const std::vector<int>& val_labels,
                         const CnnTrainOptions& opt = {});

}  // namespace zsecg::cnn
