#include "zsecg/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace zsecg::cnn {

namespace {

// Activations live in channel-row layout: (channels x length*batch), sample b
// occupying the column block [b*length, (b+1)*length).

Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, int channels, int lin, int k,
                       Eigen::Index batch) {
  const int lout = lin - k + 1;
  Eigen::MatrixXd patches(static_cast<Eigen::Index>(channels) * k,
                          static_cast<Eigen::Index>(lout) * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int t = 0; t < lout; ++t) {
      const Eigen::Index col = b * lout + t;
      for (int c = 0; c < channels; ++c) {
        patches.block(static_cast<Eigen::Index>(c) * k, col, k, 1) =
            x.row(c).segment(b * lin + t, k).transpose();
      }
    }
  }
  return patches;
}

Eigen::MatrixXd col2im_add(const Eigen::MatrixXd& patch_grad, int channels, int lin, int k,
                           Eigen::Index batch) {
  const int lout = lin - k + 1;
  Eigen::MatrixXd x_grad =
      Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(lin) * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int t = 0; t < lout; ++t) {
      const Eigen::Index col = b * lout + t;
      for (int c = 0; c < channels; ++c) {
        x_grad.row(c).segment(b * lin + t, k) +=
            patch_grad.block(static_cast<Eigen::Index>(c) * k, col, k, 1).transpose();
      }
    }
  }
  return x_grad;
}

struct StageCache {
  Eigen::MatrixXd patches;  // (cin*k) x (lout*batch)
  Eigen::MatrixXi argmax;   // cout x (lp*batch), winning offset within [0, lout)
  Eigen::MatrixXd act;      // cout x (lp*batch), tanh of pooled pre-activation
  int lin = 0;
  int lout = 0;
  int lp = 0;
};

void stage_forward(const ConvLayer& layer, const Eigen::MatrixXd& x, int lin,
                   Eigen::Index batch, StageCache& cache) {
  cache.lin = lin;
  cache.lout = lin - layer.kernel + 1;
  cache.lp = cache.lout / kCnnPoolWidth;
  cache.patches = im2col(x, layer.in_channels, lin, layer.kernel, batch);
  Eigen::MatrixXd z = layer.weight * cache.patches;
  z.colwise() += layer.bias;
  cache.argmax.resize(layer.out_channels, static_cast<Eigen::Index>(cache.lp) * batch);
  Eigen::MatrixXd pooled(layer.out_channels, static_cast<Eigen::Index>(cache.lp) * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int tau = 0; tau < cache.lp; ++tau) {
      const Eigen::Index out_col = b * cache.lp + tau;
      const int t0 = tau * kCnnPoolWidth;
      for (int c = 0; c < layer.out_channels; ++c) {
        int best = t0;
        double best_v = z(c, b * cache.lout + t0);
        for (int dt = 1; dt < kCnnPoolWidth; ++dt) {
          const double v = z(c, b * cache.lout + t0 + dt);
          if (v > best_v) {  // ties keep the earliest position
            best_v = v;
            best = t0 + dt;
          }
        }
        cache.argmax(c, out_col) = best;
        pooled(c, out_col) = best_v;
      }
    }
  }
  cache.act = pooled.array().tanh().matrix();
}

// Returns the gradient w.r.t. the stage input when want_input_grad is set.
Eigen::MatrixXd stage_backward(const ConvLayer& layer, const StageCache& cache,
                               const Eigen::MatrixXd& d_act, Eigen::Index batch,
                               ConvLayer& grad, bool want_input_grad) {
  const Eigen::MatrixXd d_pool =
      (d_act.array() * (1.0 - cache.act.array().square())).matrix();
  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(layer.out_channels,
                                             static_cast<Eigen::Index>(cache.lout) * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int tau = 0; tau < cache.lp; ++tau) {
      const Eigen::Index out_col = b * cache.lp + tau;
      for (int c = 0; c < layer.out_channels; ++c) {
        dz(c, b * cache.lout + cache.argmax(c, out_col)) += d_pool(c, out_col);
      }
    }
  }
  grad.weight = dz * cache.patches.transpose();
  grad.bias = dz.rowwise().sum();
  if (!want_input_grad) return {};
  const Eigen::MatrixXd d_patches = layer.weight.transpose() * dz;
  return col2im_add(d_patches, layer.in_channels, cache.lin, layer.kernel, batch);
}

struct ForwardCache {
  Eigen::Index batch = 0;
  StageCache s1, s2, s3;
  Eigen::MatrixXd fc1_pre;    // hidden x batch
  Eigen::MatrixXd fc1_act;    // hidden x batch
  Eigen::MatrixXd log_probs;  // classes x batch
};

Eigen::MatrixXd to_channel_rows(const Eigen::MatrixXd& inputs) {
  const Eigen::Index batch = inputs.cols();
  Eigen::MatrixXd x(kCnnInChannels, static_cast<Eigen::Index>(kCnnInputLength) * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    x.block(0, b * kCnnInputLength, 1, kCnnInputLength) =
        inputs.col(b).head(kCnnInputLength).transpose();
    x.block(1, b * kCnnInputLength, 1, kCnnInputLength) =
        inputs.col(b).tail(kCnnInputLength).transpose();
  }
  return x;
}

void log_softmax_cols(Eigen::MatrixXd& logits) {
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    logits.col(j).array() -= lse;
  }
}

void forward_all(const CnnModel& model, const Eigen::MatrixXd& inputs, ForwardCache& fwd) {
  if (inputs.rows() != 2 * kBeatLength) {
    throw std::invalid_argument("cnn: inputs must have 256 rows (single + trio)");
  }
  if (inputs.cols() == 0) throw std::invalid_argument("cnn: empty batch");
  fwd.batch = inputs.cols();
  stage_forward(model.conv1, to_channel_rows(inputs), kCnnInputLength, fwd.batch, fwd.s1);
  stage_forward(model.conv2, fwd.s1.act, fwd.s1.lp, fwd.batch, fwd.s2);
  stage_forward(model.conv3, fwd.s2.act, fwd.s2.lp, fwd.batch, fwd.s3);
  // Final stage pools to length 1, so s3.act is already the flat feature map.
  fwd.fc1_pre = model.fc1.weight * fwd.s3.act;
  fwd.fc1_pre.colwise() += model.fc1.bias;
  fwd.fc1_act = fwd.fc1_pre.cwiseMax(0.0);
  Eigen::MatrixXd logits = model.fc2.weight * fwd.fc1_act;
  logits.colwise() += model.fc2.bias;
  log_softmax_cols(logits);
  fwd.log_probs = std::move(logits);
}

CnnGradients make_zero_grads(const CnnModel& model) {
  CnnGradients g;
  auto zero_conv = [](const ConvLayer& src, ConvLayer& dst) {
    dst.in_channels = src.in_channels;
    dst.out_channels = src.out_channels;
    dst.kernel = src.kernel;
    dst.weight = Eigen::MatrixXd::Zero(src.weight.rows(), src.weight.cols());
    dst.bias = Eigen::VectorXd::Zero(src.bias.size());
  };
  auto zero_dense = [](const DenseLayer& src, DenseLayer& dst) {
    dst.weight = Eigen::MatrixXd::Zero(src.weight.rows(), src.weight.cols());
    dst.bias = Eigen::VectorXd::Zero(src.bias.size());
  };
  zero_conv(model.conv1, g.conv1);
  zero_conv(model.conv2, g.conv2);
  zero_conv(model.conv3, g.conv3);
  zero_dense(model.fc1, g.fc1);
  zero_dense(model.fc2, g.fc2);
  return g;
}

void check_labels(const Eigen::MatrixXd& inputs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != inputs.cols()) {
    throw std::invalid_argument("cnn: label count must match batch size");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("cnn: labels must be 0 or 1");
  }
}

void adamw_step(CnnModel& model, const CnnGradients& g, CnnGradients& m, CnnGradients& v,
                long step, const CnnTrainOptions& opt) {
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  auto update = [&](auto& w, const auto& gw, auto& mw, auto& vw) {
    mw.array() = opt.beta1 * mw.array() + (1.0 - opt.beta1) * gw.array();
    vw.array() = opt.beta2 * vw.array() + (1.0 - opt.beta2) * gw.array().square();
    w.array() -= opt.learning_rate * ((mw.array() / bc1) / ((vw.array() / bc2).sqrt() + opt.epsilon) +
                                      opt.weight_decay * w.array());
  };
  update(model.conv1.weight, g.conv1.weight, m.conv1.weight, v.conv1.weight);
  update(model.conv1.bias, g.conv1.bias, m.conv1.bias, v.conv1.bias);
  update(model.conv2.weight, g.conv2.weight, m.conv2.weight, v.conv2.weight);
  update(model.conv2.bias, g.conv2.bias, m.conv2.bias, v.conv2.bias);
  update(model.conv3.weight, g.conv3.weight, m.conv3.weight, v.conv3.weight);
  update(model.conv3.bias, g.conv3.bias, m.conv3.bias, v.conv3.bias);
  update(model.fc1.weight, g.fc1.weight, m.fc1.weight, v.fc1.weight);
  update(model.fc1.bias, g.fc1.bias, m.fc1.bias, v.fc1.bias);
  update(model.fc2.weight, g.fc2.weight, m.fc2.weight, v.fc2.weight);
  update(model.fc2.bias, g.fc2.bias, m.fc2.bias, v.fc2.bias);
}

}  // namespace

CnnModel CnnModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto& w, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
  };
  CnnModel model;
  auto make_conv = [&fill](ConvLayer& l, int cin, int cout, int k) {
    l.in_channels = cin;
    l.out_channels = cout;
    l.kernel = k;
    l.weight.resize(cout, static_cast<Eigen::Index>(cin) * k);
    l.bias.resize(cout);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k);
    fill(l.weight, bound);
    fill(l.bias, bound);
  };
  auto make_dense = [&fill](DenseLayer& l, int in, int out) {
    l.weight.resize(out, in);
    l.bias.resize(out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill(l.weight, bound);
    fill(l.bias, bound);
  };
  make_conv(model.conv1, kCnnInChannels, kCnnChannels1, kCnnKernel);
  make_conv(model.conv2, kCnnChannels1, kCnnChannels2, kCnnKernel);
  make_conv(model.conv3, kCnnChannels2, kCnnChannels3, kCnnKernel);
  make_dense(model.fc1, kCnnChannels3, kCnnHidden);
  make_dense(model.fc2, kCnnHidden, kCnnClasses);
  return model;
}

Eigen::MatrixXd cnn_log_probs(const CnnModel& model, const Eigen::MatrixXd& inputs) {
  ForwardCache fwd;
  forward_all(model, inputs, fwd);
  return fwd.log_probs;
}

double cnn_loss_and_gradients(const CnnModel& model, const Eigen::MatrixXd& inputs,
                              const std::vector<int>& labels, CnnGradients* grads) {
  check_labels(inputs, labels);
  ForwardCache fwd;
  forward_all(model, inputs, fwd);
  const Eigen::Index batch = fwd.batch;
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) loss -= fwd.log_probs(labels[b], b);
  loss /= static_cast<double>(batch);
  if (!grads) return loss;

  *grads = make_zero_grads(model);
  Eigen::MatrixXd dlogits = fwd.log_probs.array().exp().matrix();
  for (Eigen::Index b = 0; b < batch; ++b) dlogits(labels[b], b) -= 1.0;
  dlogits /= static_cast<double>(batch);

  grads->fc2.weight = dlogits * fwd.fc1_act.transpose();
  grads->fc2.bias = dlogits.rowwise().sum();
  const Eigen::MatrixXd d_fc1_act = model.fc2.weight.transpose() * dlogits;
  const Eigen::MatrixXd d_fc1_pre =
      (d_fc1_act.array() * (fwd.fc1_pre.array() > 0.0).cast<double>()).matrix();
  grads->fc1.weight = d_fc1_pre * fwd.s3.act.transpose();
  grads->fc1.bias = d_fc1_pre.rowwise().sum();
  const Eigen::MatrixXd d3 = model.fc1.weight.transpose() * d_fc1_pre;
  const Eigen::MatrixXd d2 = stage_backward(model.conv3, fwd.s3, d3, batch, grads->conv3, true);
  const Eigen::MatrixXd d1 = stage_backward(model.conv2, fwd.s2, d2, batch, grads->conv2, true);
  stage_backward(model.conv1, fwd.s1, d1, batch, grads->conv1, false);
  return loss;
}

CnnDecision cnn_classify(const CnnModel& model, const Eigen::VectorXd& single,
                         const Eigen::VectorXd& trio) {
  if (single.size() != kBeatLength || trio.size() != kBeatLength) {
    throw std::invalid_argument("cnn: beat windows must have length 128");
  }
  Eigen::MatrixXd input(2 * kBeatLength, 1);
  input.col(0).head(kBeatLength) = single;
  input.col(0).tail(kBeatLength) = trio;
  const Eigen::MatrixXd lp = cnn_log_probs(model, input);
  CnnDecision decision;
  decision.log_probs = lp.col(0);
  // Equal log probabilities resolve to Abnormal.
  decision.verdict = lp(1, 0) >= lp(0, 0) ? Verdict::Abnormal : Verdict::Normal;
  decision.confidence = std::exp(lp.col(0).maxCoeff());
  return decision;
}

Eigen::MatrixXd stack_beat_inputs(const std::vector<BeatPair>& beats) {
  Eigen::MatrixXd inputs(2 * kBeatLength, static_cast<Eigen::Index>(beats.size()));
  for (std::size_t i = 0; i < beats.size(); ++i) {
    if (beats[i].single.size() != kBeatLength || beats[i].trio.size() != kBeatLength) {
      throw std::invalid_argument("cnn: beat windows must have length 128");
    }
    inputs.col(static_cast<Eigen::Index>(i)).head(kBeatLength) = beats[i].single;
    inputs.col(static_cast<Eigen::Index>(i)).tail(kBeatLength) = beats[i].trio;
  }
  return inputs;
}

long long cnn_forward_flops() {
  auto conv = [](long long cin, long long cout, long long lin, long long k) {
    const long long lout = lin - k + 1;
    return lout * cout * (2 * cin * k) + lout * cout;  // multiply-adds + bias
  };
  auto pool_tanh = [](long long cout, long long lp) {
    return cout * lp * (kCnnPoolWidth - 1) + cout * lp;  // comparisons + tanh
  };
  auto dense = [](long long in, long long out) { return out * 2 * in + out; };
  long long total = 0;
  long long len = kCnnInputLength;
  total += conv(kCnnInChannels, kCnnChannels1, len, kCnnKernel);
  len = (len - kCnnKernel + 1) / kCnnPoolWidth;
  total += pool_tanh(kCnnChannels1, len);
  total += conv(kCnnChannels1, kCnnChannels2, len, kCnnKernel);
  len = (len - kCnnKernel + 1) / kCnnPoolWidth;
  total += pool_tanh(kCnnChannels2, len);
  total += conv(kCnnChannels2, kCnnChannels3, len, kCnnKernel);
  len = (len - kCnnKernel + 1) / kCnnPoolWidth;
  total += pool_tanh(kCnnChannels3, len);
  total += dense(kCnnChannels3, kCnnHidden) + kCnnHidden;  // dense + relu
  total += dense(kCnnHidden, kCnnClasses);
  total += 7;  // softmax: max, 2 subs, 2 exps, log, add
  return total;
}

CnnTrainResult cnn_train(const Eigen::MatrixXd& train_inputs, const std::vector<int>& train_labels,
                         const Eigen::MatrixXd& val_inputs, const std::vector<int>& val_labels,
                         const CnnTrainOptions& opt) {
  check_labels(train_inputs, train_labels);
  check_labels(val_inputs, val_labels);
  if (train_inputs.cols() == 0) throw EmptyTrainingSet("cnn: empty training set");
  if (val_inputs.cols() == 0) throw EmptyTrainingSet("cnn: empty validation set");
  if (opt.batch_size < 1 || opt.max_epochs < 1 || opt.patience < 1) {
    throw std::invalid_argument("cnn: batch_size, max_epochs and patience must be positive");
  }

  CnnModel model = CnnModel::init(opt.seed);
  CnnGradients m_state = make_zero_grads(model);
  CnnGradients v_state = make_zero_grads(model);
  // Offset keeps the shuffle stream independent of the init stream.
  std::mt19937_64 shuffle_rng(opt.seed + 0x9e3779b97f4a7c15ULL);

  const Eigen::Index n = train_inputs.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  CnnTrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  CnnModel best_model = model;
  int wait = 0;
  long step = 0;

  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += opt.batch_size) {
      const Eigen::Index bsz = std::min<Eigen::Index>(opt.batch_size, n - start);
      Eigen::MatrixXd batch(train_inputs.rows(), bsz);
      std::vector<int> batch_labels(static_cast<std::size_t>(bsz));
      for (Eigen::Index i = 0; i < bsz; ++i) {
        batch.col(i) = train_inputs.col(order[static_cast<std::size_t>(start + i)]);
        batch_labels[static_cast<std::size_t>(i)] =
            train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }
      CnnGradients grads;
      const double loss = cnn_loss_and_gradients(model, batch, batch_labels, &grads);
      ++step;
      adamw_step(model, grads, m_state, v_state, step, opt);
      epoch_loss += loss * static_cast<double>(bsz);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(n));
    const double val_loss = cnn_loss_and_gradients(model, val_inputs, val_labels, nullptr);
    result.val_loss.push_back(val_loss);

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best_model = model;
      wait = 0;
    } else if (++wait >= opt.patience) {
      break;
    }
  }
  result.model = std::move(best_model);
  return result;
}

}  // namespace zsecg::cnn
