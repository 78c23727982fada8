#pragma once

// Multiplicative attention at the head input: a nonnegative mask `a` scales
// the cached features elementwise before the frozen head, p(c | a * z).
// The mask is the only trainable parameter; it starts at all ones and is
// trained by minibatch gradient descent with momentum, projected back onto
// the nonnegative orthant after every step.
//
// ATNA layout (little-endian):
//   "ATNA" | version u32 = 1 | granularity u8 (0 unit, 1 channel) |
//   height u32 | width u32 | channels u32 | weights f32
// A unit mask stores height*width*channels weights, a channel mask stores
// `channels` weights broadcast across spatial positions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnboost/binary_io.hpp"
#include "attnboost/error.hpp"
#include "attnboost/feature_store.hpp"
#include "attnboost/head_model.hpp"
#include "attnboost/random.hpp"

namespace attnboost {

enum class Granularity : std::uint8_t { unit = 0, channel = 1 };

inline Granularity parse_granularity(const std::string& s) {
  if (s == "unit") return Granularity::unit;
  if (s == "channel") return Granularity::channel;
  throw ConfigError("unknown mask granularity '" + s + "'");
}

inline const char* to_string(Granularity g) {
  return g == Granularity::unit ? "unit" : "channel";
}

struct AttentionMask {
  FeatureShape shape;
  Granularity granularity = Granularity::unit;
  std::vector<double> weights;

  static AttentionMask ones(FeatureShape shape,
                            Granularity g = Granularity::unit) {
    AttentionMask m{shape, g, {}};
    m.weights.assign(m.expected_size(), 1.0);
    return m;
  }

  std::size_t expected_size() const {
    return granularity == Granularity::unit ? shape.flat_dim()
                                            : std::size_t{shape.channels};
  }

  double min_weight() const {
    return weights.empty() ? 0.0
                           : *std::min_element(weights.begin(), weights.end());
  }

  void validate() const {
    if (weights.size() != expected_size())
      throw ShapeError("mask size does not match its shape");
    for (double w : weights) {
      if (!std::isfinite(w)) throw Error("non-finite mask weight");
      if (w < 0.0) throw Error("negative mask weight (corrupted mask)");
    }
  }

  // Per-feature weights in flat (height, width, channel) order.
  Eigen::VectorXd expanded() const {
    const auto dim = static_cast<Eigen::Index>(shape.flat_dim());
    Eigen::VectorXd out(dim);
    if (granularity == Granularity::unit) {
      for (Eigen::Index j = 0; j < dim; ++j)
        out[j] = weights[static_cast<std::size_t>(j)];
    } else {
      for (Eigen::Index j = 0; j < dim; ++j)
        out[j] = weights[static_cast<std::size_t>(j) % shape.channels];
    }
    return out;
  }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;
};

namespace detail {

inline void check_mask_against(const HeadModel& head, const AttentionMask& mask,
                               std::size_t feature_len) {
  mask.validate();
  if (mask.shape.flat_dim() != head.input_dim())
    throw ShapeError("mask shape does not match head input");
  if (feature_len != head.input_dim())
    throw ShapeError("feature length does not match head input");
}

} // namespace detail

inline Eigen::VectorXd attention_logits(const HeadModel& head,
                                        const Eigen::VectorXd& expanded_mask,
                                        std::span<const double> features) {
  Eigen::VectorXd modulated =
      expanded_mask.cwiseProduct(Eigen::Map<const Eigen::VectorXd>(
          features.data(), static_cast<Eigen::Index>(features.size())));
  return head_logits(head, std::span<const double>(
                               modulated.data(),
                               static_cast<std::size_t>(modulated.size())));
}

inline Prediction attention_forward(const HeadModel& head,
                                    const AttentionMask& mask,
                                    std::span<const double> features) {
  detail::check_mask_against(head, mask, features.size());
  const Eigen::VectorXd a = mask.expanded();
  std::vector<double> modulated(features.size());
  for (std::size_t j = 0; j < features.size(); ++j)
    modulated[j] = a[static_cast<Eigen::Index>(j)] * features[j];
  return head_forward(head, std::span<const double>(modulated));
}

// Fraction of rows whose top-1 class under the masked head equals the label.
inline double masked_accuracy(const HeadModel& head, const AttentionMask& mask,
                              const RowMatrix& x,
                              const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const Eigen::VectorXd a = mask.expanded();
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto logits = attention_logits(
        head, a,
        std::span<const double>(x.row(r).data(),
                                static_cast<std::size_t>(x.cols())));
    if (static_cast<int>(argmax(logits)) == labels[static_cast<std::size_t>(r)])
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct LossAndGradient {
  double loss = 0.0;             // mean cross-entropy over the batch
  std::vector<double> gradient;  // same layout as mask.weights
};

// Mean cross-entropy over the full label space and its exact gradient with
// respect to the mask weights. `rows` selects the batch out of `z`; an empty
// selection means every row.
inline LossAndGradient attention_loss_and_gradient(
    const HeadModel& head, const AttentionMask& mask, const RowMatrix& z,
    std::span<const int> labels, std::span<const Eigen::Index> rows = {}) {
  detail::check_mask_against(head, mask, static_cast<std::size_t>(z.cols()));
  const Eigen::Index b =
      rows.empty() ? z.rows() : static_cast<Eigen::Index>(rows.size());
  if (b == 0) throw Error("empty batch");
  if (labels.size() != static_cast<std::size_t>(z.rows()))
    throw ShapeError("label count does not match feature rows");
  const auto n_classes = static_cast<int>(head.n_categories());

  const Eigen::VectorXd a = mask.expanded();
  const auto n_layers = head.layers.size();
  // Column-per-sample activations: acts[0] = a * z.
  std::vector<Eigen::MatrixXd> acts(n_layers + 1);
  Eigen::MatrixXd zb(z.cols(), b);
  std::vector<int> yb(static_cast<std::size_t>(b));
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::Index src = rows.empty() ? k : rows[static_cast<std::size_t>(k)];
    zb.col(k) = z.row(src).transpose();
    yb[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(src)];
    if (yb[static_cast<std::size_t>(k)] < 0 ||
        yb[static_cast<std::size_t>(k)] >= n_classes)
      throw Error("label out of range");
  }
  acts[0] = a.asDiagonal() * zb;
  for (std::size_t li = 0; li < n_layers; ++li) {
    const auto& l = head.layers[li];
    acts[li + 1] = (l.weights * acts[li]).colwise() + l.biases;
    if (l.activation == Activation::relu)
      acts[li + 1] = acts[li + 1].cwiseMax(0.0);
  }

  LossAndGradient out;
  Eigen::MatrixXd delta = acts[n_layers];
  for (Eigen::Index k = 0; k < b; ++k) {
    auto col = delta.col(k);
    const double m = col.maxCoeff();
    const double log_sum = std::log((col.array() - m).exp().sum()) + m;
    const int y = yb[static_cast<std::size_t>(k)];
    out.loss += log_sum - col[y];
    col = (col.array() - log_sum).exp();
    col[y] -= 1.0;
  }
  out.loss /= static_cast<double>(b);
  delta /= static_cast<double>(b);

  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& l = head.layers[li];
    Eigen::MatrixXd prev = l.weights.transpose() * delta;
    if (li > 0 && head.layers[li - 1].activation == Activation::relu)
      prev = prev.cwiseProduct((acts[li].array() > 0.0).cast<double>().matrix());
    delta = std::move(prev);
  }
  // d(a * z)/da = z, summed over the batch.
  const Eigen::VectorXd full = delta.cwiseProduct(zb).rowwise().sum();
  if (mask.granularity == Granularity::unit) {
    out.gradient.assign(full.data(), full.data() + full.size());
  } else {
    out.gradient.assign(mask.shape.channels, 0.0);
    for (Eigen::Index j = 0; j < full.size(); ++j)
      out.gradient[static_cast<std::size_t>(j) % mask.shape.channels] += full[j];
  }
  return out;
}

inline std::vector<double> attention_gradient(const HeadModel& head,
                                              const AttentionMask& mask,
                                              const RowMatrix& z,
                                              std::span<const int> labels) {
  return attention_loss_and_gradient(head, mask, z, labels).gradient;
}

// Mean cross-entropy only, evaluated through the per-record forward path.
inline double attention_loss(const HeadModel& head, const AttentionMask& mask,
                             const RowMatrix& z, std::span<const int> labels) {
  detail::check_mask_against(head, mask, static_cast<std::size_t>(z.cols()));
  const Eigen::VectorXd a = mask.expanded();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const auto logits = attention_logits(
        head, a,
        std::span<const double>(z.row(r).data(),
                                static_cast<std::size_t>(z.cols())));
    const double m = logits.maxCoeff();
    const double log_sum = std::log((logits.array() - m).exp().sum()) + m;
    loss += log_sum - logits[labels[static_cast<std::size_t>(r)]];
  }
  return loss / static_cast<double>(z.rows());
}

struct EpochLog {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double val_in_set_accuracy = 0.0;
};

struct AttentionRun {
  AttentionMask mask;
  std::uint32_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochLog> history;
};

struct AttentionOptions {
  Granularity granularity = Granularity::unit;
};

// Trains a fresh mask on the task categories. Epoch 0 is the all-ones mask;
// the returned mask is the earliest epoch with the best val in-set accuracy.
inline AttentionRun train_attention(const HeadModel& head,
                                    const Dataset& dataset,
                                    const std::set<std::uint32_t>& task,
                                    const TrainConfig& hyper,
                                    AttentionOptions options = {}) {
  hyper.validate();
  if (task.empty()) throw Error("empty task set");
  for (auto c : task)
    if (c >= dataset.n_categories)
      throw Error("task category " + std::to_string(c) + " out of range");
  if (head.input_dim() != dataset.flat_dim())
    throw ShapeError("head input does not match dataset feature dimension");
  const auto checksum_before = parameter_checksum(head);

  auto in_task = [&](std::uint32_t c) { return task.count(c) > 0; };
  const auto train_rows = dataset.indices(Split::train, in_task);
  const auto val_rows = dataset.indices(Split::val, in_task);
  if (train_rows.empty() || val_rows.empty())
    throw Error("task set has no train or val records");
  const RowMatrix x_train = dataset.matrix(train_rows);
  const auto y_train = dataset.labels(train_rows);
  const RowMatrix x_val = dataset.matrix(val_rows);
  const auto y_val = dataset.labels(val_rows);

  AttentionRun run;
  AttentionMask mask = AttentionMask::ones(dataset.shape, options.granularity);
  std::vector<double> velocity(mask.weights.size(), 0.0);

  run.mask = mask;
  run.best_val_accuracy = masked_accuracy(head, mask, x_val, y_val);
  run.history.push_back(
      {0, attention_loss(head, mask, x_train, y_train), run.best_val_accuracy});

  const auto n = static_cast<Eigen::Index>(train_rows.size());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng shuffler(derive_seed(hyper.seed, "attention-shuffle", 0));
  std::uint32_t since_best = 0;

  for (std::uint32_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    shuffler.shuffle(std::span<Eigen::Index>(order));
    double loss_sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += hyper.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(hyper.batch_size, n - start);
      const auto batch = std::span<const Eigen::Index>(order).subspan(
          static_cast<std::size_t>(start), static_cast<std::size_t>(b));
      const auto lg =
          attention_loss_and_gradient(head, mask, x_train, y_train, batch);
      loss_sum += lg.loss * static_cast<double>(b);
      for (std::size_t j = 0; j < velocity.size(); ++j) {
        velocity[j] = hyper.momentum * velocity[j] -
                      hyper.learning_rate * lg.gradient[j];
        mask.weights[j] = std::max(0.0, mask.weights[j] + velocity[j]);
      }
    }
    const double train_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(train_loss))
      throw DivergenceError("attention training diverged at epoch " +
                            std::to_string(epoch) + " (non-finite loss)");
    for (double w : mask.weights)
      if (!std::isfinite(w))
        throw DivergenceError("non-finite mask weight at epoch " +
                              std::to_string(epoch));
    if (mask.min_weight() < 0.0)
      throw Error("projection failed: negative mask weight");

    const double val_acc = masked_accuracy(head, mask, x_val, y_val);
    run.history.push_back({epoch, train_loss, val_acc});
    if (val_acc > run.best_val_accuracy) {
      run.best_val_accuracy = val_acc;
      run.best_epoch = epoch;
      run.mask = mask;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  // Storage precision, so a mask reloaded from disk evaluates identically.
  for (auto& w : run.mask.weights) w = static_cast<double>(static_cast<float>(w));

  if (parameter_checksum(head) != checksum_before)
    throw Error("head parameters changed during attention training");
  return run;
}

inline void write_epoch_log(const std::vector<EpochLog>& history,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "epoch,train_loss,val_in_set_accuracy\n" << std::setprecision(17);
  for (const auto& e : history)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_in_set_accuracy
        << '\n';
}

inline void write_mask_file(const AttentionMask& mask,
                            const std::filesystem::path& path) {
  mask.validate();
  io::Writer w(path);
  w.magic("ATNA");
  w.put<std::uint32_t>(1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(mask.granularity));
  w.put<std::uint32_t>(mask.shape.height);
  w.put<std::uint32_t>(mask.shape.width);
  w.put<std::uint32_t>(mask.shape.channels);
  for (double v : mask.weights) w.put<float>(static_cast<float>(v));
  w.finish();
}

inline AttentionMask read_mask_file(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("ATNA");
  r.expect_version(1);
  AttentionMask m;
  const auto g = r.get<std::uint8_t>();
  if (g > 1) throw FormatError("unknown granularity code");
  m.granularity = static_cast<Granularity>(g);
  m.shape.height = r.get<std::uint32_t>();
  m.shape.width = r.get<std::uint32_t>();
  m.shape.channels = r.get<std::uint32_t>();
  if (!m.shape.valid()) throw FormatError("mask shape must be positive");
  const auto n = m.expected_size();
  if (std::filesystem::file_size(path) < 21 + 4 * n)
    throw FormatError("truncated payload");
  m.weights.resize(n);
  for (auto& w : m.weights) w = r.get<float>();
  if (!r.at_end()) throw FormatError("trailing bytes after payload");
  m.validate();
  return m;
}

} // namespace attnboost
