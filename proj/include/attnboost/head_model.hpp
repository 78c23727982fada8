#pragma once

// The frozen classifier head: a chain of dense layers mapping (modulated)
// features to class logits, plus the bootstrap trainer used to create one
// for synthetic data.
//
// ATNH layout (little-endian):
//   "ATNH" | version u32 = 1 | n_layers u32 |
//   n_layers x { in_dim u32 | out_dim u32 | activation u8 (0 identity, 1 relu)
//                | out_dim*in_dim f32 weights, row-major | out_dim f32 biases }

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnboost/binary_io.hpp"
#include "attnboost/error.hpp"
#include "attnboost/feature_store.hpp"
#include "attnboost/random.hpp"

namespace attnboost {

enum class Activation : std::uint8_t { identity = 0, relu = 1 };

struct DenseLayer {
  Eigen::MatrixXd weights; // out_dim x in_dim
  Eigen::VectorXd biases;
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
};

struct Prediction {
  std::vector<double> probabilities;

  std::size_t top1() const {
    return static_cast<std::size_t>(
        std::max_element(probabilities.begin(), probabilities.end()) -
        probabilities.begin());
  }
};

struct HeadModel {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().in_dim());
  }
  std::size_t n_categories() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().out_dim());
  }

  void validate() const {
    if (layers.empty()) throw FormatError("head has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.in_dim() < 1 || l.out_dim() < 1)
        throw FormatError("empty layer");
      if (l.biases.size() != l.out_dim())
        throw FormatError("bias length mismatch");
      if (i > 0 && layers[i - 1].out_dim() != l.in_dim())
        throw FormatError("dimension chain mismatch");
      if (!l.weights.allFinite() || !l.biases.allFinite())
        throw FormatError("non-finite head parameter");
    }
    if (layers.back().activation != Activation::identity)
      throw FormatError("final layer must use identity activation");
  }
};

// Order-dependent hash of every parameter, used to prove the head stays
// frozen across attention training.
inline std::uint64_t parameter_checksum(const HeadModel& head) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  };
  for (const auto& l : head.layers) {
    mix(static_cast<double>(l.activation));
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) mix(l.weights.data()[i]);
    for (Eigen::Index i = 0; i < l.biases.size(); ++i) mix(l.biases[i]);
  }
  return h;
}

inline void softmax_inplace(Eigen::Ref<Eigen::VectorXd> logits) {
  const double m = logits.maxCoeff();
  logits = (logits.array() - m).exp();
  logits /= logits.sum();
}

namespace detail {

inline void check_input(const HeadModel& head, std::span<const double> x) {
  if (x.size() != head.input_dim())
    throw ShapeError("feature length " + std::to_string(x.size()) +
                     " does not match head input " +
                     std::to_string(head.input_dim()));
}

inline void apply_activation(Activation a, Eigen::Ref<Eigen::VectorXd> v) {
  if (a == Activation::relu) v = v.cwiseMax(0.0);
}

} // namespace detail

// Every forward evaluation in the toolkit goes through this one routine so
// that single-record and sweep evaluations agree bitwise.
inline Eigen::VectorXd head_logits(const HeadModel& head,
                                   std::span<const double> x) {
  detail::check_input(head, x);
  Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(
      x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& l : head.layers) {
    Eigen::VectorXd next = l.biases;
    next.noalias() += l.weights * h;
    detail::apply_activation(l.activation, next);
    h = std::move(next);
  }
  return h;
}

inline Prediction head_forward(const HeadModel& head,
                               std::span<const double> features) {
  for (double v : features)
    if (!std::isfinite(v)) throw Error("non-finite input feature");
  Eigen::VectorXd p = head_logits(head, features);
  softmax_inplace(p);
  return Prediction{std::vector<double>(p.data(), p.data() + p.size())};
}

inline Prediction head_forward(const HeadModel& head,
                               std::span<const float> features) {
  std::vector<double> x(features.begin(), features.end());
  return head_forward(head, std::span<const double>(x));
}

inline std::size_t argmax(const Eigen::VectorXd& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<std::size_t>(i);
}

// Top-1 accuracy of the unmodulated head on the given rows.
inline double head_accuracy(const HeadModel& head, const RowMatrix& x,
                            const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto logits = head_logits(
        head, std::span<const double>(x.row(r).data(),
                                      static_cast<std::size_t>(x.cols())));
    if (static_cast<int>(argmax(logits)) == labels[static_cast<std::size_t>(r)])
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Optimiser settings shared by head bootstrap and attention training.
struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint32_t batch_size = 64;
  std::uint32_t max_epochs = 50;
  std::uint32_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be a finite value >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigError("momentum must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (patience == 0) throw ConfigError("patience must be positive");
  }
};

inline TrainConfig default_head_train_config() {
  TrainConfig c;
  c.learning_rate = 0.05;
  c.momentum = 0.9;
  c.batch_size = 64;
  c.max_epochs = 30;
  return c;
}

// Rounds every parameter to single precision so that the in-memory head and
// its ATNH file produce identical forward outputs.
inline void quantize_to_storage(HeadModel& head) {
  for (auto& l : head.layers) {
    l.weights = l.weights.cast<float>().cast<double>();
    l.biases = l.biases.cast<float>().cast<double>();
  }
}

// Trains every head parameter with minibatch SGD + momentum on the train
// split, then checks val accuracy clears chance by `min_margin_over_chance`.
inline HeadModel train_head(const Dataset& dataset,
                            const std::vector<std::uint32_t>& hidden,
                            const TrainConfig& hyper, std::uint64_t seed,
                            double min_margin_over_chance = 0.1) {
  hyper.validate();
  dataset.validate();
  Rng rng(derive_seed(seed, "head-init", 0));

  HeadModel head;
  std::vector<std::size_t> dims{dataset.flat_dim()};
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("hidden layer width must be positive");
    dims.push_back(h);
  }
  dims.push_back(dataset.n_categories);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    const auto in = static_cast<Eigen::Index>(dims[i]);
    const auto out = static_cast<Eigen::Index>(dims[i + 1]);
    l.weights.resize(out, in);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = scale * rng.normal();
    l.biases = Eigen::VectorXd::Zero(out);
    l.activation = i + 2 == dims.size() ? Activation::identity : Activation::relu;
    head.layers.push_back(std::move(l));
  }

  const auto train_rows = dataset.indices(Split::train);
  const RowMatrix x = dataset.matrix(train_rows);
  const auto y = dataset.labels(train_rows);
  const auto n = static_cast<Eigen::Index>(train_rows.size());
  const auto n_layers = head.layers.size();

  std::vector<Eigen::MatrixXd> vel_w;
  std::vector<Eigen::VectorXd> vel_b;
  for (const auto& l : head.layers) {
    vel_w.push_back(Eigen::MatrixXd::Zero(l.out_dim(), l.in_dim()));
    vel_b.push_back(Eigen::VectorXd::Zero(l.out_dim()));
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng shuffler(derive_seed(seed, "head-shuffle", 0));
  std::vector<Eigen::MatrixXd> acts(n_layers + 1);

  for (std::uint32_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    shuffler.shuffle(std::span<Eigen::Index>(order));
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += hyper.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(hyper.batch_size, n - start);
      // Column-per-sample activations.
      acts[0].resize(x.cols(), b);
      for (Eigen::Index k = 0; k < b; ++k)
        acts[0].col(k) = x.row(order[static_cast<std::size_t>(start + k)]).transpose();
      for (std::size_t li = 0; li < n_layers; ++li) {
        const auto& l = head.layers[li];
        acts[li + 1] = (l.weights * acts[li]).colwise() + l.biases;
        if (l.activation == Activation::relu)
          acts[li + 1] = acts[li + 1].cwiseMax(0.0);
      }
      Eigen::MatrixXd delta = acts[n_layers];
      for (Eigen::Index k = 0; k < b; ++k) {
        auto col = delta.col(k);
        softmax_inplace(col);
        const int label = y[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
        epoch_loss -= std::log(std::max(col[label], 1e-300));
        col[label] -= 1.0;
      }
      delta /= static_cast<double>(b);
      for (std::size_t li = n_layers; li-- > 0;) {
        auto& l = head.layers[li];
        const Eigen::MatrixXd grad_w = delta * acts[li].transpose();
        const Eigen::VectorXd grad_b = delta.rowwise().sum();
        if (li > 0) {
          Eigen::MatrixXd prev = l.weights.transpose() * delta;
          if (head.layers[li - 1].activation == Activation::relu)
            prev = prev.cwiseProduct(
                (acts[li].array() > 0.0).cast<double>().matrix());
          delta = std::move(prev);
        }
        vel_w[li] = hyper.momentum * vel_w[li] - hyper.learning_rate * grad_w;
        vel_b[li] = hyper.momentum * vel_b[li] - hyper.learning_rate * grad_b;
        l.weights += vel_w[li];
        l.biases += vel_b[li];
      }
    }
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("head training diverged at epoch " +
                            std::to_string(epoch) + " (non-finite loss)");
  }
  quantize_to_storage(head);
  head.validate();

  const auto val_rows = dataset.indices(Split::val);
  const double val_acc =
      head_accuracy(head, dataset.matrix(val_rows), dataset.labels(val_rows));
  const double chance = 1.0 / static_cast<double>(dataset.n_categories);
  if (hyper.max_epochs > 0 && val_acc < chance + min_margin_over_chance)
    throw Error("head bootstrap reached val accuracy " +
                std::to_string(val_acc) + ", below chance + margin " +
                std::to_string(chance + min_margin_over_chance));
  return head;
}

inline void write_head_file(const HeadModel& head,
                            const std::filesystem::path& path) {
  head.validate();
  io::Writer w(path);
  w.magic("ATNH");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(head.layers.size()));
  for (const auto& l : head.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.in_dim()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.out_dim()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    for (Eigen::Index r = 0; r < l.out_dim(); ++r)
      for (Eigen::Index c = 0; c < l.in_dim(); ++c)
        w.put<float>(static_cast<float>(l.weights(r, c)));
    for (Eigen::Index r = 0; r < l.out_dim(); ++r)
      w.put<float>(static_cast<float>(l.biases[r]));
  }
  w.finish();
}

inline HeadModel read_head_file(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("ATNH");
  r.expect_version(1);
  const auto n_layers = r.get<std::uint32_t>();
  if (n_layers == 0) throw FormatError("head has no layers");
  HeadModel head;
  std::uint64_t payload = 0;
  const auto file_size = std::filesystem::file_size(path);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto in = r.get<std::uint32_t>();
    const auto out = r.get<std::uint32_t>();
    const auto act = r.get<std::uint8_t>();
    if (act > 1) throw FormatError("unknown activation code");
    if (!head.layers.empty() &&
        head.layers.back().out_dim() != static_cast<Eigen::Index>(in))
      throw FormatError("dimension chain mismatch");
    payload += (std::uint64_t{in} * out + out) * 4;
    if (payload > file_size) throw FormatError("truncated payload");
    DenseLayer l;
    l.activation = static_cast<Activation>(act);
    l.weights.resize(out, in);
    l.biases.resize(out);
    for (std::uint32_t row = 0; row < out; ++row)
      for (std::uint32_t c = 0; c < in; ++c) l.weights(row, c) = r.get<float>();
    for (std::uint32_t row = 0; row < out; ++row) l.biases[row] = r.get<float>();
    head.layers.push_back(std::move(l));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after payload");
  head.validate();
  return head;
}

} // namespace attnboost
