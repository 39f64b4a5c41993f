// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metaseq/error.hpp"

namespace metaseq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

struct TensorStorage {
  std::uint64_t id = next_tensor_id();
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when no gradient is held
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// `Tensor` is a shared handle: copies alias the same storage, which is what
/// lets the tape write gradients back into model parameters. Use `clone()`
/// for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (std::size_t extent : shape) {
      if (extent == 0) fail(ErrorKind::kDimension, "tensor shape ", shape_string(shape), " has a zero extent");
    }
    if (shape_size(shape) != data.size()) {
      fail(ErrorKind::kDimension, "shape ", shape_string(shape), " needs ", shape_size(shape),
           " values, got ", data.size());
    }
    Tensor t;
    t.storage_ = std::make_shared<detail::TensorStorage>();
    t.storage_->shape = std::move(shape);
    t.storage_->data = std::move(data);
    t.storage_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
    return from({rows, cols}, std::move(data), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(storage_); }
  std::uint64_t id() const { return storage().id; }
  const Shape& shape() const { return storage().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const { return storage().data.size(); }

  std::span<const double> data() const { return storage().data; }
  std::span<double> mutable_data() { return storage().data; }
  const std::vector<double>& values() const { return storage().data; }

  double item() const {
    if (size() != 1) fail(ErrorKind::kContract, "item() on tensor of shape ", shape_string(shape()));
    return storage().data[0];
  }
  double operator[](std::size_t i) const { return storage().data[i]; }
  double at(std::size_t row, std::size_t col) const { return storage().data[row * dim(1) + col]; }

  bool requires_grad() const { return storage().requires_grad; }
  void set_requires_grad(bool flag) { storage().requires_grad = flag; }

  bool has_grad() const { return !storage().grad.empty(); }
  std::span<const double> grad() const { return storage().grad; }
  // Gradient bookkeeping is allowed through const handles: the tape holds
  // const copies of its inputs and still has to accumulate into them.
  std::span<double> mutable_grad() const {
    ensure_grad();
    return storage().grad;
  }
  void ensure_grad() const {
    auto& s = storage();
    if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  }
  void zero_grad() const { storage().grad.assign(size(), 0.0); }
  void clear_grad() const { storage().grad.clear(); }

  Tensor clone() const {
    Tensor t = from(shape(), storage().data, requires_grad());
    t.storage_->grad = storage().grad;
    return t;
  }

  /// Same data, fresh storage, no gradient tracking.
  Tensor detach() const { return from(shape(), storage().data, false); }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  detail::TensorStorage& storage() const {
    if (!storage_) fail(ErrorKind::kState, "use of an undefined tensor");
    return *storage_;
  }

  std::shared_ptr<detail::TensorStorage> storage_;
};

/// Ordered record of differentiable operations. Each node owns a closure that
/// propagates its output gradient to its inputs; saved activations live in
/// the closure captures.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  struct Node {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
    std::function<void()> backward;
  };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}

  bool recording() const noexcept { return mode_ == Mode::kRecord; }

  void record(std::string op, std::vector<std::uint64_t> inputs, std::uint64_t output,
              std::function<void()> backward) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), output, std::move(backward)});
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  Mode mode_;
  std::vector<Node> nodes_;
};

/// Reproducible random stream keyed by (seed, stream id).
///
/// Draws are produced from a std::mt19937_64 engine (fully specified by the
/// standard) and converted to reals/integers with explicit arithmetic, so the
/// sequence does not depend on the standard library's distribution classes.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), engine_(mix(seed, stream_id)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, bound), rejection-sampled to avoid modulo bias.
  std::uint64_t index(std::uint64_t bound) {
    if (bound == 0) fail(ErrorKind::kParameter, "index bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    return splitmix(splitmix(seed) ^ splitmix(stream + 0x632be59bd9b4e019ULL));
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

/// Named, ordered collection of trainable tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor tensor) {
    for (const auto& [existing, _] : entries_) {
      if (existing == name) fail(ErrorKind::kContract, "duplicate parameter name '", name, "'");
    }
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  const Tensor& get(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
      if (n == name) return t;
    }
    fail(ErrorKind::kContract, "unknown parameter '", name, "'");
  }
  Tensor& get(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).get(name));
  }
  bool contains(std::string_view name) const {
    for (const auto& [n, _] : entries_) {
      if (n == name) return true;
    }
    return false;
  }

  /// Allocates zero gradients for every parameter, so parameters that do not
  /// take part in a forward pass still report a (zero) gradient.
  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  ParameterSet clone() const {
    ParameterSet copy;
    for (const auto& [n, t] : entries_) copy.entries_.emplace_back(n, t.clone());
    return copy;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [_, t] : entries_) total += t.size();
    return total;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace metaseq
