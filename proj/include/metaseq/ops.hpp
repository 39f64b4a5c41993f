// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable kernels for the tagger. Every op takes the Tape it records
// onto; when no input requires a gradient (or the tape is in inference mode)
// nothing is recorded and the op is a plain numeric kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "metaseq/error.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

/// Floor applied to probabilities before taking the log in the loss.
inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

inline void check_finite(std::string_view op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, op, " produced a non-finite value");
  }
}

inline void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    fail(ErrorKind::kDimension, op, " expects a rank-", rank, " tensor, got ", shape_string(t.shape()));
  }
}

/// Builds the output tensor, checks it is finite and, when any input is
/// tracked, records `backward(out)` on the tape.
template <typename Backward>
Tensor emit(Tape& tape, std::string op, const std::vector<Tensor>& inputs, Shape shape,
            std::vector<double> data, Backward backward) {
  check_finite(op, data);
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  tracked = tracked && tape.recording();
  Tensor out = Tensor::from(std::move(shape), std::move(data), tracked);
  if (tracked) {
    std::vector<std::uint64_t> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) ids.push_back(in.id());
    tape.record(std::move(op), std::move(ids), out.id(),
                [out, backward]() mutable {
                  if (out.has_grad()) backward(out);
                });
  }
  return out;
}

}  // namespace detail

/// C = A·B for A (m×k), B (k×n).
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kDimension, "matmul inner dimensions differ: ", shape_string(a.shape()), " x ",
         shape_string(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * bv[p * n + j];
    }
  }
  return detail::emit(tape, "matmul", {a, b}, {m, n}, std::move(c),
                      [a, b, m, k, n](Tensor& out) mutable {
                        const auto dc = out.grad();
                        if (a.requires_grad()) {
                          auto da = a.mutable_grad();
                          const auto bv = b.data();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              double acc = 0.0;
                              for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * bv[p * n + j];
                              da[i * k + p] += acc;
                            }
                        }
                        if (b.requires_grad()) {
                          auto db = b.mutable_grad();
                          const auto av = a.data();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t p = 0; p < k; ++p) {
                              const double aip = av[i * k + p];
                              for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * dc[i * n + j];
                            }
                        }
                      });
}

/// Y = X·Wᵀ + b for X (n×in), W (out×in), b (out).
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank("linear", x, 2);
  detail::require_rank("linear", weight, 2);
  detail::require_rank("linear", bias, 1);
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_dim) {
    fail(ErrorKind::kDimension, "linear: input ", shape_string(x.shape()), ", weight ",
         shape_string(weight.shape()), ", bias ", shape_string(bias.shape()));
  }
  std::vector<double> y(n * out_dim);
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xv[r * in + i] * wv[o * in + i];
      y[r * out_dim + o] = acc;
    }
  return detail::emit(tape, "linear", {x, weight, bias}, {n, out_dim}, std::move(y),
                      [x, weight, bias, n, in, out_dim](Tensor& out) mutable {
                        const auto dy = out.grad();
                        if (x.requires_grad()) {
                          auto dx = x.mutable_grad();
                          const auto wv = weight.data();
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t o = 0; o < out_dim; ++o) {
                              const double g = dy[r * out_dim + o];
                              for (std::size_t i = 0; i < in; ++i) dx[r * in + i] += g * wv[o * in + i];
                            }
                        }
                        if (weight.requires_grad()) {
                          auto dw = weight.mutable_grad();
                          const auto xv = x.data();
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t o = 0; o < out_dim; ++o) {
                              const double g = dy[r * out_dim + o];
                              if (g == 0.0) continue;
                              for (std::size_t i = 0; i < in; ++i) dw[o * in + i] += g * xv[r * in + i];
                            }
                        }
                        if (bias.requires_grad()) {
                          auto db = bias.mutable_grad();
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t o = 0; o < out_dim; ++o) db[o] += dy[r * out_dim + o];
                        }
                      });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, "add: ", shape_string(a.shape()), " vs ", shape_string(b.shape()));
  }
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
  return detail::emit(tape, "add", {a, b}, a.shape(), std::move(c), [a, b](Tensor& out) mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto da = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (b.requires_grad()) {
      auto db = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    }
  });
}

/// Elementwise product.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, "mul: ", shape_string(a.shape()), " vs ", shape_string(b.shape()));
  }
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
  return detail::emit(tape, "mul", {a, b}, a.shape(), std::move(c), [a, b](Tensor& out) mutable {
    const auto g = out.grad();
    // a and b may alias (x*x); read both before writing either gradient.
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * b[i];
      gb[i] = g[i] * a[i];
    }
    if (a.requires_grad()) {
      auto da = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += ga[i];
    }
    if (b.requires_grad()) {
      auto db = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += gb[i];
    }
  });
}

/// x (n×m) + b (m) broadcast over rows.
inline Tensor add_row_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  detail::require_rank("add_row_bias", x, 2);
  detail::require_rank("add_row_bias", bias, 1);
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (bias.dim(0) != m) {
    fail(ErrorKind::kDimension, "add_row_bias: ", shape_string(x.shape()), " with bias ",
         shape_string(bias.shape()));
  }
  std::vector<double> y(x.values());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] += bias[j];
  return detail::emit(tape, "add_row_bias", {x, bias}, x.shape(), std::move(y),
                      [x, bias, n, m](Tensor& out) mutable {
                        const auto g = out.grad();
                        if (x.requires_grad()) {
                          auto dx = x.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                        }
                        if (bias.requires_grad()) {
                          auto db = bias.mutable_grad();
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t j = 0; j < m; ++j) db[j] += g[r * m + j];
                        }
                      });
}

inline Tensor tanh_act(Tape& tape, const Tensor& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x[i]);
  return detail::emit(tape, "tanh", {x}, x.shape(), std::move(y), [x](Tensor& out) mutable {
    const auto g = out.grad();
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - out[i] * out[i]);
  });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = x[i];
    y[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return detail::emit(tape, "sigmoid", {x}, x.shape(), std::move(y), [x](Tensor& out) mutable {
    const auto g = out.grad();
    auto dx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * out[i] * (1.0 - out[i]);
  });
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::emit(tape, "sum", {x}, {1}, {total}, [x](Tensor& out) mutable {
    const double g = out.grad()[0];
    auto dx = x.mutable_grad();
    for (auto& d : dx) d += g;
  });
}

inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_rank("slice_rows", x, 2);
  const std::size_t cols = x.dim(1);
  if (count == 0 || begin + count > x.dim(0)) {
    fail(ErrorKind::kDimension, "slice_rows [", begin, ",", begin + count, ") out of ", shape_string(x.shape()));
  }
  const auto xv = x.data();
  std::vector<double> y(xv.begin() + begin * cols, xv.begin() + (begin + count) * cols);
  return detail::emit(tape, "slice_rows", {x}, {count, cols}, std::move(y),
                      [x, begin, cols](Tensor& out) mutable {
                        const auto g = out.grad();
                        auto dx = x.mutable_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) dx[begin * cols + i] += g[i];
                      });
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_rank("slice_cols", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > cols) {
    fail(ErrorKind::kDimension, "slice_cols [", begin, ",", begin + count, ") out of ", shape_string(x.shape()));
  }
  std::vector<double> y(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < count; ++j) y[r * count + j] = x[r * cols + begin + j];
  return detail::emit(tape, "slice_cols", {x}, {rows, count}, std::move(y),
                      [x, begin, rows, cols, count](Tensor& out) mutable {
                        const auto g = out.grad();
                        auto dx = x.mutable_grad();
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < count; ++j) dx[r * cols + begin + j] += g[r * count + j];
                      });
}

/// Joins rank-2 blocks with equal row counts side by side.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat_cols of nothing");
  const std::size_t rows = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_cols", p, 2);
    if (p.dim(0) != rows) {
      fail(ErrorKind::kDimension, "concat_cols row mismatch: ", shape_string(parts.front().shape()), " vs ",
           shape_string(p.shape()));
    }
    total += p.dim(1);
  }
  std::vector<double> y(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) y[r * total + offset + j] = p[r * w + j];
    offset += w;
  }
  return detail::emit(tape, "concat_cols", parts, {rows, total}, std::move(y),
                      [parts, rows, total](Tensor& out) mutable {
                        const auto g = out.grad();
                        std::size_t offset = 0;
                        for (auto& p : parts) {
                          const std::size_t w = p.dim(1);
                          if (p.requires_grad()) {
                            auto dp = p.mutable_grad();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < w; ++j) dp[r * w + j] += g[r * total + offset + j];
                          }
                          offset += w;
                        }
                      });
}

/// Stacks rank-2 blocks with equal column counts on top of each other.
inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat_rows of nothing");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<double> y;
  for (const auto& p : parts) {
    detail::require_rank("concat_rows", p, 2);
    if (p.dim(1) != cols) {
      fail(ErrorKind::kDimension, "concat_rows column mismatch: ", shape_string(parts.front().shape()), " vs ",
           shape_string(p.shape()));
    }
    rows += p.dim(0);
    y.insert(y.end(), p.data().begin(), p.data().end());
  }
  return detail::emit(tape, "concat_rows", parts, {rows, cols}, std::move(y), [parts](Tensor& out) mutable {
    const auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto dp = p.mutable_grad();
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
}

/// Stacks equally shaped (n×d) matrices into a (c×n×d) tensor.
inline Tensor stack(Tape& tape, const std::vector<Tensor>& mats) {
  if (mats.empty()) fail(ErrorKind::kDimension, "stack needs at least one matrix");
  const Shape& first = mats.front().shape();
  std::vector<double> y;
  for (const auto& m : mats) {
    detail::require_rank("stack", m, 2);
    if (m.shape() != first) {
      fail(ErrorKind::kDimension, "stack: channel shapes differ, ", shape_string(first), " vs ",
           shape_string(m.shape()));
    }
    y.insert(y.end(), m.data().begin(), m.data().end());
  }
  return detail::emit(tape, "stack", mats, {mats.size(), first[0], first[1]}, std::move(y),
                      [mats](Tensor& out) mutable {
                        const auto g = out.grad();
                        std::size_t offset = 0;
                        for (auto& m : mats) {
                          if (m.requires_grad()) {
                            auto dm = m.mutable_grad();
                            for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += g[offset + i];
                          }
                          offset += m.size();
                        }
                      });
}

enum class Padding {
  kTrailingZeros,  // append w-1 zero rows so the output keeps length n
  kNone,           // valid positions only, output length n-w+1
};

/// Multi-kernel sequence convolution.
///
/// input (c×n×d), kernels (k×c×w×d) -> (n×k) where
///   out[i, q] = Σ_ch Σ_off Σ_j input[ch, i+off, j] · kernels[q, ch, off, j]
/// and positions past the end of the sentence read as zero. Window offsets
/// start at the word itself, so row i stays aligned with word i.
inline Tensor conv_seq(Tape& tape, const Tensor& input, const Tensor& kernels,
                       Padding pad = Padding::kTrailingZeros) {
  detail::require_rank("conv_seq input", input, 3);
  detail::require_rank("conv_seq kernels", kernels, 4);
  const std::size_t c = input.dim(0), n = input.dim(1), d = input.dim(2);
  const std::size_t k = kernels.dim(0), w = kernels.dim(2);
  if (kernels.dim(1) != c || kernels.dim(3) != d) {
    fail(ErrorKind::kDimension, "conv_seq: input ", shape_string(input.shape()), " vs kernels ",
         shape_string(kernels.shape()));
  }
  const std::size_t padding = pad == Padding::kTrailingZeros ? w - 1 : 0;
  if (w == 0 || w > n + padding) {
    fail(ErrorKind::kWindow, "window ", w, " does not fit a sequence of ", n, " with ", padding, " padding");
  }
  const std::size_t out_len = n + padding - w + 1;
  std::vector<double> y(out_len * k, 0.0);
  const auto iv = input.data();
  const auto kv = kernels.data();
  for (std::size_t i = 0; i < out_len; ++i)
    for (std::size_t q = 0; q < k; ++q) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t off = 0; off < w && i + off < n; ++off) {
          const double* row = &iv[(ch * n + i + off) * d];
          const double* ker = &kv[((q * c + ch) * w + off) * d];
          for (std::size_t j = 0; j < d; ++j) acc += row[j] * ker[j];
        }
      y[i * k + q] = acc;
    }
  return detail::emit(
      tape, "conv_seq", {input, kernels}, {out_len, k}, std::move(y),
      [input, kernels, c, n, d, k, w, out_len](Tensor& out) mutable {
        const auto g = out.grad();
        const bool want_in = input.requires_grad();
        const bool want_k = kernels.requires_grad();
        std::span<double> din = want_in ? input.mutable_grad() : std::span<double>{};
        std::span<double> dk = want_k ? kernels.mutable_grad() : std::span<double>{};
        const auto iv = input.data();
        const auto kv = kernels.data();
        for (std::size_t i = 0; i < out_len; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            const double gq = g[i * k + q];
            if (gq == 0.0) continue;
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t off = 0; off < w && i + off < n; ++off) {
                const std::size_t row = (ch * n + i + off) * d;
                const std::size_t ker = ((q * c + ch) * w + off) * d;
                if (want_in)
                  for (std::size_t j = 0; j < d; ++j) din[row + j] += gq * kv[ker + j];
                if (want_k)
                  for (std::size_t j = 0; j < d; ++j) dk[ker + j] += gq * iv[row + j];
              }
          }
      });
}

/// Single-kernel form: kernel (c×w×d) -> feature map of shape (n).
inline Tensor conv_seq_single(Tape& tape, const Tensor& input, const Tensor& kernel,
                              Padding pad = Padding::kTrailingZeros) {
  detail::require_rank("conv_seq kernel", kernel, 3);
  Tensor bank = detail::emit(tape, "reshape", {kernel}, {1, kernel.dim(0), kernel.dim(1), kernel.dim(2)},
                             kernel.values(), [kernel](Tensor& out) mutable {
                               const auto g = out.grad();
                               auto dk = kernel.mutable_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) dk[i] += g[i];
                             });
  Tensor map = conv_seq(tape, input, bank, pad);
  return detail::emit(tape, "reshape", {map}, {map.dim(0)}, map.values(), [map](Tensor& out) mutable {
    const auto g = out.grad();
    auto dm = map.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dm[i] += g[i];
  });
}

/// Softmax over the last axis; a rank-1 input is a single distribution.
inline Tensor softmax(Tape& tape, const Tensor& logits) {
  if (logits.rank() != 1 && logits.rank() != 2) {
    fail(ErrorKind::kDimension, "softmax expects rank 1 or 2, got ", shape_string(logits.shape()));
  }
  const std::size_t k = logits.shape().back();
  if (k < 2) fail(ErrorKind::kDimension, "softmax needs at least 2 classes");
  const std::size_t rows = logits.size() / k;
  std::vector<double> p(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[r * k + j] = std::exp(logits[r * k + j] - mx);
      z += p[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= z;
  }
  return detail::emit(tape, "softmax", {logits}, logits.shape(), std::move(p),
                      [logits, rows, k](Tensor& out) mutable {
                        const auto g = out.grad();
                        auto dl = logits.mutable_grad();
                        for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * out[r * k + j];
                          for (std::size_t j = 0; j < k; ++j) dl[r * k + j] += out[r * k + j] * (g[r * k + j] - dot);
                        }
                      });
}

/// L = -Σ_i mask_i · ω[y_i] · log(max(p_i[y_i], ε)).
///
/// `probs` is (n×k) or (k) for n = 1; `labels` and `mask` have length n.
inline Tensor weighted_cross_entropy(Tape& tape, const Tensor& probs, std::span<const int> labels,
                                     std::span<const double> class_weights, std::span<const std::uint8_t> mask) {
  const std::size_t k = probs.shape().back();
  const std::size_t n = probs.size() / k;
  if (labels.size() != n || mask.size() != n) {
    fail(ErrorKind::kDimension, "weighted_cross_entropy: ", n, " rows, ", labels.size(), " labels, ", mask.size(),
         " mask entries");
  }
  if (class_weights.size() != k) {
    fail(ErrorKind::kDimension, "weighted_cross_entropy: ", k, " classes but ", class_weights.size(), " weights");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      fail(ErrorKind::kLabel, "label ", labels[i], " at position ", i, " outside [0,", k, ")");
    }
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double p = probs[i * k + static_cast<std::size_t>(labels[i])];
    loss -= class_weights[static_cast<std::size_t>(labels[i])] * std::log(std::max(p, kProbabilityFloor));
  }
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(class_weights.begin(), class_weights.end());
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::emit(tape, "weighted_cross_entropy", {probs}, {1}, {loss},
                      [probs, y, w, m, n, k](Tensor& out) mutable {
                        const double g = out.grad()[0];
                        auto dp = probs.mutable_grad();
                        for (std::size_t i = 0; i < n; ++i) {
                          if (!m[i]) continue;
                          const std::size_t idx = i * k + static_cast<std::size_t>(y[i]);
                          const double p = probs[idx];
                          if (p > kProbabilityFloor) dp[idx] += -g * w[static_cast<std::size_t>(y[i])] / p;
                        }
                      });
}

/// Multiplies x elementwise by a fixed mask of multipliers.
inline Tensor apply_mask(Tape& tape, const Tensor& x, std::vector<double> multipliers) {
  if (multipliers.size() != x.size()) {
    fail(ErrorKind::kDimension, "mask of ", multipliers.size(), " entries for tensor ", shape_string(x.shape()));
  }
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * multipliers[i];
  return detail::emit(tape, "dropout", {x}, x.shape(), std::move(y),
                      [x, multipliers = std::move(multipliers)](Tensor& out) mutable {
                        const auto g = out.grad();
                        auto dx = x.mutable_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * multipliers[i];
                      });
}

/// Draws an inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).
inline std::vector<double> dropout_mask(std::size_t count, double rate, RngStream& rng) {
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(count);
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

inline Tensor dropout(Tape& tape, const Tensor& x, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::kParameter, "dropout rate ", rate, " outside [0,1)");
  if (!training || rate == 0.0) return x;
  return apply_mask(tape, x, dropout_mask(x.size(), rate, rng));
}

/// Reverse sweep over the tape from a scalar loss.
inline void backward(Tensor& loss, Tape& tape) {
  if (loss.size() != 1) fail(ErrorKind::kContract, "backward needs a scalar loss, got ", shape_string(loss.shape()));
  if (!loss.requires_grad()) fail(ErrorKind::kContract, "loss was not produced through a recording tape");
  loss.mutable_grad()[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) it->backward();
}

/// p <- p - lr * grad(p), then clears every gradient.
inline void sgd_step(ParameterSet& params, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::kParameter, "learning rate ", learning_rate, " must be finite and non-negative");
  }
  for (auto& [name, p] : params) {
    if (!p.has_grad()) fail(ErrorKind::kState, "parameter '", name, "' has no gradient");
  }
  for (auto& [name, p] : params) {
    auto values = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= learning_rate * g[i];
    detail::check_finite("sgd_step", values);
    p.clear_grad();
  }
}

}  // namespace metaseq
