// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Small reverse-mode differentiation engine.
 *
 * Tensors hold 64-bit values with up to three dimensions (batch x channel x
 * time, or batch x feature). Every operation below records a backward
 * closure on the result node when any input requires a gradient, and
 * Tensor::backward() replays the closures in reverse topological order.
 *
 * The vocabulary is intentionally fixed: there is no general broadcasting,
 * each op documents the exact shapes it accepts and throws
 * std::invalid_argument otherwise.
 */
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hardcore::tensor {

struct Shape {
  std::array<std::size_t, 3> dims{1, 1, 1};
  std::size_t rank = 0;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> d);

  std::size_t size() const;
  std::size_t operator[](std::size_t i) const { return dims[i]; }
  bool operator==(const Shape& other) const;
  std::string str() const;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  /// Leaf without gradient tracking.
  static Tensor constant(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradients (a trainable parameter).
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  std::span<const double> values() const;
  /// Only valid on leaves; used by optimizers and finite-difference checks.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  /// Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 and propagates to every reachable leaf.
  /// Throws if the tensor is not a scalar.
  void backward() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Weight-normalized 1D kernel: W = g * v / ||v||, norm per output channel.
struct WeightNormedKernel {
  Tensor direction;  // out x in x kernel
  Tensor gain;       // out
  Tensor bias;       // out

  std::size_t out_channels() const { return direction.shape()[0]; }
  std::size_t in_channels() const { return direction.shape()[1]; }
  std::size_t kernel_size() const { return direction.shape()[2]; }
};

Tensor weight_norm(const Tensor& direction, const Tensor& gain);

/// Circularly padded, dilated cross-correlation.
///   out[b][o][k] = bias[o] + sum_p sum_j W[o][p][j] * x[b][p][(k + (j - c) * dilation) mod M]
/// with c = (kernel - 1) / 2. Kernel size must be odd and (kernel-1)*dilation < M.
Tensor conv1d_circular(const Tensor& input, const Tensor& weight, const Tensor& bias,
                       std::size_t dilation);
Tensor conv1d_circular(const Tensor& input, const WeightNormedKernel& kernel, std::size_t dilation);

/// input: batch x F_in, weight: F_out x F_in, bias: F_out.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Scalar tanh used by the tanh op; within a few ulp of std::tanh and vectorizable.
double tanh_scalar(double x);
Tensor tanh(const Tensor& input);

/// series: batch x C x M, bias: batch x C' with C' <= C. Adds bias[b][c] to
/// every time step of channel c < C'; remaining channels pass through.
Tensor broadcast_add_channels(const Tensor& series, const Tensor& bias);

/// series: batch x C x M. Removes the per-(batch, channel) mean over time.
Tensor subtract_time_mean(const Tensor& series);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + offset, element-wise.
Tensor affine(const Tensor& x, double scale, double offset);
/// Multiplies every element of batch row b by factors[b].
Tensor scale_rows(const Tensor& x, std::span<const double> factors);
Tensor sum(const Tensor& x);

/// b: batch x M constant samples, h: batch x 1 x M (or batch x M).
/// Returns batch x 1 holding sum_i b_i (h_{i-1} - h_{i+1}) with circular indices.
Tensor shoelace_sum(std::span<const double> b, const Tensor& h);

/// Mean of (pred - target)^2 over all elements.
Tensor mean_squared_error(const Tensor& pred, std::span<const double> target);

/// (1/N) sum (ln max(pred, floor) - ln target)^2 for pred: batch x 1.
/// Clamped entries receive zero gradient. Throws on non-positive targets.
Tensor mean_squared_log_error(const Tensor& pred, std::span<const double> target,
                              double floor = 1e-9);

}  // namespace hardcore::tensor
