#pragma once

#include <span>
#include <vector>

namespace cpr {

/// Dense (h x w x c) array, channels innermost.
template <typename T>
struct Tensor3 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, T{}) {}

  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * w + x) * c + ch;
  }
  T& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
  const T& at(int y, int x, int ch) const { return data[index(y, x, ch)]; }
  T* pixel(int y, int x) { return data.data() + index(y, x, 0); }
  const T* pixel(int y, int x) const { return data.data() + index(y, x, 0); }
  std::size_t size() const { return data.size(); }
};

/// Square convolution geometry. Weights are laid out [ky][kx][in_c][out_c].
struct ConvShape {
  int in_h = 0;
  int in_w = 0;
  int in_c = 0;
  int out_c = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(kernel) * kernel * in_c * out_c;
  }
};

// OpenMP kernels. Each output element is produced by exactly one thread with a
// fixed summation order, so results do not depend on the thread count.

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

/// Accumulates into grad_weight / grad_bias; overwrites grad_in unless it is
/// empty, in which case the input gradient is skipped.
template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias);

template <typename T>
void relu_forward(std::span<T> x);

/// grad *= (activation > 0)
template <typename T>
void relu_backward(std::span<const T> activation, std::span<T> grad);

namespace reference {

// Straightforward serial loops, kept as the oracle for the kernels above.

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias);

}  // namespace reference

}  // namespace cpr
