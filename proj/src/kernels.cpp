#include "cpr/kernels.hpp"

#include <algorithm>
#include <cstddef>

#include "cpr/types.hpp"

namespace cpr {

namespace {

void check_sizes(const ConvShape& s, std::size_t in, std::size_t weight, std::size_t out) {
  if (in != static_cast<std::size_t>(s.in_h) * s.in_w * s.in_c || weight != s.weight_count() ||
      out != static_cast<std::size_t>(s.out_h()) * s.out_w() * s.out_c)
    throw PreconditionError("conv2d: buffer size does not match shape");
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  check_sizes(s, in.size(), weight.size(), out.size());
  const int oh = s.out_h();
  const int ow = s.out_w();
  const int ci_n = s.in_c;
  const int co_n = s.out_c;
  const T* wp = weight.data();
  const T* ip = in.data();
  T* op = out.data();

#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* acc = op + (static_cast<std::size_t>(oy) * ow + ox) * co_n;
      for (int co = 0; co < co_n; ++co) acc[co] = bias.empty() ? T{} : bias[co];
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride + ky - s.pad;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride + kx - s.pad;
          if (ix < 0 || ix >= s.in_w) continue;
          const T* src = ip + (static_cast<std::size_t>(iy) * s.in_w + ix) * ci_n;
          const T* wk = wp + (static_cast<std::size_t>(ky) * s.kernel + kx) * ci_n * co_n;
          for (int ci = 0; ci < ci_n; ++ci) {
            const T a = src[ci];
            const T* wrow = wk + static_cast<std::size_t>(ci) * co_n;
            for (int co = 0; co < co_n; ++co) acc[co] += a * wrow[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  check_sizes(s, in.size(), weight.size(), grad_out.size());
  const int oh = s.out_h();
  const int ow = s.out_w();
  const int ci_n = s.in_c;
  const int co_n = s.out_c;
  const int kk = s.kernel;
  const T* ip = in.data();
  const T* gp = grad_out.data();

  if (!grad_bias.empty()) {
    for (int p = 0; p < oh * ow; ++p) {
      const T* g = gp + static_cast<std::size_t>(p) * co_n;
      for (int co = 0; co < co_n; ++co) grad_bias[co] += g[co];
    }
  }

  // Weight gradient: one (ky, kx, ci) row per task.
  if (!grad_weight.empty()) {
    T* gw = grad_weight.data();
#pragma omp parallel for schedule(static)
    for (int row = 0; row < kk * kk * ci_n; ++row) {
      const int ci = row % ci_n;
      const int kx = (row / ci_n) % kk;
      const int ky = row / (ci_n * kk);
      T* dst = gw + static_cast<std::size_t>(row) * co_n;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * s.stride + ky - s.pad;
        if (iy < 0 || iy >= s.in_h) continue;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix = ox * s.stride + kx - s.pad;
          if (ix < 0 || ix >= s.in_w) continue;
          const T a = ip[(static_cast<std::size_t>(iy) * s.in_w + ix) * ci_n + ci];
          const T* g = gp + (static_cast<std::size_t>(oy) * ow + ox) * co_n;
          for (int co = 0; co < co_n; ++co) dst[co] += a * g[co];
        }
      }
    }
  }

  // Input gradient, gathered per input pixel with transposed weights [ky][kx][co][ci].
  if (!grad_in.empty()) {
    if (grad_in.size() != in.size()) throw PreconditionError("conv2d_backward: grad_in size");
    std::vector<T> wt(weight.size());
    for (int k = 0; k < kk * kk; ++k)
      for (int ci = 0; ci < ci_n; ++ci)
        for (int co = 0; co < co_n; ++co)
          wt[(static_cast<std::size_t>(k) * co_n + co) * ci_n + ci] =
              weight[(static_cast<std::size_t>(k) * ci_n + ci) * co_n + co];
    T* gi = grad_in.data();
#pragma omp parallel for schedule(static)
    for (int iy = 0; iy < s.in_h; ++iy) {
      for (int ix = 0; ix < s.in_w; ++ix) {
        T* dst = gi + (static_cast<std::size_t>(iy) * s.in_w + ix) * ci_n;
        std::fill(dst, dst + ci_n, T{});
        for (int ky = 0; ky < kk; ++ky) {
          const int ny = iy + s.pad - ky;
          if (ny < 0 || ny % s.stride != 0) continue;
          const int oy = ny / s.stride;
          if (oy >= oh) continue;
          for (int kx = 0; kx < kk; ++kx) {
            const int nx = ix + s.pad - kx;
            if (nx < 0 || nx % s.stride != 0) continue;
            const int ox = nx / s.stride;
            if (ox >= ow) continue;
            const T* g = gp + (static_cast<std::size_t>(oy) * ow + ox) * co_n;
            const T* wk = wt.data() + (static_cast<std::size_t>(ky) * kk + kx) * co_n * ci_n;
            for (int co = 0; co < co_n; ++co) {
              const T gv = g[co];
              const T* wrow = wk + static_cast<std::size_t>(co) * ci_n;
              for (int ci = 0; ci < ci_n; ++ci) dst[ci] += gv * wrow[ci];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<T> x) {
  T* p = x.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > T{} ? p[i] : T{};
}

template <typename T>
void relu_backward(std::span<const T> activation, std::span<T> grad) {
  if (activation.size() != grad.size()) throw PreconditionError("relu_backward: size mismatch");
  const T* a = activation.data();
  T* g = grad.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grad.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    if (!(a[i] > T{})) g[i] = T{};
}

namespace reference {

template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  check_sizes(s, in.size(), weight.size(), out.size());
  const int oh = s.out_h();
  const int ow = s.out_w();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < s.out_c; ++co) {
        T acc = bias.empty() ? T{} : bias[co];
        for (int ky = 0; ky < s.kernel; ++ky)
          for (int kx = 0; kx < s.kernel; ++kx) {
            const int iy = oy * s.stride + ky - s.pad;
            const int ix = ox * s.stride + kx - s.pad;
            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
            for (int ci = 0; ci < s.in_c; ++ci)
              acc += in[(static_cast<std::size_t>(iy) * s.in_w + ix) * s.in_c + ci] *
                     weight[((static_cast<std::size_t>(ky) * s.kernel + kx) * s.in_c + ci) * s.out_c + co];
          }
        out[(static_cast<std::size_t>(oy) * ow + ox) * s.out_c + co] = acc;
      }
}

template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  check_sizes(s, in.size(), weight.size(), grad_out.size());
  if (!grad_in.empty()) std::fill(grad_in.begin(), grad_in.end(), T{});
  const int oh = s.out_h();
  const int ow = s.out_w();
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < s.out_c; ++co) {
        const T g = grad_out[(static_cast<std::size_t>(oy) * ow + ox) * s.out_c + co];
        if (!grad_bias.empty()) grad_bias[co] += g;
        for (int ky = 0; ky < s.kernel; ++ky)
          for (int kx = 0; kx < s.kernel; ++kx) {
            const int iy = oy * s.stride + ky - s.pad;
            const int ix = ox * s.stride + kx - s.pad;
            if (iy < 0 || iy >= s.in_h || ix < 0 || ix >= s.in_w) continue;
            for (int ci = 0; ci < s.in_c; ++ci) {
              const std::size_t ii = (static_cast<std::size_t>(iy) * s.in_w + ix) * s.in_c + ci;
              const std::size_t wi = ((static_cast<std::size_t>(ky) * s.kernel + kx) * s.in_c + ci) * s.out_c + co;
              if (!grad_weight.empty()) grad_weight[wi] += in[ii] * g;
              if (!grad_in.empty()) grad_in[ii] += weight[wi] * g;
            }
          }
      }
}

template void conv2d_forward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                     std::span<const float>, std::span<float>, std::span<float>,
                                     std::span<float>);
template void conv2d_backward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>,
                                      std::span<double>);

}  // namespace reference

template void conv2d_forward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward<float>(const ConvShape&, std::span<const float>, std::span<const float>,
                                     std::span<const float>, std::span<float>, std::span<float>,
                                     std::span<float>);
template void conv2d_backward<double>(const ConvShape&, std::span<const double>, std::span<const double>,
                                      std::span<const double>, std::span<double>, std::span<double>,
                                      std::span<double>);
template void relu_forward<float>(std::span<float>);
template void relu_forward<double>(std::span<double>);
template void relu_backward<float>(std::span<const float>, std::span<float>);
template void relu_backward<double>(std::span<const double>, std::span<double>);

}  // namespace cpr
