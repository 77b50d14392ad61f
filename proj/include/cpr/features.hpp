#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cpr/kernels.hpp"
#include "cpr/params.hpp"
#include "cpr/sampling.hpp"
#include "cpr/types.hpp"

namespace cpr {

/// Dense (h x w x d) features at a known stride. Feature coordinate p maps to
/// image coordinate p * stride.
struct FeatureMap {
  Tensor3<double> data;
  int stride = 8;

  int h() const { return data.h; }
  int w() const { return data.w; }
  int d() const { return data.c; }
  MapExtent extent() const { return {data.h, data.w}; }
};

/// Bilinear lookup at a real-valued point in [0, w-1] x [0, h-1]; exact at
/// lattice points. Writes d values to `out`. PreconditionError when out of range.
void feature_at(const FeatureMap& map, Point2 p, std::span<double> out);

/// Adjoint of feature_at: scatters `grad` (d values) into `grad_map` with the
/// same four bilinear weights.
void scatter_feature_grad(Tensor3<double>& grad_map, Point2 p, std::span<const double> grad);

struct ExtractorConfig {
  int stride = 8;      // 4 or 8: number of stride-2 stem convolutions is log2(stride)
  int width = 32;      // feature dimension d
  int tower_depth = 4; // 3x3 conv + ReLU layers at the output stride
};

/// Small trainable convolutional feature extractor: a strided 3x3 stem then a
/// tower of 3x3 conv + ReLU. Odd input sizes give ceil(size / stride) outputs.
class FeatureExtractor {
 public:
  struct Layer {
    int in_c = 0;
    int out_c = 0;
    int stride = 1;
    Parameter<float> weight;
    Parameter<float> bias;
  };

  /// Activations kept for the backward pass (input plus each layer output).
  struct Cache {
    std::vector<Tensor3<float>> activations;
  };

  FeatureExtractor() = default;
  FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed);

  const ExtractorConfig& config() const { return cfg_; }
  int stride() const { return cfg_.stride; }

  /// Deterministic for fixed weights. InputError for images smaller than one
  /// stride cell. Pass a cache to enable backward().
  FeatureMap forward(const Tensor3<float>& image, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients from dL/dF.
  void backward(const Cache& cache, const Tensor3<double>& grad_features);

  std::vector<Parameter<float>*> parameters();
  std::vector<const Parameter<float>*> parameters() const;
  void zero_grad();

 private:
  ExtractorConfig cfg_;
  std::vector<Layer> layers_;
};

}  // namespace cpr
