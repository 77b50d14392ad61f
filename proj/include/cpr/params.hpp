#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cpr {

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, T{});
    grad.assign(count, T{});
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{}); }
};

/// Xavier/Glorot uniform.
template <typename T>
void init_xavier(Parameter<T>& p, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

/// He/Kaiming normal for ReLU layers.
template <typename T>
void init_kaiming(Parameter<T>& p, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam over an arbitrary list of float and double parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void add(Parameter<float>* p) { f_.push_back({p, std::vector<double>(p->size()), std::vector<double>(p->size())}); }
  void add(Parameter<double>* p) { d_.push_back({p, std::vector<double>(p->size()), std::vector<double>(p->size())}); }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  /// Applies one update with gradients scaled by `grad_scale`, then zeroes them.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& s : f_) update(s, grad_scale, c1, c2);
    for (auto& s : d_) update(s, grad_scale, c1, c2);
  }

 private:
  template <typename T>
  struct Slot {
    Parameter<T>* p;
    std::vector<double> m;
    std::vector<double> v;
  };

  template <typename T>
  void update(Slot<T>& s, double scale, double c1, double c2) {
    auto& val = s.p->value;
    auto& g = s.p->grad;
    for (std::size_t i = 0; i < val.size(); ++i) {
      double gi = static_cast<double>(g[i]) * scale;
      if (cfg_.weight_decay > 0.0) gi += cfg_.weight_decay * static_cast<double>(val[i]);
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double step = cfg_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.eps);
      val[i] = static_cast<T>(static_cast<double>(val[i]) - step);
      g[i] = T{};
    }
  }

  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Slot<float>> f_;
  std::vector<Slot<double>> d_;
};

}  // namespace cpr
