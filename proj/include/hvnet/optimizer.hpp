// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hvnet/config.hpp"
#include "hvnet/model.hpp"

namespace hvnet {

/// Linear warmup from `warmup_ratio` to 1 over the first iterations, then a
/// step decay at milestones placed at the same fractions of `total_epochs`
/// as `decay_epochs` are of `schedule_epochs`.
inline double learning_rate_at(const OptimizerConfig& cfg, std::size_t iteration, std::size_t epoch,
                               std::size_t total_epochs) {
  double factor = 1.0;
  if (iteration < cfg.warmup_iterations) {
    factor = cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * static_cast<double>(iteration) /
                                    static_cast<double>(cfg.warmup_iterations);
  }
  for (const double m : cfg.decay_epochs) {
    const double milestone = m / cfg.schedule_epochs * static_cast<double>(total_epochs);
    if (static_cast<double>(epoch) >= milestone) factor *= cfg.decay_ratio;
  }
  return cfg.learning_rate * factor;
}

/// Adam with L2 weight decay folded into the gradient.
template <typename T>
class Adam {
 public:
  Adam(const ModelParams<T>& like, const OptimizerConfig& cfg)
      : cfg_(cfg), m_(zero_grads_like(like)), v_(zero_grads_like(like)) {}

  void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
    ++t_;
    std::vector<DenseGrid<T>*> p, m, v;
    std::vector<const DenseGrid<T>*> g;
    for_each_param(params, [&](const std::string&, DenseGrid<T>& x) { p.push_back(&x); });
    for_each_param(grads, [&](const std::string&, const DenseGrid<T>& x) { g.push_back(&x); });
    for_each_param(m_, [&](const std::string&, DenseGrid<T>& x) { m.push_back(&x); });
    for_each_param(v_, [&](const std::string&, DenseGrid<T>& x) { v.push_back(&x); });
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& pk = *p[k];
      const auto& gk = *g[k];
      auto& mk = *m[k];
      auto& vk = *v[k];
      for (std::size_t i = 0; i < pk.size(); ++i) {
        const double grad = static_cast<double>(gk[i]) + cfg_.weight_decay * static_cast<double>(pk[i]);
        const double mi = cfg_.beta1 * static_cast<double>(mk[i]) + (1.0 - cfg_.beta1) * grad;
        const double vi = cfg_.beta2 * static_cast<double>(vk[i]) + (1.0 - cfg_.beta2) * grad * grad;
        mk[i] = static_cast<T>(mi);
        vk[i] = static_cast<T>(vi);
        const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon);
        pk[i] = static_cast<T>(static_cast<double>(pk[i]) - update);
      }
    }
  }

  [[nodiscard]] std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  ModelParams<T> m_;
  ModelParams<T> v_;
  std::size_t t_ = 0;
};

}  // namespace hvnet
