#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hypogen/autodiff.hpp"

namespace hypogen {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
  std::size_t step = 0;

  bool operator==(const AdamMoments&) const = default;
};

/// Per-parameter Adam moments keyed by parameter name.
using AdamState = std::map<std::string, AdamMoments>;

using NamedParams = std::vector<std::pair<std::string, Var<float>>>;

/// One Adam update with bias correction. A parameter that received no
/// gradient this step is treated as having a zero gradient.
inline void adam_step(const NamedParams& params, AdamState& state, double lr,
                      const AdamHyper& hp = {}) {
  for (const auto& [name, p] : params) {
    if (!p->grad.empty() && p->grad.size() != p->size())
      throw ContractError("adam_step: gradient of " + name + " has the wrong size");
    AdamMoments& s = state[name];
    if (s.m.empty()) {
      s.m.assign(p->size(), 0.0f);
      s.v.assign(p->size(), 0.0f);
    } else if (s.m.size() != p->size()) {
      throw ContractError("adam_step: state for " + name + " does not match its shape");
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(s.step));
    const bool has_grad = !p->grad.empty();
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = has_grad ? p->grad[i] : 0.0;
      const double m = hp.beta1 * s.m[i] + (1.0 - hp.beta1) * g;
      const double v = hp.beta2 * s.v[i] + (1.0 - hp.beta2) * g * g;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + hp.eps);
      p->value[i] = static_cast<float>(p->value[i] - update);
    }
  }
}

}  // namespace hypogen
