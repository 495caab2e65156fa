#pragma once

// Central finite-difference checks for hand-written backward passes.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "bigcolor/nn/param.hpp"
#include "bigcolor/random.hpp"
#include "bigcolor/tensor.hpp"

namespace gradcheck {

using bigcolor::Rng;
using bigcolor::Tensor;

inline Tensor<double> random_tensor(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.vec()) v = rng.normal() * scale;
  return t;
}

/// Projection weights turning an output tensor into a scalar loss
/// L = sum(w * y); dL/dy = w.
inline double project(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

struct Result {
  double worst = 0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

inline constexpr double kTolerance = 1e-2;

/// Compares `analytic` against central differences of `loss` w.r.t. the
/// entries of `x` (perturbed in place). Up to `samples` entries are checked.
/// Error per entry: |a - n| / max(|a| + |n|, floor).
///
/// ReLU networks are only piecewise smooth. When the +-eps stencil straddles
/// a kink the difference quotient mixes two linear pieces; such an entry is
/// re-probed with eps / 100 and counted in `kinks` if that agrees. A wrong
/// backward fails at both step sizes.
inline Result check(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss,
                    double eps = 1e-4, std::size_t samples = 40, double floor = 1e-6, std::uint64_t seed = 99) {
  Result r;
  Rng pick(seed);
  const std::size_t n = x.size();
  const std::size_t count = std::min(samples, n);
  auto central = [&](std::size_t i, double h) {
    const double orig = x[i];
    x[i] = orig + h;
    const double lp = loss();
    x[i] = orig - h;
    const double lm = loss();
    x[i] = orig;
    return (lp - lm) / (2 * h);
  };
  auto rel = [&](double a, double num) { return std::abs(a - num) / std::max(std::abs(a) + std::abs(num), floor); };
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = count == n ? k : static_cast<std::size_t>(pick.below(n));
    const double a = analytic[i];
    double err = rel(a, central(i, eps));
    if (err >= kTolerance) {
      const double fine = rel(a, central(i, eps / 100));
      if (fine < kTolerance) {
        ++r.kinks;
        err = fine;
      }
    }
    r.worst = std::max(r.worst, err);
    ++r.checked;
  }
  return r;
}

#define EXPECT_GRAD_OK(result, what)                                                     \
  do {                                                                                   \
    const auto r_ = (result);                                                            \
    EXPECT_LT(r_.worst, gradcheck::kTolerance) << what << " worst rel err " << r_.worst; \
    EXPECT_GT(r_.checked, 0u) << what;                                                   \
  } while (0)

/// Checks every parameter's gradient (accumulated by a single backward with
/// dL/dy = w before this call).
inline void check_params(const bigcolor::nn::ParamRefs<double>& params, const std::function<double()>& loss,
                         std::size_t samples = 12) {
  for (auto& [name, p] : params) {
    const Tensor<double> analytic = p->grad;
    EXPECT_GRAD_OK(check(p->value, analytic, loss, 1e-4, samples), "param " << name);
  }
}

}  // namespace gradcheck
