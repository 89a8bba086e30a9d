#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "omnigf/core/autodiff.hpp"
#include "omnigf/core/rng.hpp"

namespace omnigf::test {

// Scratch directory unique per test binary run.
inline std::filesystem::path tmpdir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("omnigf_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

// Central finite-difference gradient check. `rebuild` must construct the loss
// from current parameter values from scratch. Samples `samples` coordinates
// per parameter tensor; returns the worst relative error seen.
struct GradCheckResult {
  double worst_rel = 0.0;
  int checked = 0;
};

inline GradCheckResult check_gradients(const std::vector<Var<double>>& params,
                                       const std::function<Var<double>()>& rebuild, int samples,
                                       Rng& rng, double h = 1e-5) {
  auto loss = rebuild();
  backward(loss);
  GradCheckResult res;
  for (const auto& p : params) {
    if (!p->requires_grad) continue;
    const std::int64_t n = p->value.size();
    for (int s = 0; s < samples; ++s) {
      const std::int64_t i = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(n));
      const double save = p->value.data[i];
      const double step = h * std::max(1.0, std::abs(save));
      p->value.data[i] = save + step;
      const double lp = rebuild()->value.item();
      p->value.data[i] = save - step;
      const double lm = rebuild()->value.item();
      p->value.data[i] = save;
      const double fd = (lp - lm) / (2 * step);
      const double an = p->grad.shape == p->value.shape ? p->grad.data[i] : 0.0;
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      res.worst_rel = std::max(res.worst_rel, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace omnigf::test
