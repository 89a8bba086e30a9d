#pragma once

#include <cmath>
#include <vector>

#include "omnigf/core/nn.hpp"

namespace omnigf {

// lr(t) = 0.5 * lr_max * (1 + cos(pi * t / T))
inline double cosine_lr(int step, int total, double lr_max) {
  if (total <= 0) return lr_max;
  return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * step / total));
}

// AdamW with two parameter groups (adapter / head) at distinct learning
// rates. Decoupled weight decay; bias-corrected moments.
template <class T>
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<ParamEntry<T>> adapter_params, std::vector<ParamEntry<T>> head_params,
        Hyper hyper = {})
      : hyper_(hyper) {
    for (auto& p : adapter_params) slots_.push_back(make_slot(p, /*adapter=*/true));
    for (auto& p : head_params) slots_.push_back(make_slot(p, /*adapter=*/false));
  }

  void step(double lr_adapter, double lr_head) {
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, t_);
    const double bc2 = 1.0 - std::pow(hyper_.beta2, t_);
    for (auto& s : slots_) {
      const double lr = s.adapter ? lr_adapter : lr_head;
      auto& val = s.entry.var->value;
      auto& grad = s.entry.var->grad;
      if (grad.shape != val.shape) continue;  // never touched by backward
      for (std::int64_t i = 0; i < val.size(); ++i) {
        const double g = static_cast<double>(grad.data[i]);
        double m = static_cast<double>(s.m.data[i]);
        double v = static_cast<double>(s.v.data[i]);
        m = hyper_.beta1 * m + (1.0 - hyper_.beta1) * g;
        v = hyper_.beta2 * v + (1.0 - hyper_.beta2) * g * g;
        s.m.data[i] = static_cast<T>(m);
        s.v.data[i] = static_cast<T>(v);
        const double mh = m / bc1;
        const double vh = v / bc2;
        double upd = lr * mh / (std::sqrt(vh) + hyper_.eps);
        if (hyper_.weight_decay > 0.0) upd += lr * hyper_.weight_decay * val.data[i];
        val.data[i] = static_cast<T>(val.data[i] - upd);
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.entry.var->zero_grad();
  }

  int step_count() const { return t_; }
  void set_step_count(int t) { t_ = t; }

  // optimizer state access for checkpointing
  struct Slot {
    ParamEntry<T> entry;
    bool adapter = false;
    Tensor<T> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  static Slot make_slot(const ParamEntry<T>& e, bool adapter) {
    Slot s;
    s.entry = e;
    s.adapter = adapter;
    s.m = Tensor<T>(e.var->value.shape);
    s.v = Tensor<T>(e.var->value.shape);
    return s;
  }

  Hyper hyper_;
  std::vector<Slot> slots_;
  int t_ = 0;
};

}  // namespace omnigf
