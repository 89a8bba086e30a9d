#pragma once

#include <string>
#include <vector>

#include "omnigf/core/autodiff.hpp"
#include "omnigf/core/rng.hpp"

namespace omnigf {

// Parameter bookkeeping. Every trainable or frozen tensor registers here with
// a stable name and a group tag; the optimizer and the checkpoint writer walk
// the registry instead of knowing the model structure.
enum class ParamGroup { Base, Adapter, Head };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Base: return "base";
    case ParamGroup::Adapter: return "adapter";
    case ParamGroup::Head: return "head";
  }
  return "?";
}

template <class T>
struct ParamEntry {
  std::string name;
  Var<T> var;
  ParamGroup group = ParamGroup::Base;
};

template <class T>
class ParamRegistry {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, ParamGroup group) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::logic_error("duplicate parameter name: " + name);
    // Base weights are frozen: they never require gradients and never reach
    // the optimizer.
    auto v = make_var(std::move(init), group != ParamGroup::Base);
    entries_.push_back({name, v, group});
    return v;
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  std::vector<ParamEntry<T>> group(ParamGroup g) const {
    std::vector<ParamEntry<T>> out;
    for (const auto& e : entries_)
      if (e.group == g) out.push_back(e);
    return out;
  }

  std::vector<ParamEntry<T>> trainable() const {
    std::vector<ParamEntry<T>> out;
    for (const auto& e : entries_)
      if (e.group != ParamGroup::Base) out.push_back(e);
    return out;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.var->requires_grad) e.var->zero_grad();
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.group != ParamGroup::Base) n += e.var->value.size();
    return n;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

// ---- initializers ----

template <class T>
Tensor<T> randn_tensor(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <class T>
Tensor<T> kaiming_tensor(std::vector<int> shape, Rng& rng, int fan_in) {
  return randn_tensor<T>(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

// ---- layers ----

template <class T>
struct LinearLayer {
  Var<T> w, b;

  void init(ParamRegistry<T>& reg, const std::string& name, int in, int out, Rng& rng,
            ParamGroup group, double w_scale = 0.0) {
    const double std = w_scale > 0.0 ? w_scale : std::sqrt(1.0 / in);
    w = reg.add(name + ".w", randn_tensor<T>({in, out}, rng, std), group);
    b = reg.add(name + ".b", Tensor<T>({out}), group);
  }

  Var<T> forward(const Var<T>& x) const { return linear(x, w, b); }
};

template <class T>
struct LayerNormLayer {
  Var<T> gamma, beta;

  void init(ParamRegistry<T>& reg, const std::string& name, int dim, ParamGroup group) {
    gamma = reg.add(name + ".gamma", Tensor<T>::full({dim}, T(1)), group);
    beta = reg.add(name + ".beta", Tensor<T>({dim}), group);
  }

  Var<T> forward(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <class T>
struct Conv2dLayer {
  Var<T> w, b;
  int stride = 1, pad = 0;

  void init(ParamRegistry<T>& reg, const std::string& name, int cin, int cout, int k, int stride_,
            int pad_, Rng& rng, ParamGroup group) {
    stride = stride_;
    pad = pad_;
    w = reg.add(name + ".w", kaiming_tensor<T>({cout, cin, k, k}, rng, cin * k * k), group);
    b = reg.add(name + ".b", Tensor<T>({cout}), group);
  }

  Var<T> forward(const Var<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <class T>
struct ConvTranspose2dLayer {
  Var<T> w, b;
  int stride = 2, pad = 1;

  void init(ParamRegistry<T>& reg, const std::string& name, int cin, int cout, int k, int stride_,
            int pad_, Rng& rng, ParamGroup group) {
    stride = stride_;
    pad = pad_;
    w = reg.add(name + ".w", kaiming_tensor<T>({cin, cout, k, k}, rng, cin * k * k), group);
    b = reg.add(name + ".b", Tensor<T>({cout}), group);
  }

  Var<T> forward(const Var<T>& x) const { return conv_transpose2d(x, w, b, stride, pad); }
};

}  // namespace omnigf
