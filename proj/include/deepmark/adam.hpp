#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepmark/tensor.hpp"

namespace deepmark {

/// Bias-corrected ADAM. Moment slots follow the parameter list given at
/// construction; one shared step counter.
template <typename T>
struct AdamStateT {
  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;
  std::int64_t step = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  AdamStateT() = default;
  explicit AdamStateT(const std::vector<TensorT<T>*>& params, T learning_rate = T(1e-3))
      : lr(learning_rate) {
    slots.reserve(params.size());
    for (const auto* p : params)
      slots.push_back(Slot{std::vector<T>(p->numel(), T(0)), std::vector<T>(p->numel(), T(0))});
  }
};

using AdamState = AdamStateT<float>;

/// One update over all parameters, reading each parameter's grad field.
template <typename T>
void adam_step(const std::vector<TensorT<T>*>& params, AdamStateT<T>& state) {
  if (params.size() != state.slots.size())
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                " parameters vs " + std::to_string(state.slots.size()) +
                                " state slots");
  state.step += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                               static_cast<double>(state.step)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                               static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<T>& p = *params[i];
    auto& slot = state.slots[i];
    if (slot.m.size() != p.numel())
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has " +
                                  std::to_string(p.numel()) + " elements vs state slot " +
                                  std::to_string(slot.m.size()));
    if (p.grad.size() != p.numel())
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                  " has no gradient of matching shape");
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const T g = p.grad[j];
      slot.m[j] = state.beta1 * slot.m[j] + (T(1) - state.beta1) * g;
      slot.v[j] = state.beta2 * slot.v[j] + (T(1) - state.beta2) * g * g;
      const T mhat = slot.m[j] / bc1;
      const T vhat = slot.v[j] / bc2;
      p.data[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

/// Single-tensor convenience overload.
template <typename T>
void adam_step(TensorT<T>& param, AdamStateT<T>& state) {
  std::vector<TensorT<T>*> ps{&param};
  adam_step(ps, state);
}

}  // namespace deepmark
