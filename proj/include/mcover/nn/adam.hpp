#ifndef MCOVER_NN_ADAM_HPP
#define MCOVER_NN_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mcover/error.hpp"
#include "mcover/nn/tensor.hpp"

namespace mcover::nn {

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool initialized() const { return !first_moment.empty(); }
};

// One bias-corrected Adam update. The gradients are validated before any
// parameter is touched, so a NaN leaves parameters and state unchanged.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state) {
  require(params.size() == grads.size(), ErrorKind::kShape, "adam: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i]->shape(), params[i]->shape(), "adam gradient " + std::to_string(i));
    require(grads[i]->all_finite(), ErrorKind::kNumeric, "adam: non-finite gradient in tensor " + std::to_string(i));
  }
  if (!state.initialized()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  require(state.first_moment.size() == params.size(), ErrorKind::kShape, "adam: state does not match parameters");

  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    require_shape(m.shape(), p.shape(), "adam moment " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      p[k] = static_cast<T>(p[k] - state.lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

}  // namespace mcover::nn

#endif  // MCOVER_NN_ADAM_HPP
