#include "sepformer/optim.hpp"

#include <cmath>
#include <numbers>

namespace sepformer {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw NumericError("adam_step: parameter/gradient size mismatch");
  for (T g : grads) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  if (state.m.size() != params.size()) throw NumericError("adam_step: state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<T>(cfg.beta1);
  const auto b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(state.m[i]) / bc1;
    const double vhat = static_cast<double>(state.v[i]) / bc2;
    double p = static_cast<double>(params[i]);
    if (cfg.weight_decay > 0.0) p -= lr * cfg.weight_decay * p;
    params[i] = static_cast<T>(p - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<BasicTensor<T>> params, AdamConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

template <typename T>
double Adam<T>::step(double lr) {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (T g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("Adam: non-finite gradient, step aborted");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double factor = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  std::vector<T> scaled;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto g = p.grad();
    if (g.empty()) continue;
    std::span<const T> use = g;
    if (factor != 1.0) {
      scaled.assign(g.begin(), g.end());
      for (auto& v : scaled) v = static_cast<T>(v * factor);
      use = scaled;
    }
    adam_step<T>(p.data_mut(), use, states_[i], lr, cfg_);
  }
  ++steps_;
  return norm;
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double cosine_lr(double lr0, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return lr0;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, double,
                               const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, double,
                                const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace sepformer
