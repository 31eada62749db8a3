#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sepformer/tensor.hpp"

namespace sepformer {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW-style); 0 disables
  double clip_norm = 0.0;     // global gradient-norm clip; 0 disables
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of a flat parameter block. Throws
/// NumericError (leaving params and state untouched) if any gradient is
/// non-finite.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg);

/// Adam over a list of parameter tensors that share their nodes with a model.
template <typename T>
class Adam {
 public:
  Adam(std::vector<BasicTensor<T>> params, AdamConfig cfg);

  /// Applies one update using the gradients currently stored on the
  /// parameters. Returns the global gradient norm before clipping. The whole
  /// step aborts before any write if a gradient is non-finite.
  double step(double lr);
  void zero_grad();
  std::uint64_t steps_taken() const { return steps_; }

 private:
  std::vector<BasicTensor<T>> params_;
  std::vector<AdamState<T>> states_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
};

/// Cosine annealing from lr0 at step 0 to 0 at total_steps.
double cosine_lr(double lr0, std::uint64_t step, std::uint64_t total_steps);

}  // namespace sepformer
