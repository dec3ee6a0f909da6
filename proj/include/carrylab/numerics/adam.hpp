#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "carrylab/numerics/tensor.hpp"

namespace carrylab {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamOptions {
  float learning_rate = 3e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

// Bias-corrected Adam. Decoupled weight decay is applied only when nonzero.
class Adam {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit Adam(AdamOptions options = {}) : options_(options) {
    if (!(options_.learning_rate > 0.0f)) throw std::invalid_argument("Adam: learning rate must be positive");
  }

  const AdamOptions& options() const { return options_; }
  void set_learning_rate(float lr) {
    if (!(lr > 0.0f)) throw std::invalid_argument("Adam: learning rate must be positive");
    options_.learning_rate = lr;
  }
  std::uint64_t step_count() const { return step_; }
  const std::vector<Moments>& moments() const { return moments_; }

  // Reinstates saved optimizer state, e.g. from a checkpoint.
  void restore(std::vector<Moments> moments, std::uint64_t step) {
    moments_ = std::move(moments);
    step_ = step;
  }

  void step(std::vector<NamedTensor>& params) {
    if (moments_.empty()) {
      for (auto& p : params) moments_.push_back({std::vector<float>(p.tensor.numel(), 0.0f),
                                                 std::vector<float>(p.tensor.numel(), 0.0f)});
    }
    if (moments_.size() != params.size()) {
      throw std::invalid_argument("Adam: parameter list changed size (" + std::to_string(moments_.size()) + " vs " +
                                  std::to_string(params.size()) + ")");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (moments_[i].m.size() != params[i].tensor.numel()) {
        throw std::invalid_argument("Adam: moment shape mismatch for " + params[i].name);
      }
      for (float g : params[i].tensor.grad()) {
        if (!std::isfinite(g)) throw std::runtime_error("Adam: non-finite gradient in parameter " + params[i].name);
      }
    }

    ++step_;
    const auto t = static_cast<double>(step_);
    const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(options_.beta1), t));
    const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(options_.beta2), t));
    const float lr = options_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].tensor.data();
      auto g = params[i].tensor.grad();
      auto& m = moments_[i].m;
      auto& v = moments_[i].v;
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = options_.beta1 * m[j] + (1.0f - options_.beta1) * g[j];
        v[j] = options_.beta2 * v[j] + (1.0f - options_.beta2) * g[j] * g[j];
        const float mhat = m[j] / c1;
        const float vhat = v[j] / c2;
        if (options_.weight_decay != 0.0f) w[j] -= lr * options_.weight_decay * w[j];
        w[j] -= lr * mhat / (std::sqrt(vhat) + options_.eps);
      }
    }
  }

 private:
  AdamOptions options_;
  std::vector<Moments> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace carrylab
