#pragma once

// Adam with classic L2 regularization: the decay term is added to the
// gradient before the moment updates, so it flows through both moments.
// Each parameter tensor carries its own learning rate at step time, which
// is how the scratch/pretrained group split is expressed.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "umbra/core/graph.hpp"
#include "umbra/core/tensor.hpp"

namespace umbra {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ag::Var& p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  /// One update from the gradients currently on the parameters; `lr` gives
  /// the rate for each parameter tensor (same order as construction).
  /// Missing gradients are treated as zero (the decay term still applies).
  void step(const std::vector<double>& lr) {
    if (lr.size() != params_.size())
      throw Error("adam: got " + std::to_string(lr.size()) + " rates for " +
                  std::to_string(params_.size()) + " parameters");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i]->value;
      const Tensor& grad = params_[i]->grad;
      bool has_grad = !grad.empty();
      for (std::int64_t j = 0; j < p.size(); ++j) {
        double g = (has_grad ? grad[j] : 0.0) + cfg_.weight_decay * p[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        p[j] -= lr[i] * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  const std::vector<ag::Var>& params() const { return params_; }
  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<ag::Var> params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace umbra
