#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "msdml/error.hpp"
#include "msdml/nn.hpp"

namespace msdml {

enum class OptimizerKind { adagrad, adam };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adagrad") return OptimizerKind::adagrad;
  if (s == "adam") return OptimizerKind::adam;
  fail<UsageError>("unknown optimizer '", s, "'");
}
inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adagrad ? "adagrad" : "adam"; }

// Adagrad (accumulator starts at initial_accumulator) and Adam in one type so
// trainers can switch by configuration.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
    require<UsageError>(learning_rate > 0.0, "learning rate must be positive");
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  long steps() const { return step_; }

  void step(nn::ParamStore<T>& params, const nn::Gradients<T>& grads) {
    if (m_.empty()) {
      m_ = params.zeros_like();
      v_ = params.zeros_like();
      if (kind_ == OptimizerKind::adagrad)
        for (auto& a : v_) a.setConstant(static_cast<T>(initial_accumulator));
    }
    ++step_;
    const T lr = static_cast<T>(lr_);
    const T eps = static_cast<T>(epsilon);
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      auto& w = params.values[i];
      const auto& g = grads[i];
      if (kind_ == OptimizerKind::adagrad) {
        v_[i].array() += g.array().square();
        w.array() -= lr * g.array() / (v_[i].array().sqrt() + eps);
      } else {
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        m_[i] = b1 * m_[i] + (1 - b1) * g;
        v_[i].array() = b2 * v_[i].array() + (1 - b2) * g.array().square();
        const T c1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(step_)));
        const T c2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(step_)));
        w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
      }
    }
  }

  static constexpr double initial_accumulator = 0.0;
  static constexpr double epsilon = 1e-7;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;

 private:
  OptimizerKind kind_;
  double lr_;
  long step_ = 0;
  nn::Gradients<T> m_, v_;
};

}  // namespace msdml
