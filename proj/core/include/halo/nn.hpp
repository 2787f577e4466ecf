#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace halo::nn {

/// A trainable tensor viewed as flat storage plus its gradient buffer.
struct Param {
  std::span<double> value;
  std::span<double> grad;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update; `params` must list the same tensors in the same order every call.
  virtual void step(std::span<const Param> params) = 0;
  virtual void set_learning_rate(double lr) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::span<const Param> params) override;
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<const Param> params) override;
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// "sgd" or "adam".
std::unique_ptr<Optimizer> make_optimizer(std::string_view kind, double lr);

/// y = W x + b over column batches, with accumulated gradients.
struct Dense {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;

  Dense() = default;
  /// He-uniform weights, zero bias.
  Dense(int in, int out, std::mt19937_64& rng);

  int in() const { return static_cast<int>(w.cols()); }
  int out() const { return static_cast<int>(w.rows()); }
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const { return (w * x).colwise() + b; }
  /// Accumulates dW, db and returns dL/dx.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);
  void zero_grad();
  void append_params(std::vector<Param>& out);
};

inline Param param_of(Eigen::MatrixXd& value, Eigen::MatrixXd& grad) {
  return {{value.data(), static_cast<std::size_t>(value.size())}, {grad.data(), static_cast<std::size_t>(grad.size())}};
}
inline Param param_of(Eigen::VectorXd& value, Eigen::VectorXd& grad) {
  return {{value.data(), static_cast<std::size_t>(value.size())}, {grad.data(), static_cast<std::size_t>(grad.size())}};
}

/// FNV-1a over the raw bytes of the doubles.
std::uint64_t checksum(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace halo::nn
