#include "halo/nn.hpp"

#include <cmath>
#include <cstring>

#include "halo/error.hpp"

namespace halo::nn {

void Sgd::step(std::span<const Param> params) {
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr_ * p.grad[i];
  }
}

void Adam::step(std::span<const Param> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw InvalidArgument("Adam: parameter list changed between steps");
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& p = params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(std::string_view kind, double lr) {
  if (kind == "sgd") return std::make_unique<Sgd>(lr);
  if (kind == "adam") return std::make_unique<Adam>(lr);
  throw InvalidArgument("unknown optimizer: " + std::string(kind));
}

Dense::Dense(int in, int out, std::mt19937_64& rng) : w(out, in), b(Eigen::VectorXd::Zero(out)) {
  const double bound = std::sqrt(6.0 / in);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  zero_grad();
}

Eigen::MatrixXd Dense::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  gw.noalias() += dy * x.transpose();
  gb += dy.rowwise().sum();
  return w.transpose() * dy;
}

void Dense::zero_grad() {
  gw = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  gb = Eigen::VectorXd::Zero(b.size());
}

void Dense::append_params(std::vector<Param>& out) {
  out.push_back(param_of(w, gw));
  out.push_back(param_of(b, gb));
}

std::uint64_t checksum(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace halo::nn
