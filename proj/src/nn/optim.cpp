#include "setcomm/nn/optim.hpp"

#include <cmath>

namespace setcomm::nn {

Adam::Adam(std::vector<Var> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(options_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(options_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const Mat& g = p.grad();
    m_[i] = options_.beta1 * m_[i] + (1.0f - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0f - options_.beta2) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        options_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.eps);
  }
}

}  // namespace setcomm::nn
