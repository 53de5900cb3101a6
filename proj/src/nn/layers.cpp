#include "setcomm/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace setcomm::nn {

namespace {

class Collector : public ParamVisitor {
 public:
  std::vector<Var> params;
  void param(const std::string&, Var& value) override { params.push_back(value); }
  void buffer(const std::string&, Mat&) override {}
};

}  // namespace

std::vector<Var> Module::parameters() {
  Collector c;
  visit("", c);
  return c.params;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.value().size());
  return n;
}

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, float bound, Rng& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mat normal_init(Eigen::Index rows, Eigen::Index cols, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(int in, int out, Rng& rng, bool bias) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight_ = parameter(uniform_init(in, out, bound, rng));
  if (bias) bias_ = parameter(uniform_init(1, out, bound, rng));
}

Var Linear::operator()(const Var& x) const {
  Var y = matmul(x, weight_);
  return bias_.defined() ? add_row(y, bias_) : y;
}

void Linear::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + "weight", weight_);
  if (bias_.defined()) v.param(prefix + "bias", bias_);
}

Embedding::Embedding(int count, int dim, Rng& rng, float stddev)
    : weight_(parameter(normal_init(count, dim, stddev, rng))) {}

Var Embedding::operator()(std::span<const int> ids) const { return gather_rows(weight_, ids); }

void Embedding::visit(const std::string& prefix, ParamVisitor& v) { v.param(prefix + "weight", weight_); }

LayerNorm::LayerNorm(int dim)
    : gamma_(parameter(Mat::Ones(1, dim))), beta_(parameter(Mat::Zero(1, dim))) {}

Var LayerNorm::operator()(const Var& x) const { return layernorm(x, gamma_, beta_); }

void LayerNorm::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + "gamma", gamma_);
  v.param(prefix + "beta", beta_);
}

GRUCell::GRUCell(int input, int hidden, Rng& rng) : hidden_(hidden) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(hidden));
  w_ih_ = parameter(uniform_init(input, 3 * hidden, bound, rng));
  w_hh_ = parameter(uniform_init(hidden, 3 * hidden, bound, rng));
  b_ih_ = parameter(uniform_init(1, 3 * hidden, bound, rng));
  b_hh_ = parameter(uniform_init(1, 3 * hidden, bound, rng));
}

Var GRUCell::operator()(const Var& x, const Var& h) const {
  return gru_cell(x, h, w_ih_, w_hh_, b_ih_, b_hh_);
}

void GRUCell::visit(const std::string& prefix, ParamVisitor& v) {
  v.param(prefix + "w_ih", w_ih_);
  v.param(prefix + "w_hh", w_hh_);
  v.param(prefix + "b_ih", b_ih_);
  v.param(prefix + "b_hh", b_hh_);
}

ConvNet::ConvNet(const ConvNetConfig& config, Rng& rng) : config_(config) {
  if (config.blocks < 1 || config.output_side() < 1 ||
      (config.resolution % (1 << config.blocks)) != 0) {
    throw std::invalid_argument("ConvNet: resolution must be divisible by 2^blocks");
  }
  int in = config.in_channels;
  for (int b = 0; b < config.blocks; ++b) {
    Block blk;
    const float bound = 1.0f / std::sqrt(static_cast<float>(9 * in));
    blk.weight = parameter(uniform_init(9 * in, config.filters, bound, rng));
    blk.bias = parameter(uniform_init(1, config.filters, bound, rng));
    blk.gamma = parameter(Mat::Ones(1, config.filters));
    blk.beta = parameter(Mat::Zero(1, config.filters));
    blk.running_mean = Mat::Zero(1, config.filters);
    blk.running_var = Mat::Ones(1, config.filters);
    blocks_.push_back(std::move(blk));
    in = config.filters;
  }
}

Var ConvNet::operator()(const Var& pixels, bool training) {
  const int n = static_cast<int>(pixels.rows());
  int side = config_.resolution;
  if (pixels.cols() != static_cast<Eigen::Index>(side) * side * config_.in_channels) {
    throw std::invalid_argument("ConvNet: pixel row width does not match resolution");
  }
  Var x = reshape(pixels, static_cast<Eigen::Index>(n) * side * side, config_.in_channels);
  for (auto& blk : blocks_) {
    x = conv3x3(x, blk.weight, blk.bias, n, side, side);
    x = batchnorm(x, blk.gamma, blk.beta, blk.running_mean, blk.running_var, training);
    x = relu(maxpool2(x, n, side, side));
    side /= 2;
  }
  return reshape(x, n, static_cast<Eigen::Index>(side) * side * config_.filters);
}

void ConvNet::visit(const std::string& prefix, ParamVisitor& v) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + "block" + std::to_string(i) + ".";
    v.param(p + "weight", blocks_[i].weight);
    v.param(p + "bias", blocks_[i].bias);
    v.param(p + "gamma", blocks_[i].gamma);
    v.param(p + "beta", blocks_[i].beta);
    v.buffer(p + "running_mean", blocks_[i].running_mean);
    v.buffer(p + "running_var", blocks_[i].running_var);
  }
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads, Rng& rng)
    : heads_(heads), q_(dim, dim, rng), k_(dim, dim, rng), v_(dim, dim, rng), o_(dim, dim, rng) {
  if (dim % heads != 0) throw std::invalid_argument("MultiHeadAttention: dim % heads != 0");
}

Var MultiHeadAttention::operator()(const Var& query, const Var& memory, int batch, int tq,
                                   int tk, bool causal,
                                   std::span<const int> memory_lengths) const {
  Var att = attention(q_(query), k_(memory), v_(memory), batch, tq, tk, heads_, causal,
                      memory_lengths);
  return o_(att);
}

void MultiHeadAttention::visit(const std::string& prefix, ParamVisitor& v) {
  q_.visit(prefix + "q.", v);
  k_.visit(prefix + "k.", v);
  v_.visit(prefix + "v.", v);
  o_.visit(prefix + "o.", v);
}

FeedForward::FeedForward(int dim, int hidden, Rng& rng) : in_(dim, hidden, rng), out_(hidden, dim, rng) {}

Var FeedForward::operator()(const Var& x) const { return out_(relu(in_(x))); }

void FeedForward::visit(const std::string& prefix, ParamVisitor& v) {
  in_.visit(prefix + "in.", v);
  out_.visit(prefix + "out.", v);
}

TransformerLayer::TransformerLayer(int dim, int heads, int ff, bool cross_attention, Rng& rng)
    : cross_(cross_attention),
      ln_self_(dim),
      ln_cross_(dim),
      ln_ff_(dim),
      self_attn_(dim, heads, rng),
      ff_(dim, ff, rng) {
  if (cross_) cross_attn_ = MultiHeadAttention(dim, heads, rng);
}

Var TransformerLayer::operator()(const Var& x, int batch, int t, bool causal,
                                 std::span<const int> lengths, const Var* memory, int tm,
                                 std::span<const int> memory_lengths) const {
  Var h = ln_self_(x);
  Var y = add(x, self_attn_(h, h, batch, t, t, causal, lengths));
  if (cross_) {
    if (memory == nullptr) throw std::invalid_argument("TransformerLayer: missing memory");
    y = add(y, cross_attn_(ln_cross_(y), *memory, batch, t, tm, false, memory_lengths));
  }
  return add(y, ff_(ln_ff_(y)));
}

void TransformerLayer::visit(const std::string& prefix, ParamVisitor& v) {
  ln_self_.visit(prefix + "ln_self.", v);
  self_attn_.visit(prefix + "self_attn.", v);
  if (cross_) {
    ln_cross_.visit(prefix + "ln_cross.", v);
    cross_attn_.visit(prefix + "cross_attn.", v);
  }
  ln_ff_.visit(prefix + "ln_ff.", v);
  ff_.visit(prefix + "ff.", v);
}

}  // namespace setcomm::nn
