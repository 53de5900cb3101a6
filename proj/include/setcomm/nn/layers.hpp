#pragma once

#include "setcomm/nn/tensor.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace setcomm::nn {

using Rng = std::mt19937_64;

// Walks every learnable parameter and persistent buffer of a module tree.
class ParamVisitor {
 public:
  virtual ~ParamVisitor() = default;
  virtual void param(const std::string& name, Var& value) = 0;
  virtual void buffer(const std::string& name, Mat& value) = 0;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void visit(const std::string& prefix, ParamVisitor& v) = 0;

  std::vector<Var> parameters();
  std::size_t parameter_count();
};

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, float bound, Rng& rng);
Mat normal_init(Eigen::Index rows, Eigen::Index cols, float stddev, Rng& rng);

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, ParamVisitor& v) override;
  int in_features() const { return static_cast<int>(weight_.rows()); }
  int out_features() const { return static_cast<int>(weight_.cols()); }

 private:
  Var weight_;  // [in, out]
  Var bias_;    // [1, out], undefined when bias is off
};

class Embedding : public Module {
 public:
  Embedding() = default;
  Embedding(int count, int dim, Rng& rng, float stddev = 1.0f);
  Var operator()(std::span<const int> ids) const;
  const Var& weight() const { return weight_; }
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  Var weight_;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  Var gamma_;
  Var beta_;
};

class GRUCell : public Module {
 public:
  GRUCell() = default;
  GRUCell(int input, int hidden, Rng& rng);
  Var operator()(const Var& x, const Var& h) const;
  int hidden_size() const { return hidden_; }
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  int hidden_ = 0;
  Var w_ih_, w_hh_, b_ih_, b_hh_;
};

// Stack of [conv3x3 -> batchnorm -> maxpool2 -> relu] blocks over square
// RGB images, flattened to one embedding row per image.
struct ConvNetConfig {
  int resolution = 64;
  int blocks = 4;
  int filters = 64;
  int in_channels = 3;

  int output_side() const { return resolution >> blocks; }
  int embedding_dim() const { return output_side() * output_side() * filters; }
};

class ConvNet : public Module {
 public:
  ConvNet() = default;
  ConvNet(const ConvNetConfig& config, Rng& rng);
  // pixels: [N, H*W*C] in HWC order.
  Var operator()(const Var& pixels, bool training);
  const ConvNetConfig& config() const { return config_; }
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  struct Block {
    Var weight, bias, gamma, beta;
    Mat running_mean, running_var;
  };
  ConvNetConfig config_;
  std::vector<Block> blocks_;
};

// Pre-norm transformer blocks used by the reconstruction models.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int heads, Rng& rng);
  Var operator()(const Var& query, const Var& memory, int batch, int tq, int tk,
                 bool causal, std::span<const int> memory_lengths) const;
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  int heads_ = 1;
  Linear q_, k_, v_, o_;
};

class FeedForward : public Module {
 public:
  FeedForward() = default;
  FeedForward(int dim, int hidden, Rng& rng);
  Var operator()(const Var& x) const;
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  Linear in_, out_;
};

class TransformerLayer : public Module {
 public:
  TransformerLayer() = default;
  TransformerLayer(int dim, int heads, int ff, bool cross_attention, Rng& rng);
  // x: [batch*t, dim]. memory is only read when the layer has cross attention.
  Var operator()(const Var& x, int batch, int t, bool causal, std::span<const int> lengths,
                 const Var* memory = nullptr, int tm = 0,
                 std::span<const int> memory_lengths = {}) const;
  void visit(const std::string& prefix, ParamVisitor& v) override;

 private:
  bool cross_ = false;
  LayerNorm ln_self_, ln_cross_, ln_ff_;
  MultiHeadAttention self_attn_, cross_attn_;
  FeedForward ff_;
};

}  // namespace setcomm::nn
