#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major float
// matrices. Every value is 2-D; images travel as [N*H*W, C] pixel rows (NHWC),
// sequences as [B*T, D].

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace setcomm::nn {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Adds g into grad, allocating on first use.
  void accumulate(const Mat& g);
  Mat& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  float item() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Reverse pass from this (1x1) value.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording is on by default; NoGradGuard turns it off for the
// lifetime of the guard on the current thread.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Mat value);
Var parameter(Mat value);

// Linear algebra and elementwise arithmetic.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a [1,C] row over rows
Var scale(const Var& a, float s);
Var add_scalar(const Var& a, float s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var log(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// Shape manipulation.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& a, std::span<const int> rows);
Var group_mean(const Var& a, const std::vector<std::vector<int>>& groups);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var rowwise_dot(const Var& a, const Var& b);

// out[i] = mask[i] ? a[i] : b[i], with a constant per-row mask.
Var blend_rows(const Var& a, const Var& b, std::span<const float> mask);

// Forward value is `hard`; gradient flows into `soft` unchanged.
Var straight_through(const Var& soft, Mat hard);

// Mean binary cross-entropy over [N,1] logits.
Var bce_with_logits(const Var& logits, std::span<const float> targets);
// Mean cross-entropy of row-wise logits; rows whose target is negative are
// ignored.
Var cross_entropy(const Var& logits, std::span<const int> targets);

// 3x3 same-padding convolution on NHWC pixel rows. x: [N*H*W, C],
// w: [9*C, F], b: [1, F] -> [N*H*W, F].
Var conv3x3(const Var& x, const Var& w, const Var& b, int n, int h, int w_px);
// 2x2 max pooling on NHWC pixel rows -> [N*(H/2)*(W/2), C].
Var maxpool2(const Var& x, int n, int h, int w_px);
// Per-column batch normalization. Running statistics are updated in place
// when `training` is set.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Mat& running_mean,
              Mat& running_var, bool training, float momentum = 0.1f,
              float eps = 1e-5f);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);

// Fused single-layer GRU cell with PyTorch gate layout (r, z, n).
Var gru_cell(const Var& x, const Var& h, const Var& w_ih, const Var& w_hh,
             const Var& b_ih, const Var& b_hh);

// Scaled dot-product attention for `batch` independent sequences.
// q: [batch*tq, d], k/v: [batch*tk, d]. Keys at positions >= key_lengths[b]
// are masked; `causal` additionally masks keys after the query position.
Var attention(const Var& q, const Var& k, const Var& v, int batch, int tq, int tk,
              int heads, bool causal, std::span<const int> key_lengths);

}  // namespace setcomm::nn
