#include "setcomm/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace setcomm::nn {

namespace {

#if defined(__GLIBC__)
// Large temporaries are allocated and freed every step; keeping them on the
// heap instead of mmap/munmap avoids page-fault churn.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
#endif

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

// Builds the output node; the backward closure is kept only when some parent
// needs a gradient and recording is enabled.
Var make_result(Mat value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

}  // namespace

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Mat& Node::grad_buffer() {
  if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
  return grad;
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::backward() const {
  require(defined() && rows() == 1 && cols() == 1, "backward: needs a 1x1 value");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Interior gradients are not needed after the pass.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Mat value) { return Var(std::move(value), false); }
Var parameter(Mat value) { return Var(std::move(value), true); }

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Mat out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Mat& a = self.parents[0]->value;
    const Mat& b = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer().noalias() += self.grad * b.transpose();
    if (wants(self, 1)) self.parents[1]->grad_buffer().noalias() += a.transpose() * self.grad;
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const Mat& a = self.parents[0]->value;
    const Mat& b = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer() += self.grad.cwiseProduct(b);
    if (wants(self, 1)) self.parents[1]->grad_buffer() += self.grad.cwiseProduct(a);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be [1, cols]");
  Mat out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->grad_buffer() += self.grad.colwise().sum();
  });
}

Var scale(const Var& a, float s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    self.parents[0]->grad_buffer() += self.grad * s;
  });
}

Var add_scalar(const Var& a, float s) {
  return make_result(a.value().array() + s, {a},
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var relu(const Var& a) {
  return make_result(a.value().cwiseMax(0.0f), {a}, [](Node& self) {
    const Mat& x = self.parents[0]->value;
    self.parents[0]->grad_buffer() +=
        (x.array() > 0.0f).select(self.grad, Mat::Zero(x.rows(), x.cols()));
  });
}

Var sigmoid(const Var& a) {
  Mat out = (1.0f + (-a.value().array()).exp()).inverse().matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto y = self.value.array();
    self.parents[0]->grad_buffer() += (self.grad.array() * y * (1.0f - y)).matrix();
  });
}

Var tanh(const Var& a) {
  return make_result(a.value().array().tanh().matrix(), {a}, [](Node& self) {
    const auto y = self.value.array();
    self.parents[0]->grad_buffer() += (self.grad.array() * (1.0f - y * y)).matrix();
  });
}

Var log(const Var& a) {
  return make_result(a.value().array().log().matrix(), {a}, [](Node& self) {
    self.parents[0]->grad_buffer() +=
        (self.grad.array() / self.parents[0]->value.array()).matrix();
  });
}

namespace {
Mat softmax_value(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}
}  // namespace

Var softmax_rows(const Var& a) {
  return make_result(softmax_value(a.value()), {a}, [](Node& self) {
    const Mat& y = self.value;
    Mat& g = self.parents[0]->grad_buffer();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const float dot = self.grad.row(r).dot(y.row(r));
      g.row(r).array() += y.row(r).array() * (self.grad.row(r).array() - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float m = x.row(r).maxCoeff();
    const float lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Mat& g = self.parents[0]->grad_buffer();
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const float gs = self.grad.row(r).sum();
      g.row(r).array() += self.grad.row(r).array() - self.value.row(r).array().exp() * gs;
    }
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count mismatch");
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows();
  const Eigen::Index c0 = a.cols();
  return make_result(std::move(out), {a}, [r0, c0](Node& self) {
    self.parents[0]->grad_buffer() += Eigen::Map<const Mat>(self.grad.data(), r0, c0);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      auto& p = *self.parents[i];
      p.grad_buffer() += self.grad.middleCols(offsets[i], p.value.cols());
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      auto& p = *self.parents[i];
      p.grad_buffer() += self.grad.middleRows(offsets[i], p.value.rows());
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    self.parents[0]->grad_buffer().middleCols(start, count) += self.grad;
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    self.parents[0]->grad_buffer().middleRows(start, count) += self.grad;
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    Mat& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var group_mean(const Var& a, const std::vector<std::vector<int>>& groups) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(groups.size()), a.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    require(!groups[g].empty(), "group_mean: empty group");
    for (int r : groups[g]) {
      require(r >= 0 && r < a.rows(), "group_mean: index out of range");
      out.row(static_cast<Eigen::Index>(g)) += a.value().row(r);
    }
    out.row(static_cast<Eigen::Index>(g)) /= static_cast<float>(groups[g].size());
  }
  return make_result(std::move(out), {a}, [groups](Node& self) {
    Mat& grad = self.parents[0]->grad_buffer();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const float inv = 1.0f / static_cast<float>(groups[g].size());
      for (int r : groups[g]) grad.row(r) += self.grad.row(static_cast<Eigen::Index>(g)) * inv;
    }
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    self.parents[0]->grad_buffer().array() += self.grad(0, 0);
  });
}

Var mean(const Var& a) {
  const float n = static_cast<float>(a.value().size());
  Mat out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return make_result(std::move(out), {a}, [n](Node& self) {
    self.parents[0]->grad_buffer().array() += self.grad(0, 0) / n;
  });
}

Var rowwise_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "rowwise_dot");
  Mat out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Mat& a = self.parents[0]->value;
    const Mat& b = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer() += (b.array().colwise() * self.grad.col(0).array()).matrix();
    if (wants(self, 1)) self.parents[1]->grad_buffer() += (a.array().colwise() * self.grad.col(0).array()).matrix();
  });
}

Var blend_rows(const Var& a, const Var& b, std::span<const float> mask) {
  require_same_shape(a, b, "blend_rows");
  require(static_cast<Eigen::Index>(mask.size()) == a.rows(), "blend_rows: mask length");
  Eigen::VectorXf m = Eigen::Map<const Eigen::VectorXf>(mask.data(), static_cast<Eigen::Index>(mask.size()));
  Mat out = (a.value().array().colwise() * m.array() +
             b.value().array().colwise() * (1.0f - m.array()))
                .matrix();
  return make_result(std::move(out), {a, b}, [m](Node& self) {
    if (wants(self, 0)) self.parents[0]->grad_buffer() += (self.grad.array().colwise() * m.array()).matrix();
    if (wants(self, 1))
      self.parents[1]->grad_buffer() += (self.grad.array().colwise() * (1.0f - m.array())).matrix();
  });
}

Var straight_through(const Var& soft, Mat hard) {
  require(hard.rows() == soft.rows() && hard.cols() == soft.cols(),
          "straight_through: shape mismatch");
  return make_result(std::move(hard), {soft},
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var bce_with_logits(const Var& logits, std::span<const float> targets) {
  require(logits.cols() == 1 && static_cast<Eigen::Index>(targets.size()) == logits.rows(),
          "bce_with_logits: expects [N,1] logits and N targets");
  const auto n = static_cast<Eigen::Index>(targets.size());
  Eigen::VectorXf t = Eigen::Map<const Eigen::VectorXf>(targets.data(), n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const float x = logits.value()(i, 0);
    // log(1 + exp(-|x|)) + max(x, 0) - x * t
    total += std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0f) - x * t(i);
  }
  Mat out(1, 1);
  out(0, 0) = static_cast<float>(total / static_cast<double>(n));
  return make_result(std::move(out), {logits}, [t, n](Node& self) {
    const Mat& x = self.parents[0]->value;
    Mat& g = self.parents[0]->grad_buffer();
    const float s = self.grad(0, 0) / static_cast<float>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const float p = 1.0f / (1.0f + std::exp(-x(i, 0)));
      g(i, 0) += s * (p - t(i));
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(),
          "cross_entropy: one target per row");
  const Mat& x = logits.value();
  Mat probs = softmax_value(x);
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    require(t < x.cols(), "cross_entropy: target out of range");
    total -= std::log(std::max(probs(r, t), std::numeric_limits<float>::min()));
    ++count;
  }
  Mat out(1, 1);
  out(0, 0) = count ? static_cast<float>(total / count) : 0.0f;
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result(std::move(out), {logits}, [probs = std::move(probs), tg, count](Node& self) {
    if (count == 0) return;
    Mat& g = self.parents[0]->grad_buffer();
    const float s = self.grad(0, 0) / static_cast<float>(count);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      const int t = tg[static_cast<std::size_t>(r)];
      if (t < 0) continue;
      g.row(r) += probs.row(r) * s;
      g(r, t) -= s;
    }
  });
}

Var conv3x3(const Var& x, const Var& w, const Var& b, int n, int h, int w_px) {
  const Eigen::Index c = x.cols();
  const Eigen::Index f = w.cols();
  require(x.rows() == static_cast<Eigen::Index>(n) * h * w_px, "conv3x3: input rows != N*H*W");
  require(w.rows() == 9 * c, "conv3x3: weight rows != 9*C");
  require(b.rows() == 1 && b.cols() == f, "conv3x3: bias shape");

  const Eigen::Index pixels = x.rows();
  Mat col(pixels, 9 * c);
  const float* xv = x.value().data();
  float* colp = col.data();
  const Eigen::Index stride = 9 * c;
  for (int img = 0; img < n; ++img) {
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < w_px; ++xx) {
        float* dst = colp + ((static_cast<Eigen::Index>(img) * h + yy) * w_px + xx) * stride;
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = yy + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int sx = xx + kx - 1;
            float* d = dst + (ky * 3 + kx) * c;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w_px) {
              std::fill_n(d, c, 0.0f);
            } else {
              std::copy_n(xv + ((static_cast<Eigen::Index>(img) * h + sy) * w_px + sx) * c, c, d);
            }
          }
        }
      }
    }
  }
  Mat out = col * w.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), {x, w, b}, [col = std::move(col), n, h, w_px, c](Node& self) {
    if (wants(self, 1)) self.parents[1]->grad_buffer().noalias() += col.transpose() * self.grad;
    if (wants(self, 2)) self.parents[2]->grad_buffer() += self.grad.colwise().sum();
    if (!wants(self, 0)) return;
    Mat dcol = self.grad * self.parents[1]->value.transpose();
    Mat& gx = self.parents[0]->grad_buffer();
    for (int img = 0; img < n; ++img) {
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w_px; ++xx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(img) * h + yy) * w_px + xx;
          const float* srcp = dcol.row(row).data();
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= w_px) continue;
              const Eigen::Index dst = (static_cast<Eigen::Index>(img) * h + sy) * w_px + sx;
              float* g = gx.row(dst).data();
              const float* s = srcp + (ky * 3 + kx) * c;
              for (Eigen::Index ch = 0; ch < c; ++ch) g[ch] += s[ch];
            }
          }
        }
      }
    }
  });
}

Var maxpool2(const Var& x, int n, int h, int w_px) {
  require(h % 2 == 0 && w_px % 2 == 0, "maxpool2: spatial size must be even");
  require(x.rows() == static_cast<Eigen::Index>(n) * h * w_px, "maxpool2: input rows != N*H*W");
  const int oh = h / 2;
  const int ow = w_px / 2;
  const Eigen::Index c = x.cols();
  Mat out(static_cast<Eigen::Index>(n) * oh * ow, c);
  std::vector<int> arg(static_cast<std::size_t>(out.size()));
  const float* xv = x.value().data();
  float* op = out.data();
  for (int img = 0; img < n; ++img) {
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        const Eigen::Index orow = (static_cast<Eigen::Index>(img) * oh + yy) * ow + xx;
        const int r0 = (img * h + 2 * yy) * w_px + 2 * xx;
        const int rows[4] = {r0, r0 + 1, r0 + w_px, r0 + w_px + 1};
        float* o = op + orow * c;
        int* a = arg.data() + orow * c;
        const float* p0 = xv + static_cast<Eigen::Index>(rows[0]) * c;
        for (Eigen::Index ch = 0; ch < c; ++ch) {
          o[ch] = p0[ch];
          a[ch] = rows[0];
        }
        for (int k = 1; k < 4; ++k) {
          const float* pk = xv + static_cast<Eigen::Index>(rows[k]) * c;
          for (Eigen::Index ch = 0; ch < c; ++ch) {
            if (pk[ch] > o[ch]) {
              o[ch] = pk[ch];
              a[ch] = rows[k];
            }
          }
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [arg = std::move(arg), c](Node& self) {
    if (!wants(self, 0)) return;
    float* g = self.parents[0]->grad_buffer().data();
    const float* src = self.grad.data();
    for (Eigen::Index i = 0; i < self.grad.size(); ++i) {
      g[static_cast<Eigen::Index>(arg[static_cast<std::size_t>(i)]) * c + i % c] += src[i];
    }
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, Mat& running_mean,
              Mat& running_var, bool training, float momentum, float eps) {
  const Eigen::Index m = x.rows();
  const Eigen::Index c = x.cols();
  require(gamma.cols() == c && beta.cols() == c, "batchnorm: parameter width");
  const Mat& xv = x.value();
  Eigen::RowVectorXf mu;
  Eigen::RowVectorXf var;
  if (training) {
    require(m > 1, "batchnorm: training needs more than one row");
    mu = xv.colwise().mean();
    var = (xv.rowwise() - mu).array().square().colwise().mean().matrix();
    const float unbias = static_cast<float>(m) / static_cast<float>(m - 1);
    running_mean = (1.0f - momentum) * running_mean + momentum * Mat(mu);
    running_var = (1.0f - momentum) * running_var + momentum * Mat(var * unbias);
  } else {
    mu = running_mean.row(0);
    var = running_var.row(0);
  }
  Eigen::RowVectorXf inv_std = (var.array() + eps).rsqrt().matrix();
  Mat xhat = ((xv.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, training, m](Node& self) {
    const Mat& g = self.grad;
    if (wants(self, 1)) self.parents[1]->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
    if (wants(self, 2)) self.parents[2]->grad_buffer() += g.colwise().sum();
    if (!wants(self, 0)) return;
    const Eigen::RowVectorXf gam = self.parents[1]->value.row(0);
    Mat dxhat = (g.array().rowwise() * gam.array()).matrix();
    if (!training) {
      self.parents[0]->grad_buffer() += (dxhat.array().rowwise() * inv_std.array()).matrix();
      return;
    }
    const Eigen::RowVectorXf mean_d = dxhat.colwise().mean();
    const Eigen::RowVectorXf mean_dx = dxhat.cwiseProduct(xhat).colwise().mean();
    Mat dx = dxhat;
    dx.rowwise() -= mean_d;
    dx -= (xhat.array().rowwise() * mean_dx.array()).matrix();
    dx = (dx.array().rowwise() * inv_std.array()).matrix();
    (void)m;
    self.parents[0]->grad_buffer() += dx;
  });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, float eps) {
  const Eigen::Index c = x.cols();
  require(gamma.cols() == c && beta.cols() == c, "layernorm: parameter width");
  const Mat& xv = x.value();
  Eigen::VectorXf mu = xv.rowwise().mean();
  Mat centered = xv.colwise() - mu;
  Eigen::VectorXf inv_std =
      (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std](Node& self) {
    const Mat& g = self.grad;
    if (wants(self, 1)) self.parents[1]->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
    if (wants(self, 2)) self.parents[2]->grad_buffer() += g.colwise().sum();
    if (!wants(self, 0)) return;
    Mat dxhat = (g.array().rowwise() * self.parents[1]->value.row(0).array()).matrix();
    Eigen::VectorXf mean_d = dxhat.rowwise().mean();
    Eigen::VectorXf mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
    Mat dx = dxhat.colwise() - mean_d;
    dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
    dx = (dx.array().colwise() * inv_std.array()).matrix();
    self.parents[0]->grad_buffer() += dx;
  });
}

Var gru_cell(const Var& x, const Var& h, const Var& w_ih, const Var& w_hh, const Var& b_ih,
             const Var& b_hh) {
  const Eigen::Index hs = h.cols();
  require(w_ih.cols() == 3 * hs && w_hh.cols() == 3 * hs && w_hh.rows() == hs,
          "gru_cell: weight shapes");
  require(x.cols() == w_ih.rows() && x.rows() == h.rows(), "gru_cell: input shapes");
  Mat gi = x.value() * w_ih.value();
  gi.rowwise() += b_ih.value().row(0);
  Mat gh = h.value() * w_hh.value();
  gh.rowwise() += b_hh.value().row(0);
  const auto sig = [](const auto& v) { return (1.0f + (-v).exp()).inverse(); };
  Mat r = sig(gi.leftCols(hs).array() + gh.leftCols(hs).array()).matrix();
  Mat z = sig(gi.middleCols(hs, hs).array() + gh.middleCols(hs, hs).array()).matrix();
  Mat ghn = gh.rightCols(hs);
  Mat nn = (gi.rightCols(hs).array() + r.array() * ghn.array()).tanh().matrix();
  Mat out = ((1.0f - z.array()) * nn.array() + z.array() * h.value().array()).matrix();
  return make_result(std::move(out), {x, h, w_ih, w_hh, b_ih, b_hh},
                     [r = std::move(r), z = std::move(z), nn = std::move(nn),
                      ghn = std::move(ghn), hs](Node& self) {
    const Mat& g = self.grad;
    const Mat& hv = self.parents[1]->value;
    Mat dn = (g.array() * (1.0f - z.array())).matrix();
    Mat dz = (g.array() * (hv.array() - nn.array())).matrix();
    Mat da_n = (dn.array() * (1.0f - nn.array().square())).matrix();
    Mat dr = (da_n.array() * ghn.array()).matrix();
    Mat da_r = (dr.array() * r.array() * (1.0f - r.array())).matrix();
    Mat da_z = (dz.array() * z.array() * (1.0f - z.array())).matrix();

    Mat dgi(g.rows(), 3 * hs);
    dgi << da_r, da_z, da_n;
    Mat dgh(g.rows(), 3 * hs);
    dgh << da_r, da_z, (da_n.array() * r.array()).matrix();

    if (wants(self, 0)) self.parents[0]->grad_buffer().noalias() += dgi * self.parents[2]->value.transpose();
    if (wants(self, 1)) {
      Mat& gh_in = self.parents[1]->grad_buffer();
      gh_in.noalias() += dgh * self.parents[3]->value.transpose();
      gh_in += (g.array() * z.array()).matrix();
    }
    if (wants(self, 2)) self.parents[2]->grad_buffer().noalias() += self.parents[0]->value.transpose() * dgi;
    if (wants(self, 3)) self.parents[3]->grad_buffer().noalias() += hv.transpose() * dgh;
    if (wants(self, 4)) self.parents[4]->grad_buffer() += dgi.colwise().sum();
    if (wants(self, 5)) self.parents[5]->grad_buffer() += dgh.colwise().sum();
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int batch, int tq, int tk, int heads,
              bool causal, std::span<const int> key_lengths) {
  const Eigen::Index d = q.cols();
  require(k.cols() == d && v.cols() == d, "attention: width mismatch");
  require(d % heads == 0, "attention: width not divisible by heads");
  require(q.rows() == static_cast<Eigen::Index>(batch) * tq &&
              k.rows() == static_cast<Eigen::Index>(batch) * tk && v.rows() == k.rows(),
          "attention: row counts");
  require(static_cast<int>(key_lengths.size()) == batch, "attention: one key length per batch");
  const Eigen::Index dh = d / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<Mat> probs(static_cast<std::size_t>(batch * heads));
  Mat out(q.rows(), d);
  for (int b = 0; b < batch; ++b) {
    const int klen = key_lengths[static_cast<std::size_t>(b)];
    require(klen >= 1 && klen <= tk, "attention: key length out of range");
    for (int hd = 0; hd < heads; ++hd) {
      auto qb = q.value().block(static_cast<Eigen::Index>(b) * tq, hd * dh, tq, dh);
      auto kb = k.value().block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh);
      auto vb = v.value().block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh);
      Mat s = (qb * kb.transpose()) * inv_sqrt;
      for (int i = 0; i < tq; ++i) {
        for (int j = 0; j < tk; ++j) {
          if (j >= klen || (causal && j > i)) s(i, j) = -std::numeric_limits<float>::infinity();
        }
      }
      Mat p = softmax_value(s);
      out.block(static_cast<Eigen::Index>(b) * tq, hd * dh, tq, dh) = p * vb;
      probs[static_cast<std::size_t>(b * heads + hd)] = std::move(p);
    }
  }
  return make_result(std::move(out), {q, k, v},
                     [probs = std::move(probs), batch, tq, tk, heads, dh, inv_sqrt](Node& self) {
    const Mat& qv = self.parents[0]->value;
    const Mat& kv = self.parents[1]->value;
    const Mat& vv = self.parents[2]->value;
    Mat* gq = wants(self, 0) ? &self.parents[0]->grad_buffer() : nullptr;
    Mat* gk = wants(self, 1) ? &self.parents[1]->grad_buffer() : nullptr;
    Mat* gv = wants(self, 2) ? &self.parents[2]->grad_buffer() : nullptr;
    for (int b = 0; b < batch; ++b) {
      for (int hd = 0; hd < heads; ++hd) {
        const Mat& p = probs[static_cast<std::size_t>(b * heads + hd)];
        auto go = self.grad.block(static_cast<Eigen::Index>(b) * tq, hd * dh, tq, dh);
        auto qb = qv.block(static_cast<Eigen::Index>(b) * tq, hd * dh, tq, dh);
        auto kb = kv.block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh);
        auto vb = vv.block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh);
        if (gv) gv->block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh) += p.transpose() * go;
        Mat dp = go * vb.transpose();
        Mat ds = p.cwiseProduct(dp);
        Eigen::VectorXf rs = ds.rowwise().sum();
        ds -= (p.array().colwise() * rs.array()).matrix();
        ds *= inv_sqrt;
        if (gq) gq->block(static_cast<Eigen::Index>(b) * tq, hd * dh, tq, dh) += ds * kb;
        if (gk) gk->block(static_cast<Eigen::Index>(b) * tk, hd * dh, tk, dh) += ds.transpose() * qb;
      }
    }
  });
}

}  // namespace setcomm::nn
