#include "gradcheck.hpp"

#include "setcomm/nn/checkpoint.hpp"
#include "setcomm/nn/layers.hpp"
#include "setcomm/nn/optim.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>

using namespace setcomm::nn;
using testutil::gradcheck;
using testutil::random_mat;

namespace {

constexpr double kTol = 1e-3;

// Values spaced far apart so max pooling and relu never sit on a kink.
Mat spaced(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::vector<float> v(static_cast<std::size_t>(r * c));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0f + 0.07f * static_cast<float>(i);
  std::shuffle(v.begin(), v.end(), rng);
  Mat m(r, c);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  std::mt19937_64 rng(1);
  const Mat a = random_mat(3, 4, rng), b = random_mat(3, 4, rng), c = random_mat(4, 2, rng);
  const Mat row = random_mat(1, 4, rng);
  CHECK(gradcheck([](auto& v) { return matmul(v[0], v[1]); }, {a, c}) < kTol);
  CHECK(gradcheck([](auto& v) { return add(v[0], v[1]); }, {a, b}) < kTol);
  CHECK(gradcheck([](auto& v) { return sub(v[0], v[1]); }, {a, b}) < kTol);
  CHECK(gradcheck([](auto& v) { return mul(v[0], v[1]); }, {a, b}) < kTol);
  CHECK(gradcheck([](auto& v) { return add_row(v[0], v[1]); }, {a, row}) < kTol);
  CHECK(gradcheck([](auto& v) { return scale(v[0], -2.5f); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return add_scalar(v[0], 3.0f); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return relu(v[0]); }, {spaced(3, 4, rng)}) < kTol);
  CHECK(gradcheck([](auto& v) { return sigmoid(v[0]); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return tanh(v[0]); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return log(v[0]); }, {random_mat(3, 4, rng, 0.5f, 2.0f)}) < kTol);
  CHECK(gradcheck([](auto& v) { return softmax_rows(v[0]); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return log_softmax_rows(v[0]); }, {a}) < kTol);
}

TEST_CASE("shape ops and reductions match finite differences") {
  std::mt19937_64 rng(2);
  const Mat a = random_mat(4, 3, rng), b = random_mat(4, 2, rng), d = random_mat(2, 3, rng);
  CHECK(gradcheck([](auto& v) { return reshape(v[0], 2, 6); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return concat_cols({v[0], v[1]}); }, {a, b}) < kTol);
  CHECK(gradcheck([](auto& v) { return concat_rows({v[0], v[1]}); }, {a, d}) < kTol);
  CHECK(gradcheck([](auto& v) { return slice_cols(v[0], 1, 2); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return slice_rows(v[0], 1, 2); }, {a}) < kTol);
  const std::vector<int> idx{3, 0, 3, 1};
  CHECK(gradcheck([&](auto& v) { return gather_rows(v[0], idx); }, {a}) < kTol);
  const std::vector<std::vector<int>> groups{{0, 2}, {1}, {3, 0, 1}};
  CHECK(gradcheck([&](auto& v) { return group_mean(v[0], groups); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return sum(v[0]); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return mean(v[0]); }, {a}) < kTol);
  CHECK(gradcheck([](auto& v) { return rowwise_dot(v[0], v[1]); }, {a, random_mat(4, 3, rng)}) < kTol);
  const std::vector<float> mask{1, 0, 0, 1};
  CHECK(gradcheck([&](auto& v) { return blend_rows(v[0], v[1], mask); }, {a, random_mat(4, 3, rng)}) < kTol);
}

TEST_CASE("losses match finite differences") {
  std::mt19937_64 rng(3);
  const std::vector<float> labels{1, 0, 0, 1, 1};
  CHECK(gradcheck([&](auto& v) { return bce_with_logits(v[0], labels); }, {random_mat(5, 1, rng, -3, 3)}) < kTol);
  const std::vector<int> targets{2, -1, 0};
  CHECK(gradcheck([&](auto& v) { return cross_entropy(v[0], targets); }, {random_mat(3, 4, rng, -2, 2)}) < kTol);
}

TEST_CASE("straight-through passes the upstream gradient to the soft input") {
  std::mt19937_64 rng(4);
  Var soft = parameter(random_mat(2, 3, rng));
  Mat hard = Mat::Zero(2, 3);
  hard(0, 1) = 1;
  hard(1, 2) = 1;
  const Var out = straight_through(soft, hard);
  CHECK((out.value() - hard).cwiseAbs().maxCoeff() == 0.0f);
  const Mat w = random_mat(2, 3, rng);
  sum(mul(out, constant(w))).backward();
  CHECK((soft.grad() - w).cwiseAbs().maxCoeff() < 1e-7f);
}

TEST_CASE("convolution and pooling match finite differences") {
  std::mt19937_64 rng(5);
  const int n = 2, h = 4, w = 4, c = 2, f = 3;
  const Mat x = random_mat(n * h * w, c, rng), k = random_mat(9 * c, f, rng), b = random_mat(1, f, rng);
  CHECK(gradcheck([&](auto& v) { return conv3x3(v[0], v[1], v[2], n, h, w); }, {x, k, b}) < kTol);
  CHECK(gradcheck([&](auto& v) { return maxpool2(v[0], n, h, w); }, {spaced(n * h * w, c, rng)}) < kTol);
}

TEST_CASE("convolution agrees with a direct loop") {
  std::mt19937_64 rng(6);
  const int n = 1, h = 3, w = 5, c = 2, f = 2;
  const Mat x = random_mat(n * h * w, c, rng), k = random_mat(9 * c, f, rng), b = random_mat(1, f, rng);
  NoGradGuard guard;
  const Mat out = conv3x3(constant(x), constant(k), constant(b), n, h, w).value();
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      for (int o = 0; o < f; ++o) {
        double acc = b(0, o);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int sy = y + dy, sx = xx + dx;
            if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
            for (int ch = 0; ch < c; ++ch) acc += x(sy * w + sx, ch) * k(((dy + 1) * 3 + (dx + 1)) * c + ch, o);
          }
        CHECK(out(y * w + xx, o) == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("normalization layers match finite differences") {
  std::mt19937_64 rng(7);
  const Mat x = random_mat(6, 3, rng), g = random_mat(1, 3, rng, 0.5f, 1.5f), be = random_mat(1, 3, rng);
  Mat rm = Mat::Zero(1, 3), rv = Mat::Ones(1, 3);
  CHECK(gradcheck([&](auto& v) { return batchnorm(v[0], v[1], v[2], rm, rv, true); }, {x, g, be}) < kTol);
  CHECK(gradcheck([&](auto& v) { return batchnorm(v[0], v[1], v[2], rm, rv, false); }, {x, g, be}) < kTol);
  CHECK(gradcheck([&](auto& v) { return layernorm(v[0], v[1], v[2]); }, {x, g, be}) < kTol);
}

TEST_CASE("recurrent cell and attention match finite differences") {
  std::mt19937_64 rng(8);
  const int in = 3, hid = 4, batch = 2;
  const Mat x = random_mat(batch, in, rng), h = random_mat(batch, hid, rng);
  const Mat wih = random_mat(in, 3 * hid, rng), whh = random_mat(hid, 3 * hid, rng);
  const Mat bih = random_mat(1, 3 * hid, rng), bhh = random_mat(1, 3 * hid, rng);
  CHECK(gradcheck([](auto& v) { return gru_cell(v[0], v[1], v[2], v[3], v[4], v[5]); }, {x, h, wih, whh, bih, bhh}) <
        kTol);

  const int tq = 3, tk = 4, d = 4;
  const Mat q = random_mat(batch * tq, d, rng), k = random_mat(batch * tk, d, rng), v = random_mat(batch * tk, d, rng);
  const std::vector<int> lens{4, 2};
  CHECK(gradcheck([&](auto& a) { return attention(a[0], a[1], a[2], batch, tq, tk, 2, false, lens); }, {q, k, v}) < kTol);
  const Mat s = random_mat(batch * tq, d, rng);
  const std::vector<int> self_lens{3, 2};
  CHECK(gradcheck([&](auto& a) { return attention(a[0], a[0], a[0], batch, tq, tq, 1, true, self_lens); }, {s}) < kTol);
}

TEST_CASE("causal attention ignores future and padded keys") {
  std::mt19937_64 rng(9);
  const int t = 4, d = 2;
  Mat x = random_mat(t, d, rng);
  const std::vector<int> lens{3};
  NoGradGuard guard;
  const Mat base = attention(constant(x), constant(x), constant(x), 1, t, t, 1, true, lens).value();
  Mat y = x;
  y.row(3).setConstant(50.0f);  // padded position
  const Mat padded = attention(constant(y), constant(y), constant(y), 1, t, t, 1, true, lens).value();
  CHECK((base.topRows(3) - padded.topRows(3)).cwiseAbs().maxCoeff() < 1e-6f);
  Mat z = x;
  z.row(2).setConstant(-9.0f);  // future for rows 0, 1
  const Mat future = attention(constant(z), constant(z), constant(z), 1, t, t, 1, true, lens).value();
  CHECK((base.topRows(2) - future.topRows(2)).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("layers compose and checkpoints round-trip") {
  Rng rng(10);
  ConvNet net({8, 2, 4, 3}, rng);  // 8x8 input
  std::mt19937_64 r2(11);
  const Mat x = random_mat(3, 8 * 8 * 3, r2, 0, 1);
  const Var out = net(constant(x), false);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == net.config().embedding_dim());

  const auto path = std::filesystem::temp_directory_path() / "setcomm_nn_roundtrip.ckpt";
  write_checkpoint(path, {{"k", 1}}, state_dict(net));
  ConvNet other({8, 2, 4, 3}, rng);
  auto [meta, state] = read_checkpoint(path);
  CHECK(meta["k"] == 1);
  load_state_dict(other, state);
  NoGradGuard guard;
  CHECK((other(constant(x), false).value() - out.value()).cwiseAbs().maxCoeff() == 0.0f);
  std::filesystem::remove(path);
}

TEST_CASE("adam reduces a quadratic") {
  Var w = parameter(Mat::Constant(1, 3, 2.0f));
  Adam opt({w}, AdamOptions{0.1f});
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    const Var loss = sum(mul(w, w));
    if (i == 0) first = loss.item();
    last = loss.item();
    loss.backward();
    opt.step();
  }
  CHECK(last < 1e-2 * first);
}

TEST_CASE("no-grad guard records no graph") {
  Var a = parameter(Mat::Ones(2, 2));
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(matmul(a, a).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(matmul(a, a).requires_grad());
}
