#pragma once

// Channel mechanics probes shared by the unit and acceptance tests.

#include "gradcheck.hpp"

#include "setcomm/agents.hpp"
#include "setcomm/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace channel_checks {

using namespace setcomm;
using namespace setcomm::agents;
using setcomm::nn::Mat;
using setcomm::nn::Var;


inline AgentConfig tiny_config(ChannelConfig channel = {4, 3, true}) {
  AgentConfig c;
  c.channel = channel;
  c.vision = {8, 2, 4, 3};
  c.embedding_dim = 6;
  c.hidden = 8;
  return c;
}

inline world::RenderConfig tiny_render() {
  world::RenderConfig r;
  r.resolution = 8;
  r.supersample = 1;
  return r;
}

inline std::vector<world::Scene> scenes_for(const std::vector<int>& objects, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<world::Scene> out;
  for (int idx : objects) out.push_back(world::render_scene(ObjectVector::from_index(idx), tiny_render(), rng));
  return out;
}

inline SceneBatch one_game(const std::vector<world::Scene>& pos, const std::vector<world::Scene>& neg) {
  std::vector<world::Scene> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  std::vector<bool> labels(pos.size(), true);
  labels.resize(all.size(), false);
  SceneBatch b;
  b.append(all, labels);
  return b;
}

inline double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline world::Game random_game(std::uint64_t seed) {
  const auto& all = enumerate_concepts();
  const world::GameRecord r{world::Split::train, all[seed % all.size()], seed};
  return world::materialize(r, world::GameType::setref, {3, 3, 40}, tiny_render(), seed + 1);
}

// Training steps on which some emitted symbol is not exactly the one-hot
// argmax of its relaxed sample.
inline int one_hot_violations(int steps) {
  AgentPair pair(tiny_config({2, 2, true}), 5);
  setcomm::nn::Adam opt(pair.parameters(), {1e-2f});
  std::vector<world::Game> games;
  for (std::uint64_t s = 0; s < 4; ++s) games.push_back(random_game(100 + s));
  const auto tv = SceneBatch::teacher_view(games);
  const auto sv = SceneBatch::student_view(games);
  Rng rng(6);
  int bad = 0;
  for (int step = 0; step < steps; ++step) {
    opt.zero_grad();
    const auto ch = pair.teacher.emit(tv, {EmitMode::train, 0.1f, 1.0f}, rng);
    for (std::size_t t = 0; t < ch.steps.size(); ++t) {
      const Mat& hard = ch.steps[t].value();
      const Mat& soft = ch.relaxed[t].value();
      for (Eigen::Index b = 0; b < hard.rows(); ++b) {
        int ones = 0, zeros = 0;
        for (Eigen::Index k = 0; k < hard.cols(); ++k) {
          ones += hard(b, k) == 1.0f;
          zeros += hard(b, k) == 0.0f;
        }
        Eigen::Index am = 0;
        soft.row(b).maxCoeff(&am);
        if (ones != 1 || zeros != hard.cols() - 1 || hard(b, am) != 1.0f) ++bad;
      }
    }
    setcomm::nn::bce_with_logits(pair.student.score(ch, sv, true), sv.labels).backward();
    opt.step();
  }
  return bad;
}

// Relative error between the backpropagated straight-through gradient and a
// finite difference of the equivalent relaxed surrogate on a toy channel.
inline double toy_channel_relative_error() {
  // Vocab 2, one position: the backpropagated gradient of the student loss
  // wrt the teacher prototypes must equal the finite-difference gradient of
  // the same loss with the discrete symbol replaced by hard + (y - y0).
  const ChannelConfig ch{2, 1, false};
  AgentPair pair(tiny_config(ch), 11);
  // Default init leaves the loss nearly flat in the prototypes; doubling every
  // weight gives gradients well above float round-off.
  for (auto& p : pair.parameters()) p.mutable_value() *= 2.0f;
  const int width = pair.config().vision.embedding_dim();
  std::mt19937_64 init(3);
  const Mat pos0 = testutil::random_mat(1, width, init);
  const Mat neg0 = testutil::random_mat(1, width, init);
  SceneBatch scenes;
  scenes.append(scenes_for({5, 12, 21}, 6), {true, false, true});
  const EmitOptions opts{EmitMode::train, 0.1f, 1.0f};
  constexpr std::uint64_t kNoise = 77;

  auto loss_of = [&](const ChannelBatch& cb) {
    return setcomm::nn::bce_with_logits(pair.student.score(cb, scenes, false), scenes.labels);
  };

  Var pos = setcomm::nn::parameter(pos0), neg = setcomm::nn::parameter(neg0);
  Rng r0(kNoise);
  const ChannelBatch base = pair.teacher.decode(pos, neg, opts, r0);
  const Mat hard = base.steps[0].value();
  const Mat y0 = base.relaxed[0].value();
  loss_of(base).backward();
  if (!pos.has_grad() || !neg.has_grad() || pos.grad().cwiseAbs().maxCoeff() == 0.0f)
    return std::numeric_limits<double>::infinity();

  auto surrogate = [&](const Mat& p, const Mat& n) {
    setcomm::nn::NoGradGuard guard;
    Rng r(kNoise);
    ChannelBatch cb = pair.teacher.decode(setcomm::nn::constant(p), setcomm::nn::constant(n), opts, r);
    cb.steps[0] = setcomm::nn::add(setcomm::nn::constant(hard - y0), cb.relaxed[0]);
    return static_cast<double>(loss_of(cb).value()(0, 0));
  };
  const double eps = 1e-2;
  double worst = 0;
  for (int which = 0; which < 2; ++which) {
    const Mat& at = which == 0 ? pos0 : neg0;
    const Mat analytic = which == 0 ? pos.grad() : neg.grad();
    auto f = [&](Eigen::Index i, double delta) {
      Mat m = at;
      m.data()[i] += static_cast<float>(delta);
      return which == 0 ? surrogate(m, neg0) : surrogate(pos0, m);
    };
    double d2 = 0, a2 = 0, n2 = 0;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
      // Fourth-order central stencil.
      const double num = (8 * (f(i, eps) - f(i, -eps)) - (f(i, 2 * eps) - f(i, -2 * eps))) / (12 * eps);
      const double a = analytic.data()[i];
      d2 += (a - num) * (a - num);
      a2 += a * a;
      n2 += num * num;
    }
    worst = std::max(worst, std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12}));
  }
  return worst;
}

}  // namespace channel_checks
