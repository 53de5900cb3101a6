#pragma once

#include "setcomm/nn/tensor.hpp"

#include <vector>

namespace setcomm::nn {

struct AdamOptions {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options = {});

  void zero_grad();
  // Applies one update using the accumulated gradients. Parameters without a
  // gradient this step are left untouched.
  void step();
  long steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Var> params_;
  std::vector<Mat> m_, v_;
  AdamOptions options_;
  long t_ = 0;
};

}  // namespace setcomm::nn
