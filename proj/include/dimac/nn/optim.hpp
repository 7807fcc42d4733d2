#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dimac/nn/graph.hpp"

namespace dimac::nn {

struct AdamConfig {
  double lr = 1e-3;
  double clip_norm = 1.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct StepStats {
  double grad_norm = 0.0;     // before clipping
  double clip_scale = 1.0;    // factor applied to gradients
};

// Adam with global 2-norm gradient clipping. Only parameters whose names
// start with one of `prefixes` are updated (all when empty); gradients of
// every parameter are zeroed after the step.
class Adam {
 public:
  explicit Adam(AdamConfig config, std::vector<std::string> prefixes = {});

  StepStats step(ParamStore& params);
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  bool selected(const std::string& name) const;

  AdamConfig config_;
  std::vector<std::string> prefixes_;
  std::map<std::string, Moments> moments_;
  long steps_ = 0;
};

// Rescales gradients in place so that their global 2-norm is at most
// `clip_norm`; returns the norm before clipping. Throws NumericError naming
// the first parameter with a non-finite gradient.
double clip_gradients(ParamStore& params, double clip_norm,
                      const std::vector<std::string>& prefixes = {});

// ---- Finite-difference gradient checking ---------------------------------

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that coordinates with
  // vanishing gradients are judged on absolute error.
  double floor = 1e-4;
  int samples_per_param = 6;
  std::uint64_t seed = 7;
  std::vector<std::string> prefixes;  // restrict to these parameters (all when empty)
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::vector<std::string> failing_parameters;
  std::size_t coordinates_checked = 0;
  bool passed() const { return failing_parameters.empty(); }
};

// `loss_fn(params, with_grad)` must return the loss and, when `with_grad` is
// true, add its gradient into Parameter::grad. Gradients are zeroed first.
using LossFn = std::function<double(ParamStore&, bool)>;
GradCheckReport finite_difference_check(ParamStore& params, const LossFn& loss_fn,
                                        const GradCheckOptions& options = {});

}  // namespace dimac::nn
