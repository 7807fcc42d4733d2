#include "dimac/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dimac/rng.hpp"

namespace dimac::nn {

namespace {

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
    return name.compare(0, p.size(), p) == 0;
  });
}

}  // namespace

double clip_gradients(ParamStore& params, double clip_norm,
                      const std::vector<std::string>& prefixes) {
  double sq = 0.0;
  for (auto& [name, p] : params) {
    if (!has_prefix(name, prefixes)) continue;
    if (!p.grad.allFinite()) throw NumericError("non-finite gradient in parameter " + name);
    sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto& [name, p] : params) {
      if (has_prefix(name, prefixes)) p.grad *= s;
    }
  }
  return norm;
}

Adam::Adam(AdamConfig config, std::vector<std::string> prefixes)
    : config_(config), prefixes_(std::move(prefixes)) {}

bool Adam::selected(const std::string& name) const { return has_prefix(name, prefixes_); }

StepStats Adam::step(ParamStore& params) {
  StepStats stats;
  stats.grad_norm = clip_gradients(params, config_.clip_norm, prefixes_);
  if (config_.clip_norm > 0.0 && stats.grad_norm > config_.clip_norm) {
    stats.clip_scale = config_.clip_norm / stats.grad_norm;
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    if (!selected(name)) continue;
    auto [it, inserted] = moments_.try_emplace(name);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Matrix::Zero(p.value.rows(), p.value.cols());
      mo.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    mo.m = config_.beta1 * mo.m + (1.0 - config_.beta1) * p.grad;
    mo.v = config_.beta2 * mo.v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config_.lr * (mo.m.array() / bc1) /
                       ((mo.v.array() / bc2).sqrt() + config_.epsilon);
  }
  params.zero_grad();
  return stats;
}

GradCheckReport finite_difference_check(ParamStore& params, const LossFn& loss_fn,
                                        const GradCheckOptions& options) {
  params.zero_grad();
  loss_fn(params, true);
  std::map<std::string, Matrix> analytic;
  for (auto& [name, p] : params) analytic.emplace(name, p.grad);
  params.zero_grad();

  GradCheckReport report;
  Rng rng(options.seed);
  for (auto& [name, p] : params) {
    if (!has_prefix(name, options.prefixes)) continue;
    const auto size = static_cast<int>(p.value.size());
    std::vector<int> coords(static_cast<std::size_t>(size));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.samples_per_param > 0 && options.samples_per_param < size) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(options.samples_per_param));
    }
    bool failed = false;
    for (int k : coords) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + options.epsilon;
      const double up = loss_fn(params, false);
      x = saved - options.epsilon;
      const double down = loss_fn(params, false);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double exact = analytic.at(name).data()[k];
      const double denom = std::max({std::abs(numeric), std::abs(exact), options.floor});
      const double rel = std::abs(numeric - exact) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_relative_error || !std::isfinite(rel)) {
        report.max_relative_error = rel;
        report.worst_parameter = name;
      }
      if (!(rel <= options.tolerance)) failed = true;
    }
    if (failed) report.failing_parameters.push_back(name);
  }
  params.zero_grad();
  return report;
}

}  // namespace dimac::nn
