#pragma once

// Central-difference verification of analytic gradients in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hand3d/nn/network.hpp"
#include "hand3d/rng.hpp"

namespace hand3d::nn {

struct Objective {
  double value = 0.0;
  /// d value / d output, one tensor per output tap.
  std::vector<Tensor<double>> grads;
};

using ObjectiveFn = std::function<Objective(const std::vector<const Tensor<double>*>&)>;

struct GradCheckOptions {
  /// Number of randomly chosen entries; all entries are checked when there
  /// are fewer.
  std::size_t samples = 64;
  /// Perturbation h = step * max(1, |theta|).
  double step = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
  /// Also check gradients with respect to the network inputs.
  bool check_inputs = false;
  RunOptions run{};
  /// Test hook: scales analytic gradients by (1 + corrupt) before comparing.
  double corrupt = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Entries whose perturbation crossed a ReLU kink or changed a pooling winner.
  std::size_t skipped = 0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport gradient_check(Network<double>& net, std::vector<Tensor<double>> inputs,
                                      const ObjectiveFn& objective, const GradCheckOptions& options = {}) {
  auto evaluate = [&](std::uint64_t* signature) {
    const double v = objective(net.forward(inputs, options.run)).value;
    if (signature) *signature = net.pattern_signature();
    return v;
  };

  const Objective base = objective(net.forward(inputs, options.run));
  const std::uint64_t base_sig = net.pattern_signature();
  net.backward(base.grads, options.check_inputs);

  // Flat list of (tensor, analytic gradient copy, label).
  struct Target {
    std::vector<double>* values;
    std::vector<double> analytic;
    std::string label;
  };
  std::vector<Target> targets;
  for (std::size_t k = 0; k < net.parameters().size(); ++k)
    targets.push_back({&net.parameters()[k].data, net.parameters()[k].grad, net.parameter_names()[k]});
  if (options.check_inputs)
    for (std::size_t i = 0; i < inputs.size(); ++i)
      targets.push_back({&inputs[i].data, net.activation(net.spec().inputs[i].name).grad,
                         "input:" + net.spec().inputs[i].name});

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::size_t total = 0;
  for (const Target& t : targets) total += t.values->size();
  if (total <= options.samples) {
    for (std::size_t k = 0; k < targets.size(); ++k)
      for (std::size_t i = 0; i < targets[k].values->size(); ++i) picks.emplace_back(k, i);
  } else {
    Rng rng(options.seed);
    for (std::size_t s = 0; s < options.samples; ++s) {
      std::size_t flat = rng.below(total), k = 0;
      while (flat >= targets[k].values->size()) flat -= targets[k].values->size(), ++k;
      picks.emplace_back(k, flat);
    }
  }

  GradCheckReport report;
  for (auto [k, i] : picks) {
    double& theta = (*targets[k].values)[i];
    const double saved = theta;
    const double h = options.step * std::max(1.0, std::abs(saved));
    std::uint64_t sig_plus = 0, sig_minus = 0;
    theta = saved + h;
    const double plus = evaluate(&sig_plus);
    theta = saved - h;
    const double minus = evaluate(&sig_minus);
    theta = saved;
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * h);
    const double analytic = targets[k].analytic[i] * (1.0 + options.corrupt);
    const double err = relative_error(analytic, numeric, options.floor);
    ++report.checked;
    if (err > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      if (err >= report.max_rel_error)
        report.worst = targets[k].label + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) +
                       " numeric " + std::to_string(numeric);
    }
  }
  // Leave the network holding the unperturbed forward pass.
  net.forward(inputs, options.run);
  return report;
}

}  // namespace hand3d::nn
