#pragma once

// Finite-difference audit of every layer kind, the classification loss and
// the pose prior loss through the axis-angle map, plus one full model.

#include <cstdio>
#include <string>
#include <vector>

#include "hand3d/models.hpp"
#include "hand3d/nn/gradcheck.hpp"
#include "hand3d/nn/loss.hpp"
#include "hand3d/training.hpp"

namespace hand3d::gradcheck {

inline constexpr double kTolerance = 1e-6;

struct ComponentResult {
  std::string name;
  nn::GradCheckReport report;
  bool pass() const { return report.checked > 0 && report.max_rel_error < kTolerance; }
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  /// Architecture whose full (quarter width) model is checked last.
  models::Arch arch = models::Arch::PosePrior;
  std::size_t samples = 48;
  /// Fault injection: scales analytic gradients by (1 + corrupt).
  double corrupt = 0.0;
};

namespace detail {

using nn::NetworkSpec;
using nn::Tensor;

inline std::vector<Tensor<double>> random_inputs(const NetworkSpec& spec, std::size_t batch, Rng& rng) {
  std::vector<Tensor<double>> out;
  for (const auto& in : spec.inputs) {
    nn::Shape s{batch};
    s.insert(s.end(), in.shape.begin(), in.shape.end());
    Tensor<double> t(s);
    for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
    out.push_back(std::move(t));
  }
  return out;
}

/// Fixed random weights over the output taps: value = sum(w * y).
inline nn::ObjectiveFn linear_objective(const nn::Network<double>& net, std::size_t batch, Rng& rng) {
  std::vector<Tensor<double>> weights;
  for (std::size_t o : net.graph().outputs) {
    nn::Shape s{batch};
    s.insert(s.end(), net.graph().shapes[o].begin(), net.graph().shapes[o].end());
    Tensor<double> w(s);
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    weights.push_back(std::move(w));
  }
  return [weights](const std::vector<const Tensor<double>*>& outs) {
    nn::Objective o;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      for (std::size_t i = 0; i < outs[k]->size(); ++i) o.value += weights[k].data[i] * outs[k]->data[i];
      o.grads.push_back(weights[k]);
    }
    return o;
  };
}

inline nn::ObjectiveFn cross_entropy_objective(std::size_t batch, std::size_t classes, Rng& rng) {
  std::vector<int> labels(batch);
  for (int& l : labels) l = int(rng.below(classes));
  return [labels](const std::vector<const Tensor<double>*>& outs) {
    const auto r = nn::softmax_cross_entropy(*outs[0], std::span<const int>(labels));
    return nn::Objective{r.loss, {r.grad}};
  };
}

/// Targets sit a small offset from the reference outputs, which keeps the
/// objective value (and with it the rounding noise of the differences) small.
inline nn::ObjectiveFn l2_objective(const Tensor<double>& reference, Rng& rng) {
  const std::size_t batch = reference.shape[0];
  Tensor<double> target({batch, reference.size() / batch});
  for (std::size_t i = 0; i < target.size(); ++i) target.data[i] = reference.data[i] + 0.05 * rng.uniform(-1.0, 1.0);
  return [target](const std::vector<const Tensor<double>*>& outs) {
    Tensor<double> y = *outs[0];
    y.reshape(target.shape);
    auto r = nn::l2_loss(y, target);
    r.grad.reshape(outs[0]->shape);
    return nn::Objective{r.loss, {r.grad}};
  };
}

/// Pose prior loss on a network whose two outputs are (63 canonical
/// coordinates, 3 axis-angle parameters) per sample. Supervision is a small
/// perturbation of the reference outputs.
inline nn::ObjectiveFn poseprior_objective(const Tensor<double>& coords, const Tensor<double>& viewpoint, Rng& rng) {
  const std::size_t batch = coords.shape[0];
  std::vector<Keypoints3> wc(batch);
  std::vector<Rot3> rot(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Keypoints3 ref = models::keypoints_from_flat(coords.data.data() + 63 * b);
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      wc[b][i] = ref[i] + 0.05 * Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Rot3 r = axis_angle_to_matrix(Vec3{viewpoint.data[3 * b], viewpoint.data[3 * b + 1], viewpoint.data[3 * b + 2]});
    rot[b] = r * axis_angle_to_matrix(0.05 * Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  }
  return [wc, rot, batch](const std::vector<const Tensor<double>*>& outs) {
    nn::Objective o;
    Tensor<double> g_wc(outs[0]->shape), g_aa(outs[1]->shape);
    for (std::size_t b = 0; b < batch; ++b) {
      const models::PosePriorOutput pred = models::combine_streams(
          models::keypoints_from_flat(outs[0]->data.data() + 63 * b),
          {outs[1]->data[3 * b], outs[1]->data[3 * b + 1], outs[1]->data[3 * b + 2]}, Handedness::Left);
      const training::PosePriorLoss l = training::poseprior_loss(pred, wc[b], rot[b]);
      o.value += l.total;
      for (std::size_t k = 0; k < 63; ++k) g_wc.data[63 * b + k] = l.grad_wc[k];
      for (std::size_t k = 0; k < 3; ++k) g_aa.data[3 * b + k] = l.grad_viewpoint[k];
    }
    o.grads = {g_wc, g_aa};
    return o;
  };
}

struct Case {
  std::string name;
  NetworkSpec spec;
  std::size_t batch = 2;
  bool train = false;
  /// 0 linear, 1 cross-entropy, 2 L2, 3 pose prior
  int objective = 0;
};

inline std::vector<Case> layer_cases() {
  using namespace nn;
  std::vector<Case> cases;
  cases.push_back({"conv", {"gc-conv", 1.0, {{"x", {6, 6, 3}}}, {conv("c", 3, 4), conv("s", 3, 2, 2, 1)}, {"s"}}});
  cases.push_back({"relu", {"gc-relu", 1.0, {{"x", {5, 5, 3}}}, {conv("c", 3, 4), relu("r")}, {"r"}}});
  cases.push_back({"maxpool", {"gc-pool", 1.0, {{"x", {8, 8, 2}}}, {conv("c", 3, 3), maxpool("p")}, {"p"}}});
  cases.push_back({"fully_connected", {"gc-fc", 1.0, {{"x", {7}}}, {fully_connected("f", 5)}, {"f"}}});
  cases.push_back({"dropout",
                   {"gc-dropout", 1.0, {{"x", {9}}}, {fully_connected("f", 12), dropout("d", 0.2)}, {"d"}},
                   2,
                   true});
  cases.push_back({"concat",
                   {"gc-concat",
                    1.0,
                    {{"a", {4, 4, 2}}, {"b", {4, 4, 3}}},
                    {from(conv("ca", 3, 2), {"a"}), concat("cat", {"ca", "b"}), conv("c", 1, 3)},
                    {"c"}}});
  cases.push_back(
      {"bilinear_upsample", {"gc-upsample", 1.0, {{"x", {4, 4, 2}}}, {conv("c", 3, 2), upsample("u", 9, 7)}, {"u"}}});
  cases.push_back(
      {"reshape", {"gc-reshape", 1.0, {{"x", {3, 3, 2}}}, {conv("c", 3, 2), reshape("flat"), fully_connected("f", 4)}, {"f"}}});
  cases.push_back({"argmax",
                   {"gc-argmax", 1.0, {{"x", {4, 4, 3}}}, {conv("c", 3, 3), argmax("a")}, {"c", "a"}}});
  cases.push_back(
      {"softmax_cross_entropy", {"gc-ce", 1.0, {{"x", {10}}}, {fully_connected("f", 5)}, {"f"}}, 3, false, 1});
  cases.push_back({"poseprior_loss",
                   {"gc-poseprior",
                    1.0,
                    {{"maps", {8, 8, 21}}, {"side", {2}}},
                    {from(conv("c", 3, 4, 2), {"maps"}), reshape("flat"), concat("cat", {"flat", "side"}),
                     from(fully_connected("wc", 63), {"cat"}), from(fully_connected("aa", 3), {"cat"})},
                    {"wc", "aa"}},
                   2,
                   false,
                   3});
  return cases;
}

inline Case model_case(models::Arch arch) {
  switch (arch) {
    case models::Arch::PosePrior: {
      // Both heads on one trunk so the composed loss drives a single graph.
      NetworkSpec s = models::build_poseprior_stream(63, 0.25, "poseprior-heads");
      s.layers.push_back(nn::from(nn::fully_connected("viewpoint", 3), {s.layers[s.layers.size() - 2].name}));
      s.outputs.push_back("viewpoint");
      return {"model:poseprior", s, 1, true, 3};
    }
    case models::Arch::PosePriorDirect:
      return {"model:poseprior-direct", models::build_poseprior_direct(0.25), 1, true, 2};
    case models::Arch::GestureNet:
      return {"model:gesturenet", models::build_gesturenet(0.25), 3, true, 1};
  }
  throw Error(ErrorCode::InvalidConfig, "unknown architecture");
}

inline ComponentResult run_case(const Case& c, const SuiteOptions& options, std::size_t index) {
  nn::Network<double> net(c.spec);
  net.init_params(child_seed(options.seed, {index, 1}));
  Rng rng(child_seed(options.seed, {index, 2}));
  // Nonzero biases keep activations off exact kinks.
  for (std::size_t k = 0; k < net.parameters().size(); ++k)
    if (net.parameter_names()[k].ends_with("/bias"))
      for (double& v : net.parameters()[k].data) v = rng.uniform(-0.1, 0.1);
  const auto inputs = random_inputs(c.spec, c.batch, rng);
  nn::GradCheckOptions o;
  o.run.train = c.train;
  o.run.seed = child_seed(options.seed, {index, 4});
  o.run.workers = 1;
  std::vector<Tensor<double>> reference;
  for (const Tensor<double>* t : net.forward(inputs, o.run)) reference.push_back(*t);
  nn::ObjectiveFn objective;
  switch (c.objective) {
    case 1: objective = cross_entropy_objective(c.batch, reference[0].shape.back(), rng); break;
    case 2: objective = l2_objective(reference[0], rng); break;
    case 3: objective = poseprior_objective(reference[0], reference[1], rng); break;
    default: objective = linear_objective(net, c.batch, rng); break;
  }
  o.samples = options.samples;
  o.seed = child_seed(options.seed, {index, 3});
  o.check_inputs = true;
  o.corrupt = options.corrupt;
  return {c.name, nn::gradient_check(net, inputs, objective, o)};
}

}  // namespace detail

inline std::vector<ComponentResult> run_suite(const SuiteOptions& options = {}) {
  std::vector<detail::Case> cases = detail::layer_cases();
  cases.push_back(detail::model_case(options.arch));
  std::vector<ComponentResult> out;
  for (std::size_t i = 0; i < cases.size(); ++i) out.push_back(detail::run_case(cases[i], options, i));
  return out;
}

inline bool all_pass(const std::vector<ComponentResult>& results) {
  for (const auto& r : results)
    if (!r.pass()) return false;
  return !results.empty();
}

inline std::string format_report(const std::vector<ComponentResult>& results) {
  std::string out;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-24s max_rel_error %.3e  checked %3zu  skipped %3zu  %s\n", r.name.c_str(),
                  r.report.max_rel_error, r.report.checked, r.report.skipped, r.pass() ? "ok" : "FAILED");
    out += buf;
  }
  return out;
}

}  // namespace hand3d::gradcheck
