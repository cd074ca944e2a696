#pragma once

// The four network architectures plus the two-stream pose prior that
// recombines canonical coordinates and viewpoint.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/geometry.hpp"
#include "hand3d/nn/adam.hpp"
#include "hand3d/nn/network.hpp"
#include "hand3d/nn/spec.hpp"

namespace hand3d::models {

using nn::NetworkSpec;

inline constexpr std::size_t kScoreMapSize = 32;
inline constexpr std::size_t kImageSize = 256;
inline constexpr std::size_t kGestureClasses = 35;
inline constexpr double kDropout = 0.2;
inline constexpr std::size_t kCoordinateOutputs = 3 * kNumKeypoints;
inline constexpr std::size_t kViewpointOutputs = 3;

inline void check_width(double width) {
  if (!(width > 0.0 && width <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "width scale must be in (0, 1], got " + std::to_string(width));
}

/// Hidden channel or unit count after width scaling, never below 8.
inline std::size_t scaled(std::size_t units, double width) {
  return std::max<std::size_t>(8, std::size_t(std::lround(double(units) * width)));
}

namespace detail {

inline void conv_relu(std::vector<nn::LayerSpec>& layers, int row, std::size_t kernel, std::size_t units,
                      std::size_t stride = 1) {
  layers.push_back(nn::conv("conv" + std::to_string(row), kernel, units, stride));
  layers.push_back(nn::relu("relu" + std::to_string(row)));
  layers.back().table_row = row;
}

inline void pool(std::vector<nn::LayerSpec>& layers, int row) {
  layers.push_back(nn::maxpool("pool" + std::to_string(row)));
  layers.back().table_row = row;
}

inline void fc_relu_dropout(std::vector<nn::LayerSpec>& layers, int row, std::size_t units) {
  layers.push_back(nn::fully_connected("fc" + std::to_string(row), units));
  layers.push_back(nn::relu("relu" + std::to_string(row)));
  layers.push_back(nn::dropout("drop" + std::to_string(row), kDropout));
  layers.back().table_row = row;
}

/// Rows 1-16 shared by the segmentation and keypoint networks.
inline void vgg_trunk(std::vector<nn::LayerSpec>& layers, double width) {
  int row = 1;
  const std::array<std::pair<int, std::size_t>, 4> blocks{{{2, 64}, {2, 128}, {4, 256}, {5, 512}}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int i = 0; i < blocks[b].first; ++i) conv_relu(layers, row++, 3, scaled(blocks[b].second, width));
    if (b + 1 < blocks.size()) pool(layers, row++);
  }
}

inline nn::LayerSpec tagged(nn::LayerSpec l, int row) {
  l.table_row = row;
  return l;
}

}  // namespace detail

inline NetworkSpec build_handsegnet(double width = 1.0) {
  check_width(width);
  NetworkSpec s{"handsegnet", width, {{"image", {kImageSize, kImageSize, 3}}}, {}, {"upsample18", "argmax19"}};
  detail::vgg_trunk(s.layers, width);
  s.layers.push_back(detail::tagged(nn::conv("conv17", 1, 2, 1, 0), 17));
  s.layers.push_back(detail::tagged(nn::upsample("upsample18", kImageSize, kImageSize), 18));
  s.layers.push_back(detail::tagged(nn::argmax("argmax19"), 19));
  return s;
}

/// Score-map taps after rows 17, 24 and 31.
inline NetworkSpec build_posenet(double width = 1.0) {
  check_width(width);
  NetworkSpec s{"posenet", width, {{"image", {kImageSize, kImageSize, 3}}}, {}, {"conv17", "conv24", "conv31"}};
  auto& L = s.layers;
  detail::vgg_trunk(L, width);
  L.push_back(detail::tagged(nn::conv("conv17", 1, kNumKeypoints, 1, 0), 17));
  L.push_back(detail::tagged(nn::concat("concat18", {"relu16", "conv17"}), 18));
  for (int row = 19; row <= 23; ++row) detail::conv_relu(L, row, 7, scaled(128, width));
  L.push_back(detail::tagged(nn::conv("conv24", 1, kNumKeypoints, 1, 0), 24));
  L.push_back(detail::tagged(nn::concat("concat25", {"relu16", "conv17", "conv24"}), 25));
  for (int row = 26; row <= 30; ++row) detail::conv_relu(L, row, 7, scaled(128, width));
  L.push_back(detail::tagged(nn::conv("conv31", 1, kNumKeypoints, 1, 0), 31));
  return s;
}

/// One pose prior stream with P outputs: 63 canonical coordinates, 3
/// viewpoint parameters. The hand side flag joins the flattened features.
inline NetworkSpec build_poseprior_stream(std::size_t outputs, double width = 1.0, std::string arch = "") {
  check_width(width);
  if (outputs != kCoordinateOutputs && outputs != kViewpointOutputs)
    throw Error(ErrorCode::InvalidConfig, "pose prior stream outputs must be 3 or 63");
  if (arch.empty()) arch = outputs == kViewpointOutputs ? "poseprior-viewpoint" : "poseprior-coordinates";
  NetworkSpec s{std::move(arch),
                width,
                {{"scoremaps", {kScoreMapSize, kScoreMapSize, kNumKeypoints}}, {"hand_side", {2}}},
                {},
                {"fc10"}};
  auto& L = s.layers;
  const std::array<std::size_t, 6> channels{32, 32, 64, 64, 128, 128};
  for (int row = 1; row <= 6; ++row)
    detail::conv_relu(L, row, 3, scaled(channels[std::size_t(row - 1)], width), row % 2 == 0 ? 2 : 1);
  L.push_back(nn::reshape("flatten"));
  L.push_back(detail::tagged(nn::concat("concat7", {"flatten", "hand_side"}), 7));
  detail::fc_relu_dropout(L, 8, scaled(512, width));
  detail::fc_relu_dropout(L, 9, scaled(512, width));
  L.push_back(detail::tagged(nn::fully_connected("fc10", outputs), 10));
  return s;
}

/// Single stream regressing the 63 relative coordinates directly.
inline NetworkSpec build_poseprior_direct(double width = 1.0) {
  return build_poseprior_stream(kCoordinateOutputs, width, "poseprior-direct");
}

inline NetworkSpec build_gesturenet(double width = 1.0, std::size_t classes = kGestureClasses) {
  check_width(width);
  if (classes < 2) throw Error(ErrorCode::InvalidConfig, "gesture classifier needs at least 2 classes");
  NetworkSpec s{"gesturenet", width, {{"coords", {kCoordinateOutputs}}}, {}, {"fc3"}};
  detail::fc_relu_dropout(s.layers, 1, scaled(512, width));
  detail::fc_relu_dropout(s.layers, 2, scaled(512, width));
  s.layers.push_back(detail::tagged(nn::fully_connected("fc3", classes), 3));
  return s;
}

/// Propagated shape of every layer closing a table row, keyed by row id.
inline std::vector<std::pair<int, nn::Shape>> table_shapes(const NetworkSpec& spec) {
  const nn::ResolvedGraph g = nn::resolve(spec);
  std::vector<std::pair<int, nn::Shape>> rows;
  for (std::size_t l = 0; l < spec.layers.size(); ++l)
    if (spec.layers[l].table_row) rows.emplace_back(spec.layers[l].table_row, g.shapes[g.num_inputs + l]);
  return rows;
}

/// One-hot (left, right).
struct HandSideFlag {
  std::array<double, 2> onehot{1.0, 0.0};

  static HandSideFlag of(Handedness h) {
    return h == Handedness::Left ? HandSideFlag{{1.0, 0.0}} : HandSideFlag{{0.0, 1.0}};
  }
  Handedness handedness() const {
    if (!((onehot[0] == 1.0 && onehot[1] == 0.0) || (onehot[0] == 0.0 && onehot[1] == 1.0)))
      throw Error(ErrorCode::ShapeMismatch, "hand side flag is not one-hot");
    return onehot[0] == 1.0 ? Handedness::Left : Handedness::Right;
  }
};

struct PosePriorOutput {
  Keypoints3 canonical_coords{};
  AxisAngle viewpoint;
  RelativePose recombined;
};

inline Keypoints3 keypoints_from_flat(const double* v) {
  Keypoints3 k;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) k[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return k;
}

/// Recombines the two stream outputs into relative coordinates.
inline PosePriorOutput combine_streams(const Keypoints3& canonical, AxisAngle viewpoint, Handedness handedness) {
  return {canonical, viewpoint, from_canonical(canonical, axis_angle_to_matrix(viewpoint), handedness)};
}

/// Runs both streams over a batch of score maps [N, 32, 32, 21] with hand
/// side flags [N, 2] and recombines each sample.
template <typename T>
std::vector<PosePriorOutput> poseprior_predict(nn::Network<T>& coordinates, nn::Network<T>& viewpoint,
                                               const nn::Tensor<T>& scoremaps, const nn::Tensor<T>& side,
                                               const nn::RunOptions& options = {}) {
  if (coordinates.graph().shapes[coordinates.graph().outputs[0]] != nn::Shape{kCoordinateOutputs} ||
      viewpoint.graph().shapes[viewpoint.graph().outputs[0]] != nn::Shape{kViewpointOutputs})
    throw Error(ErrorCode::ShapeMismatch, "pose prior streams must output 63 and 3 values");
  const auto& wc_out = coordinates.forward({scoremaps, side}, options)[0]->data;
  const std::vector<double> wc(wc_out.begin(), wc_out.end());
  const auto& aa = viewpoint.forward({scoremaps, side}, options)[0]->data;
  const std::size_t n = scoremaps.shape[0];
  std::vector<PosePriorOutput> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const HandSideFlag flag{{double(side.data[2 * i]), double(side.data[2 * i + 1])}};
    out.push_back(combine_streams(keypoints_from_flat(wc.data() + i * kCoordinateOutputs),
                                  {double(aa[3 * i]), double(aa[3 * i + 1]), double(aa[3 * i + 2])},
                                  flag.handedness()));
  }
  return out;
}

/// Trainable architectures.
enum class Arch { PosePrior, PosePriorDirect, GestureNet };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::PosePrior: return "poseprior";
    case Arch::PosePriorDirect: return "poseprior-direct";
    case Arch::GestureNet: return "gesturenet";
  }
  return "?";
}

inline Arch parse_arch(const std::string& s) {
  for (Arch a : {Arch::PosePrior, Arch::PosePriorDirect, Arch::GestureNet})
    if (to_string(a) == s) return a;
  throw Error(ErrorCode::InvalidConfig,
              "unknown architecture \"" + s + "\" (expected poseprior, poseprior-direct or gesturenet)");
}

/// Networks of one trainable architecture with their optimizer state.
/// PosePrior holds the coordinate stream then the viewpoint stream.
struct ModelBundle {
  Arch arch = Arch::PosePrior;
  double width_scale = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::vector<nn::Network<float>> nets;
  std::vector<nn::AdamState<float>> optimizers;
};

inline std::vector<NetworkSpec> specs_for(Arch arch, double width, std::size_t classes = kGestureClasses) {
  switch (arch) {
    case Arch::PosePrior:
      return {build_poseprior_stream(kCoordinateOutputs, width), build_poseprior_stream(kViewpointOutputs, width)};
    case Arch::PosePriorDirect: return {build_poseprior_direct(width)};
    case Arch::GestureNet: return {build_gesturenet(width, classes)};
  }
  return {};
}

/// Freshly initialized networks; stream k draws from child_seed(seed, {k}).
inline ModelBundle make_model(Arch arch, double width, std::uint64_t seed, const nn::AdamOptions& adam = {},
                              std::size_t classes = kGestureClasses) {
  ModelBundle m;
  m.arch = arch;
  m.width_scale = width;
  m.seed = seed;
  for (NetworkSpec& spec : specs_for(arch, width, classes)) {
    m.nets.emplace_back(std::move(spec));
    m.nets.back().init_params(child_seed(seed, {m.nets.size() - 1}));
    m.optimizers.emplace_back(m.nets.back().parameters(), adam);
  }
  return m;
}

}  // namespace hand3d::models
