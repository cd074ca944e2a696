#pragma once

// Static network graphs: named inputs, an ordered layer list and output taps.
// Shapes exclude the batch dimension and are channels-last ([H, W, C] or [D]).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hand3d/error.hpp"
#include "hand3d/nn/tensor.hpp"

namespace hand3d::nn {

enum class LayerKind { Conv, ReLU, MaxPool, FullyConnected, Dropout, Concat, BilinearUpsample, Reshape, Argmax };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Concat: return "concat";
    case LayerKind::BilinearUpsample: return "upsample";
    case LayerKind::Reshape: return "reshape";
    case LayerKind::Argmax: return "argmax";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::ReLU, LayerKind::MaxPool, LayerKind::FullyConnected,
                      LayerKind::Dropout, LayerKind::Concat, LayerKind::BilinearUpsample, LayerKind::Reshape,
                      LayerKind::Argmax})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::SchemaViolation, "unknown layer kind \"" + s + "\"");
}

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  /// Producers feeding this layer; empty means the previous layer (the
  /// first input for the first layer).
  std::vector<std::string> sources;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// Conv output channels or FC units.
  std::size_t units = 0;
  double dropout = 0.0;
  /// Upsample target [H, W]; reshape target (empty flattens).
  Shape target;
  /// Row of the architecture table this layer closes, 0 if none.
  int table_row = 0;

  bool operator==(const LayerSpec&) const = default;
};

struct InputSpec {
  std::string name;
  Shape shape;
  bool operator==(const InputSpec&) const = default;
};

struct NetworkSpec {
  std::string arch;
  double width_scale = 1.0;
  std::vector<InputSpec> inputs;
  std::vector<LayerSpec> layers;
  std::vector<std::string> outputs;

  bool operator==(const NetworkSpec&) const = default;
};

inline LayerSpec make_layer(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

inline LayerSpec conv(std::string name, std::size_t kernel, std::size_t units, std::size_t stride = 1,
                      std::optional<std::size_t> padding = std::nullopt) {
  LayerSpec l = make_layer(LayerKind::Conv, std::move(name));
  l.kernel = kernel;
  l.units = units;
  l.stride = stride;
  l.padding = padding.value_or(kernel / 2);
  return l;
}

inline LayerSpec relu(std::string name) { return make_layer(LayerKind::ReLU, std::move(name)); }

inline LayerSpec maxpool(std::string name, std::size_t kernel = 4, std::size_t stride = 2, std::size_t padding = 1) {
  LayerSpec l = make_layer(LayerKind::MaxPool, std::move(name));
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

inline LayerSpec fully_connected(std::string name, std::size_t units) {
  LayerSpec l = make_layer(LayerKind::FullyConnected, std::move(name));
  l.units = units;
  return l;
}

inline LayerSpec dropout(std::string name, double p) {
  LayerSpec l = make_layer(LayerKind::Dropout, std::move(name));
  l.dropout = p;
  return l;
}

inline LayerSpec concat(std::string name, std::vector<std::string> sources) {
  LayerSpec l = make_layer(LayerKind::Concat, std::move(name));
  l.sources = std::move(sources);
  return l;
}

inline LayerSpec upsample(std::string name, std::size_t h, std::size_t w) {
  LayerSpec l = make_layer(LayerKind::BilinearUpsample, std::move(name));
  l.target = {h, w};
  return l;
}

inline LayerSpec reshape(std::string name, Shape target = {}) {
  LayerSpec l = make_layer(LayerKind::Reshape, std::move(name));
  l.target = std::move(target);
  return l;
}

inline LayerSpec argmax(std::string name) { return make_layer(LayerKind::Argmax, std::move(name)); }

/// Same layer reading from explicit producers.
inline LayerSpec from(LayerSpec l, std::vector<std::string> sources) {
  l.sources = std::move(sources);
  return l;
}

/// Graph node list: inputs first, then layers, with resolved source indices.
struct ResolvedGraph {
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<std::size_t>> sources;  // per layer
  std::vector<std::size_t> outputs;
  std::size_t num_inputs = 0;

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw Error(ErrorCode::ShapeMismatch, "no node named \"" + name + "\"");
  }
  const Shape& shape_of(const std::string& name) const { return shapes[index_of(name)]; }
};

inline std::size_t pooled_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const std::string& who) {
  if (in + 2 * p < k || s == 0) throw Error(ErrorCode::ShapeMismatch, who + ": window larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

/// Validates the graph and propagates shapes.
inline ResolvedGraph resolve(const NetworkSpec& spec) {
  ResolvedGraph g;
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ShapeMismatch, what); };
  auto add_name = [&](const std::string& n) {
    if (n.empty()) fail("empty node name");
    if (std::find(g.names.begin(), g.names.end(), n) != g.names.end()) fail("duplicate node name \"" + n + "\"");
    g.names.push_back(n);
  };
  if (spec.inputs.empty()) fail(spec.arch + ": network has no inputs");
  for (const InputSpec& in : spec.inputs) {
    add_name(in.name);
    if (in.shape.empty() || element_count(in.shape) == 0) fail("input \"" + in.name + "\" has an empty shape");
    g.shapes.push_back(in.shape);
  }
  g.num_inputs = spec.inputs.size();

  for (const LayerSpec& l : spec.layers) {
    const std::string who = spec.arch + "/" + l.name;
    std::vector<std::size_t> src;
    if (l.sources.empty()) {
      src.push_back(g.names.size() == g.num_inputs ? 0 : g.names.size() - 1);
    } else {
      for (const std::string& s : l.sources) {
        const auto it = std::find(g.names.begin(), g.names.end(), s);
        if (it == g.names.end()) fail(who + ": source \"" + s + "\" is not an earlier node");
        src.push_back(std::size_t(it - g.names.begin()));
      }
    }
    if (l.kind != LayerKind::Concat && src.size() != 1) fail(who + ": only concat takes several sources");
    const Shape& in = g.shapes[src[0]];
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv: {
        if (in.size() != 3) fail(who + ": conv needs an [H, W, C] input, got " + shape_string(in));
        if (l.kernel == 0 || l.units == 0) fail(who + ": conv needs kernel and units");
        out = {pooled_extent(in[0], l.kernel, l.stride, l.padding, who),
               pooled_extent(in[1], l.kernel, l.stride, l.padding, who), l.units};
        break;
      }
      case LayerKind::MaxPool: {
        if (in.size() != 3) fail(who + ": maxpool needs an [H, W, C] input");
        if (l.kernel == 0) fail(who + ": maxpool needs a kernel");
        out = {pooled_extent(in[0], l.kernel, l.stride, l.padding, who),
               pooled_extent(in[1], l.kernel, l.stride, l.padding, who), in[2]};
        break;
      }
      case LayerKind::ReLU: out = in; break;
      case LayerKind::Dropout:
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) fail(who + ": dropout probability must be in [0, 1)");
        out = in;
        break;
      case LayerKind::FullyConnected:
        if (in.size() != 1) fail(who + ": fc needs a flat input, got " + shape_string(in));
        if (l.units == 0) fail(who + ": fc needs units");
        out = {l.units};
        break;
      case LayerKind::Concat: {
        out = in;
        out.back() = 0;
        for (std::size_t s : src) {
          const Shape& sh = g.shapes[s];
          if (sh.size() != in.size() || !std::equal(sh.begin(), sh.end() - 1, in.begin()))
            fail(who + ": concat operands " + shape_string(in) + " and " + shape_string(sh) + " disagree");
          out.back() += sh.back();
        }
        break;
      }
      case LayerKind::BilinearUpsample:
        if (in.size() != 3 || l.target.size() != 2) fail(who + ": upsample needs [H, W, C] input and [H, W] target");
        if (l.target[0] < in[0] || l.target[1] < in[1]) fail(who + ": upsample target smaller than source");
        out = {l.target[0], l.target[1], in[2]};
        break;
      case LayerKind::Reshape:
        out = l.target.empty() ? Shape{element_count(in)} : l.target;
        if (element_count(out) != element_count(in))
          fail(who + ": cannot reshape " + shape_string(in) + " to " + shape_string(out));
        break;
      case LayerKind::Argmax:
        if (in.size() != 3) fail(who + ": argmax needs an [H, W, C] input");
        out = {in[0], in[1], 1};
        break;
    }
    add_name(l.name);
    g.shapes.push_back(out);
    g.sources.push_back(std::move(src));
  }
  if (spec.outputs.empty()) fail(spec.arch + ": network has no outputs");
  for (const std::string& o : spec.outputs) g.outputs.push_back(g.index_of(o));
  return g;
}

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : spec.layers) {
    nlohmann::json j = {{"kind", to_string(l.kind)}, {"name", l.name}};
    if (!l.sources.empty()) j["sources"] = l.sources;
    if (l.kernel) j["kernel"] = l.kernel;
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) j["stride"] = l.stride, j["padding"] = l.padding;
    if (l.units) j["units"] = l.units;
    if (l.kind == LayerKind::Dropout) j["p"] = l.dropout;
    if (!l.target.empty()) j["target"] = l.target;
    if (l.table_row) j["row"] = l.table_row;
    layers.push_back(j);
  }
  nlohmann::json inputs = nlohmann::json::array();
  for (const InputSpec& in : spec.inputs) inputs.push_back({{"name", in.name}, {"shape", in.shape}});
  return {{"arch", spec.arch},
          {"width_scale", spec.width_scale},
          {"inputs", inputs},
          {"layers", layers},
          {"outputs", spec.outputs}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  try {
    s.arch = j.at("arch").get<std::string>();
    s.width_scale = j.at("width_scale").get<double>();
    for (const auto& in : j.at("inputs")) s.inputs.push_back({in.at("name"), in.at("shape").get<Shape>()});
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      l.name = lj.at("name").get<std::string>();
      l.sources = lj.value("sources", std::vector<std::string>{});
      l.kernel = lj.value("kernel", std::size_t{0});
      l.stride = lj.value("stride", std::size_t{1});
      l.padding = lj.value("padding", std::size_t{0});
      l.units = lj.value("units", std::size_t{0});
      l.dropout = lj.value("p", 0.0);
      l.target = lj.value("target", Shape{});
      l.table_row = lj.value("row", 0);
      s.layers.push_back(std::move(l));
    }
    s.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("malformed network spec: ") + e.what());
  }
  resolve(s);
  return s;
}

}  // namespace hand3d::nn
