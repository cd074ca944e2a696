#pragma once

// Checkpoints: a JSON manifest next to a raw little-endian float32 blob
// holding parameters and optimizer moments.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hand3d/error.hpp"
#include "hand3d/io.hpp"
#include "hand3d/models.hpp"
#include "hand3d/training.hpp"

namespace hand3d::checkpoint {

using models::Arch;
using models::ModelBundle;

inline constexpr const char* kFormatName = "hand3d-checkpoint";
inline constexpr int kFormatVersion = 1;
/// Architecture name of a checkpoint that predicts ground truth.
inline constexpr const char* kOracleArch = "oracle";

struct TensorEntry {
  std::string name;
  nn::Shape shape;
  std::uint64_t offset = 0;  // bytes
  std::uint64_t length = 0;  // bytes
};

inline std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p += ".bin";
  return p;
}

namespace detail {

inline void append_le(std::string& blob, const std::vector<float>& values) {
  const std::size_t at = blob.size();
  blob.resize(at + 4 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) blob[at + 4 * i + std::size_t(b)] = char((bits >> (8 * b)) & 0xFFu);
  }
}

inline std::vector<float> read_le(const std::string& blob, std::uint64_t offset, std::uint64_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= std::uint32_t(static_cast<unsigned char>(blob[offset + 4 * i + std::size_t(b)])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

/// Every stored tensor of a model, in blob order.
template <typename Bundle, typename Fn>
void for_each_tensor(Bundle& m, Fn&& fn) {
  for (std::size_t k = 0; k < m.nets.size(); ++k) {
    auto& params = m.nets[k].parameters();
    const auto& names = m.nets[k].parameter_names();
    const std::string prefix = "net" + std::to_string(k) + "/";
    for (std::size_t i = 0; i < params.size(); ++i) fn(prefix + names[i], params[i].shape, params[i].data);
    for (std::size_t i = 0; i < params.size(); ++i) fn(prefix + "adam_m/" + names[i], params[i].shape, m.optimizers[k].m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) fn(prefix + "adam_v/" + names[i], params[i].shape, m.optimizers[k].v[i]);
  }
}

[[noreturn]] inline void schema(const std::string& what) { throw Error(ErrorCode::SchemaViolation, "checkpoint: " + what); }

}  // namespace detail

/// Writes manifest and blob atomically. The config snapshot records how
/// the model was trained.
inline void save(const std::filesystem::path& path, const ModelBundle& m, const training::TrainConfig& config) {
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  detail::for_each_tensor(m, [&](const std::string& name, const nn::Shape& shape, const std::vector<float>& data) {
    const std::uint64_t offset = blob.size();
    detail::append_le(blob, data);
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"length", blob.size() - offset}});
  });
  nlohmann::json networks = nlohmann::json::array(), adam = nlohmann::json::array();
  for (const auto& net : m.nets) networks.push_back(nn::spec_to_json(net.spec()));
  for (const auto& opt : m.optimizers)
    adam.push_back({{"t", opt.t},
                    {"lr", opt.options.lr},
                    {"beta1", opt.options.beta1},
                    {"beta2", opt.options.beta2},
                    {"epsilon", opt.options.epsilon}});
  const nlohmann::json manifest{{"format", kFormatName},
                                {"version", kFormatVersion},
                                {"arch", models::to_string(m.arch)},
                                {"width_scale", m.width_scale},
                                {"seed", m.seed},
                                {"iteration", m.iteration},
                                {"config", training::config_to_json(config)},
                                {"networks", networks},
                                {"adam", adam},
                                {"blob", blob_path(path).filename().string()},
                                {"blob_bytes", blob.size()},
                                {"tensors", tensors}};
  atomic_write(blob_path(path), blob);
  atomic_write(path, manifest.dump(1) + "\n");
}

/// Manifest of a checkpoint whose predictions are the ground truth.
inline void save_oracle(const std::filesystem::path& path) {
  const nlohmann::json manifest{{"format", kFormatName},          {"version", kFormatVersion},
                                {"arch", kOracleArch},            {"width_scale", 1.0},
                                {"seed", 0},                      {"iteration", 0},
                                {"config", nlohmann::json::object()}, {"networks", nlohmann::json::array()},
                                {"adam", nlohmann::json::array()}, {"blob", blob_path(path).filename().string()},
                                {"blob_bytes", 0},                {"tensors", nlohmann::json::array()}};
  atomic_write(blob_path(path), "");
  atomic_write(path, manifest.dump(1) + "\n");
}

struct Checkpoint {
  std::string arch;
  /// Empty for the oracle.
  std::optional<ModelBundle> model;
  training::TrainConfig config;

  bool oracle() const { return arch == kOracleArch; }
};

/// Checks offsets, lengths and coverage of the tensor table against the blob.
inline std::vector<TensorEntry> validate_tensor_table(const nlohmann::json& table, std::uint64_t blob_bytes) {
  std::vector<TensorEntry> entries;
  for (const auto& t : table)
    entries.push_back({t.at("name").get<std::string>(), t.at("shape").get<nn::Shape>(), t.at("offset").get<std::uint64_t>(),
                       t.at("length").get<std::uint64_t>()});
  std::vector<const TensorEntry*> by_offset;
  std::map<std::string, int> seen;
  for (const auto& e : entries) {
    if (seen[e.name]++) detail::schema("duplicate tensor \"" + e.name + "\"");
    if (e.length != 4 * nn::element_count(e.shape))
      detail::schema("tensor \"" + e.name + "\" length " + std::to_string(e.length) + " does not match shape " +
                     nn::shape_string(e.shape));
    if (e.offset > blob_bytes || e.length > blob_bytes - e.offset)
      detail::schema("tensor \"" + e.name + "\" extends past the blob");
    by_offset.push_back(&e);
  }
  std::sort(by_offset.begin(), by_offset.end(), [](auto* a, auto* b) { return a->offset < b->offset; });
  std::uint64_t end = 0;
  for (const TensorEntry* e : by_offset) {
    if (e->offset < end) detail::schema("tensor \"" + e->name + "\" overlaps its predecessor");
    end = e->offset + e->length;
  }
  if (end != blob_bytes) detail::schema("tensors cover " + std::to_string(end) + " of " + std::to_string(blob_bytes) + " blob bytes");
  return entries;
}

/// Loads and validates a checkpoint. When expected is set, any other
/// architecture (including the oracle) is an ArchMismatch.
inline Checkpoint load(const std::filesystem::path& path, std::optional<Arch> expected = std::nullopt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    detail::schema(path.string() + " is not JSON: " + e.what());
  }
  try {
    if (j.value("format", "") != kFormatName) detail::schema(path.string() + " is not a hand3d checkpoint");
    if (j.at("version").get<int>() != kFormatVersion)
      throw Error(ErrorCode::UnsupportedVersion,
                  "checkpoint version " + j.at("version").dump() + " (supported: " + std::to_string(kFormatVersion) + ")");
    Checkpoint c;
    c.arch = j.at("arch").get<std::string>();
    if (expected && c.arch != models::to_string(*expected))
      throw Error(ErrorCode::ArchMismatch, "checkpoint holds " + c.arch + ", expected " + models::to_string(*expected));
    const std::string blob = read_file(path.parent_path() / j.at("blob").get<std::string>());
    const std::uint64_t blob_bytes = j.at("blob_bytes").get<std::uint64_t>();
    if (blob.size() != blob_bytes)
      detail::schema("blob holds " + std::to_string(blob.size()) + " bytes, manifest says " + std::to_string(blob_bytes));
    const std::vector<TensorEntry> entries = validate_tensor_table(j.at("tensors"), blob_bytes);
    if (c.oracle()) {
      if (!entries.empty()) detail::schema("oracle checkpoints carry no tensors");
      return c;
    }

    const Arch arch = models::parse_arch(c.arch);
    c.config = training::config_from_json(j.at("config"));
    const double width = j.at("width_scale").get<double>();
    const auto& networks = j.at("networks");
    std::size_t classes = models::kGestureClasses;
    if (arch == Arch::GestureNet && !networks.empty()) {
      const nn::NetworkSpec spec = nn::spec_from_json(networks.at(0));
      classes = nn::resolve(spec).shapes[nn::resolve(spec).outputs[0]][0];
    }
    const std::vector<nn::NetworkSpec> want = models::specs_for(arch, width, classes);
    if (networks.size() != want.size()) throw Error(ErrorCode::ArchMismatch, "network count does not match " + c.arch);
    for (std::size_t k = 0; k < want.size(); ++k)
      if (nn::spec_from_json(networks[k]) != want[k])
        throw Error(ErrorCode::ArchMismatch, "network " + std::to_string(k) + " differs from the " + c.arch + " builder");

    ModelBundle m = models::make_model(arch, width, j.at("seed").get<std::uint64_t>(), {}, classes);
    m.iteration = j.at("iteration").get<std::uint64_t>();
    const auto& adam = j.at("adam");
    if (adam.size() != m.optimizers.size()) detail::schema("optimizer count does not match the networks");
    for (std::size_t k = 0; k < adam.size(); ++k) {
      auto& o = m.optimizers[k];
      o.t = adam[k].at("t").get<std::uint64_t>();
      o.options.lr = adam[k].at("lr").get<double>();
      o.options.beta1 = adam[k].at("beta1").get<double>();
      o.options.beta2 = adam[k].at("beta2").get<double>();
      o.options.epsilon = adam[k].at("epsilon").get<double>();
    }
    std::map<std::string, const TensorEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    std::size_t used = 0;
    detail::for_each_tensor(m, [&](const std::string& name, const nn::Shape& shape, std::vector<float>& data) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) detail::schema("missing tensor \"" + name + "\"");
      if (it->second->shape != shape)
        throw Error(ErrorCode::ArchMismatch, "tensor \"" + name + "\" has shape " + nn::shape_string(it->second->shape) +
                                                 ", model expects " + nn::shape_string(shape));
      data = detail::read_le(blob, it->second->offset, nn::element_count(shape));
      ++used;
    });
    if (used != entries.size()) detail::schema("manifest lists tensors the model does not have");
    c.model = std::move(m);
    return c;
  } catch (const nlohmann::json::exception& e) {
    detail::schema(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace hand3d::checkpoint
