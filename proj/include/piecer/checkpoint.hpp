#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/binary_io.hpp"
#include "piecer/config.hpp"
#include "piecer/errors.hpp"
#include "piecer/mrc.hpp"

namespace piecer {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Container layout (little-endian), documented in docs/formats.md:
///   "PCKP" | u32 version | string header (JSON)
///   | u32 count | count x (string name | u32 rank | rank x u32 dim | f64 values)
struct CheckpointFile {
  static constexpr std::uint32_t kFormatVersion = 1;
  nlohmann::json header;
  std::vector<NamedTensor> tensors;
};

inline void write_checkpoint_file(const CheckpointFile& f, std::ostream& out) {
  using namespace binary;
  out.write("PCKP", 4);
  write_le<std::uint32_t>(out, CheckpointFile::kFormatVersion);
  write_string(out, f.header.dump());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& t : f.tensors) {
    write_string(out, t.name);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.shape().size()));
    for (std::size_t d : t.value.shape()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double x : t.value.values()) write_le<double>(out, x);
  }
}

inline CheckpointFile read_checkpoint_file(std::istream& in) {
  using namespace binary;
  expect_magic(in, "PCKP", "checkpoint");
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != CheckpointFile::kFormatVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointFile f;
  const std::string header = read_string(in, "header");
  f.header = nlohmann::json::parse(header, nullptr, false);
  if (f.header.is_discarded() || !f.header.is_object()) throw FormatError("checkpoint: header is not a JSON object");
  const auto count = read_le<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = read_string(in, "tensor name", 1u << 16);
    const auto rank = read_le<std::uint32_t>(in, "rank");
    if (rank < 1 || rank > 2) throw FormatError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t size = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(read_le<std::uint32_t>(in, "dimension"));
      size *= shape.back();
    }
    if (size > (1u << 28)) throw FormatError("checkpoint: tensor '" + t.name + "' implausibly large");
    t.value = Tensor(shape);
    for (double& x : t.value.values()) x = read_le<double>(in, "tensor values");
    f.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return f;
}

/// Header: the effective run config, the vocabulary, the knowledge width and
/// free-form `meta` (e.g. best epoch).
inline CheckpointFile make_checkpoint(MrcModel& model, const RunConfig& config, std::size_t knowledge_dim,
                                      nlohmann::json meta = nlohmann::json::object()) {
  CheckpointFile f;
  f.header = {{"format", "piecer-checkpoint"},
              {"config", to_json(config)},
              {"model", to_json(model.config())},
              {"knowledge_dim", knowledge_dim},
              {"vocab", model.vocab().words()},
              {"meta", std::move(meta)}};
  for (const Parameter* p : model.parameters()) f.tensors.push_back({p->name, p->value});
  return f;
}

struct LoadedModel {
  RunConfig config;
  std::size_t knowledge_dim = 0;
  nlohmann::json header;
  std::unique_ptr<MrcModel> model;
};

/// Rebuilds the model from the header and restores every tensor by name;
/// missing, extra or mis-shaped tensors are format errors.
inline LoadedModel restore_model(const CheckpointFile& f) {
  LoadedModel out;
  out.header = f.header;
  try {
    if (f.header.at("format") != "piecer-checkpoint") throw FormatError("checkpoint: unexpected format tag");
    out.config = parse_run_config(f.header.at("config"));
    out.knowledge_dim = f.header.at("knowledge_dim").get<std::size_t>();
    Vocab vocab(f.header.at("vocab").get<std::vector<std::string>>());
    out.model = std::make_unique<MrcModel>(out.config.model, std::move(vocab), out.knowledge_dim, out.config.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header config: ") + e.what());
  }
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : f.tensors) {
    if (!by_name.emplace(t.name, &t.value).second) throw FormatError("checkpoint: duplicate tensor '" + t.name + "'");
  }
  std::size_t used = 0;
  for (Parameter* p : out.model->parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor '" + p->name + "'");
    if (it->second->shape() != p->value.shape()) {
      throw FormatError("checkpoint: tensor '" + p->name + "' has shape " + shape_str(it->second->shape()) +
                        ", model expects " + shape_str(p->value.shape()));
    }
    p->value = *it->second;
    ++used;
  }
  if (used != f.tensors.size()) throw FormatError("checkpoint: tensors the model does not use");
  return out;
}

inline void save_checkpoint(const CheckpointFile& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint_file(f, out);
  if (!out) throw FormatError("write failed for " + path);
}

inline CheckpointFile load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_checkpoint_file(in);
}

}  // namespace piecer
