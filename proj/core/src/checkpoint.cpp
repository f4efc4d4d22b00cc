#include "hcam/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hcam {

namespace {

std::string shape_text(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw CheckpointFormatError("bad shape '" + text + "' in manifest");
    }
    shape.push_back(std::stoull(part));
  }
  if (shape.empty()) throw CheckpointFormatError("empty shape in manifest");
  return shape;
}

std::filesystem::path blob_path(const std::string& manifest, const std::string& blob) {
  return std::filesystem::path(manifest).parent_path() / blob;
}

// Manifest fields in file order.
std::vector<std::pair<std::string, std::string>> config_fields(const ModelConfig& m,
                                                               const TaskSpec& t) {
  return {
      {"model.kind", to_string(m.kind)},
      {"model.d_model", std::to_string(m.d_model)},
      {"model.layers", std::to_string(m.layers)},
      {"model.heads", std::to_string(m.heads)},
      {"model.chunk_size", std::to_string(m.chunk_size)},
      {"model.top_k", std::to_string(m.top_k)},
      {"model.window", std::to_string(m.window)},
      {"model.xl_length", std::to_string(m.xl_length)},
      {"model.mlp_hidden", std::to_string(m.mlp_hidden)},
      {"model.overlap", std::to_string(m.overlap)},
      {"model.capacity", std::to_string(m.capacity)},
      {"model.chunk_positions", m.chunk_positions ? "1" : "0"},
      {"task.kind", to_string(t.kind)},
      {"task.dances", std::to_string(t.ballet.n_dances)},
      {"task.delay", std::to_string(t.ballet.delay)},
      {"task.chain_length", std::to_string(t.pai.chain_length)},
      {"task.n_pairs", std::to_string(t.pai.n_pairs)},
      {"task.pool_size", std::to_string(t.pai.pool_size)},
  };
}

void set_field(CheckpointManifest& m, const std::string& key, const std::string& value) {
  auto num = [&]() -> std::size_t {
    if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
      throw CheckpointFormatError("bad value '" + value + "' for " + key);
    }
    return std::stoull(value);
  };
  if (key == "model.kind") m.model.kind = parse_model_kind(value);
  else if (key == "model.d_model") m.model.d_model = num();
  else if (key == "model.layers") m.model.layers = num();
  else if (key == "model.heads") m.model.heads = num();
  else if (key == "model.chunk_size") m.model.chunk_size = num();
  else if (key == "model.top_k") m.model.top_k = num();
  else if (key == "model.window") m.model.window = num();
  else if (key == "model.xl_length") m.model.xl_length = num();
  else if (key == "model.mlp_hidden") m.model.mlp_hidden = num();
  else if (key == "model.overlap") m.model.overlap = num();
  else if (key == "model.capacity") m.model.capacity = num();
  else if (key == "model.chunk_positions") m.model.chunk_positions = num() != 0;
  else if (key == "task.kind") m.task.kind = parse_task_kind(value);
  else if (key == "task.dances") m.task.ballet.n_dances = num();
  else if (key == "task.delay") m.task.ballet.delay = num();
  else if (key == "task.chain_length") m.task.pai.chain_length = num();
  else if (key == "task.n_pairs") m.task.pai.n_pairs = num();
  else if (key == "task.pool_size") m.task.pai.pool_size = num();
  else throw CheckpointFormatError("unknown manifest field '" + key + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const TaskModel& model) {
  const std::string blob_name = std::filesystem::path(path).filename().string() + ".bin";
  std::ofstream manifest(path, std::ios::out | std::ios::trunc);
  std::ofstream blob(blob_path(path, blob_name), std::ios::out | std::ios::binary | std::ios::trunc);
  if (!manifest || !blob) throw CheckpointError("cannot write checkpoint '" + path + "'");

  manifest << "hcam-checkpoint " << kCheckpointVersion << '\n';
  for (const auto& [key, value] : config_fields(model.model_config(), model.task())) {
    manifest << key << ' ' << value << '\n';
  }
  manifest << "blob " << blob_name << '\n';
  manifest << "parameters " << model.parameters().size() << '\n';
  std::uint64_t offset = 0;
  std::vector<unsigned char> bytes;
  for (const auto& p : model.parameters()) {
    manifest << "param " << p.name << ' ' << shape_text(p.value.shape()) << ' ' << offset << '\n';
    for (double v : p.value.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
    offset += 4 * p.value.size();
  }
  manifest << "end\n";
  blob.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!manifest || !blob) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

CheckpointManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  CheckpointManifest m;
  std::string line;
  if (!std::getline(in, line)) throw CheckpointFormatError("empty manifest '" + path + "'");
  {
    std::istringstream head(line);
    std::string magic;
    int version = -1;
    if (!(head >> magic >> version) || magic != "hcam-checkpoint") {
      throw CheckpointFormatError("'" + path + "' is not an hcam checkpoint manifest");
    }
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                   " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    m.version = version;
  }
  bool ended = false;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key == "param") {
      ManifestEntry e;
      std::string shape;
      if (!(fields >> e.name >> shape >> e.offset)) {
        throw CheckpointFormatError("bad parameter line '" + line + "'");
      }
      e.shape = parse_shape(shape);
      m.entries.push_back(std::move(e));
    } else if (key == "blob") {
      fields >> m.blob;
    } else if (key == "parameters") {
      fields >> declared;
    } else {
      std::string value;
      fields >> value;
      try {
        set_field(m, key, value);
      } catch (const CheckpointError&) {
        throw;
      } catch (const std::exception& e) {
        throw CheckpointFormatError(e.what());
      }
    }
  }
  if (!ended) throw CheckpointFormatError("manifest '" + path + "' has no end marker");
  if (declared != m.entries.size()) {
    throw CheckpointFormatError("manifest declares " + std::to_string(declared) +
                                " parameters but lists " + std::to_string(m.entries.size()));
  }
  if (m.blob.empty()) throw CheckpointFormatError("manifest names no blob");
  return m;
}

void check_compatible(const CheckpointManifest& manifest, const ModelConfig& model,
                      const TaskSpec& task) {
  const auto have = config_fields(manifest.model, manifest.task);
  const auto want = config_fields(model, task);
  for (std::size_t i = 0; i < have.size(); ++i) {
    const std::string& key = have[i].first;
    const bool relevant =
        key.rfind("model.", 0) == 0 || key == "task.kind" ||
        (task.kind == TaskKind::ballet && key == "task.dances");
    if (relevant && key != "model.capacity" && have[i].second != want[i].second) {
      throw CheckpointMismatchError("manifest mismatch: " + key + " is " + have[i].second +
                                    " in the checkpoint but " + want[i].second +
                                    " was requested");
    }
  }
}

void load_parameters(const std::string& path, TaskModel& model) {
  const CheckpointManifest m = read_manifest(path);
  ParameterSet& params = model.parameters();
  if (m.entries.size() != params.size()) {
    throw CheckpointShapeError("checkpoint has " + std::to_string(m.entries.size()) +
                               " parameters, model has " + std::to_string(params.size()));
  }
  std::uint64_t needed = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    const Parameter& p = params[i];
    if (e.name != p.name) {
      throw CheckpointShapeError("parameter " + std::to_string(i) + " is '" + e.name +
                                 "' in the checkpoint but '" + p.name + "' in the model");
    }
    if (e.shape != p.value.shape()) {
      throw CheckpointShapeError("shape mismatch for '" + e.name + "': checkpoint " +
                                 shape_text(e.shape) + ", model " +
                                 shape_text(p.value.shape()));
    }
    needed = std::max<std::uint64_t>(needed, e.offset + 4 * p.value.size());
  }
  std::ifstream blob(blob_path(path, m.blob), std::ios::binary);
  if (!blob) throw CheckpointError("cannot read checkpoint blob '" + m.blob + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < needed) {
    throw CheckpointTruncatedError("checkpoint blob holds " + std::to_string(bytes.size()) +
                                   " bytes, manifest needs " + std::to_string(needed));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint64_t base = m.entries[i].offset;
    auto values = params[i].value.values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes[base + 4 * j + b]) << (8 * b);
      }
      float f = 0.0F;
      std::memcpy(&f, &bits, sizeof f);
      values[j] = static_cast<double>(f);
    }
  }
}

std::unique_ptr<TaskModel> load_checkpoint(const std::string& path) {
  const CheckpointManifest m = read_manifest(path);
  std::unique_ptr<TaskModel> model;
  try {
    model = std::make_unique<TaskModel>(m.model, m.task, 0);
  } catch (const std::logic_error& e) {
    throw CheckpointFormatError(std::string("manifest describes an invalid model: ") + e.what());
  }
  load_parameters(path, *model);
  return model;
}

}  // namespace hcam
