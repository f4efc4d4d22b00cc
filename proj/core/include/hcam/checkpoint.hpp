#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcam/memory_stack.hpp"
#include "hcam/task_model.hpp"
#include "hcam/tensor.hpp"

namespace hcam {

/// A checkpoint is a text manifest at `path` plus a blob of little-endian
/// float32 values at `path + ".bin"`, parameters in manifest order.
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// The manifest's architecture differs from the one requested.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // bytes into the blob
};

struct CheckpointManifest {
  int version = kCheckpointVersion;
  ModelConfig model;
  TaskSpec task;
  std::string blob;  // file name, relative to the manifest's directory
  std::vector<ManifestEntry> entries;
};

void save_checkpoint(const std::string& path, const TaskModel& model);
CheckpointManifest read_manifest(const std::string& path);
/// Rebuilds the model described by the manifest and loads its parameters.
std::unique_ptr<TaskModel> load_checkpoint(const std::string& path);
/// Loads parameters into an existing model of the same architecture.
void load_parameters(const std::string& path, TaskModel& model);
/// Throws CheckpointMismatchError naming the first differing field.
void check_compatible(const CheckpointManifest& manifest, const ModelConfig& model,
                      const TaskSpec& task);

}  // namespace hcam
