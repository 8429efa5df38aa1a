#pragma once

// Binary checkpoint container. The byte layout is described in
// docs/checkpoint-format.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zipmo/nn/params.hpp"

namespace zipmo::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  /// JSON text echoing the configuration the arrays were produced with.
  std::string config_json = "{}";
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
  const CheckpointArray& at(const std::string& name) const;
  void put(CheckpointArray a);
};

std::string serialize_checkpoint(const Checkpoint& ck);
/// Throws ParseError on bad magic, unsupported version, truncation or a
/// checksum mismatch.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
/// MissingFileError when absent.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends every parameter as a 2-D array named "<prefix><param name>".
template <typename T>
void export_params(const ParamStore<T>& ps, Checkpoint& ck, const std::string& prefix = "");
/// Fills every parameter of `ps` from the matching array; a missing name or
/// shape mismatch is a ParseError.
template <typename T>
void import_params(const Checkpoint& ck, ParamStore<T>& ps, const std::string& prefix = "");

}  // namespace zipmo::nn
