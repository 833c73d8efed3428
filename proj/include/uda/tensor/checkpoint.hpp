#pragma once

// Binary parameter checkpoints.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "UDACKPT\0"
//   version u32      = 1
//   count   u32
//   count x { name_len u32, name bytes, rank u32, rank x extent u64,
//             payload float32[numel] }

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uda/tensor/parameters.hpp"

namespace uda {

inline constexpr char kCheckpointMagic[8] = {'U', 'D', 'A', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<CheckpointEntry> to_entries(const ParameterSet<T>& params);

// Copies checkpoint values into existing parameters by name. Every parameter
// must be present with a matching shape.
template <typename T>
void load_into(ParameterSet<T>& params, const std::vector<CheckpointEntry>& entries);

template <typename T>
void save_parameters(const ParameterSet<T>& params, const std::filesystem::path& path) {
  write_checkpoint(path, to_entries(params));
}

template <typename T>
void load_parameters(ParameterSet<T>& params, const std::filesystem::path& path) {
  load_into(params, read_checkpoint(path));
}

}  // namespace uda
