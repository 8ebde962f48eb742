#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ftk/layers.hpp"

namespace ftk {

class Adam;

// Every checkpoint failure is an unusable input (CLI exit 2).
class CheckpointError : public DataError {
  public:
    using DataError::DataError;
};

class BadMagicError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class HeaderError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class ShapeMismatchError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class LayoutError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

class MissingTensorError : public CheckpointError {
  public:
    using CheckpointError::CheckpointError;
};

inline constexpr std::size_t kCheckpointAlign = 64;

using Meta = std::map<std::string, std::string>;

struct TensorEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
};

struct CheckpointHeader {
    int format_version = 1;
    std::vector<TensorEntry> tensors;
    Meta meta;
};

struct LoadedCheckpoint {
    Snapshot tensors;
    Meta meta;
    std::vector<std::string> warnings;
};

/// Writes tensors as an FTK1 file:
///   "FTK1" | u32le header length L | L bytes of JSON | f32le payload
/// Payload offsets are 64-byte aligned relative to the payload start; the
/// header is space-padded so the payload start is aligned in the file too.
/// The write goes to a temp file that is renamed over path.
void save_tensors(const Snapshot& tensors, const Meta& meta, const std::filesystem::path& path);
void save_checkpoint(const ParamTree& tree, const Meta& meta, const std::filesystem::path& path);

// Serialized bytes, exactly as save_tensors writes them.
std::vector<std::uint8_t> encode_checkpoint(const Snapshot& tensors, const Meta& meta);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

// Without an expected tree, the file defines the result (file order). With
// one, every expected name must be present with the same shape; the result
// follows the expected order and extra file names become warnings.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ParamTree* expected = nullptr);

// Validates against tree and copies the values in; returns the warnings.
std::vector<std::string> load_into(ParamTree& tree, const std::filesystem::path& path);

// Sibling file for optimizer state: "best.ftk1" -> "best.adam.ftk1".
std::filesystem::path optimizer_state_path(const std::filesystem::path& weights_path);

// Moment tensors as "adam.m.<name>" / "adam.v.<name>"; step count in meta.
void save_adam_state(const Adam& adam, const Meta& meta, const std::filesystem::path& path);
void load_adam_state(Adam& adam, const std::filesystem::path& path);

} // namespace ftk
