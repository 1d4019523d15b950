#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ftwa/layers.hpp"
#include "ftwa/raft.hpp"

namespace ftwa {

/// Binary layout: "FTWACKPT", u32 version, u64 config hash, config text,
/// training identity list, then named float64 tensors (parameters first,
/// buffers second). Integers are little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::uint64_t config_hash = 0;
  std::vector<int> identities;
  std::map<std::string, Tensor<double>> parameters;
  std::map<std::string, Tensor<double>> buffers;
};

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& state, std::string config_text,
                           std::uint64_t config_hash, std::vector<int> identities);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError on a bad magic, version or truncated file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copy every tensor of `ckpt` into `state`. Throws CheckpointError when the
/// config hash differs from `expected_hash`, or when names or shapes disagree.
template <typename T>
void load_state(ParameterSet<T>& state, const Checkpoint& ckpt, std::uint64_t expected_hash);

/// FNV-1a of the file contents, hex encoded.
std::string file_digest(const std::filesystem::path& path);

/// Stand-alone RAFT export: feature map in, feature map out.
std::string raft_config_text(const RaftConfig& config);
RaftConfig parse_raft_config_text(const std::string& text);

template <typename T>
void export_raft(const std::filesystem::path& path, const Raft<T>& raft);

template <typename T>
Raft<T> import_raft(const std::filesystem::path& path);

}  // namespace ftwa
