#pragma once

// Binary checkpoint file.
//
//   "ENCLAPDS"                       8-byte magic
//   u32 version
//   str kind                         "codec", "clap" or "captioner"
//   u64 n, n x (str key, str value)  run configuration snapshot
//   u64 n, n x str                   vocabulary words in id order
//   u64 n, n x tensor                str name, u32 rank, rank x u64 dim, f64 values
//   u64 optimiser step, u64 n, n x (u64 len, f64 first[len], f64 second[len])
//   str rng                          textual mt19937_64 state (may be empty)
//
// Integers and doubles are little-endian; str is u64 length plus bytes.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "enclap/nn.hpp"

namespace enclap::cli {

inline constexpr char kCheckpointMagic[8] = {'E', 'N', 'C', 'L', 'A', 'P', 'D', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> vocabulary;
  std::vector<nn::NamedTensor> tensors;
  std::uint64_t optimizer_step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::string rng;

  bool operator==(const Checkpoint& other) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws CheckpointError on bad magic, version skew, truncation or trailing bytes.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace enclap::cli
