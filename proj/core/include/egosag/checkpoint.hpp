#pragma once

// Versioned binary checkpoint container: named float32 tensors (parameters
// plus optimizer moments), the architecture hash of the config that produced
// them, and the optimization step count. Loading verifies magic, version,
// and — when the caller supplies one — the architecture hash, each failure
// carrying its own DataError kind.

#include <cstdint>
#include <map>
#include <string>

#include "egosag/nn.hpp"
#include "egosag/tensor.hpp"

namespace egosag {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::map<std::string, ad::Mat> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// expected_hash = 0 skips the compatibility check (inspection tools).
Checkpoint load_checkpoint(const std::string& path,
                           std::uint64_t expected_hash = 0);

// Parameter names come straight from the registry; optimizer moments are
// stored alongside under an "opt." prefix by the trainer.
Checkpoint capture_params(const ParamRegistry& reg, std::uint64_t config_hash,
                          std::uint64_t step = 0);

// Copies every tensor whose name lacks the "opt." prefix into the registry.
// Missing or shape-mismatched parameters raise DataError{Corrupt}.
void restore_params(ParamRegistry& reg, const Checkpoint& ckpt);

}  // namespace egosag
