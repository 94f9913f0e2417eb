#pragma once

#include <optional>
#include <string>

#include "mmca/features.hpp"

namespace mmca {

// Self-describing dataset container: "MMDS" magic, little-endian uint64 JSON
// header length, JSON header (segments, days, grid config, feature names,
// optional NormStats), then the raw little-endian double payload followed by
// the imputation flags.
void save_dataset(const std::string& path, const FrameGrid& grid,
                  const std::optional<NormStats>& stats = std::nullopt);

struct LoadedDataset {
  FrameGrid grid;
  std::optional<NormStats> stats;
};

LoadedDataset load_dataset(const std::string& path);

}  // namespace mmca
