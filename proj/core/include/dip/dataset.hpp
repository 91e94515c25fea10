#pragma once

#include <filesystem>
#include <vector>

#include "dip/run_config.hpp"
#include "dip/synth.hpp"

namespace dip::dataset {

/// On-disk layout:
///   manifest.json          {"config": {...}, "entries": [...], "heldout": [...]}
///   train/<id>.dipckpt     one "frames" record of shape (F, M, M, 3)
///   heldout/<id>.dipckpt
/// Every entry carries id, file, label, source_id and pair.
struct Dataset {
  std::vector<synth::VideoPair> train;
  std::vector<synth::VideoPair> heldout;

  std::vector<synth::Video> heldout_videos() const;
};

// Generates the training and held-out pairs for a config in memory.
// Held-out source ids start after the training ids.
Dataset generate(const RunConfig& cfg);

void write(const std::filesystem::path& dir, const Dataset& data, const RunConfig& cfg);

// Throws std::runtime_error when the directory or manifest is missing.
Dataset read(const std::filesystem::path& dir);

}  // namespace dip::dataset
