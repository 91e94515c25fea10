#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dip/param_store.hpp"
#include "dip/tensor.hpp"

namespace dip {

// DIPCKPT v1 layout:
//   "DIPCKPT v1\n"
//   per record: u32 name length, UTF-8 name bytes, u32 rank,
//               rank x u64 extents, product(extents) x f64 values
// All integers and floats are little-endian. Records run to end of file.
inline constexpr const char* kCheckpointHeader = "DIPCKPT v1";

using NamedTensor = std::pair<std::string, Tensor>;

void write_records(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_records(const std::filesystem::path& path);

// Record names are prefixed with `prefix` (e.g. "student/").
void append_store(std::vector<NamedTensor>& records, const ParamStore& store,
                  const std::string& prefix = "");

// Copies values for every store parameter from records carrying `prefix`.
// Missing names or shape mismatches throw.
void load_store(ParamStore& store, const std::vector<NamedTensor>& records,
                const std::string& prefix = "");

}  // namespace dip
