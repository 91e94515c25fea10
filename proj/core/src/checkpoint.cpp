#include "dip/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace dip {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& v) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(&v, bytes, sizeof(T));
  return true;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("malformed checkpoint " + path.string() + ": " + what);
}

}  // namespace

void write_records(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << kCheckpointHeader << '\n';
  for (const auto& [name, t] : records) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
    for (double v : t.values()) put_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<NamedTensor> read_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  if (!std::getline(is, header) || header != kCheckpointHeader) corrupt(path, "bad header");
  std::vector<NamedTensor> out;
  std::uint32_t name_len = 0;
  while (get_le(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) corrupt(path, "truncated name");
    std::uint32_t rank = 0;
    if (!get_le(is, rank) || rank == 0 || rank > 8) corrupt(path, "bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      if (!get_le(is, v) || v == 0) corrupt(path, "bad extent for " + name);
      e = static_cast<std::size_t>(v);
    }
    std::vector<double> data(shape_size(shape));
    for (auto& v : data)
      if (!get_le(is, v)) corrupt(path, "truncated data for " + name);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!is.eof()) corrupt(path, "trailing bytes");
  return out;
}

void append_store(std::vector<NamedTensor>& records, const ParamStore& store,
                  const std::string& prefix) {
  for (const auto& e : store) records.emplace_back(prefix + e.name, e.value);
}

void load_store(ParamStore& store, const std::vector<NamedTensor>& records,
                const std::string& prefix) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name.emplace(name, &t);
  for (auto& e : store) {
    auto it = by_name.find(prefix + e.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing parameter " + prefix + e.name);
    if (it->second->shape() != e.value.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + prefix + e.name);
    }
    e.value = *it->second;
  }
}

}  // namespace dip
