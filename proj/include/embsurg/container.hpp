#pragma once

// Binary container used for every on-disk artifact: datasets, checkpoints,
// trial results and reference statistics.
//
// Layout:
//   bytes 0..7   magic "EMBSURG1"
//   u32 LE       header length
//   header       UTF-8 JSON: {"version", "type", "seed", "provenance",
//                "arrays": [{"name", "dtype": "f32"|"i64", "shape"}]}
//   payload      raw little-endian array data, concatenated in header order
//   u64 LE       FNV-1a checksum over everything before it
//
// Round trips are bit-exact; loads verify magic, version and checksum and
// never return a partial object.

#include "embsurg/core.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace embsurg {

inline constexpr char kContainerMagic[8] = {'E', 'M', 'B', 'S',
                                            'U', 'R', 'G', '1'};
inline constexpr int kContainerVersion = 1;

struct Container {
  std::string type;
  std::uint64_t seed = 0;
  nlohmann::json provenance = nlohmann::json::object();

  // Insertion order is preserved on disk.
  std::vector<std::string> array_order;
  std::map<std::string, MatF> float_arrays;    // stored column-major
  std::map<std::string, VecI> int_arrays;
  std::map<std::string, std::vector<std::int64_t>> shapes;

  void add(const std::string& name, const MatF& data,
           std::vector<std::int64_t> shape = {});
  void add(const std::string& name, const VecI& data);

  bool has(const std::string& name) const;
  const MatF& floats(const std::string& name) const;
  const VecI& ints(const std::string& name) const;
  const std::vector<std::int64_t>& shape(const std::string& name) const;
};

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

// Loads only the header; used to identify artifact types cheaply.
nlohmann::json peek_header(const std::string& path);

}  // namespace embsurg
