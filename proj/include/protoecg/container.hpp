#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace protoecg {

// A named float32 array inside a binary container.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

// Single-file container used for weight checkpoints and prototype banks:
//
//   magic       8 bytes, e.g. "PECGCKPT"
//   version     uint32 LE (currently 1)
//   header_len  uint64 LE
//   header      UTF-8 JSON; key "arrays" lists {name, shape, offset, count} where offset and
//               count are in float32 elements relative to the payload start
//   payload     little-endian float32 values, arrays back to back
//
// Writes go to a temporary file that is renamed into place.
struct Container {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(std::string_view name) const;
  bool has_array(std::string_view name) const;
};

void write_container(const std::filesystem::path& path, std::string_view magic, Container c);
Container read_container(const std::filesystem::path& path, std::string_view magic);

}  // namespace protoecg
