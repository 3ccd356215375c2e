#include "protoecg/container.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "protoecg/errors.hpp"

namespace protoecg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "container format is little-endian");

namespace {
constexpr std::uint32_t kContainerVersion = 1;
}

const NamedArray& Container::array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw NotFoundError("container has no array '" + std::string(name) + "'");
}

bool Container::has_array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void write_container(const fs::path& path, std::string_view magic, Container c) {
  if (magic.size() != 8) throw ConfigurationError("container magic must be 8 bytes");
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    const auto expected = std::accumulate(a.shape.begin(), a.shape.end(), std::size_t{1},
                                          [](std::size_t x, int y) { return x * y; });
    if (expected != a.values.size()) {
      throw ShapeError("array '" + a.name + "' shape does not match its value count");
    }
    entries.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                       {"count", a.values.size()}});
    offset += a.values.size();
  }
  c.header["arrays"] = entries;
  const std::string header = c.header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(magic.data(), 8);
    const std::uint32_t version = kContainerVersion;
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& a : c.arrays) {
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Container read_container(const fs::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char got[8];
  in.read(got, 8);
  if (!in || std::string_view(got, 8) != magic) {
    throw IoError(path.string() + " is not a '" + std::string(magic) + "' container");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kContainerVersion) throw IoError("unsupported container version in " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated header in " + path.string());

  Container c;
  try {
    c.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad container header in " + path.string() + ": " + e.what());
  }
  const auto payload_start = in.tellg();
  for (const auto& e : c.header.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<std::vector<int>>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    a.values.resize(count);
    in.seekg(payload_start + static_cast<std::streamoff>(offset * sizeof(float)));
    in.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw IoError("truncated payload for '" + a.name + "' in " + path.string());
    c.arrays.push_back(std::move(a));
  }
  c.header.erase("arrays");
  return c;
}

}  // namespace protoecg
