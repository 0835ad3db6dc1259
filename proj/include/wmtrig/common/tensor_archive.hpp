#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace wmtrig {

struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

// Self-describing parameter container.
//
// Layout: "WMTA" magic, u32 format version, u64 header length, a UTF-8 JSON
// header {"meta": {...}, "arrays": [{"name", "shape", "offset", "count"}]},
// then every array as contiguous little-endian float64 in header order.
class TensorArchive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, std::vector<std::int64_t> shape,
           std::vector<double> data);
  bool contains(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  const std::map<std::string, NamedArray>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
};

}  // namespace wmtrig
