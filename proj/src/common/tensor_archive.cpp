#include "wmtrig/common/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "wmtrig/common/error.hpp"

namespace wmtrig {

static_assert(std::endian::native == std::endian::little,
              "tensor archives assume a little-endian host");

namespace {
constexpr char kMagic[4] = {'W', 'M', 'T', 'A'};
}

void TensorArchive::put(const std::string& name, std::vector<std::int64_t> shape,
                        std::vector<double> data) {
  std::int64_t count = 1;
  for (auto d : shape) count *= d;
  if (count != static_cast<std::int64_t>(data.size()))
    throw ShapeError("archive array '" + name + "': shape does not match data size");
  arrays_[name] = NamedArray{std::move(shape), std::move(data)};
}

bool TensorArchive::contains(const std::string& name) const {
  return arrays_.count(name) != 0;
}

const NamedArray& TensorArchive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw FormatError("archive has no array named '" + name + "'");
  return it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, arr] : arrays_) {
    header["arrays"].push_back({{"name", name},
                                {"shape", arr.shape},
                                {"offset", offset},
                                {"count", arr.data.size()}});
    offset += arr.data.size();
  }
  const std::string text = header.dump();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write archive: " + path.string());
    out.write(kMagic, 4);
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, arr] : arrays_)
      out.write(reinterpret_cast<const char*>(arr.data.data()),
                static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
    if (!out) throw IoError("archive write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive: " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("not a tensor archive: " + path.string());
  if (version != kFormatVersion)
    throw FormatError("unsupported archive version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive header: ") + e.what());
  }
  TensorArchive ar;
  ar.meta = header.value("meta", nlohmann::json::object());
  const auto base = in.tellg();
  for (const auto& entry : header.at("arrays")) {
    const auto count = entry.at("count").get<std::uint64_t>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::vector<double> data(count);
    in.seekg(base + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw FormatError("archive truncated: " + path.string());
    ar.put(entry.at("name").get<std::string>(),
           entry.at("shape").get<std::vector<std::int64_t>>(), std::move(data));
  }
  return ar;
}

}  // namespace wmtrig
