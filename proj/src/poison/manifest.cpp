#include "wmtrig/poison/manifest.hpp"

#include <fstream>

#include "wmtrig/common/csv.hpp"
#include "wmtrig/common/error.hpp"
#include "wmtrig/common/hash.hpp"

namespace wmtrig::poison {
namespace {

const csv::Row kHeader{"clip_ref", "label", "poisoned", "original_label"};

}  // namespace

std::string to_string(PoisonMode mode) {
  return mode == PoisonMode::kLabelFlip ? "label_flip" : "clean_label";
}

PoisonMode parse_mode(const std::string& name) {
  if (name == "label_flip") return PoisonMode::kLabelFlip;
  if (name == "clean_label") return PoisonMode::kCleanLabel;
  throw ConfigError("unknown poisoning mode '" + name + "' (expected label_flip or clean_label)");
}

nlohmann::json Provenance::to_json() const {
  return {{"seed", seed},
          {"rho", rho},
          {"target_label", target_label},
          {"mode", to_string(mode)},
          {"trigger_id", trigger_id},
          {"sampler", sampler},
          {"corpus_size", corpus_size},
          {"poisoned_count", poisoned_count}};
}

Provenance Provenance::from_json(const nlohmann::json& j) {
  try {
    Provenance p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.rho = j.at("rho").get<double>();
    p.target_label = j.at("target_label").get<std::string>();
    p.mode = parse_mode(j.at("mode").get<std::string>());
    p.trigger_id = j.at("trigger_id").get<std::string>();
    p.sampler = j.at("sampler").get<std::string>();
    p.corpus_size = j.at("corpus_size").get<size_t>();
    p.poisoned_count = j.at("poisoned_count").get<size_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed provenance record: ") + e.what());
  }
}

size_t CorpusManifest::poisoned_count() const {
  size_t n = 0;
  for (const auto& e : entries) n += e.poisoned;
  return n;
}

std::vector<std::string> CorpusManifest::labels() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

CorpusManifest CorpusManifest::from_clips(
    const std::vector<std::pair<std::string, std::string>>& ref_label) {
  CorpusManifest m;
  for (const auto& [ref, label] : ref_label) {
    const auto abs = std::filesystem::absolute(ref).lexically_normal().string();
    m.entries.push_back({abs, label, false, label});
  }
  return m;
}

std::string CorpusManifest::to_csv() const {
  std::string out = csv::format_row(kHeader) + "\n";
  for (const auto& e : entries)
    out += csv::format_row({e.clip_ref, e.label, e.poisoned ? "1" : "0", e.original_label}) + "\n";
  return out;
}

std::string CorpusManifest::digest() const {
  std::string buf = to_csv();
  if (provenance) buf += provenance->to_json().dump();
  return sha256_hex(buf);
}

std::filesystem::path CorpusManifest::sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".provenance.json");
  return p;
}

void CorpusManifest::save(const std::filesystem::path& csv_path) const {
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  auto write_atomic = [](const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + tmp.string());
      out << text;
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  };
  write_atomic(csv_path, to_csv());
  const auto side = sidecar_path(csv_path);
  if (provenance)
    write_atomic(side, provenance->to_json().dump(2) + "\n");
  else
    std::filesystem::remove(side);
}

CorpusManifest CorpusManifest::load(const std::filesystem::path& csv_path) {
  const csv::Table t = csv::read(csv_path);
  if (t.header != kHeader)
    throw FormatError(csv_path.string() + ": expected header clip_ref,label,poisoned,original_label");
  CorpusManifest m;
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (r.size() != 4) throw FormatError(csv_path.string() + ": row " + std::to_string(i + 2) + " has wrong arity");
    if (r[2] != "0" && r[2] != "1")
      throw FormatError(csv_path.string() + ": row " + std::to_string(i + 2) + " has a bad poisoned flag");
    m.entries.push_back({r[0], r[1], r[2] == "1", r[3]});
  }
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      m.provenance = Provenance::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(side.string() + ": " + e.what());
    }
  }
  return m;
}

}  // namespace wmtrig::poison
