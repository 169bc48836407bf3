#pragma once

// Checkpoint file layout ("adapam-ckpt-1"):
//   line 1: JSON manifest {format, seed, entries:[{name, shape}], meta}
//   rest:   little-endian float64 payload of every entry, in manifest order

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "adapam/errors.hpp"
#include "adapam/ndmath.hpp"

namespace adapam {

using json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "adapam-ckpt-1";

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

inline void append_f64_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double read_f64_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string encode_checkpoint(const ParameterSet& p, const json& meta = json::object()) {
  json m;
  m["format"] = kCheckpointFormat;
  m["seed"] = p.seed();
  m["entries"] = json::array();
  for (std::size_t i = 0; i < p.size(); ++i)
    m["entries"].push_back({{"name", p.name(i)}, {"shape", p.at(i).shape}});
  m["meta"] = meta;
  std::string out = m.dump();
  out.push_back('\n');
  for (std::size_t i = 0; i < p.size(); ++i)
    for (double v : p.at(i).data) append_f64_le(out, v);
  return out;
}

struct DecodedCheckpoint {
  ParameterSet params;
  json meta;
};

inline DecodedCheckpoint decode_checkpoint(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw IntegrityError("checkpoint has no manifest line");
  json m;
  try {
    m = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  if (m.value("format", "") != kCheckpointFormat) throw IntegrityError("unsupported checkpoint format");
  DecodedCheckpoint out{ParameterSet(m.at("seed").get<std::uint64_t>()), m.value("meta", json::object())};
  std::size_t pos = nl + 1;
  for (const auto& e : m.at("entries")) {
    auto shape = e.at("shape").get<std::vector<std::size_t>>();
    std::size_t n = Array::count(shape);
    if (pos + 8 * n > bytes.size()) throw IntegrityError("checkpoint payload truncated");
    Vec data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = read_f64_le(bytes.data() + pos + 8 * k);
    pos += 8 * n;
    out.params.add(e.at("name").get<std::string>(), Array(std::move(shape), std::move(data)));
  }
  if (pos != bytes.size()) throw IntegrityError("checkpoint has trailing bytes");
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParameterSet& p,
                            const json& meta = json::object()) {
  write_file(path, encode_checkpoint(p, meta));
}

inline DecodedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

inline json spec_to_json(const MlpSpec& s) {
  return {{"layer_sizes", s.layer_sizes}, {"hidden_activation", to_string(s.hidden)}};
}

inline MlpSpec spec_from_json(const json& j) {
  MlpSpec s{j.at("layer_sizes").get<std::vector<std::size_t>>(),
            activation_from_string(j.at("hidden_activation").get<std::string>())};
  s.validate();
  return s;
}

inline void save_network(const std::filesystem::path& path, const Network& n) {
  save_checkpoint(path, n.params, {{"mlp", spec_to_json(n.spec)}});
}

inline Network load_network(const std::filesystem::path& path) {
  auto d = load_checkpoint(path);
  Network n{spec_from_json(d.meta.at("mlp")), std::move(d.params)};
  check_mlp_layout(n.params, n.spec);
  return n;
}

/// Writes one checkpoint per network plus `<stem>.json` listing the files and
/// their SHA-256. Returns the joint manifest path.
inline std::filesystem::path save_network_group(const std::filesystem::path& dir, const std::string& stem,
                                                const std::vector<Network>& nets,
                                                const json& meta = json::object()) {
  std::filesystem::create_directories(dir);
  json manifest{{"format", kCheckpointFormat}, {"group", stem}, {"members", json::array()}, {"meta", meta}};
  for (std::size_t i = 0; i < nets.size(); ++i) {
    std::string file = stem + "_" + std::to_string(i) + ".ckpt";
    std::string bytes = encode_checkpoint(nets[i].params, {{"mlp", spec_to_json(nets[i].spec)}});
    write_file(dir / file, bytes);
    manifest["members"].push_back({{"file", file}, {"sha256", sha256_hex(bytes)}});
  }
  auto path = dir / (stem + ".json");
  write_file(path, manifest.dump(2) + "\n");
  return path;
}

struct NetworkGroup {
  std::vector<Network> nets;
  json meta;
};

inline NetworkGroup load_network_group(const std::filesystem::path& manifest_path) {
  json m = json::parse(read_file(manifest_path));
  NetworkGroup g{{}, m.value("meta", json::object())};
  for (const auto& mem : m.at("members")) {
    auto path = manifest_path.parent_path() / mem.at("file").get<std::string>();
    std::string bytes = read_file(path);
    if (sha256_hex(bytes) != mem.at("sha256").get<std::string>())
      throw IntegrityError("checkpoint hash mismatch: " + path.string());
    auto d = decode_checkpoint(bytes);
    Network n{spec_from_json(d.meta.at("mlp")), std::move(d.params)};
    check_mlp_layout(n.params, n.spec);
    g.nets.push_back(std::move(n));
  }
  return g;
}

}  // namespace adapam
