/*
 * Copyright 2026 The tabbin Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// The four segment models with their shared featurizer, and the tbbn/1
// container they are persisted in:
//
//   "TBBN" | u32 manifest length | manifest JSON | f32 little-endian blob
//
// The manifest indexes every tensor by name with its offset, shape and CRC-32.

#ifndef TABBIN_BUNDLE_HPP_
#define TABBIN_BUNDLE_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "tabbin/errors.hpp"
#include "tabbin/featurizer.hpp"
#include "tabbin/model.hpp"

namespace tabbin {

static_assert(std::endian::native == std::endian::little, "tbbn/1 I/O assumes a little-endian host");

inline constexpr std::string_view kBundleFormat = "tbbn/1";
inline constexpr char kBundleMagic[4] = {'T', 'B', 'B', 'N'};

struct ModelBundle {
  Featurizer featurizer;
  EncoderConfig encoder;
  std::map<SegmentKind, SegmentModel<float>> models;
  nlohmann::json config = nlohmann::json::object();  // resolved run configuration

  bool has(SegmentKind s) const { return models.count(s) > 0; }

  const SegmentModel<float>& model(SegmentKind s) const {
    auto it = models.find(s);
    if (it == models.end()) {
      throw MissingModelError("bundle has no " + std::string(to_string(s)) + " model");
    }
    return it->second;
  }

  EmbeddingShape shape() const {
    EmbeddingShape s;
    s.vocab = featurizer.vocab.size();
    s.hidden = encoder.hidden;
    return s;
  }

  // Adds a model, enforcing the shared vocabulary and hidden size.
  void put(SegmentModel<float> m) {
    if (m.emb.shape() != shape() || !(m.cfg == encoder)) {
      throw ConfigError("model shape does not match the bundle");
    }
    models[m.segment] = std::move(m);
  }
};

inline std::uint32_t crc32(const void* data, std::size_t bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(data, bytes);
  return crc.checksum();
}

inline bool identical(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.featurizer.vocab == b.featurizer.vocab) || !(a.featurizer.units == b.featurizer.units) ||
      !(a.featurizer.types == b.featurizer.types) || !(a.encoder == b.encoder) ||
      a.config != b.config || a.models.size() != b.models.size()) {
    return false;
  }
  for (const auto& [seg, m] : a.models) {
    if (!b.has(seg) || !identical(m, b.model(seg))) return false;
  }
  return true;
}

inline std::string bundle_bytes(const ModelBundle& b) {
  nlohmann::json tensors = nlohmann::json::array();
  nlohmann::json models = nlohmann::json::array();
  std::string blob;
  for (const auto& [seg, m] : b.models) {
    models.push_back({{"segment", std::string(to_string(seg))}, {"flags", to_json(m.flags)}});
    m.visit([&](const std::string& name, const Matrix<float>& t) {
      const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(t.size());
      tensors.push_back({{"name", std::string(to_string(seg)) + "/" + name},
                         {"rows", t.rows()},
                         {"cols", t.cols()},
                         {"offset", blob.size()},
                         {"crc32", crc32(t.data(), bytes)}});
      blob.append(reinterpret_cast<const char*>(t.data()), bytes);
    });
  }
  nlohmann::json manifest{{"format", std::string(kBundleFormat)},
                          {"config", b.config},
                          {"encoder", to_json(b.encoder)},
                          {"vocab", b.featurizer.vocab.tokens()},
                          {"units", b.featurizer.units.to_json()},
                          {"types", b.featurizer.types.to_json()},
                          {"models", models},
                          {"tensors", tensors},
                          {"blob_bytes", blob.size()}};
  const std::string text = manifest.dump();
  std::string out(kBundleMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += text;
  out += blob;
  return out;
}

inline ModelBundle bundle_from_bytes(std::string_view bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kBundleMagic, 4) != 0) {
    throw FormatError("not a tbbn bundle (bad magic)");
  }
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 4, 4);
  if (bytes.size() < 8ULL + len) throw ChecksumError("bundle truncated inside the manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unreadable bundle manifest: ") + e.what());
  }
  const std::string format = manifest.value("format", "");
  if (format != kBundleFormat) {
    throw FormatError("unsupported bundle format '" + format + "' (expected " +
                      std::string(kBundleFormat) + ")");
  }
  const std::string_view blob = bytes.substr(8 + len);
  const std::size_t expected = manifest.value("blob_bytes", std::size_t{0});
  if (blob.size() != expected) {
    throw ChecksumError("tensor blob has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                        std::to_string(expected));
  }

  ModelBundle b;
  try {
    b.config = manifest.at("config");
    b.encoder = encoder_config_from_json(manifest.at("encoder"));
    b.featurizer.vocab = Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    b.featurizer.units = UnitDictionary::from_json(manifest.at("units"));
    b.featurizer.types = TypeDictionary::from_json(manifest.at("types"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bundle manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed bundle manifest: ") + e.what());
  }

  std::map<std::string, nlohmann::json> index;
  for (const auto& t : manifest.at("tensors")) index[t.at("name").get<std::string>()] = t;
  for (const auto& mj : manifest.at("models")) {
    const SegmentKind seg = segment_from_string(mj.at("segment").get<std::string>());
    SegmentModel<float> m(seg, b.shape(), b.encoder, ablation_flags_from_json(mj.at("flags")));
    m.visit([&](const std::string& name, Matrix<float>& t) {
      const std::string key = std::string(to_string(seg)) + "/" + name;
      auto it = index.find(key);
      if (it == index.end()) throw FormatError("bundle lacks tensor " + key);
      const auto& e = it->second;
      if (e.at("rows").get<Eigen::Index>() != t.rows() || e.at("cols").get<Eigen::Index>() != t.cols()) {
        throw FormatError("tensor " + key + " has an unexpected shape");
      }
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t nbytes = sizeof(float) * static_cast<std::size_t>(t.size());
      if (off + nbytes > blob.size()) throw ChecksumError("tensor " + key + " extends past the blob");
      if (crc32(blob.data() + off, nbytes) != e.at("crc32").get<std::uint32_t>()) {
        throw ChecksumError("checksum mismatch in tensor " + key);
      }
      std::memcpy(t.data(), blob.data() + off, nbytes);
    });
    b.models[seg] = std::move(m);
  }
  return b;
}

// Writes to a temporary file next to `path` and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  write_file_atomic(path, bundle_bytes(b));
}

inline ModelBundle load_bundle(const std::filesystem::path& path) {
  return bundle_from_bytes(read_file(path));
}

}  // namespace tabbin

#endif  // TABBIN_BUNDLE_HPP_
