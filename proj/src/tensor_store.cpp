#include "attnseg/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "attnseg/error.hpp"

namespace attnseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::category: return "category";
    case TokenKind::identifier: return "identifier";
    case TokenKind::background: return "background";
    case TokenKind::other: return "other";
  }
  return "other";
}

TokenKind token_kind_from_string(const std::string& s) {
  if (s == "category") return TokenKind::category;
  if (s == "identifier") return TokenKind::identifier;
  if (s == "background") return TokenKind::background;
  if (s == "other") return TokenKind::other;
  throw ValidationError("unknown token kind '" + s + "'");
}

const TokenEntry* TokenManifest::find(const std::string& label, TokenKind kind) const {
  for (const auto& e : entries) {
    if (e.label == label && e.kind == kind) return &e;
  }
  return nullptr;
}

const CrossLayer* AttentionBundle::layer(int layer_index) const {
  for (const auto& l : cross_layers) {
    if (l.layer_index == layer_index) return &l;
  }
  return nullptr;
}

namespace {

void check_finite_unit(const std::vector<float>& values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v)) {
      throw ValidationError(what + ": non-finite value at index " + std::to_string(i));
    }
    if (v < 0.0f || v > 1.0f) {
      throw ValidationError(what + ": value " + std::to_string(v) + " outside [0,1] at index " +
                            std::to_string(i));
    }
  }
}

void check_row_stochastic(const Matrix& m, const std::string& what) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double sum = 0.0;
    for (float v : m.row(r)) sum += v;
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      std::ostringstream os;
      os << what << ": row " << r << " sums to " << sum << ", expected 1";
      throw ValidationError(os.str());
    }
  }
}

}  // namespace

void validate_manifest_spans(const TokenManifest& manifest, std::size_t tokens) {
  std::set<std::string> categories;
  for (const auto& e : manifest.entries) {
    if (e.span.first > e.span.last) {
      throw ValidationError("token span [" + std::to_string(e.span.first) + "," + std::to_string(e.span.last) +
                            "] of '" + e.label + "' is empty");
    }
    if (e.span.last >= tokens) {
      throw ValidationError("token span of '" + e.label + "' exceeds token count " + std::to_string(tokens));
    }
    if (e.kind == TokenKind::category && !categories.insert(e.label).second) {
      throw ValidationError("duplicate category label '" + e.label + "'");
    }
  }
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& a = manifest.entries[i];
    if (a.kind != TokenKind::category) continue;
    for (std::size_t j = i + 1; j < manifest.entries.size(); ++j) {
      const auto& b = manifest.entries[j];
      if (b.kind == TokenKind::category && a.span.overlaps(b.span)) {
        throw ValidationError("category spans of '" + a.label + "' and '" + b.label + "' overlap");
      }
    }
  }
}

void validate(const AttentionBundle& b) {
  if (b.cross_layers.empty()) throw ValidationError("bundle has no cross-attention layers");
  if (b.image_width == 0 || b.image_height == 0) throw ValidationError("image dimensions must be positive");
  if (b.timestep < 1) throw ValidationError("timestep must be >= 1");
  if (b.sample_index < 0) throw ValidationError("sample_index must be >= 0");
  const std::size_t wh = b.self_width * b.self_height;
  if (wh == 0 || b.self_map.rows != wh || b.self_map.cols != wh || b.self_map.size() != wh * wh) {
    throw ValidationError("self map shape does not match self_width*self_height = " + std::to_string(wh));
  }
  check_finite_unit(b.self_map.data, "self map");
  check_row_stochastic(b.self_map, "self map");

  const std::size_t tokens = b.cross_layers.front().tokens;
  if (tokens == 0) throw ValidationError("cross layers have zero tokens");
  std::set<int> ids;
  for (const auto& l : b.cross_layers) {
    const std::string what = "cross layer " + std::to_string(l.layer_index);
    if (!ids.insert(l.layer_index).second) throw ValidationError("duplicate " + what);
    if (l.tokens != tokens) throw ValidationError(what + ": token count differs from other layers");
    const std::size_t cells = l.width * l.height;
    if (cells == 0 || l.data.rows != cells || l.data.cols != tokens || l.data.size() != cells * tokens) {
      throw ValidationError(what + ": data shape does not match width*height x tokens");
    }
    check_finite_unit(l.data.data, what);
    check_row_stochastic(l.data, what);
  }
  validate_manifest_spans(b.token_manifest, tokens);
}

// ---------------------------------------------------------------------------
// Raw f32 payloads

void write_f32(const fs::path& path, const std::vector<float>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    bytes[4 * i + 0] = static_cast<char>(bits & 0xffu);
    bytes[4 * i + 1] = static_cast<char>((bits >> 8) & 0xffu);
    bytes[4 * i + 2] = static_cast<char>((bits >> 16) & 0xffu);
    bytes[4 * i + 3] = static_cast<char>((bits >> 24) & 0xffu);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected_count * 4) {
    throw ValidationError("shape mismatch: " + path.filename().string() + " holds " + std::to_string(bytes.size()) +
                          " bytes, manifest implies " + std::to_string(expected_count * 4));
  }
  std::vector<float> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ValidationError(path.filename().string() + ": non-finite value at index " + std::to_string(i));
    }
  }
  return values;
}

// ---------------------------------------------------------------------------
// Bundles

namespace {

json manifest_to_json(const TokenManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"label", e.label}, {"kind", to_string(e.kind)}, {"token_span", {e.span.first, e.span.last}}});
  }
  json class_ids = json::object();
  for (const auto& [k, v] : m.class_ids) class_ids[k] = v;
  return {{"prompt_text", m.prompt_text}, {"entries", entries}, {"class_ids", class_ids}};
}

TokenManifest manifest_from_json(const json& j) {
  TokenManifest m;
  m.prompt_text = j.at("prompt_text").get<std::string>();
  for (const auto& e : j.at("entries")) {
    const auto& span = e.at("token_span");
    if (!span.is_array() || span.size() != 2) throw ValidationError("token_span must be [first, last]");
    const auto first = span[0].get<long long>();
    const auto last = span[1].get<long long>();
    if (first < 0 || last < 0) throw ValidationError("negative token index");
    m.entries.push_back({e.at("label").get<std::string>(), token_kind_from_string(e.at("kind").get<std::string>()),
                         {static_cast<std::size_t>(first), static_cast<std::size_t>(last)}});
  }
  if (j.contains("class_ids")) {
    for (const auto& [k, v] : j.at("class_ids").items()) m.class_ids[k] = v.get<int>();
  }
  return m;
}

std::string cross_file_name(int layer_index) { return "cross_" + std::to_string(layer_index) + ".f32"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.filename().string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

void write_bundle(const AttentionBundle& b, const fs::path& dir) {
  validate(b);
  ensure_dir(dir);

  json layers = json::array();
  for (const auto& l : b.cross_layers) {
    layers.push_back({{"layer_index", l.layer_index},
                      {"width", l.width},
                      {"height", l.height},
                      {"tokens", l.tokens},
                      {"file", cross_file_name(l.layer_index)},
                      {"shape", {l.data.rows, l.data.cols}}});
    write_f32(dir / cross_file_name(l.layer_index), l.data.data);
  }
  write_f32(dir / "self.f32", b.self_map.data);

  json j = {{"format_version", kBundleFormatVersion},
            {"image_id", b.image_id},
            {"image_width", b.image_width},
            {"image_height", b.image_height},
            {"cross_layers", layers},
            {"self_map", {{"file", "self.f32"}, {"shape", {b.self_map.rows, b.self_map.cols}}}},
            {"self_width", b.self_width},
            {"self_height", b.self_height},
            {"token_manifest", manifest_to_json(b.token_manifest)},
            {"sample_index", b.sample_index},
            {"timestep", b.timestep}};
  if (!b.extraction_note.empty()) j["extraction_note"] = b.extraction_note;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

AttentionBundle read_bundle(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing " + manifest_path.string());
  const json j = read_json(manifest_path);

  AttentionBundle b;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kBundleFormatVersion) {
      throw ValidationError("unsupported bundle format_version " + std::to_string(version));
    }
    b.image_id = j.at("image_id").get<std::string>();
    b.image_width = j.at("image_width").get<std::size_t>();
    b.image_height = j.at("image_height").get<std::size_t>();
    b.self_width = j.at("self_width").get<std::size_t>();
    b.self_height = j.at("self_height").get<std::size_t>();
    b.sample_index = j.at("sample_index").get<int>();
    b.timestep = j.at("timestep").get<int>();
    b.extraction_note = j.value("extraction_note", std::string{});
    b.token_manifest = manifest_from_json(j.at("token_manifest"));

    const std::size_t wh = b.self_width * b.self_height;
    b.self_map = Matrix(wh, wh);
    b.self_map.data = read_f32(dir / j.at("self_map").value("file", std::string{"self.f32"}), wh * wh);

    for (const auto& lj : j.at("cross_layers")) {
      CrossLayer l;
      l.layer_index = lj.at("layer_index").get<int>();
      l.width = lj.at("width").get<std::size_t>();
      l.height = lj.at("height").get<std::size_t>();
      l.tokens = lj.at("tokens").get<std::size_t>();
      l.data = Matrix(l.width * l.height, l.tokens);
      const auto file = lj.value("file", cross_file_name(l.layer_index));
      l.data.data = read_f32(dir / file, l.width * l.height * l.tokens);
      b.cross_layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  validate(b);
  return b;
}

// ---------------------------------------------------------------------------
// Correlation maps

void write_correlation(const CorrelationMap& sc, const fs::path& dir) {
  if (sc.data.size() != sc.num_channels() * sc.plane_size()) {
    throw ValidationError("correlation map data does not match channels x width x height");
  }
  ensure_dir(dir);
  json channels = json::array();
  for (const auto& c : sc.channels) channels.push_back({{"label", c.label}, {"class_id", c.class_id}});
  const json j = {{"format_version", kBundleFormatVersion},
                  {"channels", channels},
                  {"width", sc.width},
                  {"height", sc.height},
                  {"resolution_stage", sc.stage == ResolutionStage::grid ? "grid" : "image"},
                  {"file", "sc.f32"},
                  {"shape", {sc.num_channels(), sc.height, sc.width}}};
  write_f32(dir / "sc.f32", sc.data);
  write_text(dir / "sc.json", j.dump(2) + "\n");
}

CorrelationMap read_correlation(const fs::path& dir) {
  const auto meta = dir / "sc.json";
  if (!fs::exists(meta)) throw IoError("missing " + meta.string());
  const json j = read_json(meta);
  CorrelationMap sc;
  try {
    if (j.at("format_version").get<int>() != kBundleFormatVersion) {
      throw ValidationError("unsupported correlation map format_version");
    }
    for (const auto& c : j.at("channels")) {
      sc.channels.push_back({c.at("label").get<std::string>(), c.at("class_id").get<int>()});
    }
    sc.width = j.at("width").get<std::size_t>();
    sc.height = j.at("height").get<std::size_t>();
    const auto stage = j.at("resolution_stage").get<std::string>();
    if (stage != "grid" && stage != "image") throw ValidationError("unknown resolution_stage '" + stage + "'");
    sc.stage = stage == "grid" ? ResolutionStage::grid : ResolutionStage::image;
    sc.data = read_f32(dir / j.value("file", std::string{"sc.f32"}), sc.num_channels() * sc.plane_size());
  } catch (const json::exception& e) {
    throw ValidationError("sc.json: " + std::string(e.what()));
  }
  if (sc.channels.empty() || sc.channels.front().class_id != 0) {
    throw ValidationError("correlation map channel 0 must be background (class id 0)");
  }
  return sc;
}

}  // namespace attnseg
