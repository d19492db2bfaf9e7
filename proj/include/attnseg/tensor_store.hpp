#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/matrix.hpp"
#include "attnseg/types.hpp"

namespace attnseg {

inline constexpr int kBundleFormatVersion = 1;

enum class TokenKind { category, identifier, background, other };

std::string to_string(TokenKind kind);
TokenKind token_kind_from_string(const std::string& s);

/// Inclusive token index range.
struct TokenSpan {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  bool overlaps(const TokenSpan& o) const { return first <= o.last && o.first <= last; }

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct TokenEntry {
  std::string label;
  TokenKind kind = TokenKind::other;
  TokenSpan span;

  friend bool operator==(const TokenEntry&, const TokenEntry&) = default;
};

struct TokenManifest {
  std::string prompt_text;
  std::vector<TokenEntry> entries;
  std::map<std::string, int> class_ids;

  const TokenEntry* find(const std::string& label, TokenKind kind) const;

  friend bool operator==(const TokenManifest&, const TokenManifest&) = default;
};

/// One U-Net layer's head-averaged cross-attention, (width*height) x tokens.
struct CrossLayer {
  int layer_index = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t tokens = 0;
  Matrix data;

  friend bool operator==(const CrossLayer&, const CrossLayer&) = default;
};

struct AttentionBundle {
  std::string image_id;
  std::size_t image_width = 0;
  std::size_t image_height = 0;
  std::vector<CrossLayer> cross_layers;
  Matrix self_map;
  std::size_t self_width = 0;
  std::size_t self_height = 0;
  TokenManifest token_manifest;
  int sample_index = 0;
  int timestep = 150;
  std::string extraction_note;

  const CrossLayer* layer(int layer_index) const;
  std::size_t tokens() const { return cross_layers.empty() ? 0 : cross_layers.front().tokens; }

  friend bool operator==(const AttentionBundle&, const AttentionBundle&) = default;
};

inline constexpr double kRowSumTolerance = 1e-4;

/// Throws ValidationError describing the first violated invariant.
void validate_manifest_spans(const TokenManifest& manifest, std::size_t tokens);
void validate(const AttentionBundle& bundle);

void write_bundle(const AttentionBundle& bundle, const std::filesystem::path& dir);
AttentionBundle read_bundle(const std::filesystem::path& dir);

// Raw payloads: little-endian IEEE-754 f32, row-major, no header.
void write_f32(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

// Masks are 8-bit grayscale PNGs; the uncertainty flag goes to a sibling
// "<stem>_uncertain.png" holding 0/255.
std::filesystem::path uncertainty_path(const std::filesystem::path& mask_path);
void write_mask(const LabelMask& mask, const std::filesystem::path& path);
LabelMask read_mask(const std::filesystem::path& path);

RgbImage read_rgb(const std::filesystem::path& path);
void write_rgb(const RgbImage& image, const std::filesystem::path& path);

// Correlation maps: "sc.json" + "sc.f32" inside dir.
void write_correlation(const CorrelationMap& sc, const std::filesystem::path& dir);
CorrelationMap read_correlation(const std::filesystem::path& dir);

}  // namespace attnseg
