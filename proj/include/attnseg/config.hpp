#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "attnseg/densecrf.hpp"
#include "attnseg/fusion.hpp"

namespace attnseg {

/// "key = value" lines; '#' comments. Keys are normalized so that
/// "bg_thr" and "bg-thr" name the same setting.
class KeyValueConfig {
 public:
  static KeyValueConfig load(const std::filesystem::path& path);
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");

  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string normalize_key(const std::string& key);

/// Applies recognized keys (order, cross-layers, bg-thr, bg-power, band,
/// bg-after-ensemble) and validates the result.
void apply(const KeyValueConfig& cfg, FusionConfig& fusion);
/// Applies "crf.*" keys.
void apply(const KeyValueConfig& cfg, CrfParams& crf);

std::string describe(const FusionConfig& fusion);
std::string describe(const CrfParams& crf);

}  // namespace attnseg
