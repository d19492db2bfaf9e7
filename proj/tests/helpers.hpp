#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "attnseg/tensor_store.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = fs::temp_directory_path() / ("attnseg_" + tag + "_" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// One 2x2 cross layer with 3 tokens and a 4x4 self map.
inline attnseg::AttentionBundle small_bundle() {
  attnseg::AttentionBundle b;
  b.image_id = "img0";
  b.image_width = 8;
  b.image_height = 8;
  b.self_width = 2;
  b.self_height = 2;
  b.self_map = attnseg::Matrix(4, 4, 0.25f);
  attnseg::CrossLayer l;
  l.layer_index = 4;
  l.width = 2;
  l.height = 2;
  l.tokens = 3;
  l.data = attnseg::Matrix(4, 3);
  const float rows[4][3] = {{0.5f, 0.25f, 0.25f}, {0.125f, 0.75f, 0.125f}, {0.0f, 0.5f, 0.5f}, {1.0f, 0.0f, 0.0f}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) l.data(r, c) = rows[r][c];
  b.cross_layers.push_back(l);
  b.token_manifest.prompt_text = "a photo including cat.";
  b.token_manifest.entries.push_back({"cat", attnseg::TokenKind::category, {1, 1}});
  b.token_manifest.class_ids["cat"] = 8;
  return b;
}

}  // namespace testing
