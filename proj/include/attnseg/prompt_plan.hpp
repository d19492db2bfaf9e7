#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "attnseg/tensor_store.hpp"

namespace attnseg {

struct PromptPart {
  std::string label;
  TokenKind kind = TokenKind::category;
  std::string surface_text;

  friend bool operator==(const PromptPart&, const PromptPart&) = default;
};

/// Composed query: "a photo including <s1>, <s2>, and <sk>, <bg1>, ...".
/// Category parts precede background parts; "and" only before the last
/// category.
struct PromptPlan {
  std::string sentence_template = "a photo including {}.";
  std::vector<PromptPart> parts;
  std::map<std::string, std::string> synonym_table;
  std::vector<std::string> background_prompts;

  std::string sentence() const;
  /// Category and identifier parts, in output channel order.
  std::vector<const PromptPart*> foreground_parts() const;

  friend bool operator==(const PromptPlan&, const PromptPlan&) = default;
};

using SynonymTable = std::map<std::string, std::string>;

PromptPlan compose_query(const std::set<std::string>& classes, const SynonymTable& synonyms = {},
                         const std::vector<std::string>& backgrounds = {});

/// "<identifier> <class>" substituted for "<class>", e.g.
/// "a photo including <new1> mug."
PromptPlan compose_identifier_query(const std::string& cls, const std::string& identifier,
                                    const SynonymTable& synonyms = {},
                                    const std::vector<std::string>& backgrounds = {});

/// Builds a plan from a manifest's own category/identifier/background entries.
PromptPlan plan_from_manifest(const TokenManifest& manifest);

struct ManifestMismatch {
  std::vector<std::string> missing;     // plan labels with no span
  std::vector<std::string> extra;       // manifest labels absent from the plan
  std::vector<std::string> wrong_kind;  // present, but with another kind
  std::vector<std::string> invalid;     // manifest invariant violations

  bool ok() const { return missing.empty() && extra.empty() && wrong_kind.empty() && invalid.empty(); }
  std::string describe() const;
};

ManifestMismatch validate_manifest(const PromptPlan& plan, const TokenManifest& manifest);
/// Throws ValidationError carrying describe() when the manifest mismatches.
void require_valid_manifest(const PromptPlan& plan, const TokenManifest& manifest);

// Config files (UTF-8). Synonyms: one "class = surface text" per line.
// Backgrounds: one prompt per line. '#' starts a comment line.
SynonymTable default_synonyms();
std::vector<std::string> default_backgrounds();
SynonymTable load_synonyms(const std::filesystem::path& path);
std::vector<std::string> load_backgrounds(const std::filesystem::path& path);

}  // namespace attnseg
