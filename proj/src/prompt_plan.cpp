#include "attnseg/prompt_plan.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "attnseg/error.hpp"

namespace attnseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string surface_for(const std::string& cls, const SynonymTable& synonyms) {
  const auto it = synonyms.find(cls);
  return it == synonyms.end() ? cls : it->second;
}

std::string join_list(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

std::string PromptPlan::sentence() const {
  std::vector<std::string> fg;
  std::vector<std::string> bg;
  std::string pending_identifier;
  for (const auto& p : parts) {
    switch (p.kind) {
      case TokenKind::identifier:
        pending_identifier += p.surface_text + " ";
        break;
      case TokenKind::category:
        fg.push_back(pending_identifier + p.surface_text);
        pending_identifier.clear();
        break;
      case TokenKind::background:
        bg.push_back(p.surface_text);
        break;
      case TokenKind::other:
        break;
    }
  }
  std::string body;
  if (fg.size() == 1) {
    body = fg.front();
  } else if (fg.size() == 2) {
    body = fg[0] + " and " + fg[1];
  } else if (!fg.empty()) {
    body = join_list({fg.begin(), fg.end() - 1}, ", ") + ", and " + fg.back();
  }
  if (!bg.empty()) body += ", " + join_list(bg, ", ");

  std::string out = sentence_template;
  const auto slot = out.find("{}");
  if (slot != std::string::npos) out.replace(slot, 2, body);
  return out;
}

std::vector<const PromptPart*> PromptPlan::foreground_parts() const {
  std::vector<const PromptPart*> out;
  for (const auto& p : parts) {
    if (p.kind == TokenKind::category || p.kind == TokenKind::identifier) out.push_back(&p);
  }
  return out;
}

PromptPlan compose_query(const std::set<std::string>& classes, const SynonymTable& synonyms,
                         const std::vector<std::string>& backgrounds) {
  if (classes.empty()) throw ValidationError("compose_query: class set is empty");
  PromptPlan plan;
  plan.synonym_table = synonyms;
  plan.background_prompts = backgrounds;
  for (const auto& cls : classes) plan.parts.push_back({cls, TokenKind::category, surface_for(cls, synonyms)});
  for (const auto& bg : backgrounds) plan.parts.push_back({bg, TokenKind::background, bg});
  return plan;
}

PromptPlan compose_identifier_query(const std::string& cls, const std::string& identifier,
                                    const SynonymTable& synonyms, const std::vector<std::string>& backgrounds) {
  if (identifier.empty()) throw ValidationError("compose_identifier_query: empty identifier");
  auto plan = compose_query({cls}, synonyms, backgrounds);
  plan.parts.insert(plan.parts.begin(), {identifier, TokenKind::identifier, identifier});
  return plan;
}

PromptPlan plan_from_manifest(const TokenManifest& manifest) {
  PromptPlan plan;
  std::vector<PromptPart> fg;
  for (const auto& e : manifest.entries) {
    if (e.kind == TokenKind::category || e.kind == TokenKind::identifier) {
      fg.push_back({e.label, e.kind, e.label});
    } else if (e.kind == TokenKind::background) {
      plan.background_prompts.push_back(e.label);
    }
  }
  plan.parts = std::move(fg);
  for (const auto& bg : plan.background_prompts) plan.parts.push_back({bg, TokenKind::background, bg});
  return plan;
}

std::string ManifestMismatch::describe() const {
  std::ostringstream os;
  auto emit = [&](const char* name, const std::vector<std::string>& v) {
    if (v.empty()) return;
    os << name << ": {" << join_list(v, ", ") << "} ";
  };
  emit("missing", missing);
  emit("extra", extra);
  emit("wrong_kind", wrong_kind);
  emit("invalid", invalid);
  auto s = os.str();
  if (!s.empty()) s.pop_back();
  return s;
}

ManifestMismatch validate_manifest(const PromptPlan& plan, const TokenManifest& manifest) {
  ManifestMismatch report;

  std::size_t max_token = 0;
  for (const auto& e : manifest.entries) max_token = std::max(max_token, e.span.last + 1);
  try {
    validate_manifest_spans(manifest, max_token);
  } catch (const ValidationError& e) {
    report.invalid.emplace_back(e.what());
  }

  for (const auto& part : plan.parts) {
    if (manifest.find(part.label, part.kind)) continue;
    const bool present = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                     [&](const TokenEntry& e) { return e.label == part.label; });
    (present ? report.wrong_kind : report.missing).push_back(part.label);
  }
  for (const auto& e : manifest.entries) {
    if (e.kind == TokenKind::other) continue;
    const bool planned = std::any_of(plan.parts.begin(), plan.parts.end(),
                                     [&](const PromptPart& p) { return p.label == e.label; });
    if (!planned) report.extra.push_back(e.label);
  }
  return report;
}

void require_valid_manifest(const PromptPlan& plan, const TokenManifest& manifest) {
  const auto report = validate_manifest(plan, manifest);
  if (!report.ok()) throw ValidationError("token manifest does not match prompt plan: " + report.describe());
}

SynonymTable default_synonyms() {
  // Pascal VOC synonyms; "person" uses the single phrase "person with clothes".
  return {{"bird", "bird avian"},
          {"chair", "chair seat"},
          {"person", "person with clothes"},
          {"tvmonitor", "tvmonitor screen"}};
}

std::vector<std::string> default_backgrounds() {
  return {"tree", "river", "sea", "lake", "water", "railway", "railroad", "track", "stone", "rocks"};
}

SynonymTable load_synonyms(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synonym file " + path.string());
  SynonymTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 'class = surface text'");
    }
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": empty class or surface text");
    }
    table[key] = value;
  }
  return table;
}

std::vector<std::string> load_backgrounds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open background file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.push_back(t);
  }
  return out;
}

}  // namespace attnseg
