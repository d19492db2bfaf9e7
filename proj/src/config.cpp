#include "attnseg/config.hpp"

#include <charconv>
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

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("invalid value for " + key + ": '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ValidationError("invalid value for " + key + ": '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<int>(key, item));
  }
  return out;
}

}  // namespace

std::string normalize_key(const std::string& key) {
  std::string k = trim(key);
  while (!k.empty() && k.front() == '-') k.erase(k.begin());
  for (auto& c : k) {
    if (c == '_') c = '-';
  }
  return k;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set(t.substr(0, eq), trim(t.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(normalize_key(key));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) { values_[normalize_key(key)] = value; }

void apply(const KeyValueConfig& cfg, FusionConfig& f) {
  if (auto v = cfg.get("order")) f.order = parse_number<int>("--order", *v);
  if (auto v = cfg.get("cross-layers")) f.cross_layer_ids = parse_int_list("--cross-layers", *v);
  if (auto v = cfg.get("bg-thr")) f.bg_threshold = parse_number<float>("--bg-thr", *v);
  if (auto v = cfg.get("bg-power")) f.bg_power = parse_number<float>("--bg-power", *v);
  if (auto v = cfg.get("band")) f.uncertainty_band = parse_number<float>("--band", *v);
  if (auto v = cfg.get("bg-after-ensemble")) f.bg_after_ensemble = parse_bool("--bg-after-ensemble", *v);
  f.validate();
}

void apply(const KeyValueConfig& cfg, CrfParams& c) {
  if (auto v = cfg.get("crf.iterations")) c.iterations = parse_number<int>("--crf.iterations", *v);
  if (auto v = cfg.get("crf.w1")) c.appearance_weight = parse_number<float>("--crf.w1", *v);
  if (auto v = cfg.get("crf.sxy-a")) c.appearance_sxy = parse_number<float>("--crf.sxy-a", *v);
  if (auto v = cfg.get("crf.srgb")) c.appearance_srgb = parse_number<float>("--crf.srgb", *v);
  if (auto v = cfg.get("crf.w2")) c.smoothness_weight = parse_number<float>("--crf.w2", *v);
  if (auto v = cfg.get("crf.sxy-s")) c.smoothness_sxy = parse_number<float>("--crf.sxy-s", *v);
  if (auto v = cfg.get("crf.epsilon")) c.unary_epsilon = parse_number<float>("--crf.epsilon", *v);
  if (auto v = cfg.get("crf.pixel-cap")) c.pixel_cap = parse_number<std::size_t>("--crf.pixel-cap", *v);
  c.validate();
}

std::string describe(const FusionConfig& f) {
  std::ostringstream os;
  os << "order=" << f.order << " cross-layers=";
  for (std::size_t i = 0; i < f.cross_layer_ids.size(); ++i) os << (i ? "," : "") << f.cross_layer_ids[i];
  os << " bg-thr=" << f.bg_threshold << " bg-power=" << f.bg_power << " band=" << f.uncertainty_band
     << " bg-after-ensemble=" << (f.bg_after_ensemble ? "true" : "false");
  return os.str();
}

std::string describe(const CrfParams& c) {
  std::ostringstream os;
  os << "crf.iterations=" << c.iterations << " crf.w1=" << c.appearance_weight << " crf.sxy-a=" << c.appearance_sxy
     << " crf.srgb=" << c.appearance_srgb << " crf.w2=" << c.smoothness_weight << " crf.sxy-s=" << c.smoothness_sxy
     << " crf.epsilon=" << c.unary_epsilon << " crf.pixel-cap=" << c.pixel_cap;
  return os.str();
}

}  // namespace attnseg
