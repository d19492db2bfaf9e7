#include "attnseg/cli.hpp"

#include <algorithm>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnseg/config.hpp"
#include "attnseg/densecrf.hpp"
#include "attnseg/error.hpp"
#include "attnseg/fusion.hpp"
#include "attnseg/instance_assign.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/prompt_plan.hpp"
#include "attnseg/synth_fixtures.hpp"
#include "attnseg/tensor_store.hpp"

namespace attnseg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// Runs job(i) for i in [0, n) on up to `jobs` threads; rethrows the error of
// the lowest failing index so failures are reported deterministically.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= n) return;
            i = next++;
          }
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Flags layered over an optional config file.
struct Layered {
  std::string config_path;
  std::map<std::string, std::string> flags;

  KeyValueConfig resolve() const {
    KeyValueConfig cfg = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    for (const auto& [k, v] : flags) {
      if (!v.empty()) cfg.set(k, v);
    }
    return cfg;
  }
};

void add_fusion_flags(CLI::App* app, Layered& layered) {
  app->add_option("--config", layered.config_path, "key = value config file");
  for (const char* name : {"order", "cross-layers", "bg-thr", "bg-power", "band"}) {
    app->add_option(std::string("--") + name, layered.flags[name]);
  }
  app->add_option("--bg-after-ensemble", layered.flags["bg-after-ensemble"],
                  "recompute background after ensembling (true/false)");
}

void add_crf_flags(CLI::App* app, Layered& layered) {
  for (const char* name : {"crf.iterations", "crf.w1", "crf.sxy-a", "crf.srgb", "crf.w2", "crf.sxy-s",
                           "crf.epsilon", "crf.pixel-cap"}) {
    app->add_option(std::string("--") + name, layered.flags[name]);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::uint64_t seed = 0;
  std::string out;
  int samples = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& err) {
  const json spec = read_json_file(a.spec);
  err << "# attnseg synth spec=" << a.spec << " seed=" << a.seed << " samples=" << a.samples << "\n";
  const fs::path out = a.out;
  if (spec.contains("instances")) {
    const auto fx = make_instance_fixture(instance_spec_from_json(spec), a.seed);
    write_bundle(fx.scene, out / "scene");
    for (std::size_t i = 0; i < fx.identifiers.size(); ++i) {
      write_bundle(fx.identifiers[i], out / ("id_" + std::to_string(i + 1)));
    }
    write_json_file(out / "gt.json", {{"width", fx.scene.self_width},
                                      {"height", fx.scene.self_height},
                                      {"count", fx.identifiers.size()},
                                      {"instance_grid", fx.instance_grid}});
    write_mask(fx.ground_truth, out / "gt.png");
    return kOk;
  }
  if (a.samples < 1) throw ValidationError("invalid value for --samples: must be >= 1");
  auto scene = scene_spec_from_json(spec);
  for (int s = 0; s < a.samples; ++s) {
    scene.sample_index = s;
    const auto fx = make_fixture(scene, a.seed + static_cast<std::uint64_t>(s));
    const fs::path dir = a.samples == 1 ? out : out / ("sample_" + std::to_string(s));
    write_bundle(fx.bundle, dir);
    if (s == 0) {
      write_mask(fx.ground_truth, out / "gt.png");
      write_rgb(fx.image, out / "image.png");
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string classes;
  std::string synonyms;
  std::string backgrounds;
  bool default_synonyms = false;
  bool default_backgrounds = false;
  std::string identifier;
  std::string validate;
};

int cmd_plan(const PlanArgs& a, std::ostream& out, std::ostream& err) {
  const auto names = split_csv(a.classes);
  const std::set<std::string> classes(names.begin(), names.end());
  SynonymTable syn = a.default_synonyms ? default_synonyms() : SynonymTable{};
  if (!a.synonyms.empty()) {
    for (const auto& [k, v] : load_synonyms(a.synonyms)) syn[k] = v;
  }
  std::vector<std::string> bgs = a.default_backgrounds ? default_backgrounds() : std::vector<std::string>{};
  if (!a.backgrounds.empty()) bgs = load_backgrounds(a.backgrounds);

  PromptPlan plan;
  if (!a.identifier.empty()) {
    if (classes.size() != 1) throw ValidationError("--identifier requires exactly one class");
    plan = compose_identifier_query(*classes.begin(), a.identifier, syn, bgs);
  } else {
    plan = compose_query(classes, syn, bgs);
  }
  err << "# attnseg plan classes=" << a.classes << "\n";
  json parts = json::array();
  for (const auto& p : plan.parts) {
    parts.push_back({{"label", p.label}, {"kind", to_string(p.kind)}, {"surface_text", p.surface_text}});
  }
  json j = {{"sentence", plan.sentence()}, {"parts", parts}};
  if (!a.validate.empty()) {
    const auto bundle = read_bundle(a.validate);
    const auto report = validate_manifest(plan, bundle.token_manifest);
    j["validation"] = {{"ok", report.ok()},
                       {"missing", report.missing},
                       {"extra", report.extra},
                       {"wrong_kind", report.wrong_kind},
                       {"invalid", report.invalid}};
    out << j.dump(2) << "\n";
    if (!report.ok()) {
      err << "error: token manifest does not match prompt plan: " << report.describe() << "\n";
      return kValidationError;
    }
    return kOk;
  }
  out << j.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::vector<std::string> bundles;
  std::vector<std::string> samples;
  std::string classes;
  std::string out;
  int jobs = 1;
  Layered layered;
};

PromptPlan plan_for(const AttentionBundle& b, const std::string& classes) {
  if (classes.empty()) return plan_from_manifest(b.token_manifest);
  const auto names = split_csv(classes);
  std::vector<std::string> bgs;
  for (const auto& e : b.token_manifest.entries) {
    if (e.kind == TokenKind::background) bgs.push_back(e.label);
  }
  return compose_query({names.begin(), names.end()}, {}, bgs);
}

void write_fused(const CorrelationMap& sc, const AttentionBundle& ref, const FusionConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_correlation(sc, dir);
  write_mask(to_mask(sc, ref.image_width, ref.image_height, cfg.uncertainty_band), dir / "mask.png");
}

int cmd_fuse(const FuseArgs& a, std::ostream& err) {
  FusionConfig cfg;
  apply(a.layered.resolve(), cfg);
  err << "# attnseg fuse " << describe(cfg) << " jobs=" << a.jobs << "\n";
  if (a.jobs < 1) throw ValidationError("invalid value for --jobs: must be >= 1");
  if (a.bundles.empty() && a.samples.empty()) throw ValidationError("fuse: no --bundle or --samples given");
  const fs::path out = a.out;

  if (!a.samples.empty()) {
    std::vector<AttentionBundle> samples(a.samples.size());
    parallel_for(samples.size(), a.jobs, [&](std::size_t i) { samples[i] = read_bundle(a.samples[i]); });
    const auto plan = plan_for(samples.front(), a.classes);
    const auto sc = fuse_samples(samples, plan, cfg);
    write_fused(sc, samples.front(), cfg, out / samples.front().image_id);
  }
  parallel_for(a.bundles.size(), a.jobs, [&](std::size_t i) {
    const auto bundle = read_bundle(a.bundles[i]);
    const auto sc = fuse(bundle, plan_for(bundle, a.classes), cfg);
    write_fused(sc, bundle, cfg, out / bundle.image_id);
  });
  return kOk;
}

// ---------------------------------------------------------------------------

struct CrfArgs {
  std::string sc;
  std::string image;
  std::string out;
  Layered layered;
};

int cmd_crf(const CrfArgs& a, std::ostream& err) {
  const auto cfg = a.layered.resolve();
  CrfParams params;
  apply(cfg, params);
  FusionConfig fusion;
  apply(cfg, fusion);
  const float band = fusion.uncertainty_band;
  err << "# attnseg crf " << describe(params) << " band=" << band << "\n";
  const auto sc = read_correlation(a.sc);
  const auto image = read_rgb(a.image);
  const auto staged = sc.width == image.width && sc.height == image.height ? sc : upsample(sc, image.width, image.height);
  const auto refined = refine(image, staged, params);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_correlation(refined, out);
  write_mask(argmax_mask(refined, band), out / "mask.png");
  return kOk;
}

// ---------------------------------------------------------------------------

struct AssignArgs {
  std::string scene;
  std::vector<std::string> ids;
  int k = 0;
  bool auto_k = false;
  std::uint64_t seed = 0;
  std::string mode = "both";
  std::string gt;
  std::string out;
  Layered layered;
};

json assignment_json(const AssignmentResult& r) {
  json inst = json::array();
  for (const auto& a : r.instances) {
    inst.push_back({{"label", a.label}, {"segments", a.segments}, {"score", a.score}});
  }
  return {{"mode", to_string(r.mode)}, {"instances", inst}, {"total_score", r.total_score()}};
}

int cmd_assign(const AssignArgs& a, std::ostream& out, std::ostream& err) {
  FusionConfig cfg;
  apply(a.layered.resolve(), cfg);
  if (a.mode != "greedy" && a.mode != "hungarian" && a.mode != "both") {
    throw ValidationError("invalid value for --mode: expected greedy, hungarian or both");
  }
  err << "# attnseg assign " << describe(cfg) << " k=" << a.k << " auto-k=" << (a.auto_k ? "true" : "false")
      << " seed=" << a.seed << " mode=" << a.mode << "\n";
  const auto scene = read_bundle(a.scene);
  std::vector<AttentionBundle> ids;
  for (const auto& d : a.ids) ids.push_back(read_bundle(d));
  const auto res = run_instance_pipeline(scene, ids, cfg, a.k, a.seed, a.auto_k);

  json scores = json::array();
  for (std::size_t i = 0; i < res.scores.rows; ++i) {
    scores.push_back(std::vector<double>(res.scores.values.begin() + static_cast<long>(i * res.scores.cols),
                                         res.scores.values.begin() + static_cast<long>((i + 1) * res.scores.cols)));
  }
  json j = {{"image_id", scene.image_id},
            {"k", res.k},
            {"n_segments", res.partition.n_segments},
            {"segment_id", res.partition.segment_id},
            {"scores", scores}};
  if (a.mode != "hungarian") j["greedy"] = assignment_json(res.greedy);
  if (a.mode != "greedy") j["hungarian"] = assignment_json(res.hungarian);

  if (!a.gt.empty()) {
    const auto gt = read_json_file(a.gt);
    const auto grid = gt.at("instance_grid").get<std::vector<int>>();
    const auto truth = ground_truth_segments(res.partition, grid, gt.at("count").get<int>());
    const auto acc = instance_accuracy(std::span(&res.greedy, 1), std::span(&res.hungarian, 1), std::span(&truth, 1));
    j["gt_segments"] = truth;
    j["bf_acc"] = acc.bf_acc;
    j["af_acc"] = acc.af_acc;
  }
  if (a.out.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_json_file(a.out, j);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string classes;
  int ignore = 255;
  std::vector<std::string> assignments;
  std::string out;
  int jobs = 1;
};

std::vector<fs::path> mask_files(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    const auto stem = e.path().stem().string();
    if (stem.size() >= 10 && stem.compare(stem.size() - 10, 10, "_uncertain") == 0) continue;
    if (stem == "image") continue;
    out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  err << "# attnseg eval classes=" << a.classes << " ignore=" << a.ignore << " jobs=" << a.jobs << "\n";
  if (a.jobs < 1) throw ValidationError("invalid value for --jobs: must be >= 1");
  EvalReport report;
  if (!a.pred.empty() || !a.gt.empty()) {
    if (a.pred.empty() || a.gt.empty()) throw ValidationError("eval: --pred and --gt go together");
    std::vector<int> classes;
    for (const auto& c : split_csv(a.classes)) {
      try {
        classes.push_back(std::stoi(c));
      } catch (const std::exception&) {
        throw ValidationError("invalid value for --classes: '" + c + "'");
      }
    }
    if (classes.empty()) throw ValidationError("eval: --classes is required with --pred/--gt");
    const auto files = mask_files(a.pred);
    if (files.empty()) throw ValidationError("eval: no prediction masks under " + a.pred);
    for (const auto& f : files) {
      if (!fs::exists(fs::path(a.gt) / f)) throw IoError("eval: no ground truth for " + f.string());
    }
    std::vector<ConfusionAccumulator> partial(files.size(), ConfusionAccumulator(classes, a.ignore));
    parallel_for(files.size(), a.jobs, [&](std::size_t i) {
      partial[i].add(read_mask(fs::path(a.pred) / files[i]), read_mask(fs::path(a.gt) / files[i]));
    });
    ConfusionAccumulator total(classes, a.ignore);
    for (const auto& p : partial) total.merge(p);
    report = report_from(total);
  }
  if (!a.assignments.empty()) {
    std::vector<AssignmentResult> greedy, hungarian;
    std::vector<std::vector<int>> truth;
    for (const auto& path : a.assignments) {
      const auto j = read_json_file(path);
      if (!j.contains("gt_segments")) throw ValidationError(path + ": missing gt_segments");
      auto parse = [](const json& r, AssignMode mode) {
        AssignmentResult res;
        res.mode = mode;
        for (const auto& i : r.at("instances")) {
          res.instances.push_back({i.at("label").get<std::string>(), i.at("segments").get<std::vector<int>>(),
                                   i.at("score").get<double>()});
        }
        return res;
      };
      greedy.push_back(parse(j.at("greedy"), AssignMode::greedy));
      hungarian.push_back(parse(j.at("hungarian"), AssignMode::hungarian));
      truth.push_back(j.at("gt_segments").get<std::vector<int>>());
    }
    const auto acc = instance_accuracy(greedy, hungarian, truth);
    report.bf_acc = acc.bf_acc;
    report.af_acc = acc.af_acc;
  }
  if (a.pred.empty() && a.assignments.empty()) throw ValidationError("eval: nothing to evaluate");
  out << report.table();
  if (!a.out.empty()) write_json_file(a.out, report.to_json());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"attnseg: segmentation masks from diffusion attention tensors", "attnseg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic attention bundle with ground truth");
  s->add_option("--spec", synth.spec, "scene spec (JSON)")->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--samples", synth.samples, "noise samples to generate");
  s->add_option("--out", synth.out)->required();

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "compose a query sentence and optionally validate a bundle manifest");
  p->add_option("--classes", plan.classes, "comma-separated class labels")->required();
  p->add_option("--synonyms", plan.synonyms, "synonym file");
  p->add_option("--backgrounds", plan.backgrounds, "background prompt file");
  p->add_flag("--default-synonyms", plan.default_synonyms);
  p->add_flag("--default-backgrounds", plan.default_backgrounds);
  p->add_option("--identifier", plan.identifier, "identifier word, e.g. <new1>");
  p->add_option("--validate", plan.validate, "bundle directory to validate against the plan");

  FuseArgs fuse_args;
  auto* f = app.add_subcommand("fuse", "fuse attention into a correlation map and label mask");
  f->add_option("--bundle", fuse_args.bundles, "bundle directories, one per image");
  f->add_option("--samples", fuse_args.samples, "sibling sample bundles of one image to ensemble");
  f->add_option("--classes", fuse_args.classes, "comma-separated classes (default: manifest categories)");
  f->add_option("--out", fuse_args.out)->required();
  f->add_option("--jobs", fuse_args.jobs);
  add_fusion_flags(f, fuse_args.layered);

  CrfArgs crf_args;
  auto* c = app.add_subcommand("crf", "dense CRF refinement of a correlation map");
  c->add_option("--sc", crf_args.sc, "correlation map directory")->required();
  c->add_option("--image", crf_args.image, "RGB PNG")->required();
  c->add_option("--out", crf_args.out)->required();
  c->add_option("--config", crf_args.layered.config_path);
  c->add_option("--band", crf_args.layered.flags["band"]);
  add_crf_flags(c, crf_args.layered);

  AssignArgs assign_args;
  auto* as = app.add_subcommand("assign", "personalized instance assignment");
  as->add_option("--scene", assign_args.scene, "scene bundle directory")->required();
  as->add_option("--ids", assign_args.ids, "identifier bundle directories, one per instance")->required();
  as->add_option("--k", assign_args.k, "segment count (default instances + 1)");
  as->add_flag("--auto-k", assign_args.auto_k, "pick k by eigengap");
  as->add_option("--seed", assign_args.seed);
  as->add_option("--mode", assign_args.mode, "greedy, hungarian or both");
  as->add_option("--gt", assign_args.gt, "ground-truth instance grid (JSON)");
  as->add_option("--out", assign_args.out, "report path (default stdout)");
  add_fusion_flags(as, assign_args.layered);

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "mIoU and instance accuracy");
  e->add_option("--pred", eval_args.pred, "directory of predicted masks");
  e->add_option("--gt", eval_args.gt, "directory of ground-truth masks (same relative paths)");
  e->add_option("--classes", eval_args.classes, "comma-separated class ids");
  e->add_option("--ignore", eval_args.ignore);
  e->add_option("--assignments", eval_args.assignments, "assign reports with gt_segments");
  e->add_option("--out", eval_args.out, "JSON report path");
  e->add_option("--jobs", eval_args.jobs);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kValidationError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, err);
    if (p->parsed()) return cmd_plan(plan, out, err);
    if (f->parsed()) return cmd_fuse(fuse_args, err);
    if (c->parsed()) return cmd_crf(crf_args, err);
    if (as->parsed()) return cmd_assign(assign_args, out, err);
    if (e->parsed()) return cmd_eval(eval_args, out, err);
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kValidationError;
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kIoError;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kValidationError;
  }
  return kValidationError;
}

}  // namespace attnseg::cli
