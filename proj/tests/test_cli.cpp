#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "attnseg/cli.hpp"
#include "attnseg/tensor_store.hpp"
#include "helpers.hpp"

using namespace attnseg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kScene = R"({
  "image_id": "scene1", "grid_w": 8, "grid_h": 8,
  "regions": [{"label": "cat", "class_id": 8, "rect": [0, 0, 4, 4]},
              {"label": "dog", "class_id": 12, "rect": [4, 4, 8, 8]}]
})";

}  // namespace

TEST_CASE("synth -> fuse -> eval round trip") {
  testing::TempDir dir("cli");
  write_text(dir / "scene.json", kScene);
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--seed", "3", "--out", (dir / "b").string()}).code ==
          0);
  CHECK(fs::exists(dir / "b" / "manifest.json"));
  CHECK(fs::exists(dir / "b" / "gt.png"));
  CHECK(fs::exists(dir / "b" / "image.png"));

  const auto f = run({"fuse", "--bundle", (dir / "b").string(), "--out", (dir / "pred").string()});
  REQUIRE(f.code == 0);
  CHECK(f.err.find("# attnseg fuse order=2") != std::string::npos);
  for (const char* name : {"sc.json", "sc.f32", "mask.png", "mask_uncertain.png"}) {
    CHECK(fs::exists(dir / "pred" / "scene1" / name));
  }

  fs::create_directories(dir / "gt" / "scene1");
  fs::copy_file(dir / "b" / "gt.png", dir / "gt" / "scene1" / "mask.png");
  const auto e = run({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "gt").string(), "--classes", "0,8,12",
                      "--out", (dir / "report.json").string()});
  REQUIRE(e.code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["miou"].get<double>() == 1.0);
  CHECK(e.out.find("mIoU (all)") != std::string::npos);
}

TEST_CASE("fuse reruns are byte-identical") {
  testing::TempDir dir("cli_det");
  write_text(dir / "scene.json",
             R"({"image_id": "j", "grid_w": 8, "grid_h": 8, "cross_jitter": 0.4, "self_jitter": 0.1, "beta": 0.9,
                 "regions": [{"label": "cat", "rect": [1, 1, 5, 6], "alpha": 0.7}]})");
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--seed", "9", "--samples", "3", "--out",
               (dir / "b").string()})
              .code == 0);
  std::vector<std::string> samples;
  for (int s = 0; s < 3; ++s) samples.push_back((dir / "b" / ("sample_" + std::to_string(s))).string());
  for (const char* out : {"o1", "o2"}) {
    std::vector<std::string> args{"fuse", "--out", (dir / out).string(), "--jobs", "3", "--samples"};
    args.insert(args.end(), samples.begin(), samples.end());
    REQUIRE(run(args).code == 0);
  }
  for (const char* name : {"sc.f32", "sc.json", "mask.png", "mask_uncertain.png"}) {
    CHECK(slurp(dir / "o1" / "j" / name) == slurp(dir / "o2" / "j" / name));
  }
}

TEST_CASE("invalid flags exit 1 naming the flag") {
  testing::TempDir dir("cli_bad");
  write_text(dir / "scene.json", kScene);
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--out", (dir / "b").string()}).code == 0);
  const auto r = run({"fuse", "--bundle", (dir / "b").string(), "--out", (dir / "o").string(), "--order=-1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--order") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "o"));

  CHECK(run({"fuse", "--bundle", (dir / "b").string(), "--out", (dir / "o").string(), "--bg-thr", "abc"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
}

TEST_CASE("missing inputs exit 2") {
  testing::TempDir dir("cli_io");
  const auto r = run({"fuse", "--bundle", (dir / "nope").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("config file is overridden by flags") {
  testing::TempDir dir("cli_cfg");
  write_text(dir / "scene.json", kScene);
  write_text(dir / "f.cfg", "order = 0\nband = 0.2\n");
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--out", (dir / "b").string()}).code == 0);
  const auto r = run({"fuse", "--bundle", (dir / "b").string(), "--out", (dir / "o").string(), "--config",
                      (dir / "f.cfg").string(), "--order", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("order=1") != std::string::npos);
  CHECK(r.err.find("band=0.2") != std::string::npos);
}

TEST_CASE("plan prints the sentence and validates manifests") {
  const auto r = run({"plan", "--classes", "sofa,bottle,chair"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["sentence"] == "a photo including bottle, chair, and sofa.");

  testing::TempDir dir("cli_plan");
  write_text(dir / "scene.json", kScene);
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--out", (dir / "b").string()}).code == 0);
  CHECK(run({"plan", "--classes", "cat,dog", "--validate", (dir / "b").string()}).code == 0);
  const auto bad = run({"plan", "--classes", "cat,sofa", "--validate", (dir / "b").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("sofa") != std::string::npos);
}

TEST_CASE("crf refines a fused map") {
  testing::TempDir dir("cli_crf");
  write_text(dir / "scene.json", kScene);
  REQUIRE(run({"synth", "--spec", (dir / "scene.json").string(), "--out", (dir / "b").string()}).code == 0);
  REQUIRE(run({"fuse", "--bundle", (dir / "b").string(), "--out", (dir / "f").string()}).code == 0);
  const auto r = run({"crf", "--sc", (dir / "f" / "scene1").string(), "--image", (dir / "b" / "image.png").string(),
                      "--out", (dir / "c").string(), "--crf.iterations", "3"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("crf.iterations=3") != std::string::npos);
  const auto refined = read_mask(dir / "c" / "mask.png");
  CHECK(refined == read_mask(dir / "b" / "gt.png"));
  CHECK(run({"crf", "--sc", (dir / "f" / "scene1").string(), "--image", (dir / "b" / "image.png").string(), "--out",
             (dir / "c").string(), "--crf.srgb", "0"})
            .code == 1);
}

TEST_CASE("assign reports greedy and Hungarian with accuracies") {
  testing::TempDir dir("cli_assign");
  write_text(dir / "inst.json", R"({"grid_w": 12, "grid_h": 12, "instances": [[1, 1, 5, 5], [7, 6, 11, 11]],
                                    "identifier_weights": [[1, 0.1], [0.8, 0.3]]})");
  REQUIRE(run({"synth", "--spec", (dir / "inst.json").string(), "--out", (dir / "s").string()}).code == 0);
  const std::vector<std::string> base{"assign",
                                      "--scene",
                                      (dir / "s" / "scene").string(),
                                      "--ids",
                                      (dir / "s" / "id_1").string(),
                                      (dir / "s" / "id_2").string(),
                                      "--gt",
                                      (dir / "s" / "gt.json").string(),
                                      "--seed",
                                      "5"};
  auto args = base;
  args.insert(args.end(), {"--out", (dir / "a1.json").string()});
  REQUIRE(run(args).code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "a1.json"));
  CHECK(j["bf_acc"].get<double>() == 0.5);
  CHECK(j["af_acc"].get<double>() == 1.0);

  args = base;
  args.insert(args.end(), {"--out", (dir / "a2.json").string()});
  REQUIRE(run(args).code == 0);
  CHECK(slurp(dir / "a1.json") == slurp(dir / "a2.json"));

  const auto e = run({"eval", "--assignments", (dir / "a1.json").string()});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("bf_acc") != std::string::npos);

  args = base;
  args.insert(args.end(), {"--mode", "fastest"});
  CHECK(run(args).code == 1);
}
