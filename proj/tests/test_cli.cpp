#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"
#include "lrr/evaluation.hpp"
#include "lrr/train.hpp"

using namespace lrr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

double csv_value(const std::string& csv, const std::string& key) {
  for (const auto& l : lines(csv))
    if (l.rfind(key + ",", 0) == 0) return std::stod(l.substr(key.size() + 1));
  FAIL("missing " << key);
  return 0;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  SUBCASE("no subcommand is a usage error") {
    const Outcome o = run_cli({});
    CHECK(o.code == cli::kExitUsage);
    CHECK(o.err.find("gen-data") != std::string::npos);
  }
  SUBCASE("unknown subcommand is a usage error") { CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage); }
  SUBCASE("missing required option is a usage error") { CHECK(run_cli({"gen-data"}).code == cli::kExitUsage); }
  SUBCASE("help succeeds") {
    const Outcome o = run_cli({"--help"});
    CHECK(o.code == cli::kExitOk);
    for (const char* sub : {"gen-data", "extract-bases", "train", "predict", "eval", "trimap", "gradcheck", "oracle-check"})
      CHECK(o.out.find(sub) != std::string::npos);
  }
  SUBCASE("a config with an unknown key is a validation error") {
    test::TempDir dir("cli_cfg");
    std::ofstream(dir.file("bad.cfg")) << "classes = 3\nlearning_rate = 0.1\n";
    const Outcome o = run_cli({"train", dir.file("bad.cfg")});
    CHECK(o.code == cli::kExitValidation);
    CHECK(o.err.find("learning_rate") != std::string::npos);
  }
  SUBCASE("a missing manifest is a validation error") {
    const Outcome o = run_cli({"eval", "--pred-dir", "/nonexistent", "--truth", "/nonexistent/m.txt"});
    CHECK(o.code == cli::kExitValidation);
  }
  SUBCASE("malformed radii are a validation error") {
    CHECK(run_cli({"trimap", "--pred-dir", "x", "--truth", "y", "--radii", "1,zero"}).code == cli::kExitValidation);
  }
  SUBCASE("gradcheck and oracle-check pass") {
    const Outcome g = run_cli({"gradcheck"});
    CHECK(g.code == cli::kExitOk);
    CHECK(g.out.find("all checks passed") != std::string::npos);
    CHECK(g.out.find("FAIL") == std::string::npos);
    CHECK(run_cli({"oracle-check"}).code == cli::kExitOk);
  }
}

TEST_CASE("config overrides replace existing keys and append new ones") {
  const std::string text = "seed = 1  # comment\nbatch = 4\n";
  const std::string out = cli::apply_overrides(text, {"seed=9", "tau = 0.5"});
  const TrainConfig c = parse_config_text(out);
  CHECK(c.seed == 9);
  CHECK(c.batch == 4);
  CHECK(c.tau == 0.5);
  CHECK_THROWS(cli::apply_overrides(text, {"seed"}));
}

TEST_CASE("generate, train, predict and evaluate end to end") {
  test::TempDir dir("cli_e2e");
  const std::string train_dir = dir.file("train"), test_dir = dir.file("test");
  REQUIRE(run_cli({"gen-data", "--out", train_dir, "--count", "24", "--size", "128", "--classes", "3", "--seed", "4"})
              .code == 0);
  REQUIRE(run_cli({"gen-data", "--out", test_dir, "--count", "6", "--size", "128", "--classes", "3", "--seed", "5"})
              .code == 0);
  const std::string train_manifest = train_dir + "/manifest.txt", test_manifest = test_dir + "/manifest.txt";
  REQUIRE(fs::exists(train_manifest));

  const Outcome bases = run_cli({"extract-bases", "--manifest", train_manifest, "--out", dir.file("bases.lrrc"),
                                 "--classes", "3", "-K", "4", "--patches", "60", "--seed", "2"});
  REQUIRE(bases.code == 0);
  CHECK(lines(bases.out).size() == 3);

  std::ofstream(dir.file("run.cfg")) << "# small run\n"
                                     << "train_manifest = " << train_manifest << "\n"
                                     << "checkpoint = " << dir.file("model.lrrc") << "\n"
                                     << "loss_csv = " << dir.file("loss.csv") << "\n"
                                     << "bases = " << dir.file("bases.lrrc") << "\n"
                                     << "classes = 3\n"
                                     << "basis_count = 4\n"
                                     << "widths = 8,16,32,32\n"
                                     << "convs_per_stage = 1\n"
                                     << "batch = 4\n"
                                     << "augment = false\n"
                                     << "de_radius = 3\n"
                                     << "stage.1 = 32 1000 0.02\n"
                                     << "stage.2 = 32,16,8,4 40 0.001 de\n";
  const Outcome tr = run_cli({"train", dir.file("run.cfg"), "--set", "seed=7"});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(fs::exists(dir.file("model.lrrc")));
  CHECK(fs::exists(dir.file("model.lrrc.stage1")));

  const auto csv = lines(slurp(dir.file("loss.csv")));
  REQUIRE(csv.size() == 1041);
  CHECK(csv[0] == loss_csv_header());
  CHECK(csv[1].rfind("1,1,", 0) == 0);
  CHECK(csv[1].find(",,,,,") != std::string::npos);
  CHECK(csv[1040].rfind("1040,2,", 0) == 0);
  CHECK(csv[1040].find(",,") == std::string::npos);

  const Outcome pr = run_cli({"predict", "--checkpoint", dir.file("model.lrrc"), "--manifest", test_manifest, "--out",
                              dir.file("pred"), "--dump-levels", dir.file("levels")});
  REQUIRE_MESSAGE(pr.code == 0, pr.err);
  CHECK(fs::exists(dir.file("levels")));

  const Outcome ev = run_cli({"eval", "--pred-dir", dir.file("pred"), "--truth", test_manifest, "--classes", "3"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const double miou = csv_value(ev.out, "mean_iou");

  ConfusionMatrix bg(3);
  for (const auto& s : load_dataset(test_manifest)) accumulate(bg, LabelMap(s.truth.height, s.truth.width, 0), s.truth);
  const double baseline = metrics(bg).mean_iou;
  CHECK(miou > baseline + 0.1);

  const Outcome tm = run_cli({"trimap", "--pred-dir", dir.file("pred"), "--truth", test_manifest, "--classes", "3",
                              "--radii", "1,4,16", "--out", dir.file("trimap.csv")});
  REQUIRE(tm.code == 0);
  const auto tri = lines(slurp(dir.file("trimap.csv")));
  REQUIRE(tri.size() == 4);
  CHECK(tri[0] == "radius,mean_iou,pixel_acc,pixels");
  CHECK(tri[1].rfind("1,", 0) == 0);
  CHECK(tri[3].rfind("16,", 0) == 0);

  const Outcome one = run_cli({"predict", "--checkpoint", dir.file("model.lrrc"), "--image",
                               read_manifest(test_manifest)[0].image_path, "--out",
                               dir.file("single.pgm"), "--scales", "0.5,1"});
  CHECK_MESSAGE(one.code == 0, one.err);
  CHECK(read_mask_pgm(dir.file("single.pgm")).height == 128);

  CHECK(run_cli({"predict", "--checkpoint", dir.file("model.lrrc"), "--out", dir.file("x.pgm")}).code ==
        cli::kExitValidation);
  CHECK(run_cli({"predict", "--checkpoint", dir.file("bases.lrrc"), "--manifest", test_manifest, "--out",
                 dir.file("y")})
            .code == cli::kExitValidation);
}

}  // TEST_SUITE
