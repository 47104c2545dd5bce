#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "wmf/cli.hpp"
#include "wmf/trainer.hpp"

using namespace wmf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Shared inputs: procedural assets plus a 6-sample 32x32 dataset.
struct Fixture {
  fs::path root = fs::temp_directory_path() / "wmf_cli_fixture";
  Fixture() {
    fs::remove_all(root);
    REQUIRE(cli({"make-assets", "--backgrounds", (root / "bg").string(), "--assets", (root / "as").string(),
                 "--n-backgrounds", "4", "--n-assets", "3", "--size", "64", "--seed", "2"})
                .code == 0);
    REQUIRE(cli({"synth", "--backgrounds", (root / "bg").string(), "--assets", (root / "as").string(), "--out",
                 (root / "data").string(), "--n", "6", "--size", "32", "--seed", "4"})
                .code == 0);
  }
  ~Fixture() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
  std::vector<std::string> train(const std::string& out, const std::string& steps) const {
    return {"train", "--data", p("data"), "--out", p(out), "--steps", steps, "--base-channels", "4", "--seed", "1",
            "--lr", "1e-3"};
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

void expect_single_error_line(const Result& r) {
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(count_lines(r.err) == 1);
}

}  // namespace

TEST_CASE("synth writes exactly n triples and manifest lines") {
  const Fixture& f = fixture();
  const Result r = cli({"synth", "--backgrounds", f.p("bg"), "--assets", f.p("as"), "--out", f.p("s4"), "--n", "4",
                        "--size", "32", "--seed", "9"});
  REQUIRE(r.code == 0);
  for (const char* sub : {"watermarked", "background", "mask"})
    CHECK(std::distance(fs::directory_iterator(f.root / "s4" / sub), fs::directory_iterator{}) == 4);
  CHECK(count_lines(bytes(f.root / "s4" / "manifest.jsonl")) == 4);

  REQUIRE(cli({"synth", "--backgrounds", f.p("bg"), "--assets", f.p("as"), "--out", f.p("s4b"), "--n", "4",
               "--size", "32", "--seed", "9"})
              .code == 0);
  CHECK(tree(f.root / "s4") == tree(f.root / "s4b"));
}

TEST_CASE("synth names a missing assets directory") {
  const Fixture& f = fixture();
  const Result r =
      cli({"synth", "--backgrounds", f.p("bg"), "--assets", f.p("missing_assets"), "--out", f.p("x"), "--n", "2"});
  expect_single_error_line(r);
  CHECK(r.err.find("missing_assets") != std::string::npos);
}

TEST_CASE("usage and config errors are single lines") {
  expect_single_error_line(cli({}));
  expect_single_error_line(cli({"train", "--data", "x"}));
  expect_single_error_line(cli({"gradcheck", "--scope", "everything"}));
  expect_single_error_line(cli({"--config", "/nonexistent/wmf.ini", "eval"}));
  const Result bad = cli({"eval", "--pred-dir", "/nonexistent/a", "--gt-dir", "/nonexistent/b"});
  expect_single_error_line(bad);
  CHECK(bad.err.rfind("error: io: ", 0) == 0);
}

TEST_CASE("help lists every configurable flag") {
  for (const std::string cmd : {"synth", "make-assets", "train", "infer", "eval", "gradcheck"}) {
    const Result help = cli({cmd, "--help"});
    CHECK(help.code == 0);
    const Result dump = cli({cmd, "--dump-config"});
    REQUIRE(dump.code == 0);
    std::istringstream lines(dump.out);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "[" + cmd + "]");
    while (std::getline(lines, line)) {
      const std::string flag = "--" + line.substr(0, line.find('='));
      INFO(cmd << " " << flag);
      CHECK(help.out.find(flag) != std::string::npos);
    }
    CHECK(help.out.find("--dump-config") != std::string::npos);
  }
}

TEST_CASE("config dump round trips and flags override the file") {
  const Fixture& f = fixture();
  std::vector<std::string> args = f.train("cfg", "7");
  for (const char* extra : {"--no-nested", "--lambda-depth", "0.5", "0.25", "1", "--blocks", "1", "0", "2", "1"})
    args.push_back(extra);
  args.push_back("--dump-config");
  const Result a = cli(args);
  REQUIRE(a.code == 0);
  const fs::path file = f.root / "cfg.ini";
  std::ofstream(file) << a.out;
  const Result b = cli({"--config", file.string(), "train", "--dump-config"});
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);

  const Result c = cli({"--config", file.string(), "train", "--steps", "3", "--dump-config"});
  CHECK(c.out.find("steps=3\n") != std::string::npos);
  CHECK(c.out.find("no-nested=true\n") != std::string::npos);

  std::ofstream(file, std::ios::app) << "learning_rate_typo=0.1\n";
  const Result d = cli({"--config", file.string(), "train"});
  expect_single_error_line(d);
  CHECK(d.err.find("learning_rate_typo") != std::string::npos);
}

TEST_CASE("train with zero steps saves the initialization") {
  const Fixture& f = fixture();
  REQUIRE(cli(f.train("zero", "0")).code == 0);
  const ModelParams saved = load_model(CheckpointFile::load(f.root / "zero" / "checkpoint.wmfk"));
  NetworkConfig n;
  n.base_channels = 4;
  const ModelParams fresh = init_model(n, 1);
  const auto a = saved.named_parameters(), b = fresh.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second.values() == b[i].second.values());
  CHECK(bytes(f.root / "zero" / "log.jsonl").empty());
}

TEST_CASE("ablation flags reach the checkpoint configuration") {
  const Fixture& f = fixture();
  std::vector<std::string> args = f.train("ablate", "1");
  for (const char* flag : {"--no-nested", "--no-deep-sup", "--no-gdfn", "--weight-decay", "0"}) args.push_back(flag);
  REQUIRE(cli(args).code == 0);
  const CheckpointFile ck = CheckpointFile::load(f.root / "ablate" / "checkpoint.wmfk");
  const auto cfg = nlohmann::json::parse(ck.bytes("meta.config"));
  CHECK(cfg["nested"] == false);
  CHECK(cfg["deep_sup"] == false);
  CHECK(cfg["gdfn"] == false);
  const auto log = nlohmann::json::parse(bytes(f.root / "ablate" / "log.jsonl"));
  CHECK(log["loss_image_d"][0].is_null());
  CHECK(log["loss_image_d"][1].is_null());
  CHECK(log["loss_image_d"][2].is_number());
  // The feed-forward sublayer and its norm keep their initial values; the rest moved.
  NetworkConfig n = load_model(ck).config;
  const auto trained = load_model(ck).named_parameters(), init = init_model(n, 1).named_parameters();
  REQUIRE(trained.size() == init.size());
  std::size_t frozen = 0;
  for (std::size_t i = 0; i < init.size(); ++i) {
    const bool same = trained[i].second.values() == init[i].second.values();
    INFO(init[i].first);
    const std::string& name = init[i].first;
    CHECK(same == (name.find("gdfn") != std::string::npos || name.find("norm2") != std::string::npos));
    frozen += same;
  }
  CHECK(frozen > 0);
}

TEST_CASE("resume reproduces an uninterrupted run") {
  const Fixture& f = fixture();
  std::vector<std::string> full = f.train("full", "4");
  full.insert(full.end(), {"--batch", "4"});
  REQUIRE(cli(full).code == 0);
  std::vector<std::string> head = f.train("split", "2");
  head.insert(head.end(), {"--batch", "4"});
  REQUIRE(cli(head).code == 0);
  const fs::path first = f.root / "split_first.wmfk";
  fs::copy_file(f.root / "split" / "checkpoint.wmfk", first);
  REQUIRE(cli({"train", "--data", f.p("data"), "--out", f.p("split"), "--resume", first.string(), "--steps", "4"})
              .code == 0);
  CHECK(bytes(f.root / "split" / "checkpoint.wmfk") == bytes(f.root / "full" / "checkpoint.wmfk"));
  CHECK(bytes(f.root / "split" / "log.jsonl") == bytes(f.root / "full" / "log.jsonl"));
}

TEST_CASE("infer writes input-sized outputs deterministically from the final path") {
  const Fixture& f = fixture();
  REQUIRE(cli(f.train("inf_model", "1")).code == 0);
  const std::string ckpt = f.p("inf_model/checkpoint.wmfk");
  const Result a = cli({"infer", "--ckpt", ckpt, "--input", f.p("data/watermarked"), "--out", f.p("pa"), "--verbose"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("decoder_nodes 6 [(0,1) (1,1) (2,1) (0,2) (1,2) (0,3)] head_evaluations 1") != std::string::npos);
  REQUIRE(cli({"infer", "--ckpt", ckpt, "--input", f.p("data/watermarked"), "--out", f.p("pb")}).code == 0);
  CHECK(tree(f.root / "pa") == tree(f.root / "pb"));
  for (const char* sub : {"image", "mask"}) {
    const Image im = read_png(f.root / "pa" / sub / "000003.png");
    CHECK(im.height == 32);
    CHECK(im.width == 32);
  }

  std::vector<std::string> plain = f.train("inf_plain", "0");
  plain.push_back("--no-nested");
  REQUIRE(cli(plain).code == 0);
  const Result p = cli({"infer", "--ckpt", f.p("inf_plain/checkpoint.wmfk"), "--input",
                        f.p("data/watermarked/000000.png"), "--out", f.p("pc"), "--verbose"});
  REQUIRE(p.code == 0);
  CHECK(p.out.find("decoder_nodes 3 [(2,1) (1,2) (0,3)] head_evaluations 1") != std::string::npos);
}

TEST_CASE("eval of ground truth against itself hits the caps") {
  const Fixture& f = fixture();
  const Result r = cli({"eval", "--pred-dir", f.p("data/background"), "--gt-dir", f.p("data/background"),
                        "--mask-dir", f.p("data/mask"), "--pred-mask-dir", f.p("data/mask"), "--report",
                        f.p("rep/self.csv")});
  REQUIRE(r.code == 0);
  std::istringstream csv(bytes(f.root / "rep" / "self.csv"));
  std::string line;
  std::getline(csv, line);  // units comment
  std::getline(csv, line);
  CHECK(line == "path,psnr,ssim,rmse,rmse_w,f1,iou");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(line.find(",100.000000,1.000000,0.000000,") != std::string::npos);
  }
  CHECK(rows == 7);
}

TEST_CASE("eval aggregates are per-row means and counts must match") {
  const Fixture& f = fixture();
  REQUIRE(cli(f.train("ev_model", "1")).code == 0);
  REQUIRE(cli({"infer", "--ckpt", f.p("ev_model/checkpoint.wmfk"), "--input", f.p("data/watermarked"), "--out",
               f.p("ev_pred")})
              .code == 0);
  REQUIRE(cli({"eval", "--pred-dir", f.p("ev_pred/image"), "--gt-dir", f.p("data/background"), "--mask-dir",
               f.p("data/mask"), "--pred-mask-dir", f.p("ev_pred/mask"), "--report", f.p("ev.csv")})
              .code == 0);
  std::istringstream csv(bytes(f.root / "ev.csv"));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  std::vector<std::vector<double>> rows;
  std::vector<double> mean;
  while (std::getline(csv, line)) {
    std::istringstream cells(line);
    std::string cell, label;
    std::getline(cells, label, ',');
    std::vector<double> v;
    while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
    (label == "MEAN" ? mean : rows.emplace_back()) = v;
  }
  REQUIRE(rows.size() == 6);
  REQUIRE(mean.size() == 6);
  for (std::size_t c = 0; c < 6; ++c) {
    double s = 0;
    for (const auto& r : rows) s += r[c];
    CHECK(mean[c] == doctest::Approx(s / 6).epsilon(1e-5));
  }

  fs::remove(f.root / "ev_pred" / "image" / "000002.png");
  const Result bad = cli({"eval", "--pred-dir", f.p("ev_pred/image"), "--gt-dir", f.p("data/background")});
  expect_single_error_line(bad);
}

TEST_CASE("gradcheck reports every row and exits zero when all pass") {
  const Result r = cli({"gradcheck", "--scope", "block"});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("checks passed") != std::string::npos);
  const Result ops = cli({"gradcheck", "--scope", "ops", "--dtype", "f64"});
  CHECK(ops.code == 0);
  CHECK(count_lines(ops.out) >= 26 + 2);
}
