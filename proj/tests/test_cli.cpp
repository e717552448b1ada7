#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using tidm::cli::run;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "tidm_test_cli";

int tidm_run(std::vector<std::string> args) {
  args.insert(args.begin(), "tidm");
  return run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string dir(const std::string& name) { return (kRoot / name).string(); }

// Shared tiny pipeline: data, codec and a two-step base model.
struct Pipeline {
  Pipeline() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    REQUIRE(tidm_run({"make-data", "--scenes", "8", "--out-dir", dir("data")}) == 0);
    REQUIRE(tidm_run({"train-codec", "--data", dir("data"), "--epochs", "1", "--out-dir", dir("codec")}) == 0);
    REQUIRE(tidm_run({"train-base", "--data", dir("data"), "--codec", dir("codec") + "/codec.ckpt", "--max-steps", "2",
                      "--batch", "4", "--base-channels", "8", "--embed-dim", "8", "--out-dir", dir("base")}) == 0);
  }
  std::vector<std::string> generate_args(const std::string& out) const {
    return {"generate", "--model", dir("base") + "/base.ckpt", "--codec", dir("codec") + "/codec.ckpt", "--vocab",
            dir("base") + "/vocab.txt", "--prompt", "ident1 meets ident2 in bg0", "--steps", "3", "--out-dir", dir(out)};
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(tidm_run({}) == 1);
  CHECK(tidm_run({"fly"}) == 1);
  CHECK(tidm_run({"make-data", "--no-such-flag"}) == 1);
  CHECK(tidm_run({"train-codec"}) == 1);
  CHECK(tidm_run({"make-data", "--scenes", "many"}) == 1);
  CHECK(tidm_run({"--version"}) == 0);
}

TEST_CASE("validation errors exit 2") {
  fs::create_directories(kRoot);
  CHECK(tidm_run({"make-data", "--identities", "2", "--out-dir", dir("bad")}) == 2);
  CHECK(tidm_run({"train-codec", "--data", dir("nothing-here"), "--out-dir", dir("bad")}) == 2);
  const auto cfg = kRoot / "unknown.cfg";
  std::ofstream(cfg) << "colour = blue\n";
  CHECK(tidm_run({"--config", cfg.string(), "make-data", "--out-dir", dir("bad")}) == 2);
}

TEST_CASE("config file values are overridden by flags") {
  fs::create_directories(kRoot);
  const auto cfg = kRoot / "data.cfg";
  std::ofstream(cfg) << "# corpus\nscenes = 5\nseed = 9\nout_dir = " << dir("from-config") << "\n";
  REQUIRE(tidm_run({"--config", cfg.string(), "make-data"}) == 0);
  CHECK(fs::exists(kRoot / "from-config" / "images" / "00004.ppm"));
  CHECK_FALSE(fs::exists(kRoot / "from-config" / "images" / "00005.ppm"));
  const auto manifest = slurp(kRoot / "from-config" / "run.manifest");
  CHECK(manifest.find("seed = 9") != std::string::npos);
  CHECK(manifest.find("scenes = 5") != std::string::npos);

  REQUIRE(tidm_run({"--config", cfg.string(), "make-data", "--scenes", "3", "--out-dir", dir("override")}) == 0);
  CHECK(fs::exists(kRoot / "override" / "images" / "00002.ppm"));
  CHECK_FALSE(fs::exists(kRoot / "override" / "images" / "00003.ppm"));
  CHECK(slurp(kRoot / "override" / "run.manifest").find("scenes = 3") != std::string::npos);
}

TEST_CASE("make-data is byte-reproducible") {
  fs::create_directories(kRoot);
  REQUIRE(tidm_run({"make-data", "--scenes", "6", "--seed", "4", "--out-dir", dir("rep1")}) == 0);
  REQUIRE(tidm_run({"make-data", "--scenes", "6", "--seed", "4", "--out-dir", dir("rep2")}) == 0);
  for (const auto* f : {"captions.txt", "scenes.txt", "vocab.txt", "images/00005.ppm", "masks/00005.ppm"})
    CHECK(slurp(kRoot / "rep1" / f) == slurp(kRoot / "rep2" / f));
}

TEST_CASE("run manifest") {
  const auto& p = pipeline();
  (void)p;
  const auto text = slurp(kRoot / "base" / "run.manifest");
  CHECK(text.find("tidm 0.1.0") != std::string::npos);
  CHECK(text.find("command train-base") != std::string::npos);
  CHECK(text.find("seed = 1") != std::string::npos);
  CHECK(text.find("max-steps = 2") != std::string::npos);
  CHECK(text.find("codec.ckpt fnv1a64=") != std::string::npos);
  CHECK(text.find("base.ckpt fnv1a64=") != std::string::npos);
}

TEST_CASE("generate writes one file and one manifest line per sample") {
  const auto& p = pipeline();
  REQUIRE(tidm_run(p.generate_args("gen")) == 0);
  std::istringstream lines(slurp(kRoot / "gen" / "samples.manifest"));
  int count = 0;
  for (std::string line; std::getline(lines, line); ++count) {
    CHECK(line == "sample_0" + std::to_string(count) + ".ppm\t1\t" + std::to_string(count) + "\tident1 meets ident2 in bg0");
    CHECK(fs::exists(kRoot / "gen" / ("sample_0" + std::to_string(count) + ".ppm")));
  }
  CHECK(count == 4);

  REQUIRE(tidm_run(p.generate_args("gen2")) == 0);
  CHECK(slurp(kRoot / "gen" / "sample_03.ppm") == slurp(kRoot / "gen2" / "sample_03.ppm"));

  auto bad = p.generate_args("gen3");
  bad.insert(bad.end(), {"--strength", "0.5"});
  CHECK(tidm_run(bad) == 2);
  auto unknown = p.generate_args("gen4");
  unknown[8] = "celebrity meets ident2";
  CHECK(tidm_run(unknown) == 2);
  auto missing = p.generate_args("gen5");
  missing[2] = dir("base") + "/absent.ckpt";
  CHECK(tidm_run(missing) == 2);
}

TEST_CASE("eval reads generated samples") {
  const auto& p = pipeline();
  REQUIRE(tidm_run(p.generate_args("gen-eval")) == 0);
  REQUIRE(tidm_run({"train-probe", "--data", dir("data"), "--epochs", "1", "--out-dir", dir("probe")}) == 0);
  REQUIRE(tidm_run({"eval", "--probe", dir("probe") + "/probe.ckpt", "--samples", dir("gen-eval"), "--mask",
                    dir("data") + "/masks/00000.ppm", "--out-dir", dir("eval")}) == 0);
  const auto report = slurp(kRoot / "eval" / "eval.txt");
  CHECK(report.find("identity_samples = 4") != std::string::npos);
  CHECK(report.find("consistency_batches = 1") != std::string::npos);
  CHECK(tidm_run({"eval", "--probe", dir("probe") + "/probe.ckpt", "--out-dir", dir("eval")}) == 2);
}

TEST_CASE("gradcheck exits 0 when every case passes") {
  fs::create_directories(kRoot);
  CHECK(tidm_run({"gradcheck", "--out-dir", dir("gc")}) == 0);
  CHECK(slurp(kRoot / "gc" / "run.manifest").find("result pass") != std::string::npos);
}
