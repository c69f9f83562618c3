#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "densemp_unit" / "cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(DENSEMP_CLI) + " " + args + " > " + (workdir() / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string manifest() {
  static const std::string path = [] {
    const fs::path d = workdir() / "data";
    REQUIRE(run("gen-synthetic --patients 4 --slices 4 --folds 2 --seed 3 --out " + d.string()) == 0);
    return (d / "manifest.jsonl").string();
  }();
  return path;
}

std::string data_flags() { return "--override data.manifest=" + manifest() + " --override data.n_folds=2"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-synthetic writes a manifest and exits 0") { CHECK(fs::exists(manifest())); }

  TEST_CASE("the full subcommand chain exits 0") {
    const auto out = (workdir() / "chain").string();
    const std::string iters = " --override stage1.iterations=2 --override stage2.iterations=2 --override finetune.iterations=2";
    REQUIRE(run("pretrain-stage1 " + data_flags() + iters + " --seed 1 --out " + out) == 0);
    REQUIRE(run("pretrain-stage2 " + data_flags() + iters + " --checkpoint " + out + "/stage1.ckpt --out " + out) == 0);
    REQUIRE(run("finetune " + data_flags() + iters + " --checkpoint " + out + "/stage2.ckpt --out " + out) == 0);
    CHECK(run("evaluate " + data_flags() + " --checkpoint " + out + "/finetune.ckpt --out " + out) == 0);
    CHECK(fs::exists(out + "/eval_report.json"));
    CHECK(run("export-features " + data_flags() + " --limit 2 --checkpoint " + out + "/finetune.ckpt --out " + out) == 0);
  }

  TEST_CASE("configuration problems exit 2") {
    CHECK(run("pretrain-stage1 --override no.such.key=1") == 2);
    CHECK(run("pretrain-stage1 " + data_flags() + " --override stage1.tau=-1") == 2);
    CHECK(run("pretrain-stage1 --config /nonexistent/config.json") == 2);
    CHECK(run("no-such-subcommand") == 2);
    std::ofstream(workdir() / "bad.json") << "{ not json";
    CHECK(run("run-all --config " + (workdir() / "bad.json").string()) == 2);
  }

  TEST_CASE("data problems exit 3") {
    CHECK(run("pretrain-stage1 --override data.manifest=/nonexistent/manifest.jsonl") == 3);
    std::ofstream(workdir() / "broken.jsonl") << "{\"slice_id\": 1\n";
    CHECK(run("pretrain-stage1 --override data.manifest=" + (workdir() / "broken.jsonl").string()) == 3);
    std::ofstream(workdir() / "junk.ckpt") << "junk";
    CHECK(run("evaluate " + data_flags() + " --checkpoint " + (workdir() / "junk.ckpt").string()) == 3);
  }

  TEST_CASE("numerical failure exits 4") {
    const auto out = (workdir() / "diverge").string();
    CHECK(run("pretrain-stage1 " + data_flags() + " --override stage1.iterations=50 --override stage1.lr=1e300 --out " +
              out) == 4);
  }
}
