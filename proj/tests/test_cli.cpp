#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "rsnet/cli.hpp"
#include "rsnet/config.hpp"

using namespace rsnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path tiny_spec(const fs::path& dir) {
  const fs::path p = dir / "spec.txt";
  std::ofstream(p) << "image_size = 64, 64\nships = 1, 2\nlength = 10, 20\nwidth = 4, 8\nseed = 3\n";
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"gendata", "--n", "3"}).code == kExitUsage);
    CHECK(cli({"train", "--data", "x", "--out", "y", "--epochs", "0"}).code == kExitUsage);
    const auto help = cli({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("summarize") != std::string::npos);
  }

  TEST_CASE("summarize prints the table and writes a manifest") {
    const auto dir = th::scratch("cli_summarize");
    const auto stdout_only = cli({"summarize", "--config", "rsnet-desk"});
    CHECK(stdout_only.code == kExitOk);
    CHECK(stdout_only.out.find("head.shared.conv0") != std::string::npos);

    const auto r = cli({"summarize", "--config", "rsnet-desk", "--input-size", "256", "--out", dir.string(), "--seed", "4"});
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(dir / "summary.csv"));
    CHECK(fs::exists(dir / "graph.txt"));
    const auto manifest = read_text(dir / "run_manifest.txt");
    for (const char* key : {"command = rsnet summarize", "config = ", "seed = 4", "source_digest = " , "started_utc = ",
                            "wall_clock_seconds = ", "outputs = "})
      CHECK_MESSAGE(manifest.find(key) != std::string::npos, key);
    CHECK(manifest.find(source_digest()) != std::string::npos);
    CHECK(source_digest().size() == 16);
  }

  TEST_CASE("summarize: bad sizes and configs") {
    CHECK(cli({"summarize", "--config", "rsnet-desk", "--input-size", "100"}).code == kExitUsage);
    CHECK(cli({"summarize", "--config", "/nonexistent.cfg"}).code == kExitData);
    const auto dir = th::scratch("cli_badcfg");
    std::ofstream(dir / "bad.cfg") << ArchConfig::preset("rsnet-desk").to_text() << "neck_width = 30\n";
    const auto r = cli({"summarize", "--config", (dir / "bad.cfg").string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("neck_width") != std::string::npos);
  }

  TEST_CASE("gendata is deterministic and refuses non-empty output") {
    const auto dir = th::scratch("cli_gendata");
    const auto spec = tiny_spec(dir).string();
    REQUIRE(cli({"gendata", "--spec", spec, "--n", "3", "--out", (dir / "a").string()}).code == kExitOk);
    REQUIRE(cli({"gendata", "--spec", spec, "--n", "3", "--out", (dir / "b").string()}).code == kExitOk);
    CHECK(th::read_bytes(dir / "a/images/000001.pgm") == th::read_bytes(dir / "b/images/000001.pgm"));
    CHECK(th::read_bytes(dir / "a/labels/000002.txt") == th::read_bytes(dir / "b/labels/000002.txt"));
    CHECK(fs::exists(dir / "a/run_manifest.txt"));
    CHECK(cli({"gendata", "--spec", spec, "--n", "3", "--out", (dir / "a").string()}).code == kExitData);
    CHECK(cli({"gendata", "--spec", spec, "--n", "3", "--out", (dir / "a").string(), "--force"}).code == kExitOk);
    REQUIRE(cli({"gendata", "--spec", spec, "--n", "3", "--out", (dir / "c").string(), "--seed", "99"}).code == kExitOk);
    CHECK(th::read_bytes(dir / "a/images/000001.pgm") != th::read_bytes(dir / "c/images/000001.pgm"));
    CHECK(cli({"gendata", "--spec", (dir / "nope.txt").string(), "--n", "3", "--out", (dir / "d").string()}).code == kExitUsage);
  }

  TEST_CASE("train, resume, eval, detect") {
    const auto dir = th::scratch("cli_pipeline");
    const auto data = (dir / "data").string();
    REQUIRE(cli({"gendata", "--spec", tiny_spec(dir).string(), "--n", "4", "--out", data}).code == kExitOk);
    const auto run = (dir / "run").string();
    const auto first = cli({"train", "--data", data, "--out", run, "--batch", "2", "--epochs", "2", "--max-steps", "2"});
    REQUIRE_MESSAGE(first.code == kExitOk, first.err);
    const auto ckpt = (dir / "run" / "model.rsnt").string();
    CHECK(fs::exists(ckpt));
    const auto log1 = read_text(dir / "run" / "loss.csv");
    CHECK(std::count(log1.begin(), log1.end(), '\n') == 3);  // header + 2 steps

    const auto resumed = cli({"train", "--data", data, "--out", run, "--batch", "2", "--epochs", "2", "--resume", ckpt});
    REQUIRE_MESSAGE(resumed.code == kExitOk, resumed.err);
    const auto log2 = read_text(dir / "run" / "loss.csv");
    CHECK(std::count(log2.begin(), log2.end(), '\n') == 5);  // 4 steps in total
    CHECK(log2.rfind(log1, 0) == 0);
    CHECK(log2.find("\n3,") != std::string::npos);

    const auto ev = cli({"eval", "--ckpt", ckpt, "--data", data, "--out", (dir / "eval").string()});
    REQUIRE_MESSAGE(ev.code == kExitOk, ev.err);
    CHECK(fs::exists(dir / "eval" / "ap.csv"));
    CHECK(cli({"eval", "--ckpt", ckpt, "--data", data, "--config", "rsnet-ref"}).code == kExitData);

    const auto det = cli({"detect", "--ckpt", ckpt, "--image", data + "/images/000000.pgm", "--out",
                          (dir / "det").string(), "--heatmap", "neck.out3", "--conf", "0.0"});
    REQUIRE_MESSAGE(det.code == kExitOk, det.err);
    CHECK(fs::exists(dir / "det" / "000000.txt"));
    CHECK(fs::exists(dir / "det" / "000000_det.pgm"));
    CHECK(fs::exists(dir / "det" / "000000_heat_neck.out3.pgm"));
    CHECK(fs::exists(dir / "det" / "run_manifest.txt"));

    const auto bad_tap = cli({"detect", "--ckpt", ckpt, "--image", data + "/images/000000.pgm", "--out",
                              (dir / "det2").string(), "--heatmap", "nope"});
    CHECK(bad_tap.code == kExitUsage);
    CHECK(bad_tap.err.find("backbone.p3") != std::string::npos);
    CHECK(cli({"detect", "--ckpt", ckpt, "--image", data + "/images/000000.pgm", "--heatmap", "neck.out3"}).code == kExitUsage);

    std::ofstream(dir / "not.pgm") << "P2\n1 1\n255\n0\n";
    CHECK(cli({"detect", "--ckpt", ckpt, "--image", (dir / "not.pgm").string()}).code == kExitData);
    std::ofstream(dir / "junk.rsnt") << "junk";
    CHECK(cli({"detect", "--ckpt", (dir / "junk.rsnt").string(), "--image", data + "/images/000000.pgm"}).code == kExitData);
  }

  TEST_CASE("check passes and fails on an injected filter fault") {
    const auto dir = th::scratch("cli_check");
    const auto ok = cli({"check", "--shapes", "1", "--out", dir.string()});
    CHECK_MESSAGE(ok.code == kExitOk, ok.out);
    CHECK(fs::exists(dir / "check_report.txt"));
    CHECK(ok.out.find("FAIL") == std::string::npos);

    const auto bad = cli({"check", "--shapes", "1", "--inject-filter-fault"});
    CHECK(bad.code == kExitFailure);
    CHECK(bad.out.find("FAIL wavelet.orthonormal") != std::string::npos);
  }

  TEST_CASE("tune lists candidates near the budget") {
    const auto r = cli({"tune", "--config", "rsnet-desk", "--target-params", "100000", "--target-flops", "1e8"});
    CHECK(r.code == kExitOk);
    CHECK(!r.out.empty());
  }
}
