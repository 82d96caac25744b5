#include <fstream>
#include <sstream>

#include "doctest.h"
#include "lthead/checkpoint.hpp"
#include "lthead/cli.hpp"
#include "lthead/data.hpp"
#include "lthead/evaluation.hpp"
#include "oracles.hpp"

using namespace lthead;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"train", "--features", "x"}).code == kExitUsage);  // --out missing
  CHECK(cli({"train", "--features", "x", "--out", "y", "--loss", "hinge"}).code == kExitUsage);
  CHECK(cli({"gradcheck", "--tol", "-1"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("data and format errors exit with 2") {
  oracle::TempDir dir("cli_err");
  const Run missing = cli({"train", "--features", (dir / "none.bin").string(), "--out",
                           (dir / "c").string()});
  CHECK(missing.code == kExitData);
  CHECK_FALSE(missing.err.empty());
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "IMBF\x01";
  }
  CHECK(cli({"eval", "--ckpt", (dir / "bad.bin").string(), "--test", (dir / "bad.bin").string(),
             "--report", (dir / "r.txt").string()})
            .code == kExitData);
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "nonsense = 1\n";
  }
  CHECK(cli({"gen-data", "--classes", "3", "--head-count", "20", "--ratio", "4", "--dim", "4",
             "--out", (dir / "d").string()})
            .code == kExitOk);
  CHECK(cli({"train", "--features", (dir / "d.train").string(), "--config",
             (dir / "bad.cfg").string(), "--out", (dir / "c").string()})
            .code == kExitData);
}

TEST_CASE("gradcheck subcommand") {
  const Run r = cli({"gradcheck", "--module", "losses"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("all passed") != std::string::npos);
  CHECK(cli({"gradcheck", "--module", "losses", "--tol", "1e-15"}).code == kExitGradcheckFailed);
}

TEST_CASE("end-to-end pipeline") {
  oracle::TempDir dir("cli_e2e");
  const std::string prefix = (dir / "syn").string();
  REQUIRE(cli({"gen-data", "--classes", "4", "--head-count", "60", "--ratio", "10", "--dim", "8",
               "--tokens", "2", "--seed", "3", "--test-per-class", "10", "--out", prefix})
              .code == kExitOk);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "total_iters = 40\nwarmup_iters = 4\nbatch_size = 16\nstage2_iters = 20\n"
           "depth = 1\nheads = 2\nmlp_ratio = 1\nseed = 5\n";
  }
  const std::string ckpt = (dir / "bsm.ltfh").string();
  REQUIRE(cli({"train", "--features", prefix + ".train", "--config", (dir / "run.cfg").string(),
               "--loss", "bsm", "--out", ckpt})
              .code == kExitOk);
  const std::string log = slurp(ckpt + ".log.csv");
  CHECK(log.rfind("stage,iter,lr,loss\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 41);

  // Same inputs give a bit-identical checkpoint.
  const std::string again = (dir / "again.ltfh").string();
  REQUIRE(cli({"train", "--features", prefix + ".train", "--config", (dir / "run.cfg").string(),
               "--loss", "bsm", "--out", again})
              .code == kExitOk);
  CHECK(slurp(ckpt) == slurp(again));

  const std::string cal = (dir / "marc.ltfh").string();
  REQUIRE(cli({"calibrate", "--ckpt", ckpt, "--features", prefix + ".train", "--method", "marc",
               "--out", cal})
              .code == kExitOk);
  CHECK(load_checkpoint(cal).calibrator->kind == CalibratorKind::MARC);

  const std::string report = (dir / "r.txt").string();
  const Run ev = cli({"eval", "--ckpt", cal, "--test", prefix + ".test", "--report", report});
  REQUIRE(ev.code == kExitOk);
  CHECK(ev.out.find("bsm+marc") != std::string::npos);
  std::string title;
  const EvalReport r = report_from_json(slurp(report + ".json"), &title);
  CHECK(title == "bsm+marc");
  CHECK(r.num_samples == 40);
  CHECK(r.fingerprint == load_checkpoint(cal).fingerprint());

  const Run table = cli({"report", "--inputs", report + ".json", ckpt, "--test", prefix + ".test"});
  CHECK(table.code == kExitOk);
  CHECK(table.out.find("bsm") != std::string::npos);
  const Run machine = cli({"report", "--inputs", report + ".json", "--format", "machine"});
  CHECK(machine.code == kExitOk);
  CHECK(machine.out.find("\"source\"") != std::string::npos);
}

TEST_CASE("zero-shot subcommand") {
  oracle::TempDir dir("cli_zs");
  {
    std::ofstream c(dir / "classes.csv");
    c << "1,0,0\n0,1,0\n0,0,1\n";
    std::ofstream i(dir / "images.csv");
    i << "2,0.1,0\n0,0,5\n0.2,3,0\n1,1,0.5\n";
    std::ofstream l(dir / "labels.txt");
    l << "0\n2\n1\n2\n";
  }
  const std::string report = (dir / "zs.txt").string();
  const Run r = cli({"zero-shot", "--image-embs", (dir / "images.csv").string(), "--class-embs",
                     (dir / "classes.csv").string(), "--test-labels",
                     (dir / "labels.txt").string(), "--report", report});
  REQUIRE(r.code == kExitOk);
  const EvalReport rep = report_from_json(slurp(report + ".json"));
  CHECK(rep.overall_accuracy == 0.75);

  std::ofstream(dir / "short.txt") << "0\n";
  CHECK(cli({"zero-shot", "--image-embs", (dir / "images.csv").string(), "--class-embs",
             (dir / "classes.csv").string(), "--test-labels", (dir / "short.txt").string(),
             "--report", report})
            .code == kExitData);
}

}  // TEST_SUITE
