#include <doctest.h>

#include <fstream>
#include <initializer_list>

#include "railpdm/cli.hpp"
#include "railpdm/dsp.hpp"
#include "railpdm/gateway.hpp"
#include "support.hpp"

using namespace railpdm;
using railpdm::testing::TempDir;

namespace {

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> owned = {"railpdm"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : owned) argv.push_back(s.data());
  argv.push_back(nullptr);
  return cli::run_cli(static_cast<int>(owned.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json load(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"fly"}) == cli::kExitUsage);
  CHECK(run({"compress"}) == cli::kExitUsage);
  CHECK(run({"simulate", "ride", "--speed", "fast"}) == cli::kExitUsage);
}

TEST_CASE("error kinds map to exit codes") {
  CHECK(cli::exit_code_for(ErrorKind::io) == cli::kExitIo);
  CHECK(cli::exit_code_for(ErrorKind::transport) == cli::kExitIo);
  CHECK(cli::exit_code_for(ErrorKind::validation) == cli::kExitFailure);
  CHECK(cli::exit_code_for(ErrorKind::verification) == cli::kExitFailure);
}

TEST_CASE("simulate is deterministic and writes truth and manifest") {
  TempDir d;
  const auto a = d.file("a.rsraw"), b = d.file("b.rsraw");
  REQUIRE(run({"simulate", "ride", "--route-length", "60", "--seed", "3", "--fault", "flat_spot:0.8:2.7", "--out", a}) == 0);
  REQUIRE(run({"simulate", "ride", "--route-length", "60", "--seed", "3", "--fault", "flat_spot:0.8:2.7", "--out", b}) == 0);
  CHECK(slurp(a) == slurp(b));
  const auto truth = load(a + ".truth.json");
  CHECK(truth["faults"].size() == 1);
  CHECK(truth["archive_digest"] == load(b + ".truth.json")["archive_digest"]);
  const auto manifest = load(a + ".manifest.json");
  CHECK(manifest["command"] == "simulate ride");
  CHECK(manifest["seed"] == 3);
  CHECK(run({"simulate", "ride", "--route-length", "60", "--speed", "-1", "--out", a}) == cli::kExitFailure);
  CHECK(run({"simulate", "ride", "--fault", "flat_spot:x", "--out", a}) != 0);
  CHECK(run({"simulate", "pass", "--speed", "0", "--out", d.file("p.rsraw")}) == cli::kExitFailure);
}

TEST_CASE("missing inputs exit 3") {
  TempDir d;
  CHECK(run({"compress", "--in", d.file("nope.rsraw")}) == cli::kExitIo);
  CHECK(run({"verify-ledger", "--ledger", d.file("none.rslog"), "--registry", d.file("none.json")}) == cli::kExitIo);
  CHECK(run({"report", "--gateway", "127.0.0.1:1", "--token", "x"}) == cli::kExitIo);
}

TEST_CASE("registry init refuses to overwrite") {
  TempDir d;
  const auto reg = d.file("p.json");
  REQUIRE(run({"registry", "init", "--out", reg, "--principal", "s1:sensor", "--principal", "g:admin"}) == 0);
  const auto loaded = PrincipalRegistry::load(reg);
  REQUIRE(loaded.principals().size() == 2);
  CHECK(loaded.by_id("s1")->mac_key.size() == 32);
  CHECK(loaded.by_id("s1")->token != loaded.by_id("g")->token);
  CHECK(run({"registry", "init", "--out", reg, "--principal", "x:driver"}) == cli::kExitIo);
  CHECK(run({"registry", "init", "--out", reg, "--principal", "x:pilot", "--force"}) == cli::kExitFailure);
  CHECK(run({"registry", "init", "--out", reg, "--principal", "x:driver", "--force"}) == 0);
}

TEST_CASE("offline pipeline from simulation to recommendation") {
  TempDir d;
  const auto reg = d.file("principals.json"), chain = d.file("chain.rslog");
  testing::fixture_registry().save(reg);

  std::vector<std::string> truths;
  for (int i = 0; i < 4; ++i) {
    const std::string veh = "V" + std::to_string(i + 1);
    const auto raw = d.file(veh + ".rsraw");
    const std::string fault = i % 2 ? "flat_spot:1.0:2.8" : "flat_spot:0:2.8";
    REQUIRE(run({"simulate", "ride", "--route-length", "80", "--seed", std::to_string(10 + i), "--vehicle", veh,
                 "--start", std::to_string(1'700'000'000'000'000LL + i * 100'000'000LL), "--fault", fault,
                 "--out", raw}) == 0);
    REQUIRE(run({"compress", "--in", raw}) == 0);
    REQUIRE(run({"ingest", "--offline", "--in", raw + ".frames.jsonl", "--ledger", chain, "--registry", reg,
                 "--principal", "sensor1"}) == 0);
    truths.push_back(raw + ".truth.json");
  }
  CHECK(run({"ingest", "--offline", "--in", d.file("V1.rsraw.frames.jsonl"), "--ledger", chain, "--registry", reg,
             "--principal", "driver1"}) == cli::kExitFailure);

  const auto labels = d.file("labels.json");
  REQUIRE(run({"label", "from-truth", "--truth", truths[0], "--truth", truths[1], "--truth", truths[2], "--truth",
               truths[3], "--out", labels}) == 0);
  CHECK(load(labels)["events"].size() == 4);
  REQUIRE(run({"label", "import", "--offline", "--in", labels, "--ledger", chain, "--registry", reg,
               "--principal", "driver1"}) == 0);

  const auto model = d.file("model.json");
  CHECK(run({"train", "--ledger", chain, "--registry", reg, "--out", model, "--classes", "track_bump"}) ==
        cli::kExitFailure);
  REQUIRE(run({"train", "--ledger", chain, "--registry", reg, "--out", model}) == 0);
  CHECK(load(model)["classes"].size() == 2);

  REQUIRE(run({"predict", "--model", model, "--ledger", chain, "--registry", reg, "--principal", "admin1"}) == 0);
  {
    const auto reg_obj = PrincipalRegistry::load(reg);
    ledger::Ledger store(chain, reg_obj.keyring());
    const auto recs = analysis::recommendations(store);
    REQUIRE_FALSE(recs.empty());
    for (const auto& r : recs) {
      CHECK(r.predicted_issue == "flat_spot_suspected");
      CHECK((r.subject == "V2" || r.subject == "V4"));
    }
  }
  CHECK(load(chain + ".predict.manifest.json")["outputs"].size() > 0);
  REQUIRE(run({"verify-ledger", "--ledger", chain, "--registry", reg}) == 0);
  CHECK(run({"analyze", "prepost", "--vehicle", "V1", "--ledger", chain, "--registry", reg}) == cli::kExitFailure);

  // Tampered model files are refused.
  auto m = load(model);
  m["centroids"][0][0] = 42.0;
  std::ofstream(model) << m.dump();
  CHECK(run({"predict", "--model", model, "--ledger", chain, "--registry", reg, "--principal", "admin1",
             "--dry-run"}) == cli::kExitFailure);

  // Flip one payload byte in the middle of the log.
  std::string bytes = slurp(chain);
  bytes[bytes.size() / 2] ^= 0x01;
  std::ofstream(chain, std::ios::binary | std::ios::trunc) << bytes;
  CHECK(run({"verify-ledger", "--ledger", chain, "--registry", reg}) == cli::kExitFailure);
}

TEST_CASE("analysis subcommands") {
  TempDir d;
  const auto raw = d.file("r.rsraw");
  REQUIRE(run({"simulate", "ride", "--route-length", "60", "--seed", "1", "--out", raw}) == 0);
  REQUIRE(run({"compress", "--in", raw, "--out", d.file("r.jsonl")}) == 0);
  REQUIRE(run({"analyze", "baseline", "--frames", d.file("r.jsonl"), "--out", d.file("base.json")}) == 0);
  CHECK(run({"analyze", "score", "--frames", d.file("r.jsonl"), "--model", d.file("base.json")}) == 0);
  CHECK(run({"analyze", "prepost", "--pre", d.file("r.jsonl"), "--post", d.file("r.jsonl")}) == 0);

  const auto pass = d.file("p.rsraw");
  REQUIRE(run({"simulate", "pass", "--speed", "18", "--direction", "b_to_a", "--seed", "2", "--out", pass}) == 0);
  CHECK(run({"analyze", "direction", "--in", pass, "--truth", pass + ".truth.json"}) == 0);
  CHECK(run({"analyze", "direction", "--in", pass}) == cli::kExitFailure);
}

TEST_CASE("online ingest, sync and report against a running gateway") {
  TempDir d;
  const auto reg = d.file("principals.json");
  testing::fixture_registry().save(reg);
  gateway::Config cfg;
  cfg.ledger_path = d.file("server.rslog");
  cfg.durable = false;
  gateway::Gateway gw(cfg, testing::fixture_registry());
  gateway::Server server(gw);
  const std::string addr = "127.0.0.1:" + std::to_string(server.start("127.0.0.1", 0));

  const auto raw = d.file("r.rsraw");
  REQUIRE(run({"simulate", "ride", "--route-length", "60", "--seed", "5", "--vehicle", "V7", "--out", raw}) == 0);
  REQUIRE(run({"compress", "--in", raw}) == 0);
  const auto frames = dsp::frames_from_jsonl(slurp(raw + ".frames.jsonl"));
  CHECK(run({"ingest", "--in", raw + ".frames.jsonl", "--gateway", addr}) == cli::kExitFailure);  // no token
  CHECK(run({"ingest", "--in", raw + ".frames.jsonl", "--gateway", addr, "--token", "tok-driver1"}) ==
        cli::kExitFailure);
  REQUIRE(run({"ingest", "--in", raw + ".frames.jsonl", "--gateway", addr, "--token", "tok-sensor1", "--batch", "3",
               "--parallel", "4"}) == 0);
  REQUIRE(run({"ingest", "--in", raw + ".frames.jsonl", "--gateway", addr, "--token", "tok-sensor1", "--packed"}) ==
          0);
  CHECK(gw.store().versions("frames/V7/axle1") == 2 * frames.size());

  const auto mirror = d.file("mirror.rslog");
  REQUIRE(run({"sync", "--ledger", mirror, "--registry", reg, "--gateway", addr, "--token", "tok-partner1"}) == 0);
  {
    ledger::Ledger m(mirror, testing::fixture_keyring());
    CHECK(m.head() == gw.store().head());
  }
  CHECK(run({"report", "--gateway", addr, "--token", "tok-foreman1"}) == 0);
  CHECK(run({"report", "--gateway", addr, "--token", "tok-sensor1", "--json"}) == cli::kExitFailure);
  server.stop();
}
