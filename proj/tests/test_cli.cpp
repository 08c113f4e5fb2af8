#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hfnet/cli.hpp"
#include "hfnet/config_io.hpp"
#include "hfnet/synth.hpp"
#include "hfnet/train.hpp"

using namespace hfnet;
namespace fs = std::filesystem;

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

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// A workspace with small dataset specs and a run config that trains in about a second.
struct Workspace {
  fs::path dir;

  Workspace() : dir(fs::temp_directory_path() / "hfnet_test_cli") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    DatasetSpec s = DatasetSpec::default_spec();
    s.frames_per_clip = 4;
    s.height = s.width = 16;
    s.min_size = 3;
    s.max_size = 4;
    s.samples_per_class = 5;
    s.seed = 1;
    put(dir / "data.json", to_json(s).dump());
    s.samples_per_class = 3;
    s.seed = 2;
    put(dir / "data_val.json", to_json(s).dump());

    ModelConfig mc;
    mc.in_channels = 1;
    mc.height = mc.width = 16;
    mc.frames_per_clip = 4;
    mc.blocks = {{4, true, PoolAfter::max2}, {4, true, PoolAfter::none}};
    mc.hf_positions = {1, 2};
    mc.hf_variant = HfVariant::conservative;
    mc.num_classes = 8;
    put(dir / "model.json", to_json(mc).dump());
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.base_lr = 0.05;
    tc.lr_milestones = {};
    put(dir / "train.json", to_json(tc).dump());
    put(dir / "run.json", R"({"model": "model.json", "train": "train.json", "train_data": "train.hfvd", "val_data": "val.hfvd"})");
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"generate", "--out", "x.hfvd"}).code == kExitConfig);
  const Run r = cli({"generate", "--config", "/nonexistent/spec.json", "--out", "x.hfvd"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("/nonexistent/spec.json") != std::string::npos);
  CHECK(cli({"audit"}).code == kExitConfig);
  CHECK(cli({"verify", "--suite", "everything"}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("generate") {
  const Workspace ws;
  const Run r = cli({"generate", "--config", ws / "data.json", "--out", ws / "a.hfvd"});
  REQUIRE(r.code == kExitOk);
  CHECK(Json::parse(r.out).at("clips") == 40);
  CHECK(slurp(ws / "a.hfvd").substr(0, 4) == "HFVD");
  CHECK(cli({"generate", "--config", ws / "data.json", "--out", ws / "b.hfvd"}).code == kExitOk);
  CHECK(slurp(ws / "a.hfvd") == slurp(ws / "b.hfvd"));
  CHECK(cli({"generate", "--config", ws / "data.json", "--out", ws / "c.hfvd", "--seed", "9"}).code == kExitOk);
  CHECK(slurp(ws / "a.hfvd") != slurp(ws / "c.hfvd"));

  put(ws.dir / "bad.json", R"({"noise_std": -1})");
  CHECK(cli({"generate", "--config", ws / "bad.json", "--out", ws / "d.hfvd"}).code == kExitConfig);
  put(ws.dir / "typo.json", R"({"sampels_per_class": 3})");
  CHECK(cli({"generate", "--config", ws / "typo.json", "--out", ws / "d.hfvd"}).code == kExitConfig);
  CHECK(cli({"generate", "--config", ws / "data.json", "--out", "/proc/hfnet/x.hfvd"}).code == kExitIo);
}

TEST_CASE("train, eval and gate-stats") {
  const Workspace ws;
  REQUIRE(cli({"generate", "--config", ws / "data.json", "--out", ws / "train.hfvd"}).code == 0);
  REQUIRE(cli({"generate", "--config", ws / "data_val.json", "--out", ws / "val.hfvd"}).code == 0);

  const Run t1 = cli({"train", "--config", ws / "run.json", "--out", ws / "run1"});
  REQUIRE(t1.code == kExitOk);
  const Json summary = Json::parse(t1.out);
  CHECK(summary.at("steps") == 10);
  for (const char* f : {"metrics.jsonl", "best.hfck", "last.hfck", "resolved-config.json"}) CHECK(fs::exists(ws.dir / "run1" / f));

  std::istringstream log(slurp(ws.dir / "run1" / "metrics.jsonl"));
  std::string line;
  std::size_t epochs = 0;
  double best_logged = -1;
  while (std::getline(log, line)) {
    const Json rec = Json::parse(line);
    CHECK(rec.at("epoch") == ++epochs);
    best_logged = std::max(best_logged, rec.at("val_acc").get<double>());
  }
  CHECK(epochs == 2);

  SUBCASE("rerun and resolved config reproduce the log") {
    CHECK(cli({"train", "--config", ws / "run.json", "--out", ws / "run2"}).code == 0);
    CHECK(slurp(ws.dir / "run1" / "metrics.jsonl") == slurp(ws.dir / "run2" / "metrics.jsonl"));
    CHECK(cli({"train", "--config", ws / "run1/resolved-config.json", "--out", ws / "run3"}).code == 0);
    CHECK(slurp(ws.dir / "run1" / "metrics.jsonl") == slurp(ws.dir / "run3" / "metrics.jsonl"));
  }

  SUBCASE("baseline run through the config") {
    Json mc = read_json_file(ws / "model.json");
    mc["hf_variant"] = "none";
    mc["hf_positions"] = Json::array();
    put(ws.dir / "model.json", mc.dump());
    CHECK(cli({"train", "--config", ws / "run.json", "--out", ws / "base"}).code == 0);
    CHECK(load_checkpoint(ws / "base/last.hfck").model.config.hf_variant == HfVariant::none);
  }

  SUBCASE("eval") {
    const Run e = cli({"eval", "--checkpoint", ws / "run1/best.hfck", "--data", ws / "val.hfvd", "--confusion", ws / "conf.csv"});
    REQUIRE(e.code == kExitOk);
    const Json j = Json::parse(e.out);
    CHECK(j.at("top1").get<double>() == best_logged);
    CHECK(j.at("samples") == 24);
    const auto rows = read_csv(ws.dir / "conf.csv");
    REQUIRE(rows.size() == 9);
    CHECK(rows[0][0] == "true_class");
    for (std::size_t k = 1; k <= 8; ++k) {
      std::size_t sum = 0;
      for (std::size_t c = 1; c < rows[k].size(); ++c) sum += std::stoul(rows[k][c]);
      CHECK(sum == j.at("class_counts")[k - 1].get<std::size_t>());
    }

    // Different clip geometry.
    Json spec = read_json_file(ws / "data_val.json");
    spec["frames_per_clip"] = 5;
    put(ws.dir / "other.json", spec.dump());
    REQUIRE(cli({"generate", "--config", ws / "other.json", "--out", ws / "other.hfvd"}).code == 0);
    CHECK(cli({"eval", "--checkpoint", ws / "run1/best.hfck", "--data", ws / "other.hfvd"}).code == kExitConfig);
    CHECK(cli({"eval", "--checkpoint", ws / "missing.hfck", "--data", ws / "val.hfvd"}).code == kExitIo);
  }

  SUBCASE("corrupted inputs exit 3") {
    std::string ck = slurp(ws.dir / "run1" / "best.hfck");
    ck[0] = 'X';
    put(ws.dir / "bad.hfck", ck);
    CHECK(cli({"eval", "--checkpoint", ws / "bad.hfck", "--data", ws / "val.hfvd"}).code == kExitIo);
    std::string ds = slurp(ws.dir / "val.hfvd");
    ds[0] = 'X';
    put(ws.dir / "bad.hfvd", ds);
    CHECK(cli({"eval", "--checkpoint", ws / "run1/best.hfck", "--data", ws / "bad.hfvd"}).code == kExitIo);
    ds = slurp(ws.dir / "val.hfvd");
    put(ws.dir / "short.hfvd", ds.substr(0, ds.size() / 2));
    CHECK(cli({"train", "--config", ws / "run.json", "--val-data", ws / "short.hfvd", "--out", ws / "r"}).code == kExitIo);
  }

  SUBCASE("gate-stats") {
    const Run g = cli({"gate-stats", "--checkpoint", ws / "run1/last.hfck", "--data", ws / "val.hfvd", "--out", ws / "gates.csv"});
    REQUIRE(g.code == kExitOk);
    const auto rows = read_csv(ws.dir / "gates.csv");
    CHECK(rows.size() == 1 + 2 * 4);  // layers x timesteps
    CHECK(Json::parse(g.out).at("layers").size() == 2);
  }
}

TEST_CASE("gate-stats of an untrained checkpoint") {
  const Workspace ws;
  REQUIRE(cli({"generate", "--config", ws / "data_val.json", "--out", ws / "val.hfvd"}).code == 0);
  Rng init(1);
  save_checkpoint(ws / "init.hfck", build_model<float>(model_config_from_json(read_json_file(ws / "model.json")), init), 0, 0.0);
  const Run g = cli({"gate-stats", "--checkpoint", ws / "init.hfck", "--data", ws / "val.hfvd", "--out", ws / "g.csv"});
  REQUIRE(g.code == kExitOk);
  for (const auto& layer : Json::parse(g.out).at("layers")) {
    CHECK(layer.at("mean") == 0.0);
    CHECK(layer.at("max") == 0.0);
  }
  const auto rows = read_csv(ws.dir / "g.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][2]) == 0.0);
}

TEST_CASE("audit") {
  Run r = cli({"audit", "--config", HFNET_CONFIG_DIR "/model_toy.json"});
  REQUIRE(r.code == kExitOk);
  const std::string last = r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1);
  CHECK(Json::parse(last).at("hf_params") == 3172);
  CHECK(r.out.rfind("layer_name,kind,params,flops\n", 0) == 0);

  r = cli({"audit", "--config", HFNET_CONFIG_DIR "/model_toy_nonconservative.json"});
  CHECK(Json::parse(r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1)).at("hf_params") == 2 * 3172);

  r = cli({"audit", "--arch-spec", HFNET_CONFIG_DIR "/bninception_hf10.json"});
  REQUIRE(r.code == kExitOk);
  const Json j = Json::parse(r.out.substr(r.out.rfind('\n', r.out.size() - 2) + 1));
  CHECK(j.at("hf_params") == 119242);
  CHECK(j.at("hf_param_pct").get<double>() == doctest::Approx(1.1389).epsilon(1e-4));

  CHECK(cli({"audit", "--config", HFNET_CONFIG_DIR "/run_small.json"}).code == kExitOk);
  CHECK(cli({"audit", "--config", "a.json", "--arch-spec", "b.json"}).code == kExitConfig);
}

TEST_CASE("verify") {
  for (const char* suite : {"conservation", "equivalence"}) {
    const Run r = cli({"verify", "--suite", suite, "--instances", "40"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find(suite) != std::string::npos);
  }
  // Exit status follows the table: 0 when every row passes, 4 otherwise.
  const Run g = cli({"verify", "--suite", "gradcheck", "--seed", "7"});
  const bool any_fail = g.out.find("FAIL") != std::string::npos;
  CHECK(g.code == (any_fail ? kExitNumeric : kExitOk));
  CHECK(g.out.find("model_two_blocks") != std::string::npos);
}
