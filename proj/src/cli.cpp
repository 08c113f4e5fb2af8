#include "hfnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>

#include "hfnet/complexity.hpp"
#include "hfnet/config_io.hpp"
#include "hfnet/errors.hpp"
#include "hfnet/synth.hpp"
#include "hfnet/train.hpp"
#include "hfnet/verify.hpp"

namespace hfnet {

namespace {

namespace fs = std::filesystem;

std::ofstream open_out(const std::string& path) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

struct GenerateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  DatasetSpec spec = dataset_spec_from_json(read_json_file(a.config));
  if (a.seed) spec.seed = *a.seed;
  const VideoDataset ds = generate(spec);
  save_dataset(ds, a.out);
  err << "wrote " << ds.size() << " clips to " << a.out << '\n';
  out << Json{{"path", a.out}, {"clips", ds.size()}, {"classes", ds.num_classes}, {"seed", spec.seed}}.dump() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> train_data, val_data, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_run_config(a.config);
  if (a.train_data) rc.train_data = *a.train_data;
  if (a.val_data) rc.val_data = *a.val_data;
  if (a.out_dir) rc.out_dir = *a.out_dir;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.threads) rc.train.threads = *a.threads;
  if (!rc.train_data || !rc.val_data || !rc.out_dir) {
    throw UsageError("train: training data, validation data and output directory must be given by flag or config");
  }
  rc.model.validate();
  rc.train.validate();

  const VideoDataset train_data = load_dataset(*rc.train_data);
  const VideoDataset val_data = load_dataset(*rc.val_data);

  fs::create_directories(*rc.out_dir);
  write_json_file((fs::path(*rc.out_dir) / "resolved-config.json").string(), to_json(rc));

  // Model initialization draws from its own stream seeded by the run seed.
  Rng init(rc.train.seed);
  Model<float> model = build_model<float>(rc.model, init);
  TrainOptions opts;
  opts.out_dir = rc.out_dir;
  opts.log = &err;
  const TrainResult r = train(std::move(model), train_data, val_data, rc.train, opts);
  out << Json{{"best_epoch", r.best_epoch},
              {"best_val_acc", r.best_val_acc},
              {"final_val_acc", r.metrics.empty() ? 0.0 : r.metrics.back().val_acc},
              {"steps", r.steps}}
             .dump()
      << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data;
  std::optional<std::string> confusion;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const VideoDataset data = load_dataset(a.data);
  const EvalReport r = evaluate(ck.model, data, 64, a.threads);
  out << Json{{"top1", r.top1},
              {"per_class", r.per_class},
              {"class_counts", r.class_counts},
              {"samples", r.samples},
              {"checkpoint_epoch", ck.epoch}}
             .dump()
      << '\n';
  if (a.confusion) {
    std::ofstream f = open_out(*a.confusion);
    f << "true_class";
    for (std::size_t k = 1; k <= r.confusion.size(); ++k) f << ",pred_" << k;
    f << '\n';
    for (std::size_t t = 0; t < r.confusion.size(); ++t) {
      f << t + 1;
      for (std::size_t n : r.confusion[t]) f << ',' << n;
      f << '\n';
    }
    if (!f) throw IoError("failed writing '" + *a.confusion + "'");
  }
  return kExitOk;
}

struct AuditArgs {
  std::optional<std::string> config, arch_spec;
};

int cmd_audit(const AuditArgs& a, std::ostream& out, std::ostream&) {
  if (a.config.has_value() == a.arch_spec.has_value()) throw UsageError("audit: give exactly one of --config or --arch-spec");
  ComplexityReport report;
  if (a.arch_spec) {
    report = audit_arch(arch_spec_from_json(read_json_file(*a.arch_spec)));
  } else {
    // Either a bare model config or a run config with a model section.
    const Json j = read_json_file(*a.config);
    const ModelConfig mc = j.is_object() && j.contains("model") ? load_run_config(*a.config).model : model_config_from_json(j);
    report = audit_model(mc);
  }
  write_cost_csv(out, report);
  out << summary_json(report) << '\n';
  return kExitOk;
}

struct VerifyArgs {
  std::string suite = "all";
  std::uint64_t seed = 2024;
  std::size_t instances = 500;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out, std::ostream&) {
  VerifyOptions opts;
  opts.seed = a.seed;
  opts.instances = a.instances;
  const auto results = run_verify(a.suite, opts);
  write_verify_table(out, results);
  for (const SuiteResult& r : results) {
    if (!r.passed) return kExitNumeric;
  }
  return kExitOk;
}

struct GateStatsArgs {
  std::string checkpoint, data, out;
  int threads = 1;
};

int cmd_gate_stats(const GateStatsArgs& a, std::ostream& out, std::ostream&) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const VideoDataset data = load_dataset(a.data);
  const ModelConfig& mc = ck.model.config;
  if (data.frames_per_clip != mc.frames_per_clip || data.channels() != mc.in_channels || data.height() != mc.height ||
      data.width() != mc.width) {
    throw ConfigError("gate-stats: dataset clip shape does not match the checkpoint's model");
  }
  std::map<std::size_t, GateAccumulator> acc;
  const std::size_t batch = 64;
  Rng unused(0);
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t n = std::min(batch, data.size() - start);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    Tape<float> tape(TapeOptions{.threads = a.threads});
    const auto trace = forward(tape, ck.model, tape.constant(data.gather(idx)), Mode::eval, unused, false);
    for (const auto& [block, gates] : trace.gates) {
      acc.try_emplace(block, mc.frames_per_clip).first->second.add(gates.values.value(), gates.segments);
    }
  }
  std::vector<GateStatsRow> rows;
  for (const auto& [block, a_] : acc) {
    for (std::size_t t = 0; t < a_.frames(); ++t) rows.push_back({block, t + 1, a_.at_timestep(t)});
  }
  std::ofstream f = open_out(a.out);
  write_gate_stats_csv(f, rows);
  if (!f) throw IoError("failed writing '" + a.out + "'");
  Json layers = Json::array();
  for (const auto& [block, a_] : acc) {
    const GateSummary s = a_.overall();
    layers.push_back({{"layer_index", block}, {"mean", s.mean}, {"mean_abs", s.mean_abs}, {"min", s.min}, {"max", s.max}});
  }
  out << Json{{"rows", rows.size()}, {"layers", layers}}.dump() << '\n';
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) || dynamic_cast<const DataError*>(&e)) {
    return kExitIo;
  }
  if (dynamic_cast<const Error*>(&e)) return kExitConfig;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  return kExitNumeric;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated temporal feature aggregation on synthetic video", "hfnet"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "generate a synthetic dataset file");
  g->add_option("--config", gen.config, "dataset spec JSON")->required();
  g->add_option("--out", gen.out, "output dataset file")->required();
  g->add_option("--seed", gen.seed, "overrides the spec seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "run config JSON")->required();
  t->add_option("--train-data", tr.train_data);
  t->add_option("--val-data", tr.val_data);
  t->add_option("--out", tr.out_dir, "output directory");
  t->add_option("--seed", tr.seed, "overrides train.seed");
  t->add_option("--threads", tr.threads, "overrides train.threads")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--confusion", ev.confusion, "confusion matrix CSV");
  e->add_option("--threads", ev.threads)->check(CLI::PositiveNumber);

  AuditArgs au;
  auto* a = app.add_subcommand("audit", "parameter and FLOP audit");
  auto* a_cfg = a->add_option("--config", au.config, "model or run config JSON");
  auto* a_arch = a->add_option("--arch-spec", au.arch_spec, "architecture channel spec JSON");
  a_cfg->excludes(a_arch);
  a_arch->excludes(a_cfg);

  VerifyArgs ve;
  auto* v = app.add_subcommand("verify", "run the property suites");
  v->add_option("--suite", ve.suite)->check(CLI::IsMember({"gradcheck", "conservation", "equivalence", "all"}));
  v->add_option("--seed", ve.seed);
  v->add_option("--instances", ve.instances)->check(CLI::PositiveNumber);

  GateStatsArgs gs;
  auto* s = app.add_subcommand("gate-stats", "per-layer gate statistics over a dataset");
  s->add_option("--checkpoint", gs.checkpoint)->required();
  s->add_option("--data", gs.data)->required();
  s->add_option("--out", gs.out, "CSV output")->required();
  s->add_option("--threads", gs.threads)->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return kExitConfig;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out, err);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (a->parsed()) return cmd_audit(au, out, err);
    if (v->parsed()) return cmd_verify(ve, out, err);
    if (s->parsed()) return cmd_gate_stats(gs, out, err);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_code_for(ex);
  }
  return kExitConfig;
}

}  // namespace hfnet
