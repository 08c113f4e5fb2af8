#include "hfnet/config_io.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace hfnet {

namespace {

namespace fs = std::filesystem;

void check_object(const Json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(ctx + ": unknown key '" + key + "'");
  }
}

std::uint64_t as_uint(const Json& v, const std::string& what) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(what + ": expected a non-negative integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

double as_double(const Json& v, const std::string& what) {
  if (!v.is_number()) throw ConfigError(what + ": expected a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const Json& v, const std::string& what) {
  if (!v.is_boolean()) throw ConfigError(what + ": expected true/false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const Json& v, const std::string& what) {
  if (!v.is_string()) throw ConfigError(what + ": expected a string, got " + v.dump());
  return v.get<std::string>();
}

template <typename F>
void opt(const Json& j, const char* key, F&& apply) {
  if (auto it = j.find(key); it != j.end()) apply(*it);
}

template <typename E>
E parse_enum(const Json& v, const std::string& what, std::initializer_list<std::pair<const char*, E>> table) {
  const std::string s = as_string(v, what);
  std::string choices;
  for (const auto& [name, e] : table) {
    if (s == name) return e;
    choices += (choices.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(what + ": '" + s + "' is not one of " + choices);
}

std::vector<std::size_t> uint_list(const Json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + ": expected an array");
  std::vector<std::size_t> out;
  for (const Json& e : v) out.push_back(as_uint(e, what));
  return out;
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  const fs::path p(path);
  return p.is_absolute() || base_dir.empty() ? path : (fs::path(base_dir) / p).string();
}

}  // namespace

Json to_json(const ModelConfig& c) {
  Json blocks = Json::array();
  for (const BlockSpec& b : c.blocks) {
    blocks.push_back({{"out_channels", b.out_channels}, {"batchnorm", b.use_batchnorm}, {"pool", to_string(b.pool_after)}});
  }
  return Json{{"in_channels", c.in_channels},
              {"height", c.height},
              {"width", c.width},
              {"frames_per_clip", c.frames_per_clip},
              {"blocks", blocks},
              {"hf_positions", c.hf_positions},
              {"hf_variant", to_string(c.hf_variant)},
              {"consensus", to_string(c.consensus)},
              {"num_classes", c.num_classes},
              {"dropout_rate", c.dropout_rate}};
}

ModelConfig model_config_from_json(const Json& j) {
  const std::string ctx = "model config";
  check_object(j, ctx, {"in_channels", "height", "width", "frames_per_clip", "blocks", "hf_positions", "hf_variant",
                        "consensus", "num_classes", "dropout_rate"});
  ModelConfig c;
  opt(j, "in_channels", [&](const Json& v) { c.in_channels = as_uint(v, ctx + ".in_channels"); });
  opt(j, "height", [&](const Json& v) { c.height = as_uint(v, ctx + ".height"); });
  opt(j, "width", [&](const Json& v) { c.width = as_uint(v, ctx + ".width"); });
  opt(j, "frames_per_clip", [&](const Json& v) { c.frames_per_clip = as_uint(v, ctx + ".frames_per_clip"); });
  opt(j, "blocks", [&](const Json& v) {
    if (!v.is_array()) throw ConfigError(ctx + ".blocks: expected an array");
    for (const Json& b : v) {
      const std::string bctx = ctx + ".blocks[" + std::to_string(c.blocks.size()) + "]";
      check_object(b, bctx, {"out_channels", "batchnorm", "pool"});
      BlockSpec spec;
      opt(b, "out_channels", [&](const Json& x) { spec.out_channels = as_uint(x, bctx + ".out_channels"); });
      opt(b, "batchnorm", [&](const Json& x) { spec.use_batchnorm = as_bool(x, bctx + ".batchnorm"); });
      opt(b, "pool", [&](const Json& x) {
        spec.pool_after = parse_enum<PoolAfter>(x, bctx + ".pool", {{"none", PoolAfter::none}, {"max2", PoolAfter::max2}});
      });
      c.blocks.push_back(spec);
    }
  });
  opt(j, "hf_positions", [&](const Json& v) { c.hf_positions = uint_list(v, ctx + ".hf_positions"); });
  opt(j, "hf_variant", [&](const Json& v) {
    c.hf_variant = parse_enum<HfVariant>(v, ctx + ".hf_variant",
                                         {{"none", HfVariant::none},
                                          {"conservative", HfVariant::conservative},
                                          {"nonconservative", HfVariant::nonconservative}});
  });
  opt(j, "consensus", [&](const Json& v) {
    c.consensus = parse_enum<Consensus>(
        v, ctx + ".consensus", {{"average", Consensus::average}, {"relation", Consensus::relation}, {"conv3d", Consensus::conv3d}});
  });
  opt(j, "num_classes", [&](const Json& v) { c.num_classes = as_uint(v, ctx + ".num_classes"); });
  opt(j, "dropout_rate", [&](const Json& v) { c.dropout_rate = as_double(v, ctx + ".dropout_rate"); });
  c.validate();
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"base_lr", c.base_lr},
              {"lr_milestones", c.lr_milestones},
              {"lr_decay", c.lr_decay},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"dropout_rate", c.dropout_rate ? Json(*c.dropout_rate) : Json(nullptr)},
              {"seed", c.seed},
              {"augmentation", to_string(c.augmentation)},
              {"threads", c.threads},
              {"record_timing", c.record_timing}};
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string ctx = "train config";
  check_object(j, ctx, {"epochs", "batch_size", "base_lr", "lr_milestones", "lr_decay", "momentum", "weight_decay",
                        "dropout_rate", "seed", "augmentation", "threads", "record_timing"});
  TrainConfig c;
  opt(j, "epochs", [&](const Json& v) { c.epochs = as_uint(v, ctx + ".epochs"); });
  opt(j, "batch_size", [&](const Json& v) { c.batch_size = as_uint(v, ctx + ".batch_size"); });
  opt(j, "base_lr", [&](const Json& v) { c.base_lr = as_double(v, ctx + ".base_lr"); });
  opt(j, "lr_milestones", [&](const Json& v) { c.lr_milestones = uint_list(v, ctx + ".lr_milestones"); });
  opt(j, "lr_decay", [&](const Json& v) { c.lr_decay = as_double(v, ctx + ".lr_decay"); });
  opt(j, "momentum", [&](const Json& v) { c.momentum = as_double(v, ctx + ".momentum"); });
  opt(j, "weight_decay", [&](const Json& v) { c.weight_decay = as_double(v, ctx + ".weight_decay"); });
  opt(j, "dropout_rate", [&](const Json& v) {
    if (v.is_null()) {
      c.dropout_rate.reset();
    } else {
      c.dropout_rate = as_double(v, ctx + ".dropout_rate");
    }
  });
  opt(j, "seed", [&](const Json& v) { c.seed = as_uint(v, ctx + ".seed"); });
  opt(j, "augmentation", [&](const Json& v) {
    c.augmentation = parse_enum<Augmentation>(v, ctx + ".augmentation",
                                              {{"none", Augmentation::none}, {"crop_scale", Augmentation::crop_scale}});
  });
  opt(j, "threads", [&](const Json& v) { c.threads = static_cast<int>(as_uint(v, ctx + ".threads")); });
  opt(j, "record_timing", [&](const Json& v) { c.record_timing = as_bool(v, ctx + ".record_timing"); });
  c.validate();
  return c;
}

Json to_json(const DatasetSpec& s) {
  Json classes = Json::array();
  for (const ClassSpec& c : s.classes) {
    classes.push_back({{"shape", to_string(c.shape)}, {"motion", to_string(c.motion)}, {"direction", to_string(c.direction)}});
  }
  return Json{{"frames_per_clip", s.frames_per_clip},
              {"channels", s.channels},
              {"height", s.height},
              {"width", s.width},
              {"classes", classes},
              {"samples_per_class", s.samples_per_class},
              {"noise_std", s.noise_std},
              {"seed", s.seed},
              {"min_size", s.min_size},
              {"max_size", s.max_size}};
}

DatasetSpec dataset_spec_from_json(const Json& j) {
  const std::string ctx = "dataset spec";
  check_object(j, ctx, {"frames_per_clip", "channels", "height", "width", "classes", "samples_per_class", "noise_std",
                        "seed", "min_size", "max_size"});
  DatasetSpec s = DatasetSpec::default_spec();
  opt(j, "frames_per_clip", [&](const Json& v) { s.frames_per_clip = as_uint(v, ctx + ".frames_per_clip"); });
  opt(j, "channels", [&](const Json& v) { s.channels = as_uint(v, ctx + ".channels"); });
  opt(j, "height", [&](const Json& v) { s.height = as_uint(v, ctx + ".height"); });
  opt(j, "width", [&](const Json& v) { s.width = as_uint(v, ctx + ".width"); });
  opt(j, "classes", [&](const Json& v) {
    if (!v.is_array()) throw ConfigError(ctx + ".classes: expected an array");
    s.classes.clear();
    for (const Json& c : v) {
      const std::string cctx = ctx + ".classes[" + std::to_string(s.classes.size()) + "]";
      check_object(c, cctx, {"shape", "motion", "direction"});
      ClassSpec cls;
      opt(c, "shape", [&](const Json& x) {
        cls.shape = parse_enum<Shape>(x, cctx + ".shape", {{"square", Shape::square}, {"circle", Shape::circle}});
      });
      opt(c, "motion", [&](const Json& x) {
        cls.motion = parse_enum<Motion>(x, cctx + ".motion", {{"translate", Motion::translate}, {"scale", Motion::scale}});
      });
      opt(c, "direction", [&](const Json& x) {
        cls.direction =
            parse_enum<Direction>(x, cctx + ".direction", {{"forward", Direction::forward}, {"reverse", Direction::reverse}});
      });
      s.classes.push_back(cls);
    }
  });
  opt(j, "samples_per_class", [&](const Json& v) { s.samples_per_class = as_uint(v, ctx + ".samples_per_class"); });
  opt(j, "noise_std", [&](const Json& v) { s.noise_std = as_double(v, ctx + ".noise_std"); });
  opt(j, "seed", [&](const Json& v) { s.seed = as_uint(v, ctx + ".seed"); });
  opt(j, "min_size", [&](const Json& v) { s.min_size = as_uint(v, ctx + ".min_size"); });
  opt(j, "max_size", [&](const Json& v) { s.max_size = as_uint(v, ctx + ".max_size"); });
  s.validate();
  return s;
}

Json to_json(const ArchChannelSpec& s) {
  Json ins = Json::array();
  for (const HfInsertion& i : s.insertions) ins.push_back({{"channels", i.channels}, {"height", i.height}, {"width", i.width}});
  return Json{{"name", s.name},
              {"baseline_params", s.baseline_params ? Json(*s.baseline_params) : Json(nullptr)},
              {"baseline_flops", s.baseline_flops ? Json(*s.baseline_flops) : Json(nullptr)},
              {"frames", s.frames},
              {"hf_variant", to_string(s.variant)},
              {"insertions", ins}};
}

ArchChannelSpec arch_spec_from_json(const Json& j) {
  const std::string ctx = "arch spec";
  check_object(j, ctx, {"name", "baseline_params", "baseline_flops", "frames", "hf_variant", "insertions"});
  ArchChannelSpec s;
  opt(j, "name", [&](const Json& v) { s.name = as_string(v, ctx + ".name"); });
  opt(j, "baseline_params", [&](const Json& v) {
    if (!v.is_null()) s.baseline_params = as_uint(v, ctx + ".baseline_params");
  });
  opt(j, "baseline_flops", [&](const Json& v) {
    if (!v.is_null()) s.baseline_flops = as_uint(v, ctx + ".baseline_flops");
  });
  opt(j, "frames", [&](const Json& v) { s.frames = as_uint(v, ctx + ".frames"); });
  opt(j, "hf_variant", [&](const Json& v) {
    s.variant = parse_enum<HfVariant>(v, ctx + ".hf_variant",
                                      {{"conservative", HfVariant::conservative}, {"nonconservative", HfVariant::nonconservative}});
  });
  opt(j, "insertions", [&](const Json& v) {
    if (!v.is_array()) throw ConfigError(ctx + ".insertions: expected an array");
    for (const Json& e : v) {
      const std::string ictx = ctx + ".insertions[" + std::to_string(s.insertions.size()) + "]";
      check_object(e, ictx, {"channels", "height", "width"});
      HfInsertion in;
      opt(e, "channels", [&](const Json& x) { in.channels = as_uint(x, ictx + ".channels"); });
      opt(e, "height", [&](const Json& x) { in.height = as_uint(x, ictx + ".height"); });
      opt(e, "width", [&](const Json& x) { in.width = as_uint(x, ictx + ".width"); });
      s.insertions.push_back(in);
    }
  });
  s.validate();
  return s;
}

Json to_json(const RunConfig& c) {
  Json j{{"model", to_json(c.model)}, {"train", to_json(c.train)}};
  j["train_data"] = c.train_data ? Json(*c.train_data) : Json(nullptr);
  j["val_data"] = c.val_data ? Json(*c.val_data) : Json(nullptr);
  j["out_dir"] = c.out_dir ? Json(*c.out_dir) : Json(nullptr);
  return j;
}

RunConfig run_config_from_json(const Json& j, const std::string& base_dir) {
  const std::string ctx = "run config";
  check_object(j, ctx, {"model", "train", "train_data", "val_data", "out_dir"});
  auto section = [&](const char* key) -> Json {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(ctx + ": missing '" + key + "'");
    if (it->is_string()) return read_json_file(resolve(it->get<std::string>(), base_dir));
    return *it;
  };
  RunConfig c;
  c.model = model_config_from_json(section("model"));
  c.train = train_config_from_json(section("train"));
  auto path = [&](const char* key, std::optional<std::string>& dst) {
    opt(j, key, [&](const Json& v) {
      if (!v.is_null()) dst = resolve(as_string(v, ctx + "." + key), base_dir);
    });
  };
  path("train_data", c.train_data);
  path("val_data", c.val_data);
  path("out_dir", c.out_dir);
  return c;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path + "' at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to '" + path + "'");
}

RunConfig load_run_config(const std::string& path) {
  const Json j = read_json_file(path);
  return run_config_from_json(j, fs::path(path).parent_path().string());
}

}  // namespace hfnet
