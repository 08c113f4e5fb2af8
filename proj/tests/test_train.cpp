#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hfnet/config_io.hpp"
#include "hfnet/train.hpp"
#include "support.hpp"

using namespace hfnet;
using testing::uniform;
namespace fs = std::filesystem;

namespace {

TrainConfig step_schedule() {
  TrainConfig c;
  c.epochs = 60;
  c.base_lr = 0.001;
  c.lr_milestones = {25, 40};
  return c;
}

ParamStore<double> one_param(double value) {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>(Dims{1}, value));
  return ps;
}

// 16x16, T=4, 8 classes, small enough to train in well under a second per epoch.
DatasetSpec tiny_spec(std::size_t per_class, std::uint64_t seed) {
  DatasetSpec s = DatasetSpec::default_spec();
  s.frames_per_clip = 4;
  s.height = s.width = 16;
  s.min_size = 3;
  s.max_size = 4;
  s.samples_per_class = per_class;
  s.seed = seed;
  return s;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.in_channels = 1;
  mc.height = mc.width = 16;
  mc.frames_per_clip = 4;
  mc.blocks = {{4, true, PoolAfter::max2}, {6, true, PoolAfter::none}};
  mc.hf_positions = {1, 2};
  mc.hf_variant = HfVariant::conservative;
  mc.num_classes = 8;
  return mc;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 10;
  c.base_lr = 0.05;
  c.lr_milestones = {};
  c.seed = 3;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hfnet_test_train_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("learning rate schedule") {
  const TrainConfig c = step_schedule();
  CHECK(lr_at(c, 10) == 0.001);
  CHECK(lr_at(c, 30) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at(c, 45) == doctest::Approx(0.00001).epsilon(1e-12));
  // Decay applies after the milestone epoch completes.
  CHECK(lr_at(c, 25) == 0.001);
  CHECK(lr_at(c, 26) == doctest::Approx(0.0001).epsilon(1e-12));
  CHECK(lr_at(c, 1) == c.base_lr);
  for (std::size_t e = 2; e <= 60; ++e) CHECK(lr_at(c, e) <= lr_at(c, e - 1));
  CHECK_THROWS_AS(lr_at(c, 0), ParameterError);
}

TEST_CASE("train config validation") {
  TrainConfig c = step_schedule();
  CHECK_NOTHROW(c.validate());
  c.lr_milestones = {40, 25};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lr_milestones = {25, 60};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = step_schedule();
  c.lr_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lr_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = step_schedule();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = step_schedule();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("sgd step") {
  SUBCASE("vanilla") {
    auto ps = one_param(1.0);
    auto st = SgdState<double>::zeros_like(ps);
    sgd_step(ps, st, {Tensor<double>(Dims{1}, 0.5)}, 0.1, 0.0, 0.0);
    CHECK(ps.get("w")[0] == doctest::Approx(0.95).epsilon(1e-15));
  }
  SUBCASE("zero gradient with momentum") {
    auto ps = one_param(1.0);
    auto st = SgdState<double>::zeros_like(ps);
    sgd_step(ps, st, {Tensor<double>(Dims{1}, 0.0)}, 0.1, 0.9, 0.0);
    CHECK(ps.get("w")[0] == 1.0);
  }
  SUBCASE("two momentum steps") {
    const double g = 0.3, eta = 0.2;
    auto ps = one_param(2.0);
    auto st = SgdState<double>::zeros_like(ps);
    sgd_step(ps, st, {Tensor<double>(Dims{1}, g)}, eta, 0.9, 0.0);
    CHECK(2.0 - ps.get("w")[0] == doctest::Approx(eta * g).epsilon(1e-14));
    const double after_one = ps.get("w")[0];
    sgd_step(ps, st, {Tensor<double>(Dims{1}, g)}, eta, 0.9, 0.0);
    CHECK(after_one - ps.get("w")[0] == doctest::Approx(eta * 1.9 * g).epsilon(1e-14));
  }
  SUBCASE("weight decay joins the velocity") {
    auto ps = one_param(2.0);
    auto st = SgdState<double>::zeros_like(ps);
    sgd_step(ps, st, {Tensor<double>(Dims{1}, 0.0)}, 0.5, 0.0, 0.1);
    CHECK(ps.get("w")[0] == doctest::Approx(2.0 - 0.5 * 0.2).epsilon(1e-15));
  }
  SUBCASE("lr zero only moves the velocity") {
    auto ps = one_param(1.5);
    auto st = SgdState<double>::zeros_like(ps);
    sgd_step(ps, st, {Tensor<double>(Dims{1}, 0.7)}, 0.0, 0.9, 1e-4);
    CHECK(ps.get("w")[0] == 1.5);
    CHECK(st.velocity[0][0] == doctest::Approx(0.7 + 1e-4 * 1.5).epsilon(1e-15));
  }
  SUBCASE("non-finite gradient aborts before any write") {
    ParamStore<double> ps;
    ps.add("a", Tensor<double>(Dims{2}, 1.0));
    ps.add("stats", Tensor<double>(Dims{2}, 0.0), false);
    ps.add("b", Tensor<double>(Dims{2}, 1.0));
    auto st = SgdState<double>::zeros_like(ps);
    CHECK(st.velocity.size() == 2);
    Tensor<double> bad(Dims{2}, 0.5);
    bad[1] = std::numeric_limits<double>::quiet_NaN();
    const auto snapshot = ps;
    CHECK_THROWS_WITH_AS(sgd_step(ps, st, {Tensor<double>(Dims{2}, 0.5), bad}, 0.1, 0.9, 0.0), doctest::Contains("'b'"),
                         NumericError);
    CHECK(ps == snapshot);
  }
}

TEST_CASE("augmentation") {
  const auto clip = uniform<float>(Dims{4, 1, 16, 16}, 5, 0, 1);
  CHECK(augment(clip, *std::make_unique<Rng>(1), Mode::eval) == clip);
  CHECK(crop_resize(clip, 1.0, 0) == clip);
  for (int anchor = 0; anchor < 5; ++anchor) CHECK(crop_resize(clip, 1.0, anchor) == clip);

  // Identical frames stay identical: one transform per clip.
  Tensor<float> same(Dims{4, 1, 16, 16});
  const auto frame = uniform<float>(Dims{1, 1, 16, 16}, 6, 0, 1);
  for (std::size_t t = 0; t < 4; ++t) std::copy_n(frame.data().begin(), 256, same.data().begin() + t * 256);
  Rng rng(7);
  bool changed = false;
  for (int i = 0; i < 20; ++i) {
    const auto a = augment(same, rng, Mode::train);
    CHECK(a.dims() == same.dims());
    for (std::size_t t = 1; t < 4; ++t) CHECK(std::equal(a.data().begin(), a.data().begin() + 256, a.data().begin() + t * 256));
    changed |= !(a == same);
  }
  CHECK(changed);

  const Tensor<float> flat(Dims{4, 2, 16, 16}, 0.375f);
  for (double s : {0.875, 0.75})
    for (int anchor = 0; anchor < 5; ++anchor) CHECK(crop_resize(flat, s, anchor) == flat);
  CHECK(resize_bilinear(flat, 5, 9) == Tensor<float>(Dims{4, 2, 5, 9}, 0.375f));

  CHECK_THROWS_AS(augment(Tensor<float>(Dims{4, 1, 6, 6}), rng, Mode::train), DimensionError);
}

TEST_CASE("bilinear resize with half-pixel centres") {
  const Tensor<float> ramp(Dims{1, 2}, {0.0f, 1.0f});
  CHECK(resize_bilinear(ramp, 1, 4) == Tensor<float>(Dims{1, 4}, {0.0f, 0.25f, 0.75f, 1.0f}));
  const auto x = uniform<float>(Dims{3, 7, 5}, 8);
  CHECK(resize_bilinear(x, 7, 5) == x);
  // Halving a 4-wide row averages neighbouring pairs.
  const Tensor<float> row(Dims{1, 4}, {1.0f, 3.0f, 5.0f, 9.0f});
  CHECK(resize_bilinear(row, 1, 2) == Tensor<float>(Dims{1, 2}, {2.0f, 7.0f}));
}

TEST_CASE("scoring logits") {
  SUBCASE("constant prediction on balanced data") {
    std::vector<int> labels;
    for (int k = 1; k <= 8; ++k) labels.insert(labels.end(), 5, k);
    Tensor<float> logits(Dims{40, 8});
    for (std::size_t i = 0; i < 40; ++i) logits[i * 8 + 3] = 1.0f;
    const auto r = score_logits(logits, labels, 8);
    CHECK(r.top1 == 0.125);
    CHECK(r.per_class[3] == 1.0);
    CHECK(r.per_class[0] == 0.0);
  }
  SUBCASE("oracle logits") {
    const std::vector<int> labels{3, 1, 2, 2, 3};
    Tensor<float> logits(Dims{5, 3});
    for (std::size_t i = 0; i < 5; ++i) logits[i * 3 + labels[i] - 1] = 2.0f;
    const auto r = score_logits(logits, labels, 3);
    CHECK(r.top1 == 1.0);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) CHECK((r.confusion[a][b] != 0) == (a == b));
  }
  SUBCASE("ties go to the lowest index and accuracy is the trace share") {
    const auto logits = uniform<float>(Dims{30, 4}, 9);
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < 30; ++i) labels[i] = static_cast<int>(i % 4) + 1;
    auto tied = logits;
    tied[0] = tied[1] = tied[2] = tied[3] = 0.5f;
    const auto r = score_logits(tied, labels, 4);
    CHECK(r.confusion[0][0] >= 1);  // sample 0: true class 1, all-tied row predicts class 1
    std::size_t trace = 0, total = 0;
    for (std::size_t a = 0; a < 4; ++a) {
      trace += r.confusion[a][a];
      for (std::size_t b = 0; b < 4; ++b) total += r.confusion[a][b];
    }
    CHECK(total == 30);
    CHECK(r.top1 == static_cast<double>(trace) / 30.0);
  }
  SUBCASE("absent class") {
    const auto r = score_logits(Tensor<float>(Dims{2, 3}), std::vector<int>{1, 1}, 3);
    CHECK(r.class_counts[2] == 0);
    CHECK(r.per_class[2] == 0.0);
  }
  CHECK_THROWS_AS(score_logits(Tensor<float>(Dims{1, 3}), std::vector<int>{4}, 3), DataError);
  CHECK_THROWS_AS(score_logits(Tensor<float>(Dims{2, 3}), std::vector<int>{1}, 3), DimensionError);
}

TEST_CASE("evaluation ignores sample order") {
  const VideoDataset ds = generate(tiny_spec(4, 10));
  Rng init(11);
  const Model<float> m = build_model<float>(tiny_model(), init);
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 5, perm.end());
  const auto a = evaluate(m, ds, 7), b = evaluate(m, ds.subset(perm), 3);
  CHECK(a.top1 == b.top1);
  CHECK(a.confusion == b.confusion);
  auto wrong = tiny_model();
  wrong.num_classes = 4;
  Rng r2(1);
  CHECK_THROWS_AS(evaluate(build_model<float>(wrong, r2), ds), ConfigError);
}

TEST_CASE("training loop") {
  const VideoDataset train_ds = generate(tiny_spec(6, 20));  // 48 clips
  const VideoDataset val_ds = generate(tiny_spec(2, 21));
  Rng init(22);
  const Model<float> model = build_model<float>(tiny_model(), init);

  SUBCASE("one epoch takes ceil(N / batch) steps") {
    const auto r = train(model, train_ds, val_ds, tiny_train(1));
    CHECK(r.steps == 5);
    REQUIRE(r.metrics.size() == 1);
    CHECK(r.metrics[0].epoch == 1);
    CHECK(r.metrics[0].lr == 0.05);
    CHECK(r.metrics[0].epoch_seconds == 0.0);
    CHECK(std::isfinite(r.metrics[0].train_loss));
  }
  SUBCASE("lr zero leaves trainable parameters untouched") {
    auto cfg = tiny_train(2);
    cfg.base_lr = 0.0;
    const auto r = train(model, train_ds, val_ds, cfg);
    for (const auto& e : model.params.entries()) {
      CAPTURE(e.name);
      if (e.trainable) CHECK(r.final_model.params.get(e.name) == e.value);
    }
    // Validation accuracy cannot change either, so the earliest epoch is best.
    CHECK(r.best_epoch == 1);
    CHECK(r.metrics[0].val_acc == r.metrics[1].val_acc);
  }
  SUBCASE("identical runs write identical logs") {
    const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
    auto cfg = tiny_train(2);
    cfg.dropout_rate = 0.3;
    TrainOptions o1, o2;
    o1.out_dir = d1.string();
    o2.out_dir = d2.string();
    const auto r1 = train(model, train_ds, val_ds, cfg, o1);
    const auto r2 = train(model, train_ds, val_ds, cfg, o2);
    CHECK(r1.final_model.params == r2.final_model.params);
    CHECK(slurp(d1 / "metrics.jsonl") == slurp(d2 / "metrics.jsonl"));
    CHECK(slurp(d1 / "last.hfck") == slurp(d2 / "last.hfck"));
    CHECK(fs::exists(d1 / "best.hfck"));
    CHECK(std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(d1 / "metrics.jsonl")), {}, '\n') == 2);

    const Checkpoint best = load_checkpoint((d1 / "best.hfck").string());
    CHECK(best.epoch == r1.best_epoch);
    CHECK(best.val_acc == r1.best_val_acc);
    CHECK(best.model.config.dropout_rate == 0.3);
    CHECK(evaluate(best.model, val_ds).top1 == r1.best_val_acc);

    auto other = cfg;
    other.seed = 4;
    CHECK(!(train(model, train_ds, val_ds, other).final_model.params == r1.final_model.params));
    fs::remove_all(d1);
    fs::remove_all(d2);
  }
  SUBCASE("a non-finite loss aborts and keeps the last good parameters") {
    auto broken = model;
    broken.params.get("classifier.bias")[0] = std::numeric_limits<float>::infinity();
    const auto dir = scratch_dir("nan");
    TrainOptions o;
    o.out_dir = dir.string();
    CHECK_THROWS_WITH_AS(train(broken, train_ds, val_ds, tiny_train(1), o), doctest::Contains("loss"), NumericError);
    REQUIRE(fs::exists(dir / "last_good.hfck"));
    CHECK(load_checkpoint((dir / "last_good.hfck").string()).epoch == 0);
    fs::remove_all(dir);
  }
  SUBCASE("mismatched data") {
    CHECK_THROWS_AS(train(model, generate(DatasetSpec{[] {
                                                        auto s = tiny_spec(2, 1);
                                                        s.frames_per_clip = 5;
                                                        return s;
                                                      }()}),
                          val_ds, tiny_train(1)),
                    ConfigError);
  }
}

TEST_CASE("checkpoint container") {
  Rng init(30);
  Model<float> m = build_model<float>(tiny_model(), init);
  for (auto& e : m.params.entries()) e.value = uniform<float>(e.value.dims(), e.value.numel());
  const auto bytes = encode_checkpoint(m, 7, 0.625);
  CHECK(std::memcmp(bytes.data(), "HFCK", 4) == 0);
  const Checkpoint ck = decode_checkpoint(bytes);
  CHECK(ck.model.config == m.config);
  CHECK(ck.model.params == m.params);
  CHECK(ck.epoch == 7);
  CHECK(ck.val_acc == 0.625);
  CHECK(ck.payload_bytes == 4 * m.params.total_scalars());
  CHECK(encode_checkpoint(ck.model, ck.epoch, ck.val_acc) == bytes);

  SUBCASE("bad magic") {
    auto b = bytes;
    b[1] = 'X';
    try {
      decode_checkpoint(b);
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated") {
    auto b = bytes;
    b.resize(b.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
    b.resize(10);
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("header is not json") {
    auto b = bytes;
    b[12] = '#';
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
  SUBCASE("version") {
    auto b = bytes;
    b[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
  }
}

TEST_CASE("config json round trips") {
  const ModelConfig mc = tiny_model();
  CHECK(model_config_from_json(to_json(mc)) == mc);
  TrainConfig tc = step_schedule();
  tc.dropout_rate = 0.25;
  CHECK(train_config_from_json(to_json(tc)) == tc);
  const DatasetSpec ds = tiny_spec(3, 4);
  CHECK(dataset_spec_from_json(to_json(ds)) == ds);

  Json j = to_json(mc);
  j["hf_positon"] = Json::array({1});
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  j = to_json(mc);
  j["consensus"] = "max";
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
  j = to_json(tc);
  j["epochs"] = "ten";
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
}
