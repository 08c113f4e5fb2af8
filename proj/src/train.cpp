#include "hfnet/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "binio.hpp"
#include "hfnet/config_io.hpp"

namespace hfnet {

namespace {

constexpr char kCkptMagic[4] = {'H', 'F', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

constexpr double kScales[] = {1.0, 0.875, 0.75};
constexpr int kAnchors = 5;

Tensor<float> clip_of(const VideoDataset& ds, std::size_t i) {
  const std::size_t n = ds.clip_numel();
  std::vector<float> v(ds.clips.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                       ds.clips.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor<float>(Dims{ds.frames_per_clip, ds.channels(), ds.height(), ds.width()}, std::move(v));
}

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

}  // namespace

std::string to_string(Augmentation a) { return a == Augmentation::none ? "none" : "crop_scale"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("train: base_lr must be finite and >= 0");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    if (lr_milestones[i] < 1 || lr_milestones[i] >= epochs) {
      throw ConfigError("train: milestone " + std::to_string(lr_milestones[i]) + " must lie in [1, epochs)");
    }
    if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1]) throw ConfigError("train: lr_milestones must be strictly increasing");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must lie in (0,1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train: weight_decay must be finite and >= 0");
  if (dropout_rate && !(*dropout_rate >= 0.0 && *dropout_rate < 1.0)) throw ConfigError("train: dropout_rate must lie in [0,1)");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  if (epoch < 1) throw ParameterError("lr_at: epochs are 1-based");
  double lr = config.base_lr;
  for (std::size_t m : config.lr_milestones) {
    if (m < epoch) lr *= config.lr_decay;
  }
  return lr;
}

template <typename T>
SgdState<T> SgdState<T>::zeros_like(const ParamStore<T>& params) {
  SgdState s;
  for (const auto& e : params.entries()) {
    if (e.trainable) s.velocity.emplace_back(e.value.dims());
  }
  return s;
}

template <typename T>
void sgd_step(ParamStore<T>& params, SgdState<T>& state, const std::vector<Tensor<T>>& grads, T lr, T momentum,
              T weight_decay) {
  std::vector<ParamEntry<T>*> trainable;
  for (auto& e : params.entries()) {
    if (e.trainable) trainable.push_back(&e);
  }
  if (grads.size() != trainable.size() || state.velocity.size() != trainable.size()) {
    throw UsageError("sgd_step: " + std::to_string(trainable.size()) + " trainable tensors, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.velocity.size()) + " buffers");
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto& e = *trainable[i];
    if (grads[i].dims() != e.value.dims() || state.velocity[i].dims() != e.value.dims()) {
      throw DimensionError("sgd_step: shape mismatch for '" + e.name + "'");
    }
    if (!grads[i].all_finite()) throw NumericError("sgd_step: non-finite gradient in parameter '" + e.name + "'");
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    auto p = trainable[i]->value.data();
    auto v = state.velocity[i].data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k] + weight_decay * p[k];
      p[k] = p[k] - lr * v[k];
    }
  }
}

Tensor<float> resize_bilinear(const Tensor<float>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() < 2 || out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: bad dims " + to_string(x.dims()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  Dims od = x.dims();
  od[od.size() - 2] = out_h;
  od[od.size() - 1] = out_w;
  Tensor<float> out(od);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t outn) {
    std::vector<Tap> t(outn);
    const double ratio = static_cast<double>(in) / static_cast<double>(outn);
    for (std::size_t i = 0; i < outn; ++i) {
      const double s = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      t[i] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data().data() + p * h * w;
    float* dst = out.data().data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      for (std::size_t j = 0; j < out_w; ++j) {
        const double a = src[ty[i].lo * w + tx[j].lo], b = src[ty[i].lo * w + tx[j].hi];
        const double c = src[ty[i].hi * w + tx[j].lo], d = src[ty[i].hi * w + tx[j].hi];
        const double top = a + tx[j].frac * (b - a);
        const double bot = c + tx[j].frac * (d - c);
        dst[i * out_w + j] = static_cast<float>(top + ty[i].frac * (bot - top));
      }
    }
  }
  return out;
}

Tensor<float> crop_resize(const Tensor<float>& clip, double scale, int anchor) {
  if (clip.rank() != 4) throw DimensionError("crop_resize: expected [T,C,H,W], got " + to_string(clip.dims()));
  if (!(scale > 0.0 && scale <= 1.0) || anchor < 0 || anchor >= kAnchors) throw ParameterError("crop_resize: bad scale/anchor");
  const std::size_t T = clip.dim(0), C = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(H) * scale)));
  const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(W) * scale)));
  std::size_t top = (H - ch) / 2, left = (W - cw) / 2;
  if (anchor == 1 || anchor == 2) top = 0;
  if (anchor == 3 || anchor == 4) top = H - ch;
  if (anchor == 1 || anchor == 3) left = 0;
  if (anchor == 2 || anchor == 4) left = W - cw;
  if (ch == H && cw == W) return clip;
  Tensor<float> crop(Dims{T, C, ch, cw});
  for (std::size_t p = 0; p < T * C; ++p) {
    for (std::size_t i = 0; i < ch; ++i) {
      for (std::size_t j = 0; j < cw; ++j) crop[(p * ch + i) * cw + j] = clip[(p * H + top + i) * W + left + j];
    }
  }
  return resize_bilinear(crop, H, W);
}

Tensor<float> augment(const Tensor<float>& clip, Rng& rng, Mode mode) {
  if (clip.rank() != 4) throw DimensionError("augment: expected [T,C,H,W], got " + to_string(clip.dims()));
  if (clip.dim(2) < 8 || clip.dim(3) < 8) throw DimensionError("augment: frames must be at least 8x8");
  if (mode == Mode::eval) return clip;
  const auto s = std::uniform_int_distribution<int>(0, 2)(rng);
  const auto a = std::uniform_int_distribution<int>(0, kAnchors - 1)(rng);
  return crop_resize(clip, kScales[s], a);
}

EvalReport score_logits(const Tensor<float>& logits, std::span<const int> labels, std::size_t num_classes) {
  if (logits.rank() != 2 || logits.dim(1) != num_classes || logits.dim(0) != labels.size()) {
    throw DimensionError("score_logits: logits " + to_string(logits.dims()) + " vs " + std::to_string(labels.size()) +
                         " labels over " + std::to_string(num_classes) + " classes");
  }
  EvalReport r;
  r.samples = labels.size();
  r.class_counts.assign(num_classes, 0);
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > num_classes) {
      throw DataError("score_logits: label " + std::to_string(labels[i]) + " outside 1.." + std::to_string(num_classes));
    }
    const std::size_t truth = static_cast<std::size_t>(labels[i]) - 1;
    const std::size_t pred = argmax_row(logits.data().subspan(i * num_classes, num_classes));
    ++r.confusion[truth][pred];
    ++r.class_counts[truth];
    correct += pred == truth;
  }
  r.top1 = r.samples ? static_cast<double>(correct) / static_cast<double>(r.samples) : 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    r.per_class.push_back(r.class_counts[k] ? static_cast<double>(r.confusion[k][k]) / static_cast<double>(r.class_counts[k]) : 0.0);
  }
  return r;
}

EvalReport evaluate(const Model<float>& model_in, const VideoDataset& data, std::size_t batch_size, int threads) {
  const ModelConfig& cfg = model_in.config;
  if (data.frames_per_clip != cfg.frames_per_clip || data.channels() != cfg.in_channels || data.height() != cfg.height ||
      data.width() != cfg.width) {
    throw ConfigError("evaluate: dataset clips [T=" + std::to_string(data.frames_per_clip) + ", " +
                      std::to_string(data.channels()) + "x" + std::to_string(data.height()) + "x" +
                      std::to_string(data.width()) + "] do not match the model input");
  }
  if (data.num_classes != cfg.num_classes) {
    throw ConfigError("evaluate: dataset has " + std::to_string(data.num_classes) + " classes, model " +
                      std::to_string(cfg.num_classes));
  }
  if (batch_size < 1) throw ParameterError("evaluate: batch_size must be >= 1");
  Model<float> model = model_in;  // eval mode never writes, but forward takes a mutable model
  Rng unused(0);
  std::vector<float> all;
  all.reserve(data.size() * cfg.num_classes);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    Tape<float> tape(TapeOptions{.threads = threads});
    auto trace = forward(tape, model, tape.constant(data.gather(idx)), Mode::eval, unused, false);
    const auto v = trace.logits.value().data();
    all.insert(all.end(), v.begin(), v.end());
  }
  return score_logits(Tensor<float>(Dims{data.size(), cfg.num_classes}, std::move(all)), data.labels, cfg.num_classes);
}

std::string to_json_line(const EpochMetrics& m) {
  Json j{{"epoch", m.epoch},
         {"lr", m.lr},
         {"train_loss", m.train_loss},
         {"train_acc", m.train_acc},
         {"val_acc", m.val_acc},
         {"epoch_seconds", m.epoch_seconds}};
  return j.dump();
}

TrainResult train(Model<float> model, const VideoDataset& train_data, const VideoDataset& val_data,
                  const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  model.config.validate();
  if (config.dropout_rate) model.config.dropout_rate = *config.dropout_rate;
  const ModelConfig& mc = model.config;
  for (const VideoDataset* ds : {&train_data, &val_data}) {
    if (ds->size() == 0) throw DataError("train: empty dataset");
    if (ds->frames_per_clip != mc.frames_per_clip || ds->channels() != mc.in_channels || ds->height() != mc.height ||
        ds->width() != mc.width || ds->num_classes != mc.num_classes) {
      throw ConfigError("train: dataset dims or class count do not match the model config");
    }
  }
  const bool augmenting = config.augmentation == Augmentation::crop_scale;
  if (augmenting && (mc.height < 8 || mc.width < 8)) throw ConfigError("train: crop_scale augmentation needs frames >= 8x8");

  namespace fs = std::filesystem;
  std::ofstream metrics_file;
  auto out_path = [&](const char* name) { return (fs::path(*options.out_dir) / name).string(); };
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    metrics_file.open(out_path("metrics.jsonl"), std::ios::trunc);
    if (!metrics_file) throw IoError("cannot write '" + out_path("metrics.jsonl") + "'");
  }

  Rng rng(config.seed);
  SgdState<float> sgd = SgdState<float>::zeros_like(model.params);
  TrainResult result{model, model, 0, -1.0, {}, 0};
  const std::size_t N = train_data.size();
  std::vector<std::size_t> order(N);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(config, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, N - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      Tensor<float> clips;
      if (augmenting) {
        std::vector<float> buf;
        buf.reserve(n * train_data.clip_numel());
        for (std::size_t i : idx) {
          const auto a = augment(clip_of(train_data, i), rng, Mode::train);
          buf.insert(buf.end(), a.data().begin(), a.data().end());
        }
        clips = Tensor<float>(Dims{n * mc.frames_per_clip, mc.in_channels, mc.height, mc.width}, std::move(buf));
      } else {
        clips = train_data.gather(idx);
      }
      const std::vector<int> labels = train_data.gather_labels(idx);
      const ParamStore<float> before = model.params;
      try {
        Tape<float> tape(TapeOptions{.threads = config.threads});
        auto trace = forward(tape, model, tape.constant(std::move(clips)), Mode::train, rng);
        auto loss = softmax_cross_entropy(trace.logits, std::span<const int>(labels));
        const float lv = loss.value()[0];
        if (!std::isfinite(lv)) {
          throw NumericError("train: loss is " + std::to_string(lv) + " at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(result.steps + 1));
        }
        tape.backward(loss);
        std::vector<Tensor<float>> grads;
        grads.reserve(trace.bound_params.size());
        for (const auto& [name, var] : trace.bound_params) grads.push_back(tape.grad(var));
        sgd_step(model.params, sgd, grads, static_cast<float>(lr), static_cast<float>(config.momentum),
                 static_cast<float>(config.weight_decay));
        loss_sum += static_cast<double>(lv) * static_cast<double>(n);
        const auto sc = score_logits(trace.logits.value(), labels, mc.num_classes);
        for (std::size_t k = 0; k < mc.num_classes; ++k) correct += sc.confusion[k][k];
      } catch (const NumericError&) {
        if (options.out_dir) save_checkpoint(out_path("last_good.hfck"), Model<float>{mc, before}, epoch - 1, result.best_val_acc);
        throw;
      }
      ++result.steps;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(N);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(N);
    m.val_acc = evaluate(model, val_data, 64, config.threads).top1;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.epoch_seconds = config.record_timing ? secs : 0.0;
    result.metrics.push_back(m);
    const bool improved = m.val_acc > result.best_val_acc;
    if (improved) {
      result.best_val_acc = m.val_acc;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    if (options.out_dir) {
      metrics_file << to_json_line(m) << '\n' << std::flush;
      save_checkpoint(out_path("last.hfck"), model, epoch, m.val_acc);
      if (improved) save_checkpoint(out_path("best.hfck"), model, epoch, m.val_acc);
    }
    if (options.log) {
      *options.log << "epoch " << epoch << "/" << config.epochs << " lr " << lr << " loss " << m.train_loss << " train_acc "
                   << m.train_acc << " val_acc " << m.val_acc << " (" << secs << " s)\n"
                   << std::flush;
    }
    if (options.on_epoch) options.on_epoch(m);
  }
  result.final_model = std::move(model);
  return result;
}

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, std::size_t epoch, double val_acc) {
  const std::string header = Json{{"model", to_json(model.config)}, {"epoch", epoch}, {"val_acc", val_acc}}.dump();
  binio::Writer w;
  w.bytes(kCkptMagic, 4);
  w.u32(kCkptVersion);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.text(header);
  const auto& entries = model.params.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff || e.value.rank() > 0xff) throw DataError("checkpoint: tensor '" + e.name + "' not encodable");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.text(e.name);
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.dims()) w.u32(static_cast<std::uint32_t>(d));
    w.f32_array(e.value.data());
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes));
  if (r.text(4, "magic") != std::string(kCkptMagic, 4)) throw FormatError("checkpoint: bad magic, expected \"HFCK\"", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCkptVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  const std::uint32_t header_len = r.u32("header length");
  const std::size_t header_at = r.offset();
  const std::string header = r.text(header_len, "header");
  Checkpoint ck;
  try {
    const Json j = Json::parse(header);
    if (!j.is_object() || !j.contains("model") || !j.contains("epoch") || !j.contains("val_acc")) {
      throw FormatError("checkpoint: header lacks model/epoch/val_acc", header_at);
    }
    Rng skeleton_rng(0);
    ck.model = build_model<float>(model_config_from_json(j.at("model")), skeleton_rng);
    ck.epoch = j.at("epoch").get<std::size_t>();
    ck.val_acc = j.at("val_acc").get<double>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: unreadable header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid model config in header: ") + e.what(), header_at);
  }
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("tensor count");
  auto& entries = ck.model.params.entries();
  if (count != entries.size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, model config implies " + std::to_string(entries.size()), count_at);
  }
  std::set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t at = r.offset();
    const std::string name = r.text(r.u16("name length"), "tensor name");
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
    if (it == entries.end() || !seen.insert(name).second) throw FormatError("checkpoint: unexpected tensor '" + name + "'", at);
    const std::uint8_t rank = r.u8("rank");
    Dims dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    if (dims != it->value.dims()) {
      throw FormatError("checkpoint: tensor '" + name + "' has dims " + to_string(dims) + ", expected " + to_string(it->value.dims()), at);
    }
    r.f32_array(it->value.data(), "tensor '" + name + "' payload");
    ck.payload_bytes += 4 * it->value.numel();
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  return ck;
}

void save_checkpoint(const std::string& path, const Model<float>& model, std::size_t epoch, double val_acc) {
  binio::write_file(path, encode_checkpoint(model, epoch, val_acc));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(binio::read_file(path)); }

template struct SgdState<float>;
template struct SgdState<double>;
template void sgd_step(ParamStore<float>&, SgdState<float>&, const std::vector<Tensor<float>>&, float, float, float);
template void sgd_step(ParamStore<double>&, SgdState<double>&, const std::vector<Tensor<double>>&, double, double, double);

}  // namespace hfnet
