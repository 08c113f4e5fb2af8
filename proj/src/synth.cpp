#include "hfnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "binio.hpp"
#include "hfnet/ops.hpp"

namespace hfnet {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'V', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 7 * 4;

// Binary s x s stamp of the shape.
std::vector<std::uint8_t> stamp(Shape shape, std::size_t s) {
  std::vector<std::uint8_t> m(s * s, 1);
  if (shape == Shape::circle) {
    const double r = static_cast<double>(s) / 2.0;
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        const double dy = static_cast<double>(i) + 0.5 - r, dx = static_cast<double>(j) + 0.5 - r;
        m[i * s + j] = dx * dx + dy * dy <= r * r;
      }
    }
  }
  return m;
}

void draw(std::span<float> frame, std::size_t C, std::size_t H, std::size_t W, Shape shape, std::size_t size,
          std::size_t top, std::size_t left, float intensity) {
  const auto m = stamp(shape, size);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        if (m[i * size + j]) frame[(c * H + top + i) * W + left + j] = intensity;
      }
    }
  }
}

// One forward-direction clip [T*C*H*W] for the given shape and motion.
std::vector<float> render_forward(const DatasetSpec& spec, Shape shape, Motion motion, Rng& rng) {
  const std::size_t T = spec.frames_per_clip, C = spec.channels, H = spec.height, W = spec.width;
  const std::size_t frame = C * H * W;
  std::vector<float> clip(T * frame, 0.0f);
  const double steps = static_cast<double>(T - 1);

  if (motion == Motion::translate) {
    const std::size_t s = std::uniform_int_distribution<std::size_t>(spec.min_size, spec.max_size)(rng);
    const double v_max = std::min(2.5, static_cast<double>(W - s) / steps);
    const double v = std::uniform_real_distribution<double>(1.0, v_max)(rng);
    const double x_max = std::max(0.0, static_cast<double>(W - s) - steps * v);
    const double x0 = std::uniform_real_distribution<double>(0.0, x_max)(rng);
    const std::size_t top = std::uniform_int_distribution<std::size_t>(0, H - s)(rng);
    const float intensity = static_cast<float>(std::uniform_real_distribution<double>(0.5, 1.0)(rng));
    for (std::size_t t = 0; t < T; ++t) {
      auto left = static_cast<std::size_t>(std::floor(x0 + static_cast<double>(t) * v));
      left = std::min(left, W - s);
      draw(std::span<float>(clip).subspan(t * frame, frame), C, H, W, shape, s, top, left, intensity);
    }
  } else {
    const std::size_t lim = std::min(H, W) - 2;
    const std::size_t s0 = std::uniform_int_distribution<std::size_t>(2, spec.min_size)(rng);
    const std::size_t s1 = std::uniform_int_distribution<std::size_t>(s0 + T - 1, lim)(rng);
    const std::size_t cy = std::uniform_int_distribution<std::size_t>(s1 / 2, H - s1 + s1 / 2)(rng);
    const std::size_t cx = std::uniform_int_distribution<std::size_t>(s1 / 2, W - s1 + s1 / 2)(rng);
    const float intensity = static_cast<float>(std::uniform_real_distribution<double>(0.5, 1.0)(rng));
    for (std::size_t t = 0; t < T; ++t) {
      const auto s = s0 + static_cast<std::size_t>(std::lround(static_cast<double>(t) * static_cast<double>(s1 - s0) / steps));
      draw(std::span<float>(clip).subspan(t * frame, frame), C, H, W, shape, s, cy - s / 2, cx - s / 2, intensity);
    }
  }

  if (spec.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (float& p : clip) p = static_cast<float>(std::clamp(static_cast<double>(p) + noise(rng), 0.0, 1.0));
  }
  return clip;
}

}  // namespace

std::string to_string(Shape s) { return s == Shape::square ? "square" : "circle"; }
std::string to_string(Motion m) { return m == Motion::translate ? "translate" : "scale"; }
std::string to_string(Direction d) { return d == Direction::forward ? "forward" : "reverse"; }

DatasetSpec DatasetSpec::default_spec() {
  DatasetSpec s;
  for (Shape shape : {Shape::square, Shape::circle}) {
    for (Motion motion : {Motion::translate, Motion::scale}) {
      s.classes.push_back({shape, motion, Direction::forward});
      s.classes.push_back({shape, motion, Direction::reverse});
    }
  }
  return s;
}

void DatasetSpec::validate() const {
  if (frames_per_clip < 2) throw ConfigError("dataset: frames_per_clip must be >= 2");
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("dataset: frame dims must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("dataset: noise_std must be >= 0");
  if (samples_per_class < 1) throw ConfigError("dataset: samples_per_class must be >= 1");
  if (classes.empty()) throw ConfigError("dataset: no classes");
  if (classes.size() > 65535) throw ConfigError("dataset: too many classes for u16 labels");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (classes[i] == classes[j]) throw ConfigError("dataset: class " + std::to_string(i + 1) + " duplicates class " + std::to_string(j + 1));
    }
    ClassSpec partner = classes[i];
    partner.direction = partner.direction == Direction::forward ? Direction::reverse : Direction::forward;
    if (std::find(classes.begin(), classes.end(), partner) == classes.end()) {
      throw ConfigError("dataset: class " + std::to_string(i + 1) + " (" + to_string(classes[i].shape) + "/" +
                        to_string(classes[i].motion) + "/" + to_string(classes[i].direction) + ") has no reversal partner");
    }
  }
  if (min_size < 2 || min_size > max_size) throw ConfigError("dataset: need 2 <= min_size <= max_size");
  const std::size_t side = std::min(height, width);
  const std::size_t T = frames_per_clip;
  const bool translate = std::any_of(classes.begin(), classes.end(), [](const ClassSpec& c) { return c.motion == Motion::translate; });
  const bool scale = std::any_of(classes.begin(), classes.end(), [](const ClassSpec& c) { return c.motion == Motion::scale; });
  if (translate && (max_size > height || max_size > width || width - max_size < T - 1)) {
    throw ConfigError("dataset: shape of size " + std::to_string(max_size) + " too large for a " + std::to_string(height) +
                      "x" + std::to_string(width) + " frame moving one pixel per frame over " + std::to_string(T) + " frames");
  }
  if (scale && (side < 2 || min_size + T - 1 > side - 2)) {
    throw ConfigError("dataset: scaling shape cannot grow by one pixel per frame over " + std::to_string(T) +
                      " frames inside a " + std::to_string(height) + "x" + std::to_string(width) + " frame");
  }
}

Tensor<float> VideoDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t n = clip_numel();
  std::vector<float> out(indices.size() * n);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw UsageError("dataset: sample index " + std::to_string(indices[k]) + " out of range");
    std::copy_n(clips.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * n), n, out.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return Tensor<float>(Dims{indices.size() * frames_per_clip, channels(), height(), width()}, std::move(out));
}

std::vector<int> VideoDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

VideoDataset VideoDataset::subset(std::span<const std::size_t> indices) const {
  VideoDataset out;
  out.clips = gather(indices);
  out.labels = gather_labels(indices);
  out.frames_per_clip = frames_per_clip;
  out.num_classes = num_classes;
  out.spec = spec;
  return out;
}

VideoDataset generate(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t T = spec.frames_per_clip, frame = spec.channels * spec.height * spec.width;
  const std::size_t N = spec.classes.size() * spec.samples_per_class;
  Rng rng(spec.seed);
  std::vector<float> pixels;
  pixels.reserve(N * T * frame);
  VideoDataset ds;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    const ClassSpec& cls = spec.classes[k];
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      std::vector<float> clip = render_forward(spec, cls.shape, cls.motion, rng);
      if (cls.direction == Direction::reverse) {
        for (std::size_t a = 0, b = T - 1; a < b; ++a, --b) {
          std::swap_ranges(clip.begin() + static_cast<std::ptrdiff_t>(a * frame),
                           clip.begin() + static_cast<std::ptrdiff_t>((a + 1) * frame),
                           clip.begin() + static_cast<std::ptrdiff_t>(b * frame));
        }
      }
      pixels.insert(pixels.end(), clip.begin(), clip.end());
      ds.labels.push_back(static_cast<int>(k + 1));
    }
  }
  ds.clips = Tensor<float>(Dims{N * T, spec.channels, spec.height, spec.width}, std::move(pixels));
  ds.frames_per_clip = T;
  ds.num_classes = spec.classes.size();
  ds.spec = spec;
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const VideoDataset& ds) {
  if (ds.clips.rank() != 4 || ds.frames_per_clip == 0 || ds.clips.dim(0) != ds.size() * ds.frames_per_clip) {
    throw DataError("dataset: clips " + to_string(ds.clips.dims()) + " inconsistent with " + std::to_string(ds.size()) +
                    " labels of " + std::to_string(ds.frames_per_clip) + " frames");
  }
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  for (std::size_t v : {ds.size(), ds.frames_per_clip, ds.channels(), ds.height(), ds.width(), ds.num_classes}) {
    if (v > 0xffffffffu) throw DataError("dataset: dimension exceeds u32");
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (int l : ds.labels) {
    if (l < 1 || static_cast<std::size_t>(l) > ds.num_classes) throw DataError("dataset: label " + std::to_string(l) + " out of range");
    w.u16(static_cast<std::uint16_t>(l));
  }
  w.f32_array(ds.clips.data());
  return w.buffer();
}

void save_dataset(const VideoDataset& ds, const std::string& path) {
  binio::write_file(path, encode_dataset(ds));
}

VideoDataset decode_dataset(std::vector<std::uint8_t> bytes) {
  binio::Reader r(std::move(bytes));
  if (r.text(4, "magic") != std::string(kMagic, 4)) throw FormatError("dataset: bad magic, expected \"HFVD\"", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("dataset: unsupported version " + std::to_string(version), 4);
  std::uint64_t dims[6];
  const char* names[6] = {"N", "T", "C", "H", "W", "num_classes"};
  for (int i = 0; i < 6; ++i) {
    dims[i] = r.u32(names[i]);
    if (dims[i] == 0) throw FormatError(std::string("dataset: header field ") + names[i] + " is zero", r.offset() - 4);
  }
  const std::uint64_t N = dims[0], T = dims[1], C = dims[2], H = dims[3], W = dims[4], K = dims[5];
  const std::uint64_t pixels = N * T * C * H * W;
  const std::uint64_t expected = kHeaderBytes + 2 * N + 4 * pixels;
  if (r.size() < expected) {
    throw FormatError("dataset: truncated payload, header implies " + std::to_string(expected) + " bytes but file has " +
                          std::to_string(r.size()),
                      r.size());
  }
  if (r.size() > expected) {
    throw FormatError("dataset: " + std::to_string(r.size() - expected) + " trailing bytes after payload", expected);
  }
  VideoDataset ds;
  ds.frames_per_clip = T;
  ds.num_classes = K;
  ds.labels.reserve(N);
  for (std::uint64_t i = 0; i < N; ++i) {
    const std::size_t at = r.offset();
    const std::uint16_t l = r.u16("label");
    if (l < 1 || l > K) throw FormatError("dataset: label " + std::to_string(l) + " outside 1.." + std::to_string(K), at);
    ds.labels.push_back(l);
  }
  std::vector<float> px(pixels);
  r.f32_array(px, "pixels");
  ds.clips = Tensor<float>(Dims{N * T, C, H, W}, std::move(px));
  return ds;
}

VideoDataset load_dataset(const std::string& path) { return decode_dataset(binio::read_file(path)); }

std::pair<VideoDataset, VideoDataset> split(const VideoDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("split: fraction must lie in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) throw SplitError("split: class " + std::to_string(label) + " has " + std::to_string(idx.size()) + " sample(s), need >= 2");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {ds.subset(train), ds.subset(val)};
}

}  // namespace hfnet
