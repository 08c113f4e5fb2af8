#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "hfnet/synth.hpp"

using namespace hfnet;

namespace {

DatasetSpec small_spec(std::vector<ClassSpec> classes, std::size_t per_class, double noise, std::uint64_t seed) {
  DatasetSpec s;
  s.classes = std::move(classes);
  s.samples_per_class = per_class;
  s.noise_std = noise;
  s.seed = seed;
  return s;
}

constexpr ClassSpec kSqTrF{Shape::square, Motion::translate, Direction::forward};
constexpr ClassSpec kSqTrR{Shape::square, Motion::translate, Direction::reverse};
constexpr ClassSpec kCiScF{Shape::circle, Motion::scale, Direction::forward};
constexpr ClassSpec kCiScR{Shape::circle, Motion::scale, Direction::reverse};

std::span<const float> frame_of(const VideoDataset& ds, std::size_t clip, std::size_t t) {
  const std::size_t f = ds.channels() * ds.height() * ds.width();
  return ds.clips.data().subspan((clip * ds.frames_per_clip + t) * f, f);
}

// Dataset whose clip i is filled with the value i, for tracking samples through splits.
VideoDataset tagged(std::size_t per_class, std::size_t classes) {
  VideoDataset ds;
  ds.frames_per_clip = 2;
  ds.num_classes = classes;
  const std::size_t N = per_class * classes;
  std::vector<float> px;
  for (std::size_t i = 0; i < N; ++i) {
    ds.labels.push_back(static_cast<int>(i % classes) + 1);
    px.insert(px.end(), 2 * 4, static_cast<float>(i));
  }
  ds.clips = Tensor<float>(Dims{2 * N, 1, 2, 2}, std::move(px));
  return ds;
}

std::vector<std::size_t> tags(const VideoDataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(static_cast<std::size_t>(frame_of(ds, i, 0)[0]));
  return out;
}

}  // namespace

TEST_CASE("default spec") {
  const DatasetSpec s = DatasetSpec::default_spec();
  CHECK(s.classes.size() == 8);
  CHECK(s.frames_per_clip == 8);
  CHECK(s.height == 32);
  CHECK(s.width == 32);
  CHECK(s.noise_std == 0.05);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(small_spec({kSqTrF}, 2, 0.0, 1).validate(), ConfigError);  // no reversal partner
  CHECK_THROWS_AS(small_spec({kSqTrF, kSqTrR, kSqTrF}, 2, 0.0, 1).validate(), ConfigError);
  auto s = small_spec({kSqTrF, kSqTrR}, 2, 0.0, 1);
  s.frames_per_clip = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec({kSqTrF, kSqTrR}, 2, -0.1, 1);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec({kSqTrF, kSqTrR}, 2, 0.0, 1);
  s.width = s.height = 10;
  s.max_size = 8;  // 8-wide square cannot move 7 pixels in a 10-wide frame
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec({kCiScF, kCiScR}, 2, 0.0, 1);
  s.width = s.height = 12;
  CHECK_THROWS_AS(generate(s), ConfigError);
}

TEST_CASE("noiseless translation keeps mass and moves right") {
  const VideoDataset ds = generate(small_spec({kSqTrF, kSqTrR}, 20, 0.0, 3));
  for (std::size_t n = 0; n < 20; ++n) {
    double mass0 = -1;
    long prev_left = -1;
    std::set<float> levels;
    for (std::size_t t = 0; t < 8; ++t) {
      const auto f = frame_of(ds, n, t);
      double mass = 0;
      long left = 32, right = -1;
      for (std::size_t i = 0; i < f.size(); ++i) {
        mass += f[i];
        if (f[i] != 0.0f) {
          levels.insert(f[i]);
          left = std::min<long>(left, static_cast<long>(i % 32));
          right = std::max<long>(right, static_cast<long>(i % 32));
        }
      }
      if (t == 0) mass0 = mass;
      CHECK(mass == mass0);
      CHECK(right - left + 1 >= 5);
      CHECK(right - left + 1 <= 8);
      CHECK(left > prev_left);  // velocity is at least one pixel per frame
      prev_left = left;
    }
    CHECK(levels.size() == 1);
    CHECK(*levels.begin() >= 0.5f);
    CHECK(*levels.begin() <= 1.0f);
  }
}

TEST_CASE("noiseless scaling grows") {
  const VideoDataset ds = generate(small_spec({kCiScF, kCiScR}, 10, 0.0, 4));
  for (std::size_t n = 0; n < 10; ++n) {
    double prev = -1;
    for (std::size_t t = 0; t < 8; ++t) {
      const auto f = frame_of(ds, n, t);
      const auto lit = std::count_if(f.begin(), f.end(), [](float v) { return v != 0.0f; });
      CHECK(static_cast<double>(lit) > prev);
      prev = static_cast<double>(lit);
    }
  }
}

TEST_CASE("reverse samples are reversed forward samples") {
  for (double noise : {0.0, 0.05}) {
    // Swapping the class order hands the same draws to the other direction.
    const VideoDataset a = generate(small_spec({kSqTrF, kSqTrR, kCiScF, kCiScR}, 6, noise, 9));
    const VideoDataset b = generate(small_spec({kSqTrR, kSqTrF, kCiScR, kCiScF}, 6, noise, 9));
    for (std::size_t n = 0; n < a.size(); ++n) {
      for (std::size_t t = 0; t < 8; ++t) {
        const auto fa = frame_of(a, n, t), fb = frame_of(b, n, 7 - t);
        CHECK(std::equal(fa.begin(), fa.end(), fb.begin()));
      }
    }
  }
}

TEST_CASE("pixels in range and classes balanced") {
  DatasetSpec s = DatasetSpec::default_spec();
  s.samples_per_class = 15;
  s.noise_std = 0.3;
  const VideoDataset ds = generate(s);
  CHECK(ds.size() == 120);
  const auto px = ds.clips.data();
  CHECK(std::all_of(px.begin(), px.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
  CHECK(std::any_of(px.begin(), px.end(), [](float v) { return v == 1.0f; }));  // clipping did happen
  for (int k = 1; k <= 8; ++k) CHECK(std::count(ds.labels.begin(), ds.labels.end(), k) == 15);
}

TEST_CASE("generation is deterministic per seed") {
  const auto s = small_spec({kSqTrF, kSqTrR, kCiScF, kCiScR}, 5, 0.05, 11);
  CHECK(encode_dataset(generate(s)) == encode_dataset(generate(s)));
  auto other = s;
  other.seed = 12;
  CHECK(!(generate(s) == generate(other)));
}

TEST_CASE("container round trip and layout") {
  const VideoDataset ds = generate(small_spec({kSqTrF, kSqTrR}, 3, 0.05, 13));
  const auto bytes = encode_dataset(ds);
  CHECK(bytes.size() == 32 + 2 * 6 + 4 * ds.clips.numel());
  CHECK(std::memcmp(bytes.data(), "HFVD", 4) == 0);
  CHECK(bytes[4] == 1);  // version, little-endian
  CHECK(bytes[8] == 6);  // N
  CHECK(bytes[32] == 1);  // first label
  CHECK(decode_dataset(bytes) == ds);

  const auto path = (std::filesystem::temp_directory_path() / "hfnet_test_synth.hfvd").string();
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(path), IoError);
}

TEST_CASE("corrupted containers") {
  const VideoDataset ds = generate(small_spec({kSqTrF, kSqTrR}, 5, 0.0, 14));
  const auto good = encode_dataset(ds);
  SUBCASE("bad magic") {
    auto b = good;
    std::memcpy(b.data(), "XXXX", 4);
    try {
      decode_dataset(b);
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("header claims one clip more than the payload holds") {
    // Header says N=10 but the payload holds 9 clips.
    auto nine = ds.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    nine.num_classes = 2;
    auto b = encode_dataset(nine);
    b[8] = 10;
    CHECK_THROWS_WITH_AS(decode_dataset(b), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("cut short") {
    auto b = good;
    b.resize(b.size() - 1);
    CHECK_THROWS_AS(decode_dataset(b), FormatError);
    b.resize(20);
    CHECK_THROWS_AS(decode_dataset(b), FormatError);
  }
  SUBCASE("label out of range") {
    auto b = good;
    b[32 + 2 * 3] = 3;
    try {
      decode_dataset(b);
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 32 + 2 * 3);
    }
  }
  SUBCASE("version") {
    auto b = good;
    b[4] = 2;
    CHECK_THROWS_AS(decode_dataset(b), FormatError);
  }
  SUBCASE("trailing bytes") {
    auto b = good;
    b.push_back(0);
    CHECK_THROWS_AS(decode_dataset(b), FormatError);
  }
}

TEST_CASE("stratified split") {
  const VideoDataset ds = tagged(100, 4);
  const auto [train, val] = split(ds, 0.8, 21);
  for (int k = 1; k <= 4; ++k) {
    CHECK(std::count(train.labels.begin(), train.labels.end(), k) == 80);
    CHECK(std::count(val.labels.begin(), val.labels.end(), k) == 20);
  }
  const auto a = tags(train), b = tags(val);
  std::set<std::size_t> all(a.begin(), a.end());
  for (std::size_t i : b) CHECK(all.insert(i).second);  // disjoint
  CHECK(all.size() == 400);                              // exhaustive
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(train.labels[i] == static_cast<int>(a[i] % 4) + 1);

  const auto [train2, val2] = split(ds, 0.8, 21);
  CHECK(tags(train2) == a);
  CHECK(tags(val2) == b);
  const auto [train3, val3] = split(ds, 0.8, 22);
  CHECK(tags(train3) != a);

  CHECK_THROWS_AS(split(ds, 0.0, 1), ParameterError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), ParameterError);
  CHECK_THROWS_AS(split(tagged(1, 3), 0.5, 1), SplitError);
}
