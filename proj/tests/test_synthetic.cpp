#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cfilter/errors.hpp"
#include "cfilter/synthetic.hpp"
#include "scratch_dir.hpp"

using namespace cfilter;

namespace {

double band(std::size_t n) { return 3.0 / std::sqrt(static_cast<double>(n)); }

ConfoundedImageConfig small_images(std::uint64_t seed) {
  ConfoundedImageConfig c;
  c.seed = seed;
  c.n_train = 400;
  c.n_test = 400;
  return c;
}

double pixel(const LabeledSet& s, std::size_t n, std::size_t r, std::size_t c, std::size_t side) {
  return s.x.at(n * side * side + r * side + c);
}

}  // namespace

TEST_CASE("noise-free perfectly coupled images carry the patch exactly on class 1") {
  auto c = small_images(1);
  c.noise_std = 0.0;
  c.train_correlation = 1.0;
  const auto b = generate(c);
  const auto geo = image_geometry(c);
  for (std::size_t n = 0; n < b.train.size(); ++n) {
    const bool has_patch = b.train.labels[n] == 1;
    CHECK(b.train_s[n] == (has_patch ? 1 : 0));
    for (std::size_t r = 0; r < 16; ++r) {
      for (std::size_t col = 0; col < 16; ++col) {
        if (!geo.patch.contains(r, col)) continue;
        CHECK(pixel(b.train, n, r, col, 16) == (has_patch ? c.confounder_amp + c.background : c.background));
      }
    }
  }
}

TEST_CASE("match rates sit inside the three-sigma band") {
  for (double rho : {0.0, 0.5, 0.95}) {
    auto c = small_images(2);
    c.n_train = 2000;
    c.train_correlation = rho;
    const auto b = generate(c);
    CAPTURE(rho);
    CHECK(std::abs(match_rate(b.train.labels, b.train_s) - rho) <= band(2000));
    CHECK(std::abs(match_rate(b.test_deconf.labels, b.test_deconf_s) - c.test_correlation) <= band(400));
    CHECK(std::abs(match_rate(b.test_aligned.labels, b.test_aligned_s) - rho) <= band(400));
  }
  const auto b = generate(ConfoundedImageConfig{});
  const double m = match_rate(b.train.labels, b.train_s);
  CHECK(m >= 0.935);
  CHECK(m <= 0.965);
}

TEST_CASE("class balance and pixel range") {
  auto c = small_images(3);
  c.num_classes = 3;
  c.n_train = 1500;
  const auto b = generate(c);
  std::vector<std::size_t> counts(3, 0);
  for (int y : b.train.labels) ++counts[static_cast<std::size_t>(y)];
  for (auto k : counts) CHECK(std::abs(static_cast<double>(k) - 500.0) <= band(1500) * 1500);
  for (double v : b.train.x.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + c.confounder_amp);
  }
}

TEST_CASE("class patterns are distinct and disjoint from the patch") {
  for (std::size_t k : {2, 3}) {
    ConfoundedImageConfig c;
    c.num_classes = k;
    const auto geo = image_geometry(c);
    REQUIRE(geo.class_blobs.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK_FALSE(geo.class_blobs[i].overlaps(geo.patch));
      for (std::size_t j = i + 1; j < k; ++j) CHECK_FALSE(geo.class_blobs[i].overlaps(geo.class_blobs[j]));
    }
  }
  ConfoundedImageConfig crowded;
  crowded.num_classes = 4;
  crowded.blob_size = 5;
  CHECK_THROWS_AS(image_geometry(crowded), ConfigError);
  ConfoundedImageConfig bad;
  bad.train_correlation = 1.5;
  CHECK_THROWS_AS(generate(bad), ConfigError);
}

TEST_CASE("generation is a pure function of the config") {
  const auto a = generate(small_images(9));
  const auto b = generate(small_images(9));
  CHECK(a == b);
  CHECK_FALSE(a == generate(small_images(10)));
}

TEST_CASE("independent confounder set is disjoint from the task samples") {
  auto c = small_images(4);
  const auto shared = generate(c);
  CHECK(shared.confounder.labels == shared.train_s);
  c.confounder_seed = 77;
  const auto split = generate(c);
  CHECK(split.train.labels == shared.train.labels);
  CHECK(std::equal(split.train.x.values().begin(), split.train.x.values().end(),
                   shared.train.x.values().begin()));
  CHECK(split.confounder.size() == c.n_train);
  CHECK_FALSE(std::equal(split.confounder.x.values().begin(), split.confounder.x.values().end(),
                         split.train.x.values().begin()));
}

TEST_CASE("toy: x1-only classifier matches the Gaussian closed form") {
  ToyConfig c;
  c.n = 4000;
  c.seed = 5;
  const auto b = toy_linear(c);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.test_deconf.size(); ++i) {
    const int guess = b.test_deconf.x.at(2 * i) > 0 ? 1 : 0;
    correct += guess == b.test_deconf.labels[i];
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(c.n);
  const double bayes = 0.5 * std::erfc(-c.signal_weight / (c.noise_std * std::sqrt(2.0)));
  CHECK(std::abs(acc - bayes) <= 3.0 * std::sqrt(bayes * (1 - bayes) / static_cast<double>(c.n)));
}

TEST_CASE("toy: perfect train correlation makes x2 a label proxy") {
  ToyConfig c;
  c.train_correlation = 1.0;
  c.noise_std = 0.0;
  const auto b = toy_linear(c);
  for (std::size_t i = 0; i < b.train.size(); ++i) {
    CHECK(b.train.x.at(2 * i + 1) == c.confounder_weight * (2.0 * b.train.labels[i] - 1.0));
  }
  CHECK(toy_linear(c) == b);
  ToyConfig tiny;
  tiny.n = 5;
  CHECK_THROWS_AS(toy_linear(tiny), ConfigError);
}

TEST_CASE("bundle round trip is bit exact") {
  ScratchDir dir("bundle");
  const auto b = generate(small_images(6));
  save_bundle(b, dir.path().string());
  for (const char* f : {"manifest.json", "X_train.bin", "y_train.bin", "X_conf.bin", "s_conf.bin",
                        "X_test_deconf.bin", "y_test_deconf.bin", "X_test_aligned.bin",
                        "y_test_aligned.bin"}) {
    CHECK(std::filesystem::exists(dir.path() / f));
  }
  const auto back = load_bundle(dir.path().string());
  CHECK(back == b);
  CHECK(back.manifest == b.manifest);
  const auto m = nlohmann::json::parse(b.manifest);
  CHECK(m.at("config").at("seed") == 6);
  CHECK(m.at("format_version") == kBundleFormatVersion);
}

TEST_CASE("damaged bundles raise format errors") {
  ScratchDir dir("bundle_bad");
  const auto b = generate(small_images(7));
  save_bundle(b, dir.path().string());
  const auto x = dir.file("X_test_aligned.bin");
  std::filesystem::resize_file(x, std::filesystem::file_size(x) - 9);
  CHECK_THROWS_AS(load_bundle(dir.path().string()), FormatError);

  save_bundle(b, dir.path().string());
  auto m = nlohmann::json::parse(b.manifest);
  m["format_version"] = kBundleFormatVersion + 1;
  std::ofstream(dir.file("manifest.json")) << m.dump(2);
  CHECK_THROWS_AS(load_bundle(dir.path().string()), FormatError);

  CHECK_THROWS_AS(load_bundle(dir.file("nowhere")), FormatError);
}
