#include "cfilter/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cfilter/config.hpp"
#include "cfilter/rng.hpp"
#include "cfilter/textio.hpp"

namespace cfilter {

namespace {
bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

struct DrawnSplit {
  LabeledSet set;
  std::vector<int> s;
};

int draw_confounder(Rng& rng, int y, double correlation) {
  const int match = y % 2;
  return rng.bernoulli(correlation) ? match : 1 - match;
}

DrawnSplit draw_images(Rng& rng, const ConfoundedImageConfig& c, const ImageGeometry& geo,
                       std::size_t n, double correlation) {
  const std::size_t side = c.image_size;
  const double hi = 1.0 + c.confounder_amp;
  std::vector<double> pixels(n * side * side);
  DrawnSplit out;
  out.set.labels.resize(n);
  out.s.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(c.num_classes));
    const int s = draw_confounder(rng, y, correlation);
    out.set.labels[i] = y;
    out.s[i] = s;
    const Rect& blob = geo.class_blobs[static_cast<std::size_t>(y)];
    double* img = pixels.data() + i * side * side;
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t col = 0; col < side; ++col) {
        double v = c.background;
        if (blob.contains(r, col)) v += c.class_amp;
        if (s == 1 && geo.patch.contains(r, col)) v += c.confounder_amp;
        v += c.noise_std * rng.normal();
        img[r * side + col] = std::clamp(v, 0.0, hi);
      }
    }
  }
  out.set.x = Tensor({n, 1, side, side}, std::move(pixels));
  return out;
}

DrawnSplit draw_toy(Rng& rng, const ToyConfig& c, std::size_t n, double correlation) {
  std::vector<double> features(n * 2);
  DrawnSplit out;
  out.set.labels.resize(n);
  out.s.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.below(2));
    const int s = draw_confounder(rng, y, correlation);
    out.set.labels[i] = y;
    out.s[i] = s;
    features[2 * i] = c.signal_weight * (2.0 * y - 1.0) + c.noise_std * rng.normal();
    features[2 * i + 1] = c.confounder_weight * (2.0 * s - 1.0) + c.noise_std * rng.normal();
  }
  out.set.x = Tensor({n, 2}, std::move(features));
  return out;
}

nlohmann::json rect_json(const Rect& r) {
  return {{"row", r.row}, {"col", r.col}, {"height", r.height}, {"width", r.width}};
}

void finish_manifest(DatasetBundle& b, nlohmann::json m) {
  m["format_version"] = kBundleFormatVersion;
  m["counts"] = {{"train", b.train.size()},
                 {"confounder", b.confounder.size()},
                 {"test_deconf", b.test_deconf.size()},
                 {"test_aligned", b.test_aligned.size()}};
  m["match_rates"] = {{"train", match_rate(b.train.labels, b.train_s)},
                      {"test_deconf", match_rate(b.test_deconf.labels, b.test_deconf_s)},
                      {"test_aligned", match_rate(b.test_aligned.labels, b.test_aligned_s)}};
  b.manifest = m.dump(2) + "\n";
}
}  // namespace

void ConfoundedImageConfig::validate() const {
  if (image_size == 0 || num_classes < 2) throw ConfigError("need image_size > 0 and >= 2 classes");
  if (!is_probability(train_correlation) || !is_probability(test_correlation)) {
    throw ConfigError("correlations must lie in [0, 1]");
  }
  if (n_train == 0 || n_test == 0) throw ConfigError("n_train and n_test must be >= 1");
  if (!(noise_std >= 0.0) || !(confounder_amp >= 0.0) || !(class_amp >= 0.0) || !(background >= 0.0)) {
    throw ConfigError("amplitudes, background and noise must be non-negative");
  }
}

void ToyConfig::validate() const {
  if (n < 10) throw ConfigError("toy data needs n >= 10");
  if (!is_probability(train_correlation) || !is_probability(test_correlation)) {
    throw ConfigError("correlations must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
}

ImageGeometry image_geometry(const ConfoundedImageConfig& c) {
  c.validate();
  const std::size_t side = c.image_size, k = c.num_classes, b = c.blob_size;
  if (b == 0 || c.patch_size == 0) throw ConfigError("blob and patch sizes must be positive");
  ImageGeometry geo;
  geo.patch = {0, 0, c.patch_size, c.patch_size};
  if (b > side || c.patch_size > side) throw ConfigError("patterns do not fit in the image");
  // Blobs sit one pixel above the bottom edge, centred on evenly spaced columns.
  const std::size_t row = side - b - (side > b ? 1 : 0);
  for (std::size_t i = 0; i < k; ++i) {
    const double centre = static_cast<double>((i + 1) * side) / static_cast<double>(k + 1);
    const double left = std::round(centre - static_cast<double>(b) / 2.0);
    const auto col = static_cast<std::size_t>(
        std::clamp(left, 0.0, static_cast<double>(side - b)));
    geo.class_blobs.push_back({row, col, b, b});
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (geo.class_blobs[i].overlaps(geo.patch)) {
      throw ConfigError("overlapping pattern regions: class " + std::to_string(i) +
                        " blob overlaps the confounder patch");
    }
    for (std::size_t j = i + 1; j < k; ++j) {
      if (geo.class_blobs[i].overlaps(geo.class_blobs[j])) {
        throw ConfigError("overlapping pattern regions: class blobs " + std::to_string(i) +
                          " and " + std::to_string(j));
      }
    }
  }
  return geo;
}

double match_rate(const std::vector<int>& y, const std::vector<int>& s) {
  if (y.empty() || y.size() != s.size()) return 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < y.size(); ++i) m += s[i] == y[i] % 2;
  return static_cast<double>(m) / static_cast<double>(y.size());
}

DatasetBundle generate(const ConfoundedImageConfig& config) {
  const auto geo = image_geometry(config);
  Rng rng(config.seed);
  DatasetBundle b;
  auto train = draw_images(rng, config, geo, config.n_train, config.train_correlation);
  auto deconf = draw_images(rng, config, geo, config.n_test, config.test_correlation);
  auto aligned = draw_images(rng, config, geo, config.n_test, config.train_correlation);
  if (config.confounder_seed) {
    Rng other(*config.confounder_seed);
    auto conf = draw_images(other, config, geo, config.n_train, config.train_correlation);
    b.confounder = {conf.set.x, conf.s};
  } else {
    b.confounder = {train.set.x, train.s};
  }
  b.train = std::move(train.set);
  b.train_s = std::move(train.s);
  b.test_deconf = std::move(deconf.set);
  b.test_deconf_s = std::move(deconf.s);
  b.test_aligned = std::move(aligned.set);
  b.test_aligned_s = std::move(aligned.s);

  nlohmann::json m;
  m["kind"] = "images";
  m["config"] = config;
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& r : geo.class_blobs) blobs.push_back(rect_json(r));
  m["geometry"] = {{"class_blobs", blobs}, {"confounder_patch", rect_json(geo.patch)}};
  finish_manifest(b, std::move(m));
  return b;
}

DatasetBundle toy_linear(const ToyConfig& config) {
  config.validate();
  Rng rng(config.seed);
  DatasetBundle b;
  auto train = draw_toy(rng, config, config.n, config.train_correlation);
  auto deconf = draw_toy(rng, config, config.n, config.test_correlation);
  auto aligned = draw_toy(rng, config, config.n, config.train_correlation);
  if (config.confounder_seed) {
    Rng other(*config.confounder_seed);
    auto conf = draw_toy(other, config, config.n, config.train_correlation);
    b.confounder = {conf.set.x, conf.s};
  } else {
    b.confounder = {train.set.x, train.s};
  }
  b.train = std::move(train.set);
  b.train_s = std::move(train.s);
  b.test_deconf = std::move(deconf.set);
  b.test_deconf_s = std::move(deconf.s);
  b.test_aligned = std::move(aligned.set);
  b.test_aligned_s = std::move(aligned.s);

  nlohmann::json m;
  m["kind"] = "toy";
  m["config"] = config;
  finish_manifest(b, std::move(m));
  return b;
}

namespace {
bool same_tensor(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) return a.defined() == b.defined();
  if (a.shape() != b.shape()) return false;
  const auto av = a.values(), bv = b.values();
  return std::memcmp(av.data(), bv.data(), av.size() * sizeof(double)) == 0;
}

bool same_set(const LabeledSet& a, const LabeledSet& b) {
  return same_tensor(a.x, b.x) && a.labels == b.labels;
}

Tensor labels_tensor(const std::vector<int>& labels) {
  std::vector<double> v(labels.begin(), labels.end());
  return Tensor({labels.size()}, std::move(v));
}

std::vector<int> read_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing bundle file: " + path);
  Tensor t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
  if (t.rank() != 1) throw FormatError("labels must be rank 1: " + path);
  std::vector<int> out;
  out.reserve(t.numel());
  for (double v : t.values()) {
    if (v != std::floor(v) || v < 0.0 || v > 1e9) throw FormatError("non-integer label in " + path);
    out.push_back(static_cast<int>(v));
  }
  return out;
}

Tensor read_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing bundle file: " + path);
  Tensor t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
  return t;
}

LabeledSet read_set(const std::filesystem::path& dir, const char* x_name, const char* y_name) {
  LabeledSet set{read_samples((dir / x_name).string()), read_labels((dir / y_name).string())};
  if (set.x.shape()[0] != set.labels.size()) {
    throw FormatError(std::string("sample/label count mismatch between ") + x_name + " and " + y_name);
  }
  return set;
}
}  // namespace

bool DatasetBundle::operator==(const DatasetBundle& o) const {
  return same_set(train, o.train) && train_s == o.train_s && same_set(confounder, o.confounder) &&
         same_set(test_deconf, o.test_deconf) && test_deconf_s == o.test_deconf_s &&
         same_set(test_aligned, o.test_aligned) && test_aligned_s == o.test_aligned_s &&
         manifest == o.manifest;
}

void save_bundle(const DatasetBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path d(dir);
  write_text_file((d / "manifest.json").string(), b.manifest);
  save_tensor((d / "X_train.bin").string(), b.train.x);
  save_tensor((d / "y_train.bin").string(), labels_tensor(b.train.labels));
  save_tensor((d / "s_train.bin").string(), labels_tensor(b.train_s));
  save_tensor((d / "X_conf.bin").string(), b.confounder.x);
  save_tensor((d / "s_conf.bin").string(), labels_tensor(b.confounder.labels));
  save_tensor((d / "X_test_deconf.bin").string(), b.test_deconf.x);
  save_tensor((d / "y_test_deconf.bin").string(), labels_tensor(b.test_deconf.labels));
  save_tensor((d / "s_test_deconf.bin").string(), labels_tensor(b.test_deconf_s));
  save_tensor((d / "X_test_aligned.bin").string(), b.test_aligned.x);
  save_tensor((d / "y_test_aligned.bin").string(), labels_tensor(b.test_aligned.labels));
  save_tensor((d / "s_test_aligned.bin").string(), labels_tensor(b.test_aligned_s));
}

DatasetBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  DatasetBundle b;
  const auto manifest_path = (d / "manifest.json").string();
  if (!fs::exists(manifest_path)) throw FormatError("missing bundle manifest: " + manifest_path);
  b.manifest = read_text_file(manifest_path);
  try {
    const auto m = nlohmann::json::parse(b.manifest);
    const int version = m.at("format_version").get<int>();
    if (version != kBundleFormatVersion) {
      throw FormatError("bundle format version " + std::to_string(version) + ", expected " +
                        std::to_string(kBundleFormatVersion));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad bundle manifest: ") + e.what());
  }
  b.train = read_set(d, "X_train.bin", "y_train.bin");
  b.train_s = read_labels((d / "s_train.bin").string());
  b.confounder = read_set(d, "X_conf.bin", "s_conf.bin");
  b.test_deconf = read_set(d, "X_test_deconf.bin", "y_test_deconf.bin");
  b.test_deconf_s = read_labels((d / "s_test_deconf.bin").string());
  b.test_aligned = read_set(d, "X_test_aligned.bin", "y_test_aligned.bin");
  b.test_aligned_s = read_labels((d / "s_test_aligned.bin").string());
  return b;
}

}  // namespace cfilter
