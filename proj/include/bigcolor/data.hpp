#pragma once

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bigcolor/colorspace.hpp"
#include "bigcolor/conditioning.hpp"
#include "bigcolor/image_io.hpp"
#include "bigcolor/metrics.hpp"
#include "bigcolor/random.hpp"
#include "bigcolor/resize.hpp"

namespace bigcolor::data {

struct ManifestEntry {
  std::string path;
  int class_index = 0;
  std::optional<double> colorfulness;

  bool operator==(const ManifestEntry&) const = default;
};

/// Line-delimited "path<TAB>class_index[<TAB>colorfulness]". Relative paths
/// are resolved against the manifest's directory when loading.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }

  static DatasetManifest parse(std::istream& in, const std::filesystem::path& base = {}, const std::string& what = "manifest") {
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, '\t')) fields.push_back(f);
      const auto where = what + ":" + std::to_string(lineno);
      if (fields.size() < 2 || fields.size() > 3)
        throw std::runtime_error(where + ": expected 'path<TAB>class_index[<TAB>colorfulness]'");
      ManifestEntry e;
      std::filesystem::path p(fields[0]);
      e.path = (p.is_relative() && !base.empty()) ? (base / p).lexically_normal().string() : p.string();
      try {
        std::size_t used = 0;
        e.class_index = std::stoi(fields[1], &used);
        if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
        if (fields.size() == 3) e.colorfulness = std::stod(fields[2]);
      } catch (const std::exception&) {
        throw std::runtime_error(where + ": malformed class index or colorfulness");
      }
      if (e.class_index < 0) throw std::runtime_error(where + ": negative class index");
      m.entries.push_back(std::move(e));
    }
    return m;
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    return parse(in, path.parent_path(), path.string());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out.precision(17);
    for (const auto& e : entries) {
      out << e.path << '\t' << e.class_index;
      if (e.colorfulness) out << '\t' << *e.colorfulness;
      out << '\n';
    }
  }

  /// Class indices must lie in [0, num_classes).
  void validate(int num_classes) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].class_index >= num_classes)
        throw std::runtime_error("manifest entry " + std::to_string(i) + " (" + entries[i].path + ") has class " +
                                 std::to_string(entries[i].class_index) + ", class manifest has " +
                                 std::to_string(num_classes));
  }
};

// ---------------------------------------------------------------------------
// Preprocessing.

enum class Split { Train, Eval };

/// Output size of the short-side resize rule.
inline std::pair<int, int> resized_dims(int h, int w, int size) {
  if (h < 1 || w < 1) throw std::invalid_argument("preprocess: empty image");
  if (h <= w) return {size, std::max(size, static_cast<int>(std::lround(double(w) * size / h)))};
  return {std::max(size, static_cast<int>(std::lround(double(h) * size / w))), size};
}

/// Resize so the short side equals `size`, then crop size x size (center for
/// eval, uniformly random for train).
template <typename T>
Tensor<T> preprocess(const Tensor<T>& img, int size = 256, Split split = Split::Eval, Rng* rng = nullptr) {
  if (size < 1) throw std::invalid_argument("preprocess: size must be positive");
  if (img.n() != 1) throw std::invalid_argument("preprocess: expected a single image");
  const auto [rh, rw] = resized_dims(img.h(), img.w(), size);
  const Tensor<T> r = (rh == img.h() && rw == img.w()) ? img : resize_bilinear(img, rh, rw);
  int oy = (rh - size) / 2, ox = (rw - size) / 2;
  if (split == Split::Train) {
    if (!rng) throw std::invalid_argument("preprocess: train split needs an rng");
    oy = static_cast<int>(rng->below(static_cast<std::uint64_t>(rh - size + 1)));
    ox = static_cast<int>(rng->below(static_cast<std::uint64_t>(rw - size + 1)));
  }
  Tensor<T> out(1, r.c(), size, size);
  for (int c = 0; c < r.c(); ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) out.at(0, c, y, x) = r.at(0, c, y + oy, x + ox);
  return out;
}

template <typename T>
struct Pair {
  Tensor<T> gray;
  Tensor<T> color;
};

/// Grayscale input and unaugmented color target.
template <typename T>
Pair<T> make_pair(const Tensor<T>& img) {
  return {colorspace::rgb_to_gray(img), img};
}

// ---------------------------------------------------------------------------
// Curation.

struct CurationReport {
  std::size_t input = 0;
  std::size_t dropped = 0;
  std::size_t unreadable = 0;
  std::size_t kept = 0;
  std::vector<std::string> warnings;
};

/// Scores an entry; throws io::ImageError for unreadable images.
using Scorer = std::function<double(const ManifestEntry&)>;

/// Colorfulness of the eval-preprocessed image at `size`.
inline Scorer colorfulness_scorer(int size = 256) {
  return [size](const ManifestEntry& e) { return metrics::colorfulness(preprocess(io::read_image(e.path), size)); };
}

/// Drops the floor(fraction * N) least colorful entries (ties broken by
/// manifest order) and entries whose images cannot be read. Cached scores
/// are reused; computed scores are stored in the result. Output keeps
/// manifest order.
inline DatasetManifest curate_by_colorfulness(const DatasetManifest& manifest, double drop_fraction,
                                              CurationReport* report = nullptr, Scorer scorer = {}) {
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) throw std::invalid_argument("curate: drop_fraction must be in [0, 1)");
  if (!scorer) scorer = colorfulness_scorer();
  CurationReport rep;
  rep.input = manifest.size();
  std::vector<ManifestEntry> scored;
  for (const auto& e : manifest.entries) {
    ManifestEntry s = e;
    if (!s.colorfulness) {
      try {
        s.colorfulness = scorer(e);
      } catch (const io::ImageError& err) {
        rep.warnings.push_back(std::string("skipping unreadable image: ") + err.what());
        std::cerr << "warning: " << rep.warnings.back() << "\n";
        ++rep.unreadable;
        continue;
      }
    }
    scored.push_back(std::move(s));
  }
  const auto to_drop = std::min(scored.size(), static_cast<std::size_t>(std::floor(drop_fraction * manifest.size())));
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *scored[a].colorfulness < *scored[b].colorfulness; });
  std::vector<bool> drop(scored.size(), false);
  for (std::size_t i = 0; i < to_drop; ++i) drop[order[i]] = true;
  DatasetManifest out;
  for (std::size_t i = 0; i < scored.size(); ++i)
    if (!drop[i]) out.entries.push_back(scored[i]);
  rep.dropped = to_drop;
  rep.kept = out.size();
  if (report) *report = std::move(rep);
  return out;
}

// ---------------------------------------------------------------------------
// Toy dataset: two classes of colorful 64x64 scenes whose colors are
// predictable from structure and class.
//   class 0 "landscape": blue sky over a green field with a yellow sun
//   class 1 "fruit": red/orange discs on a purple background

inline Tensor<float> toy_image(int cls, Rng& rng, int size = 64) {
  Tensor<float> img(1, 3, size, size);
  auto set = [&](int y, int x, double r, double g, double b) {
    img.at(0, 0, y, x) = static_cast<float>(std::clamp(r, 0.0, 1.0));
    img.at(0, 1, y, x) = static_cast<float>(std::clamp(g, 0.0, 1.0));
    img.at(0, 2, y, x) = static_cast<float>(std::clamp(b, 0.0, 1.0));
  };
  if (cls == 0) {
    const double horizon = size * (0.4 + 0.25 * rng.uniform());
    const double sx = size * rng.uniform(), sy = horizon * 0.5 * rng.uniform(), sr = size * (0.06 + 0.06 * rng.uniform());
    const double tint = 0.1 * (rng.uniform() - 0.5);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double wave = 2.0 * std::sin(x * 0.2 + tint * 30);
        if (y < horizon + wave) {
          const double t = y / horizon;
          set(y, x, 0.25 + 0.3 * t + tint, 0.5 + 0.3 * t, 0.95);
          if (std::hypot(x - sx, y - sy) < sr) set(y, x, 1.0, 0.9, 0.2);
        } else {
          const double t = (y - horizon) / (size - horizon);
          set(y, x, 0.15 + tint, 0.65 - 0.3 * t, 0.15);
        }
      }
  } else {
    const double bg = 0.1 * (rng.uniform() - 0.5);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) set(y, x, 0.45 + bg, 0.2, 0.55 + bg);
    const int discs = 2 + static_cast<int>(rng.below(3));
    for (int d = 0; d < discs; ++d) {
      const double cx = size * rng.uniform(), cy = size * rng.uniform(), r = size * (0.12 + 0.12 * rng.uniform());
      const double g = 0.1 + 0.5 * rng.uniform();
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dist = std::hypot(x - cx, y - cy) / r;
          if (dist < 1.0) set(y, x, 0.95 - 0.2 * dist, g * (1.0 - 0.3 * dist), 0.05);
        }
    }
  }
  return img;
}

/// Writes `count` toy PNGs (alternating classes) plus "train.txt" and
/// "classes.txt" into `dir`. Returns the manifest path.
inline std::filesystem::path write_toy_dataset(const std::filesystem::path& dir, int count = 200,
                                               std::uint64_t seed = 0, int size = 64) {
  std::filesystem::create_directories(dir / "images");
  Rng rng(seed);
  DatasetManifest m;
  for (int i = 0; i < count; ++i) {
    const int cls = i % 2;
    const auto name = "images/toy_" + std::to_string(i) + ".png";
    io::write_png(dir / name, toy_image(cls, rng, size));
    m.entries.push_back({name, cls, std::nullopt});
  }
  m.save(dir / "train.txt");
  std::ofstream classes(dir / "classes.txt");
  classes << "0\tlandscape\n1\tfruit\n";
  return dir / "train.txt";
}

// ---------------------------------------------------------------------------
// Batches.

template <typename T>
struct Batch {
  Tensor<T> rgb;        // N x 3 x S x S in [0, 1]
  Tensor<T> class_vec;  // N x K one-hot
  std::vector<int> labels;
};

/// Deterministic batch source. Batch b of epoch e depends only on
/// (seed, e, b): the epoch permutation is drawn from seed and e, crop
/// offsets from seed, e and b. Incomplete trailing batches are dropped.
/// Decoded images are cached in memory.
template <typename T>
class BatchSource {
 public:
  BatchSource(DatasetManifest manifest, int num_classes, int image_size, int batch_size, bool random_crop,
              std::uint64_t seed)
      : manifest_(std::move(manifest)),
        num_classes_(num_classes),
        size_(image_size),
        batch_(batch_size),
        random_crop_(random_crop),
        seed_(seed) {
    manifest_.validate(num_classes);
    if (static_cast<int>(manifest_.size()) < batch_)
      throw std::invalid_argument("dataset has " + std::to_string(manifest_.size()) + " images, fewer than batch size " +
                                  std::to_string(batch_));
    images_.resize(manifest_.size());
  }

  int batches_per_epoch() const { return static_cast<int>(manifest_.size()) / batch_; }

  Batch<T> get(int epoch, int index) {
    std::vector<std::size_t> perm(manifest_.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(mix(seed_, static_cast<std::uint64_t>(epoch), ~0ull));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[prng.below(i)]);
    Rng crng(mix(seed_, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)));
    Batch<T> b;
    b.rgb = Tensor<T>(batch_, 3, size_, size_);
    for (int i = 0; i < batch_; ++i) {
      const std::size_t k = perm[static_cast<std::size_t>(index) * batch_ + i];
      const Tensor<float>& img = image(k);
      const Tensor<float> p = preprocess(img, size_, random_crop_ ? Split::Train : Split::Eval, &crng);
      const Tensor<T> pt = p.template cast<T>();
      std::copy(pt.data(), pt.data() + pt.size(), b.rgb.item(i));
      b.labels.push_back(manifest_.entries[k].class_index);
    }
    b.class_vec = one_hot<T>(b.labels, num_classes_);
    return b;
  }

  const DatasetManifest& manifest() const { return manifest_; }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = a * 0x9E3779B97F4A7C15ull;
    h ^= b + 0xBF58476D1CE4E5B9ull + (h << 6) + (h >> 2);
    h ^= c + 0x94D049BB133111EBull + (h << 6) + (h >> 2);
    return h;
  }

  const Tensor<float>& image(std::size_t k) {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (!images_[k]) images_[k] = io::read_image(manifest_.entries[k].path);
    return *images_[k];
  }

  DatasetManifest manifest_;
  int num_classes_, size_, batch_;
  bool random_crop_;
  std::uint64_t seed_;
  std::vector<std::optional<Tensor<float>>> images_;
  std::mutex cache_mutex_;
};

/// Background producer that fills a bounded queue with consecutive batches
/// starting at (epoch, index). Order is identical to calling get() in
/// sequence.
template <typename T>
class Prefetcher {
 public:
  Prefetcher(BatchSource<T>& source, int epoch, int index, std::size_t capacity = 4)
      : source_(source), capacity_(std::max<std::size_t>(1, capacity)), epoch_(epoch), index_(index) {
    worker_ = std::thread([this] { run(); });
  }
  ~Prefetcher() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  Batch<T> next() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty() && error_) std::rethrow_exception(error_);
    Batch<T> b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  void run() {
    try {
      while (true) {
        Batch<T> b = source_.get(epoch_, index_);
        if (++index_ == source_.batches_per_epoch()) {
          index_ = 0;
          ++epoch_;
        }
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || queue_.size() < capacity_; });
        if (stop_) return;
        queue_.push_back(std::move(b));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(mutex_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  BatchSource<T>& source_;
  std::size_t capacity_;
  int epoch_, index_;
  std::deque<Batch<T>> queue_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

}  // namespace bigcolor::data
