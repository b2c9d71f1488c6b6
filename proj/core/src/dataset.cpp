#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "aeq/train.hpp"

namespace aeq {

std::vector<Sample> xor_dataset() {
  return {
      {{-2.0, -2.0}, {0.0}},
      {{-2.0, 2.0}, {1.0}},
      {{2.0, -2.0}, {1.0}},
      {{2.0, 2.0}, {0.0}},
  };
}

std::vector<double> normalize_sample(std::span<const double> x, double target_std) {
  std::vector<double> out(x.begin(), x.end());
  if (out.empty()) return out;
  // The rounded mean of a constant vector need not equal its entries.
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  if (*lo == *hi) return std::vector<double>(out.size(), 0.0);
  const double n = static_cast<double>(out.size());
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
  double ss = 0.0;
  for (double& v : out) {
    v -= mean;
    ss += v * v;
  }
  const double sd = std::sqrt(ss / n);
  if (sd > 0.0) {
    const double k = target_std / sd;
    for (double& v : out) v *= k;
  }
  return out;
}

namespace {

class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open " + path.string());
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  void read(unsigned char* dst, std::size_t n) {
    in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw Error(path_.string() + ": unexpected end of data");
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

namespace {

struct IdxPair {
  std::size_t count = 0;
  std::size_t pixels = 0;
  std::vector<unsigned char> images;  // count * pixels bytes
  std::vector<unsigned char> labels;  // count bytes
};

IdxPair read_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels,
                      std::optional<std::size_t> limit) {
  IdxReader img(images);
  IdxReader lab(labels);
  if (const auto m = img.u32(); m != 0x00000803) {
    throw Error(images.string() + ": bad magic number " + std::to_string(m) + " for an image file");
  }
  if (const auto m = lab.u32(); m != 0x00000801) {
    throw Error(labels.string() + ": bad magic number " + std::to_string(m) + " for a label file");
  }
  const std::size_t n_img = img.u32();
  const std::size_t rows = img.u32();
  const std::size_t cols = img.u32();
  const std::size_t n_lab = lab.u32();
  if (rows != 28 || cols != 28) {
    throw Error(images.string() + ": expected 28x28 images, got " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (n_img != n_lab) {
    throw Error("image/label count mismatch: " + std::to_string(n_img) + " images, " + std::to_string(n_lab) +
                " labels");
  }
  IdxPair out;
  out.count = limit ? std::min(*limit, n_img) : n_img;
  out.pixels = rows * cols;
  out.images.resize(out.count * out.pixels);
  out.labels.resize(out.count);
  img.read(out.images.data(), out.images.size());
  lab.read(out.labels.data(), out.labels.size());
  for (unsigned char label : out.labels) {
    if (label > 9) throw Error(labels.string() + ": label " + std::to_string(label) + " out of range");
  }
  return out;
}

Sample make_sample(const IdxPair& data, std::size_t i) {
  std::vector<double> raw(data.pixels);
  const unsigned char* px = data.images.data() + i * data.pixels;
  for (std::size_t p = 0; p < data.pixels; ++p) raw[p] = px[p] / 255.0;
  Sample s;
  s.x = normalize_sample(raw);
  s.y.assign(10, 0.0);
  s.y[data.labels[i]] = 1.0;
  return s;
}

}  // namespace

std::vector<Sample> load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                                   std::optional<std::size_t> limit) {
  const IdxPair data = read_idx_pair(images, labels, limit);
  std::vector<Sample> out;
  out.reserve(data.count);
  for (std::size_t i = 0; i < data.count; ++i) out.push_back(make_sample(data, i));
  return out;
}

std::vector<Sample> load_mnist_subset(const std::filesystem::path& images, const std::filesystem::path& labels,
                                      std::size_t n, std::uint64_t seed) {
  const IdxPair data = read_idx_pair(images, labels, std::nullopt);
  if (n > data.count) {
    throw Error("requested " + std::to_string(n) + " samples but only " + std::to_string(data.count) +
                " are available");
  }
  std::mt19937_64 gen(seed);
  const std::vector<std::size_t> idx = seeded_permutation(data.count, gen);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(data, idx[i]));
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& gen) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(gen()) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  return idx;
}

std::vector<Sample> select_subset(std::span<const Sample> samples, std::size_t n, std::uint64_t seed) {
  if (n > samples.size()) {
    throw Error("requested " + std::to_string(n) + " samples but only " + std::to_string(samples.size()) +
                " are available");
  }
  std::mt19937_64 gen(seed);
  const std::vector<std::size_t> idx = seeded_permutation(samples.size(), gen);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(samples[idx[i]]);
  return out;
}

}  // namespace aeq
