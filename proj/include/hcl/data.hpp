#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hcl/image.hpp"
#include "hcl/rng.hpp"
#include "hcl/serial.hpp"

namespace hcl::data {

struct ImageRecord {
  std::int64_t id = 0;
  Image<float> pixels;
};

struct Dataset {
  int size = 0;  // square image side
  std::vector<ImageRecord> records;

  std::size_t count() const { return records.size(); }
};

namespace detail {

struct Painter {
  Image<float>& img;
  int size;

  void paint(double cx, double cy, double rx, double ry, const double color[3],
             const std::function<bool(double, double)>& inside) {
    const int x_lo = std::max(0, int(std::floor(cx - rx)));
    const int x_hi = std::min(size - 1, int(std::ceil(cx + rx)));
    const int y_lo = std::max(0, int(std::floor(cy - ry)));
    const int y_hi = std::min(size - 1, int(std::ceil(cy + ry)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x)
        if (inside(x + 0.5, y + 0.5))
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = float(color[c]);
  }
};

}  // namespace detail

// Procedural corpus: a smooth color-gradient background with light noise,
// overlaid by 3-6 opaque geometric primitives. Instances differ both in
// palette and in layout, so crops of the same image share structure.
inline Dataset generate_synthetic(std::uint64_t seed, int n, int size) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (size < 1) throw std::invalid_argument("generate_synthetic: size must be >= 1");
  Dataset ds;
  ds.size = size;
  ds.records.reserve(std::size_t(n));
  for (int id = 0; id < n; ++id) {
    Rng rng = derive_rng(seed, {stream::kSynth, std::uint64_t(id)});
    Image<float> img = Image<float>::zeros(size, size);

    double corners[4][3];
    for (auto& corner : corners)
      for (double& ch : corner) ch = rng.uniform(0.1, 0.9);
    const double denom = size > 1 ? double(size - 1) : 1.0;
    for (int y = 0; y < size; ++y) {
      const double v = y / denom;
      for (int x = 0; x < size; ++x) {
        const double u = x / denom;
        const double noise = rng.uniform(-0.03, 0.03);
        for (int c = 0; c < 3; ++c) {
          const double top = (1 - u) * corners[0][c] + u * corners[1][c];
          const double bot = (1 - u) * corners[2][c] + u * corners[3][c];
          img.at(c, y, x) = float((1 - v) * top + v * bot + noise);
        }
      }
    }

    detail::Painter painter{img, size};
    const int n_prims = int(rng.uniform_int(3, 6));
    for (int p = 0; p < n_prims; ++p) {
      const int kind = int(rng.uniform_int(0, 2));
      double color[3];
      for (double& ch : color) ch = rng.uniform(0.05, 0.95);
      const double cx = rng.uniform(0.15, 0.85) * size;
      const double cy = rng.uniform(0.15, 0.85) * size;
      if (kind == 0) {  // axis-aligned rectangle
        const double ax = rng.uniform(0.06, 0.22) * size;
        const double ay = rng.uniform(0.06, 0.22) * size;
        painter.paint(cx, cy, ax, ay, color, [&](double x, double y) {
          return std::abs(x - cx) <= ax && std::abs(y - cy) <= ay;
        });
      } else if (kind == 1) {  // disc
        const double r = rng.uniform(0.06, 0.2) * size;
        painter.paint(cx, cy, r, r, color, [&](double x, double y) {
          const double dx = x - cx, dy = y - cy;
          return dx * dx + dy * dy <= r * r;
        });
      } else {  // oriented bar
        const double len = rng.uniform(0.3, 0.7) * size;
        const double thick = rng.uniform(0.03, 0.09) * size;
        const double phi = rng.uniform(0.0, 3.14159265358979323846);
        const double dx = std::cos(phi), dy = std::sin(phi);
        const double reach = 0.5 * len + thick;
        painter.paint(cx, cy, reach, reach, color, [&](double x, double y) {
          const double px = x - cx, py = y - cy;
          const double along = px * dx + py * dy;
          const double perp = -px * dy + py * dx;
          return std::abs(along) <= 0.5 * len && std::abs(perp) <= 0.5 * thick;
        });
      }
    }

    for (Index i = 0; i < img.data.size(); ++i)
      img.data[i] = std::clamp(img.data[i], 0.0f, 1.0f);
    ds.records.push_back({id, std::move(img)});
  }
  return ds;
}

// Corpus file: fixed-length records `u8 label || u8[size^2] R || G || B`,
// no header; the record count is inferred from the file length. The label
// byte is read and discarded.
inline void save_corpus(const Dataset& ds, const std::string& path) {
  std::vector<std::uint8_t> buf;
  const Index plane = Index(ds.size) * ds.size;
  buf.reserve(ds.records.size() * std::size_t(1 + 3 * plane));
  for (const auto& rec : ds.records) {
    buf.push_back(0);  // label, unused
    for (Index i = 0; i < 3 * plane; ++i) {
      const float v = std::clamp(rec.pixels.data[i], 0.0f, 1.0f);
      buf.push_back(std::uint8_t(std::lround(v * 255.0f)));
    }
  }
  serial::write_file(path, buf);
}

inline Dataset load_corpus(const std::string& path, int size) {
  if (size < 1) throw std::invalid_argument("load_corpus: size must be >= 1");
  const auto buf = serial::read_file(path);
  const std::size_t record_len = 1 + 3 * std::size_t(size) * size;
  if (buf.empty() || buf.size() % record_len != 0)
    throw serial::ParseError("corpus '" + path + "': length " + std::to_string(buf.size()) +
                             " bytes is not a positive multiple of the record length " +
                             std::to_string(record_len));
  Dataset ds;
  ds.size = size;
  const std::size_t n = buf.size() / record_len;
  ds.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = buf.data() + r * record_len;
    Image<float> img = Image<float>::zeros(size, size);
    for (Index i = 0; i < img.data.size(); ++i)
      img.data[i] = float(rec[1 + i]) / 255.0f;
    ds.records.push_back({std::int64_t(r), std::move(img)});
  }
  return ds;
}

// Per-epoch permutation of record indices, split into batches; the final
// short batch is kept. The permutation depends only on (seed, epoch).
inline std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size,
                                                     std::uint64_t seed, Index epoch) {
  if (batch_size < 1) throw std::invalid_argument("epoch_batches: batch_size must be >= 1");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[std::size_t(i)] = i;
  Rng rng = derive_rng(seed, {stream::kShuffle, std::uint64_t(epoch)});
  for (Index i = n - 1; i > 0; --i)
    std::swap(perm[std::size_t(i)], perm[std::size_t(rng.uniform_int(0, i))]);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace hcl::data
