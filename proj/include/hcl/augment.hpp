#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hcl/image.hpp"
#include "hcl/rng.hpp"

namespace hcl::augment {

// A sampling view v: crop rectangle in original-image pixel coordinates plus
// a horizontal-flip flag.
struct ViewRect {
  int x0 = 0, y0 = 0;
  int w = 0, h = 0;
  bool flipped = false;
};

struct AugConfig {
  double area_min = 0.2, area_max = 1.0;
  double aspect_min = 3.0 / 4.0, aspect_max = 4.0 / 3.0;
  bool flip_enabled = true;
  double jitter_brightness = 0.4, jitter_contrast = 0.4, jitter_saturation = 0.4;
  int out_size = 64;

  AugConfig crop_only() const {
    AugConfig c = *this;
    c.flip_enabled = false;
    c.jitter_brightness = c.jitter_contrast = c.jitter_saturation = 0.0;
    return c;
  }
};

inline void validate_aug_config(const AugConfig& c) {
  if (!(c.area_min > 0.0 && c.area_min <= c.area_max && c.area_max <= 1.0))
    throw std::invalid_argument("aug config: need 0 < area_min <= area_max <= 1");
  if (!(c.aspect_min > 0.0 && c.aspect_min <= c.aspect_max))
    throw std::invalid_argument("aug config: need 0 < aspect_min <= aspect_max");
  if (c.out_size < 1) throw std::invalid_argument("aug config: out_size must be >= 1");
  if (c.jitter_brightness < 0 || c.jitter_contrast < 0 || c.jitter_saturation < 0)
    throw std::invalid_argument("aug config: jitter strengths must be >= 0");
}

inline bool rect_valid(const ViewRect& r, int H, int W) {
  return r.w >= 1 && r.h >= 1 && r.x0 >= 0 && r.y0 >= 0 && r.x0 + r.w <= W && r.y0 + r.h <= H;
}

// Area-and-aspect rejection sampling with a centered fallback. The area
// bound is enforced on the rounded integer rectangle, so it holds for every
// draw, not just in expectation. Draw order: (area, log-aspect, x0, y0, flip)
// per attempt.
inline ViewRect sample_view(Rng& rng, int H, int W, const AugConfig& cfg) {
  if (H < 1 || W < 1) throw std::invalid_argument("sample_view: empty image");
  const double area = double(H) * double(W);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(cfg.area_min, cfg.area_max) * area;
    const double ratio = std::exp(rng.uniform(std::log(cfg.aspect_min), std::log(cfg.aspect_max)));
    const int w = int(std::llround(std::sqrt(target * ratio)));
    const int h = int(std::llround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > W || h > H) continue;
    const double frac = double(w) * double(h) / area;
    if (frac < cfg.area_min || frac > cfg.area_max) continue;
    ViewRect r;
    r.w = w;
    r.h = h;
    r.x0 = int(rng.uniform_int(0, W - w));
    r.y0 = int(rng.uniform_int(0, H - h));
    r.flipped = cfg.flip_enabled && rng.bernoulli();
    return r;
  }
  // centered fallback at the largest size satisfying the bounds
  const double ratio = std::clamp(1.0, cfg.aspect_min, cfg.aspect_max);
  int best_w = 1, best_h = 1;
  for (int h = std::min(H, int(std::floor(std::sqrt(cfg.area_max * area / ratio)))); h >= 1; --h) {
    const int w = std::max(1, int(std::llround(h * ratio)));
    if (w > W) continue;
    if (double(w) * h <= cfg.area_max * area) {
      best_w = w;
      best_h = h;
      break;
    }
  }
  ViewRect r;
  r.w = best_w;
  r.h = best_h;
  r.x0 = (W - best_w) / 2;
  r.y0 = (H - best_h) / 2;
  r.flipped = cfg.flip_enabled && rng.bernoulli();
  return r;
}

// IoU of the two rectangles placed back on the original image plane; the
// flip flag plays no role.
inline double view_iou(const ViewRect& a, const ViewRect& b) {
  const double iw = std::max(0, std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0));
  const double ih = std::max(0, std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = double(a.w) * a.h + double(b.w) * b.h - inter;
  return inter / uni;
}

// Bilinear crop-and-resize with half-pixel centers; sample neighbours clamp
// to the crop rectangle. Weights are computed in double regardless of the
// pixel type.
template <class S>
Image<S> crop_resize(const Image<S>& img, const ViewRect& rect, int out_size) {
  if (!rect_valid(rect, img.height, img.width))
    throw std::invalid_argument("crop_resize: rect outside image");
  Image<S> out = Image<S>::zeros(out_size, out_size);
  const double sy_scale = double(rect.h) / out_size;
  const double sx_scale = double(rect.w) / out_size;
  for (int y = 0; y < out_size; ++y) {
    const double sy = rect.y0 + (y + 0.5) * sy_scale - 0.5;
    const long y0f = long(std::floor(sy));
    const double fy = sy - double(y0f);
    const int y0c = int(std::clamp<long>(y0f, rect.y0, rect.y0 + rect.h - 1));
    const int y1c = int(std::clamp<long>(y0f + 1, rect.y0, rect.y0 + rect.h - 1));
    for (int x = 0; x < out_size; ++x) {
      const double sx = rect.x0 + (x + 0.5) * sx_scale - 0.5;
      const long x0f = long(std::floor(sx));
      const double fx = sx - double(x0f);
      const int x0c = int(std::clamp<long>(x0f, rect.x0, rect.x0 + rect.w - 1));
      const int x1c = int(std::clamp<long>(x0f + 1, rect.x0, rect.x0 + rect.w - 1));
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * double(img.at(c, y0c, x0c)) + fx * double(img.at(c, y0c, x1c));
        const double bot = (1.0 - fx) * double(img.at(c, y1c, x0c)) + fx * double(img.at(c, y1c, x1c));
        out.at(c, y, x) = S((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

template <class S>
Image<S> flip_horizontal(const Image<S>& img) {
  Image<S> out = Image<S>::zeros(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

// Brightness, contrast and saturation scaling by factors drawn from
// [1-s, 1+s]; plain per-pixel arithmetic, clamped to [0,1] at the end.
// Factors exactly equal to 1 are skipped so zero strengths give the identity.
template <class S>
void color_jitter(Image<S>& img, Rng& rng, double s_brightness, double s_contrast,
                  double s_saturation) {
  const double fb = rng.uniform(1.0 - s_brightness, 1.0 + s_brightness);
  const double fc = rng.uniform(1.0 - s_contrast, 1.0 + s_contrast);
  const double fs = rng.uniform(1.0 - s_saturation, 1.0 + s_saturation);
  const Index plane = Index(img.height) * img.width;
  if (fb != 1.0) img.data *= S(fb);
  if (fc != 1.0) {
    double mean = 0.0;
    for (Index i = 0; i < img.data.size(); ++i) mean += double(img.data[i]);
    mean /= double(img.data.size());
    for (Index i = 0; i < img.data.size(); ++i)
      img.data[i] = S((double(img.data[i]) - mean) * fc + mean);
  }
  if (fs != 1.0) {
    for (Index p = 0; p < plane; ++p) {
      const double gray =
          (double(img.data[p]) + double(img.data[plane + p]) + double(img.data[2 * plane + p])) /
          3.0;
      for (int c = 0; c < 3; ++c)
        img.data[c * plane + p] = S((double(img.data[c * plane + p]) - gray) * fs + gray);
    }
  }
  for (Index i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp(img.data[i], S(0), S(1));
}

// s(x, v): crop -> bilinear rescale -> optional horizontal flip -> jitter.
template <class S>
Image<S> apply_view(const Image<S>& img, const ViewRect& rect, const AugConfig& cfg, Rng& rng) {
  Image<S> out = crop_resize(img, rect, cfg.out_size);
  if (rect.flipped) out = flip_horizontal(out);
  color_jitter(out, rng, cfg.jitter_brightness, cfg.jitter_contrast, cfg.jitter_saturation);
  return out;
}

}  // namespace hcl::augment
