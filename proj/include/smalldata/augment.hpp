#pragma once

// Training-time augmentation (flip, small rotation, random crop), resizing and
// test-time augmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "smalldata/image.hpp"

namespace smalldata::aug {

struct AugmentConfig {
  std::size_t crop = 236;
  double max_rotation_deg = 10.0;
  double flip_prob = 0.5;
};

/// Identity transforms: no flip, no rotation, crop equal to the image size.
inline AugmentConfig identity_config(std::size_t image_size) { return {image_size, 0.0, 0.0}; }

inline std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

namespace detail {
// Bilinear sample with zero outside the image.
inline double sample_zero(const Image& img, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double wy = y - fy, wx = x - fx;
  auto px = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(img.height) || c >= static_cast<long>(img.width)) return 0.0;
    return img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) + wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}
}  // namespace detail

/// Bilinear resample to an explicit size (half-pixel centers, edge clamped).
inline Image resize(const Image& img, std::size_t height, std::size_t width) {
  if (img.empty() || height == 0 || width == 0) throw std::invalid_argument("resize: empty image or target");
  if (height == img.height && width == img.width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double ymax = static_cast<double>(img.height - 1), xmax = static_cast<double>(img.width - 1);
  for (std::size_t r = 0; r < height; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, ymax);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < width; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, xmax);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = x - static_cast<double>(x0);
      const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0) + wx * img.at(y0, x1)) +
                       wy * ((1 - wx) * img.at(y1, x0) + wx * img.at(y1, x1));
      out.at(r, c) = to_pixel(v);
    }
  }
  return out;
}

/// Aspect ratio (height / width) shared by the most images; ties go to the smaller ratio.
inline double most_common_aspect(const std::vector<std::pair<std::size_t, std::size_t>>& dims) {
  if (dims.empty()) return 1.0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (auto [h, w] : dims) {
    const std::size_t g = std::gcd(h, w);
    ++counts[{h / g, w / g}];
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return static_cast<double>(best->first.first) / static_cast<double>(best->first.second);
}

/// Resizes to `target_width`, height = round(target_width * aspect).
inline Image resize_width(const Image& img, std::size_t target_width = 250, double aspect = 1.0) {
  if (img.width < 2) throw std::invalid_argument("resize_width: width must be >= 2");
  const auto h = static_cast<std::size_t>(std::lround(static_cast<double>(target_width) * aspect));
  return resize(img, std::max<std::size_t>(h, 1), target_width);
}

inline Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t r = 0; r < img.height; ++r) std::reverse(out.pixels.begin() + r * img.width, out.pixels.begin() + (r + 1) * img.width);
  return out;
}

/// Rotation about the image center with bilinear resampling; corners are zero-filled.
inline Image rotate(const Image& img, double degrees) {
  if (degrees == 0.0) return img;
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cy = (static_cast<double>(img.height) - 1) / 2.0, cx = (static_cast<double>(img.width) - 1) / 2.0;
  Image out(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t col = 0; col < img.width; ++col) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(col) - cx;
      // inverse map: rotate the destination point back by -theta
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      out.at(r, col) = to_pixel(detail::sample_zero(img, sy, sx));
    }
  return out;
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (top + height > img.height || left + width > img.width)
    throw std::invalid_argument("crop: window exceeds image bounds");
  Image out(height, width);
  for (std::size_t r = 0; r < height; ++r)
    std::copy_n(img.pixels.begin() + (top + r) * img.width + left, width, out.pixels.begin() + r * width);
  return out;
}

inline Image center_crop(const Image& img, std::size_t size) {
  if (img.height < size || img.width < size)
    throw std::invalid_argument("center_crop: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                " smaller than crop " + std::to_string(size));
  return crop(img, (img.height - size) / 2, (img.width - size) / 2, size, size);
}

/// One realization of the random training transform.
struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
  std::size_t top = 0;
  std::size_t left = 0;
};

template <class Rng>
AugmentDraw draw_augment(std::size_t height, std::size_t width, Rng& rng, const AugmentConfig& cfg = {}) {
  if (height < cfg.crop || width < cfg.crop)
    throw std::invalid_argument("random_augment: image " + std::to_string(height) + "x" + std::to_string(width) +
                                " smaller than crop " + std::to_string(cfg.crop));
  AugmentDraw d;
  d.flip = std::bernoulli_distribution(cfg.flip_prob)(rng);
  d.angle_deg = cfg.max_rotation_deg > 0.0
                    ? std::uniform_real_distribution<double>(-cfg.max_rotation_deg, cfg.max_rotation_deg)(rng)
                    : 0.0;
  d.top = std::uniform_int_distribution<std::size_t>(0, height - cfg.crop)(rng);
  d.left = std::uniform_int_distribution<std::size_t>(0, width - cfg.crop)(rng);
  return d;
}

inline Image apply_augment(const Image& img, const AugmentDraw& d, const AugmentConfig& cfg = {}) {
  Image out = d.flip ? flip_horizontal(img) : img;
  out = rotate(out, d.angle_deg);
  return crop(out, d.top, d.left, cfg.crop, cfg.crop);
}

/// Flip w.p. flip_prob, rotate by U(-max, +max) degrees, then a uniformly
/// placed crop x crop window.
template <class Rng>
Image random_augment(const Image& img, Rng& rng, const AugmentConfig& cfg = {}) {
  return apply_augment(img, draw_augment(img.height, img.width, rng, cfg), cfg);
}

struct TtaResult {
  std::vector<double> mean;
  std::vector<std::vector<double>> copies;  // 4 augmented copies, then the center-cropped original
};

inline constexpr std::size_t kTtaAugmentedCopies = 4;

/// Predicts on four randomly augmented copies plus the center-cropped
/// original and averages per label. `predict(const Image&)` returns per-label
/// probabilities.
template <class Predict, class Rng>
TtaResult tta_predict(Predict&& predict, const Image& img, Rng& rng, const AugmentConfig& cfg = {}) {
  TtaResult r;
  for (std::size_t k = 0; k < kTtaAugmentedCopies; ++k) r.copies.push_back(predict(random_augment(img, rng, cfg)));
  r.copies.push_back(predict(center_crop(img, cfg.crop)));
  // Averaged as an offset from the first copy so identical copies reproduce
  // that copy exactly.
  const auto& first = r.copies.front();
  r.mean = first;
  for (std::size_t j = 0; j < first.size(); ++j) {
    double offset = 0.0;
    for (const auto& c : r.copies) offset += c[j] - first[j];
    r.mean[j] += offset / static_cast<double>(r.copies.size());
  }
  return r;
}

}  // namespace smalldata::aug
