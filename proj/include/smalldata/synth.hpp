#pragma once

// Synthetic grayscale texture families used for desk-scale experiments:
// oriented sinusoidal gratings (6 orientations x 2 frequencies), a
// checkerboard and concentric rings. Each draw jitters phase, orientation and
// contrast and adds Gaussian noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "smalldata/image.hpp"

namespace smalldata::synth {

inline constexpr std::size_t kTextureClasses = 14;

struct TextureOptions {
  double amplitude_lo = 40.0;
  double amplitude_hi = 90.0;
  double noise_sd = 20.0;
  double angle_jitter_deg = 6.0;
};

inline std::string texture_name(std::size_t cls) {
  if (cls < 12) {
    const int angle = static_cast<int>(cls % 6) * 30;
    return std::string(cls < 6 ? "grating_low_" : "grating_high_") + std::to_string(angle);
  }
  if (cls == 12) return "checker";
  if (cls == 13) return "rings";
  throw std::out_of_range("texture class " + std::to_string(cls) + " outside [0, 14)");
}

template <class Rng>
Image texture(std::size_t cls, std::size_t size, Rng& rng, const TextureOptions& opt = {}) {
  if (cls >= kTextureClasses) throw std::out_of_range("texture class " + std::to_string(cls) + " outside [0, 14)");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, opt.noise_sd);
  const double two_pi = 2.0 * std::numbers::pi;
  const double amp = opt.amplitude_lo + (opt.amplitude_hi - opt.amplitude_lo) * unit(rng);
  const double phase = two_pi * unit(rng);
  const double jitter = (2.0 * unit(rng) - 1.0) * opt.angle_jitter_deg * std::numbers::pi / 180.0;
  const double cy = static_cast<double>(size) * (0.3 + 0.4 * unit(rng));
  const double cx = static_cast<double>(size) * (0.3 + 0.4 * unit(rng));
  Image img(size, size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double y = static_cast<double>(r), x = static_cast<double>(c);
      double v;
      if (cls < 12) {
        const double theta = static_cast<double>(cls % 6) * std::numbers::pi / 6.0 + jitter;
        const double freq = cls < 6 ? 1.0 / 8.0 : 1.0 / 4.0;
        v = std::sin(two_pi * freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
      } else if (cls == 12) {
        v = std::sin(two_pi * x / 8.0 + phase) * std::sin(two_pi * y / 8.0 + phase) >= 0.0 ? 1.0 : -1.0;
      } else {
        v = std::sin(two_pi * std::hypot(y - cy, x - cx) / 6.0 + phase);
      }
      const double p = 128.0 + amp * v + noise(rng);
      img.at(r, c) = static_cast<std::uint8_t>(std::lround(std::fmin(255.0, std::fmax(0.0, p))));
    }
  return img;
}

struct LabeledImage {
  Image image;
  std::size_t cls = 0;
};

/// `per_class` images of each listed class, class-major, deterministic in `seed`.
inline std::vector<LabeledImage> texture_set(const std::vector<std::size_t>& classes, std::size_t per_class, std::size_t size,
                                             std::uint64_t seed, const TextureOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledImage> out;
  for (auto cls : classes)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back({texture(cls, size, rng, opt), cls});
  return out;
}

}  // namespace smalldata::synth
