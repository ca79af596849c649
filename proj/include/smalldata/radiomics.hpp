#pragma once

// Classical 79-value image descriptor:
//   12 GLCM configurations (offsets 1,2,4,6 x angles 0,45,90 degrees), each
//   contributing contrast, dissimilarity, homogeneity, ASM, correlation and
//   GLCM entropy (72 values, offset-major then angle);
//   then mean, std, central moments m2..m5 of intensities rescaled to [0,1];
//   then the Shannon entropy (bits) of the 256-bin intensity histogram.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smalldata/csv.hpp"
#include "smalldata/image.hpp"

namespace smalldata::rad {

inline constexpr std::array<std::size_t, 4> kOffsets{1, 2, 4, 6};
inline constexpr std::array<int, 3> kAngles{0, 45, 90};
inline constexpr std::size_t kGlcmStats = 6;
inline constexpr std::size_t kFeatureCount = kOffsets.size() * kAngles.size() * kGlcmStats + 6 + 1;
static_assert(kFeatureCount == 79);

struct GlcmConfig {
  std::size_t levels = 32;
};

using FeatureVector = std::array<double, kFeatureCount>;

/// Row-major levels x levels matrix.
struct Glcm {
  std::size_t levels = 0;
  std::vector<double> p;

  double operator()(std::size_t i, std::size_t j) const { return p[i * levels + j]; }
};

/// Uniform intensity binning of 0..255 into `levels` bins.
inline std::size_t quantize(std::uint8_t v, std::size_t levels) { return static_cast<std::size_t>(v) * levels / 256; }

/// (row, col) displacement for an angle: 0 -> (0,+d), 45 -> (-d,+d), 90 -> (-d,0).
inline std::pair<long, long> displacement(std::size_t offset, int angle_deg) {
  const long d = static_cast<long>(offset);
  switch (angle_deg) {
    case 0: return {0, d};
    case 45: return {-d, d};
    case 90: return {-d, 0};
    default: throw std::invalid_argument("glcm: unsupported angle " + std::to_string(angle_deg));
  }
}

/// Symmetric, normalized co-occurrence matrix.
inline Glcm glcm(const Image& img, std::size_t offset, int angle_deg, std::size_t levels) {
  if (levels < 2) throw std::invalid_argument("glcm: levels must be >= 2");
  if (offset == 0 || offset >= std::min(img.height, img.width))
    throw std::invalid_argument("glcm: offset " + std::to_string(offset) + " must be in [1, min(dims))");
  const auto [dr, dc] = displacement(offset, angle_deg);
  Glcm m{levels, std::vector<double>(levels * levels, 0.0)};
  const long H = static_cast<long>(img.height), W = static_cast<long>(img.width);
  double total = 0.0;
  for (long r = std::max(0L, -dr); r < std::min(H, H - dr); ++r)
    for (long c = std::max(0L, -dc); c < std::min(W, W - dc); ++c) {
      const std::size_t a = quantize(img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)), levels);
      const std::size_t b = quantize(img.at(static_cast<std::size_t>(r + dr), static_cast<std::size_t>(c + dc)), levels);
      m.p[a * levels + b] += 1.0;
      m.p[b * levels + a] += 1.0;
      total += 2.0;
    }
  for (auto& v : m.p) v /= total;
  return m;
}

/// [contrast, dissimilarity, homogeneity, ASM, correlation, entropy (bits)]
inline std::array<double, kGlcmStats> glcm_stats(const Glcm& m) {
  const std::size_t L = m.levels;
  double contrast = 0, dissimilarity = 0, homogeneity = 0, asm_ = 0, entropy = 0;
  double mu_i = 0, mu_j = 0;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      const double p = m(i, j);
      const double d = static_cast<double>(i) - static_cast<double>(j);
      contrast += p * d * d;
      dissimilarity += p * std::fabs(d);
      homogeneity += p / (1.0 + d * d);
      asm_ += p * p;
      if (p > 0.0) entropy -= p * std::log2(p);
      mu_i += static_cast<double>(i) * p;
      mu_j += static_cast<double>(j) * p;
    }
  double var_i = 0, var_j = 0, cov = 0;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      const double p = m(i, j);
      const double di = static_cast<double>(i) - mu_i, dj = static_cast<double>(j) - mu_j;
      var_i += p * di * di;
      var_j += p * dj * dj;
      cov += p * di * dj;
    }
  const double correlation = (var_i > 0.0 && var_j > 0.0) ? cov / std::sqrt(var_i * var_j) : 0.0;
  return {contrast, dissimilarity, homogeneity, asm_, correlation, entropy};
}

/// [mean, std, m2, m3, m4, m5] of intensities scaled to [0,1]; m_k are central moments.
inline std::array<double, 6> intensity_stats(const Image& img) {
  if (img.empty()) throw std::invalid_argument("intensity_stats: empty image");
  // Histogram-weighted sums keep the result independent of pixel order.
  std::array<double, 256> hist{};
  for (auto v : img.pixels) hist[v] += 1.0;
  const double n = static_cast<double>(img.pixels.size());
  double mean = 0.0;
  for (std::size_t v = 0; v < 256; ++v) mean += hist[v] * (static_cast<double>(v) / 255.0);
  mean /= n;
  std::array<double, 4> m{};
  for (std::size_t v = 0; v < 256; ++v) {
    if (hist[v] == 0.0) continue;
    const double d = static_cast<double>(v) / 255.0 - mean;
    const double d2 = d * d;
    m[0] += hist[v] * d2;
    m[1] += hist[v] * d2 * d;
    m[2] += hist[v] * d2 * d2;
    m[3] += hist[v] * d2 * d2 * d;
  }
  for (auto& x : m) x /= n;
  return {mean, std::sqrt(m[0]), m[0], m[1], m[2], m[3]};
}

inline double entropy(const Image& img) {
  if (img.empty()) throw std::invalid_argument("entropy: empty image");
  std::array<std::size_t, 256> hist{};
  for (auto v : img.pixels) ++hist[v];
  const double n = static_cast<double>(img.pixels.size());
  double h = 0.0;
  for (auto c : hist)
    if (c) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  return h;
}

inline FeatureVector extract_features(const Image& img, const GlcmConfig& cfg = {}) {
  FeatureVector f{};
  std::size_t k = 0;
  for (auto offset : kOffsets)
    for (auto angle : kAngles)
      for (double s : glcm_stats(glcm(img, offset, angle, cfg.levels))) f[k++] = s;
  for (double s : intensity_stats(img)) f[k++] = s;
  f[k++] = entropy(img);
  return f;
}

inline std::vector<std::string> feature_names() {
  static const char* stat_names[kGlcmStats] = {"contrast", "dissimilarity", "homogeneity", "asm", "correlation", "entropy"};
  std::vector<std::string> names;
  for (auto offset : kOffsets)
    for (auto angle : kAngles)
      for (auto s : stat_names) names.push_back("glcm_d" + std::to_string(offset) + "_a" + std::to_string(angle) + "_" + s);
  for (auto s : {"mean", "std", "m2", "m3", "m4", "m5", "entropy"}) names.emplace_back(s);
  return names;
}

/// CSV with header `image_id,<79 feature names>`; values at 17 significant digits.
inline void write_feature_csv(std::ostream& os, const std::vector<std::string>& ids, const std::vector<FeatureVector>& rows) {
  os << "image_id";
  for (const auto& n : feature_names()) os << ',' << n;
  os << '\n';
  const auto old = os.precision(17);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << csv_escape(ids[r]);
    for (double v : rows[r]) os << ',' << v;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace smalldata::rad
