#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "smalldata/augment.hpp"

using namespace smalldata;
using namespace smalldata::aug;

namespace {

Image noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

}  // namespace

TEST(ResizeWidth, SquareSourceGoesTo250) {
  const auto out = resize_width(Image(1024, 1024, 40));
  EXPECT_EQ(out.height, 250u);
  EXPECT_EQ(out.width, 250u);
  const auto same = resize_width(noise_image(250, 250, 1));
  EXPECT_EQ(same.height, 250u);
  EXPECT_EQ(same.width, 250u);
}

TEST(ResizeWidth, ConstantImageStaysConstant) {
  const auto out = resize_width(Image(300, 517, 173));
  for (auto p : out.pixels) ASSERT_EQ(p, 173);
  EXPECT_THROW(resize_width(Image(10, 1)), std::invalid_argument);
}

TEST(ResizeWidth, UsesMostCommonAspect) {
  const double aspect = most_common_aspect({{1024, 1024}, {600, 800}, {300, 400}, {512, 512}, {900, 1200}});
  EXPECT_DOUBLE_EQ(aspect, 0.75);
  EXPECT_EQ(resize_width(Image(600, 800), 250, aspect).height, 188u);
}

TEST(RandomAugment, OutputIsAlways236) {
  std::mt19937_64 rng(3);
  const auto img = noise_image(250, 250, 2);
  for (int i = 0; i < 20; ++i) {
    const auto out = random_augment(img, rng);
    EXPECT_EQ(out.height, 236u);
    EXPECT_EQ(out.width, 236u);
  }
  EXPECT_THROW(random_augment(noise_image(235, 300, 0), rng), std::invalid_argument);
}

TEST(RandomAugment, AngleStreamIsCentered) {
  std::mt19937_64 rng(11);
  double sum = 0.0, lo = 0.0, hi = 0.0;
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto d = draw_augment(250, 250, rng);
    sum += d.angle_deg;
    lo = std::min(lo, d.angle_deg);
    hi = std::max(hi, d.angle_deg);
    flips += d.flip;
    ASSERT_LE(d.top, 14u);
    ASSERT_LE(d.left, 14u);
  }
  EXPECT_LT(std::fabs(sum / 10000.0), 0.5);
  EXPECT_GE(lo, -10.0);
  EXPECT_LE(hi, 10.0);
  EXPECT_NEAR(flips / 10000.0, 0.5, 0.03);
}

TEST(Flip, IsAnInvolution) {
  const auto img = noise_image(13, 17, 5);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_horizontal(img).at(2, 0), img.at(2, 16));
}

TEST(Rotate, QuarterTurnOfSquareIsExact) {
  const auto img = noise_image(9, 9, 6);
  const auto r = rotate(img, 90.0);
  // Counter-clockwise in image coordinates: out(r, c) = in(c, W-1-r) for the
  // inverse map used by rotate().
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 9; ++x) EXPECT_NEAR(r.at(y, x), img.at(8 - x, y), 1) << y << "," << x;
}

TEST(Tta, IdentityTransformsReproduceSinglePrediction) {
  const auto img = noise_image(20, 20, 9);
  auto predict = [](const Image& im) {
    double s = 0.0;
    for (auto p : im.pixels) s += p;
    return std::vector<double>{s / (255.0 * static_cast<double>(im.pixels.size())), 0.1 + 1e-3 * im.at(3, 4)};
  };
  std::mt19937_64 rng(1);
  const auto r = tta_predict(predict, img, rng, identity_config(20));
  EXPECT_EQ(r.mean, predict(img));
}

TEST(Tta, ConstantModelGivesConstant) {
  std::mt19937_64 rng(2);
  const auto r = tta_predict([](const Image&) { return std::vector<double>{0.3, 0.7}; }, noise_image(250, 250, 1), rng);
  EXPECT_DOUBLE_EQ(r.mean[0], 0.3);
  EXPECT_DOUBLE_EQ(r.mean[1], 0.7);
}

TEST(Tta, MeanOfLoggedCopiesAndContainment) {
  std::mt19937_64 rng(4);
  std::size_t seen = 0;
  auto predict = [&](const Image& im) {
    EXPECT_EQ(im.height, 236u);
    EXPECT_EQ(im.width, 236u);
    ++seen;
    double s = 0.0;
    for (auto p : im.pixels) s += p;
    return std::vector<double>{s / (255.0 * static_cast<double>(im.pixels.size()))};
  };
  const auto r = tta_predict(predict, noise_image(250, 250, 3), rng);
  ASSERT_EQ(r.copies.size(), 5u);
  EXPECT_EQ(seen, 5u);
  double direct = 0.0, lo = 1.0, hi = 0.0;
  for (const auto& c : r.copies) direct += c[0], lo = std::min(lo, c[0]), hi = std::max(hi, c[0]);
  EXPECT_NEAR(r.mean[0], direct / 5.0, 1e-15);
  EXPECT_GE(r.mean[0], lo);
  EXPECT_LE(r.mean[0], hi);
}
