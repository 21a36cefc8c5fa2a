#include "workbench/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "workbench/error.hpp"

namespace wb::augment {

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.rotation_factor = 0.0;
  c.contrast_factor = 0.0;
  c.translation_fraction = 0.0;
  c.black_spots.count = {0, 0};
  c.white_spots.count = {0, 0};
  c.dashed_lines.count = {0, 0};
  return c;
}

void AugmentConfig::validate() const {
  if (!(rotation_factor >= 0)) throw ValidationError("rotation_factor must be >= 0");
  if (!(contrast_factor >= 0)) throw ValidationError("contrast_factor must be >= 0");
  if (!(translation_fraction >= 0 && translation_fraction <= 1))
    throw ValidationError("translation_fraction must be in [0, 1]");
  for (const auto* s : {&black_spots, &white_spots}) {
    if (s->count.min < 0 || s->count.max < s->count.min)
      throw ValidationError("spot count range is degenerate");
    if (s->count.max > 0 && (s->radius.min <= 0 || s->radius.max < s->radius.min))
      throw ValidationError("spot radius range is degenerate");
  }
  const auto& d = dashed_lines;
  if (d.count.min < 0 || d.count.max < d.count.min)
    throw ValidationError("dashed line count range is degenerate");
  if (d.count.max > 0 &&
      (d.length.min <= 0 || d.length.max < d.length.min || d.dash <= 0 || d.gap < 0))
    throw ValidationError("dashed line parameters are degenerate");
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double sample_bilinear(const ImageTensor& img, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto px = [&](int xx, int yy) {
    if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) return kBackground;
    return img.at(yy, xx, c);
  };
  return (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x0 + 1, y0)) +
         fy * ((1 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
}

ImageTensor add_spots(const ImageTensor& img, const SpotParams& params, double value, Rng& rng) {
  ImageTensor out = img;
  const int count = uniform_int(rng, params.count.min, params.count.max);
  for (int i = 0; i < count; ++i) {
    const double r = uniform(rng, params.radius.min, params.radius.max);
    // Keep the disc inside the frame when it fits.
    auto centre = [&](int extent) {
      const double lo = r, hi = extent - 1 - r;
      return hi >= lo ? uniform(rng, lo, hi) : uniform(rng, 0.0, extent - 1.0);
    };
    const double cx = centre(img.width), cy = centre(img.height);
    draw_disc(out, cx, cy, r, value);
  }
  return out;
}

}  // namespace

ImageTensor rotate_by(const ImageTensor& img, double degrees) {
  if (degrees == 0.0) return img;
  ImageTensor out(img.height, img.width, img.channels);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      // Inverse map: output pixel -> source location.
      const double dx = x - cx, dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(y, x, ch) = std::clamp(sample_bilinear(img, sx, sy, ch), 0.0, 1.0);
    }
  return out;
}

double draw_rotation_degrees(double factor, Rng& rng) {
  const double bound = factor * 360.0;
  return uniform(rng, -bound, bound);
}

ImageTensor rotate(const ImageTensor& img, double factor, Rng& rng) {
  if (factor == 0.0) return img;
  return rotate_by(img, draw_rotation_degrees(factor, rng));
}

ImageTensor adjust_contrast_by(const ImageTensor& img, double scale) {
  ImageTensor out = img;
  const double m = img.mean();
  for (auto& v : out.pixels) v = std::clamp(m + scale * (v - m), 0.0, 1.0);
  return out;
}

ImageTensor adjust_contrast(const ImageTensor& img, double factor, Rng& rng) {
  if (factor == 0.0) return img;
  return adjust_contrast_by(img, uniform(rng, 1.0 - factor, 1.0 + factor));
}

ImageTensor translate_by(const ImageTensor& img, int dx, int dy) {
  if (dx == 0 && dy == 0) return img;
  ImageTensor out(img.height, img.width, img.channels, kBackground);
  for (int y = 0; y < img.height; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= img.height) continue;
    for (int x = 0; x < img.width; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= img.width) continue;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

std::pair<int, int> draw_translation(int width, int height, double fraction, Rng& rng) {
  const int mx = static_cast<int>(std::floor(fraction * width));
  const int my = static_cast<int>(std::floor(fraction * height));
  const int dx = uniform_int(rng, -mx, mx);
  const int dy = uniform_int(rng, -my, my);
  return {dx, dy};
}

ImageTensor translate(const ImageTensor& img, double fraction, Rng& rng) {
  if (fraction == 0.0) return img;
  auto [dx, dy] = draw_translation(img.width, img.height, fraction, rng);
  return translate_by(img, dx, dy);
}

void draw_disc(ImageTensor& img, double cx, double cy, double radius, double value) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double alpha = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (alpha <= 0) continue;
      for (int c = 0; c < img.channels; ++c) {
        double& p = img.at(y, x, c);
        p = std::clamp(p * (1 - alpha) + value * alpha, 0.0, 1.0);
      }
    }
}

ImageTensor add_black_spots(const ImageTensor& img, const SpotParams& params, Rng& rng) {
  return add_spots(img, params, 0.0, rng);
}

ImageTensor add_white_spots(const ImageTensor& img, const SpotParams& params, Rng& rng) {
  return add_spots(img, params, 1.0, rng);
}

ImageTensor add_dashed_lines(const ImageTensor& img, const DashedLineParams& params, Rng& rng) {
  ImageTensor out = img;
  const int count = uniform_int(rng, params.count.min, params.count.max);
  const double period = params.dash + params.gap;
  for (int i = 0; i < count; ++i) {
    const double ax = uniform(rng, 0.0, img.width - 1.0);
    const double ay = uniform(rng, 0.0, img.height - 1.0);
    const double theta = uniform(rng, 0.0, std::numbers::pi);
    const double len = uniform(rng, params.length.min, params.length.max);
    const double ux = std::cos(theta), uy = std::sin(theta);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double rx = x - ax, ry = y - ay;
        const double along = rx * ux + ry * uy;
        if (std::abs(along) > len / 2) continue;
        if (std::fmod(along + len / 2, period) >= params.dash) continue;
        const double across = std::abs(-rx * uy + ry * ux);
        const double alpha = std::clamp(1.0 - across, 0.0, 1.0);
        if (alpha <= 0) continue;
        for (int c = 0; c < img.channels; ++c) {
          double& p = out.at(y, x, c);
          p = std::clamp(p * (1 - alpha), 0.0, 1.0);
        }
      }
  }
  return out;
}

ImageTensor augment(const ImageTensor& img, const AugmentConfig& config, std::uint64_t counter) {
  auto stream = [&](std::uint64_t transform) {
    return derive_rng({config.seed, counter, transform});
  };
  ImageTensor out = img;
  if (config.rotation_factor > 0) {
    auto rng = stream(1);
    out = rotate(out, config.rotation_factor, rng);
  }
  if (config.contrast_factor > 0) {
    auto rng = stream(2);
    out = adjust_contrast(out, config.contrast_factor, rng);
  }
  if (config.translation_fraction > 0) {
    auto rng = stream(3);
    out = translate(out, config.translation_fraction, rng);
  }
  if (config.black_spots.count.max > 0) {
    auto rng = stream(4);
    out = add_black_spots(out, config.black_spots, rng);
  }
  if (config.white_spots.count.max > 0) {
    auto rng = stream(5);
    out = add_white_spots(out, config.white_spots, rng);
  }
  if (config.dashed_lines.count.max > 0) {
    auto rng = stream(6);
    out = add_dashed_lines(out, config.dashed_lines, rng);
  }
  return out;
}

}  // namespace wb::augment
