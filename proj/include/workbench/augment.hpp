#pragma once

#include <cstdint>

#include "workbench/image.hpp"
#include "workbench/rng.hpp"

namespace wb::augment {

struct IntRange {
  int min = 0;
  int max = 0;
};

struct RealRange {
  double min = 0.0;
  double max = 0.0;
};

struct SpotParams {
  IntRange count{0, 3};
  RealRange radius{1.0, 3.0};
};

struct DashedLineParams {
  IntRange count{0, 3};
  RealRange length{6.0, 20.0};
  double dash = 3.0;  // drawn segment length, px
  double gap = 2.0;   // blank segment length, px
};

/// Defaults are the auxiliary-model augmentation suite: rotation factor 0.05
/// (of a full turn), contrast factor 0.5, translation 20% of each dimension,
/// plus pen-stroke black spots, white spots and dashed lines.
struct AugmentConfig {
  double rotation_factor = 0.05;
  double contrast_factor = 0.5;
  double translation_fraction = 0.2;
  SpotParams black_spots{};
  SpotParams white_spots{};
  DashedLineParams dashed_lines{};
  std::uint64_t seed = 0;

  /// Every transform disabled; augment() is then an exact no-op.
  static AugmentConfig disabled();
  void validate() const;
};

/// Background fill for vacated regions: white paper.
inline constexpr double kBackground = 1.0;

/// Rotation by `degrees` about the image centre, bilinear, white fill.
ImageTensor rotate_by(const ImageTensor& img, double degrees);
double draw_rotation_degrees(double factor, Rng& rng);
ImageTensor rotate(const ImageTensor& img, double factor, Rng& rng);

/// mean + scale * (img - mean), clamped to [0,1].
ImageTensor adjust_contrast_by(const ImageTensor& img, double scale);
ImageTensor adjust_contrast(const ImageTensor& img, double factor, Rng& rng);

ImageTensor translate_by(const ImageTensor& img, int dx, int dy);
std::pair<int, int> draw_translation(int width, int height, double fraction, Rng& rng);
ImageTensor translate(const ImageTensor& img, double fraction, Rng& rng);

/// Filled disc of `value` with a 1-px linear feather at the rim.
void draw_disc(ImageTensor& img, double cx, double cy, double radius, double value);

ImageTensor add_black_spots(const ImageTensor& img, const SpotParams& params, Rng& rng);
ImageTensor add_white_spots(const ImageTensor& img, const SpotParams& params, Rng& rng);
ImageTensor add_dashed_lines(const ImageTensor& img, const DashedLineParams& params, Rng& rng);

/// rotate -> contrast -> translate -> black spots -> white spots -> dashed
/// lines, each transform with its own stream derived from (seed, counter).
ImageTensor augment(const ImageTensor& img, const AugmentConfig& config, std::uint64_t counter);

}  // namespace wb::augment
