#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "workbench/image.hpp"
#include "workbench/manifest.hpp"
#include "workbench/rng.hpp"

// Synthetic handwritten-looking Roman numerals for tests and demos.
namespace wb::glyphs {

struct GlyphStyle {
  double jitter = 1.0;  // scales every random perturbation; 0 renders the template
  double thickness_min = 1.3;
  double thickness_max = 2.3;
  double noise = 0.02;  // stddev of additive paper noise
};

/// value in 1..10, 32x32 gray, dark ink on white.
ImageTensor render_numeral(int value, Rng& rng, const GlyphStyle& style = {});

struct CorpusSpec {
  int per_class = 20;
  double flip_fraction = 0.0;  // share of records whose label is replaced by a wrong one
  std::uint64_t seed = 0;
  long n_max = 10000;
  std::string image_subdir = "images";
  GlyphStyle style{};
};

struct Corpus {
  DatasetManifest manifest;
  std::map<std::string, int> truth;  // id -> true class index
  std::vector<std::string> flipped;  // sorted
};

/// Writes PNGs under root / image_subdir and returns an unverified,
/// unassigned manifest (hashes filled) over the ten numeral classes.
Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& root);

std::string truth_to_json(const std::map<std::string, int>& truth, const DatasetManifest& m);
std::map<std::string, int> truth_from_json(const std::string& text, const DatasetManifest& m);

}  // namespace wb::glyphs
