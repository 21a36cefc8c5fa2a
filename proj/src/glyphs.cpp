#include "workbench/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "workbench/dedup.hpp"

namespace wb::glyphs {

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Letter outlines in a unit box: x in [0, width], y in [0, 1] top to bottom.
std::vector<Segment> letter(char c, double& width) {
  switch (c) {
    case 'I':
      width = 0.25;
      return {{0.125, 0.0, 0.125, 1.0}};
    case 'V':
      width = 0.7;
      return {{0.0, 0.0, 0.35, 1.0}, {0.35, 1.0, 0.7, 0.0}};
    case 'X':
      width = 0.7;
      return {{0.0, 0.0, 0.7, 1.0}, {0.7, 0.0, 0.0, 1.0}};
  }
  throw Error(std::string("no glyph for '") + c + "'");
}

const char* spelling(int value) {
  static const char* names[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"};
  if (value < 1 || value > 10) throw ValidationError("numeral value must be in 1..10");
  return names[value - 1];
}

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

ImageTensor render_numeral(int value, Rng& rng, const GlyphStyle& style) {
  const std::string text = spelling(value);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double j = style.jitter;

  std::vector<Segment> segs;
  double cursor = 0.0;
  const double spacing = 0.12;
  for (char c : text) {
    double w = 0;
    for (auto s : letter(c, w)) {
      s.x0 += cursor + 0.04 * j * u(rng);
      s.x1 += cursor + 0.04 * j * u(rng);
      s.y0 += 0.04 * j * u(rng);
      s.y1 += 0.04 * j * u(rng);
      segs.push_back(s);
    }
    cursor += w + spacing;
  }
  const double total_w = cursor - spacing;

  // Fit the word into the frame, then shear and shift it a little.
  const double height = 20.0 * (1.0 + 0.1 * j * u(rng));
  const double scale = std::min(height, 26.0 / total_w);
  const double shear = 0.15 * j * u(rng);
  const double ox = 16.0 - 0.5 * total_w * scale + 1.5 * j * u(rng);
  const double oy = 16.0 - 0.5 * scale + 1.5 * j * u(rng);
  for (auto& s : segs) {
    auto map = [&](double& x, double& y) {
      x = ox + x * scale + shear * (y - 0.5) * scale;
      y = oy + y * scale;
    };
    map(s.x0, s.y0);
    map(s.x1, s.y1);
  }

  std::uniform_real_distribution<double> thick(style.thickness_min, style.thickness_max);
  const double half = 0.5 * (j > 0 ? thick(rng) : 0.5 * (style.thickness_min + style.thickness_max));
  std::normal_distribution<double> paper(0.0, style.noise);
  ImageTensor img(32, 32, 1, 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double d = 1e9;
      for (const auto& s : segs) d = std::min(d, segment_distance(x + 0.5, y + 0.5, s));
      const double ink = std::clamp(half + 0.5 - d, 0.0, 1.0);
      double v = 1.0 - 0.9 * ink;
      if (style.noise > 0) v += paper(rng);
      img.at(y, x) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& root) {
  if (spec.per_class < 1) throw ValidationError("per_class must be >= 1");
  if (spec.flip_fraction < 0 || spec.flip_fraction > 1)
    throw ValidationError("flip_fraction must be in [0, 1]");
  Corpus corpus;
  auto& m = corpus.manifest;
  m.n_max = spec.n_max;
  m.classes = roman_numeral_classes();
  const int classes = m.num_classes();
  std::filesystem::create_directories(root / spec.image_subdir);

  Rng rng = derive_rng({spec.seed, 0x61797068});
  std::vector<std::string> ids;
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < spec.per_class; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%05d", m.classes[c].c_str(), k);
      const std::string id = buf;
      Rng glyph_rng = derive_rng({spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(k)});
      const auto bytes = encode_png(to_image8(render_numeral(c + 1, glyph_rng, spec.style)));
      const std::string rel = spec.image_subdir + "/" + id + ".png";
      write_file_bytes(root / rel, bytes);
      const auto h = dedup::compute_hashes_from_bytes(bytes, dedup::DedupConfig{});
      SampleRecord r;
      r.id = id;
      r.image_path = rel;
      r.byte_hash = h.byte_hash;
      r.pixel_hash = h.pixel_hash;
      r.phash = h.phash;
      r.label = c;
      m.add(std::move(r));
      corpus.truth[id] = c;
      ids.push_back(id);
    }

  const auto flips = static_cast<std::size_t>(std::llround(spec.flip_fraction * ids.size()));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::uniform_int_distribution<int> other(1, classes - 1);
  for (std::size_t i = 0; i < flips; ++i) {
    auto& r = m.at(ids[i]);
    r.label = (r.label + other(rng)) % classes;
    corpus.flipped.push_back(ids[i]);
  }
  std::sort(corpus.flipped.begin(), corpus.flipped.end());
  return corpus;
}

std::string truth_to_json(const std::map<std::string, int>& truth, const DatasetManifest& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, c] : truth) j[id] = m.class_name(c);
  return j.dump(1);
}

std::map<std::string, int> truth_from_json(const std::string& text, const DatasetManifest& m) {
  std::map<std::string, int> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [id, v] : j.items()) out[id] = m.class_index(v.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("truth file: ") + e.what());
  }
  return out;
}

}  // namespace wb::glyphs
