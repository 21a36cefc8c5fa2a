#pragma once

// Fixture corpora with planted duplicates, plus brute-force oracles that the
// dedup cascade is compared against.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <tuple>

#include "support.hpp"
#include "workbench/dedup.hpp"
#include "workbench/image.hpp"

namespace wbt {

/// Mean of the box covering output cell (ox, oy), integrated in 2D.
inline double box_mean(const wb::Image8& img, int ox, int oy, int out_w, int out_h) {
  const double sx = double(img.width) / out_w, sy = double(img.height) / out_h;
  const double x0 = ox * sx, x1 = (ox + 1) * sx, y0 = oy * sy, y1 = (oy + 1) * sy;
  double acc = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double wx = std::max(0.0, std::min<double>(x1, x + 1) - std::max<double>(x0, x));
      const double wy = std::max(0.0, std::min<double>(y1, y + 1) - std::max<double>(y0, y));
      if (wx > 0 && wy > 0) acc += wx * wy * img.at(y, x);
    }
  return acc / (sx * sy);
}

/// Difference hash from first principles; nullopt when a cell mean sits on a
/// rounding tie and the result would depend on floating point order.
inline std::optional<std::uint64_t> oracle_dhash(const wb::Image8& gray) {
  long cell[8][9];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 9; ++x) {
      const double m = box_mean(gray, x, y, 9, 8);
      if (std::abs(m - std::floor(m) - 0.5) < 1e-6) return std::nullopt;
      cell[y][x] = std::lround(m);
    }
  std::uint64_t bits = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) bits = (bits << 1) | (cell[y][x] > cell[y][x + 1] ? 1 : 0);
  return bits;
}

inline int popcount_slow(std::uint64_t v) {
  int n = 0;
  for (int i = 0; i < 64; ++i) n += (v >> i) & 1;
  return n;
}

inline wb::Image8 noise_image(std::mt19937_64& rng, int size = 32) {
  wb::Image8 img(size, size, 1);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

struct PlantedCorpus {
  wb::DatasetManifest manifest;
  std::vector<std::pair<std::string, std::string>> exact;     // byte copies
  std::vector<std::pair<std::string, std::string>> metadata;  // re-encoded
  std::vector<std::pair<std::string, std::string>> near;      // perturbed
};

/// `total` images on disk under dir/images; `n_exact` byte copies,
/// `n_metadata` lossless re-encodes and `n_near` perturbed copies whose dHash
/// distance to their source lies in [1, max_distance]. Every source is a
/// distinct unique image. Hashes are not computed.
inline PlantedCorpus make_planted_corpus(const std::filesystem::path& dir, int total, int n_exact,
                                         int n_metadata, int n_near, int max_distance,
                                         std::uint64_t seed, int classes = 10) {
  std::mt19937_64 rng(seed);
  PlantedCorpus out;
  out.manifest = empty_manifest(classes);
  std::filesystem::create_directories(dir / "images");
  const int n_unique = total - n_exact - n_metadata - n_near;
  std::vector<std::string> uniques;
  std::vector<wb::Image8> images;
  auto add = [&](const std::string& id, const std::vector<std::uint8_t>& bytes) {
    wb::SampleRecord r = record(id, static_cast<int>(out.manifest.records.size()) % classes);
    wb::write_file_bytes(dir / r.image_path, bytes);
    out.manifest.add(r);
  };
  for (int i = 0; i < n_unique; ++i) {
    do images.push_back(noise_image(rng));
    while (!oracle_dhash(images.back()) && (images.pop_back(), true));
    uniques.push_back("u" + pad(i));
    add(uniques.back(), wb::encode_png(images.back()));
  }
  int src = 0;
  for (int i = 0; i < n_exact; ++i, ++src) {
    const auto id = "e" + pad(i);
    add(id, wb::read_file_bytes(dir / ("images/" + uniques[src] + ".png")));
    out.exact.emplace_back(uniques[src], id);
  }
  for (int i = 0; i < n_metadata; ++i, ++src) {
    const auto id = "m" + pad(i);
    wb::PngWriteOptions opt;
    opt.compression_level = 9;
    opt.text = {{"Software", "scanner " + std::to_string(i)}};
    add(id, wb::encode_png(images[src], opt));
    out.metadata.emplace_back(uniques[src], id);
  }
  for (int i = 0; i < n_near; ++i, ++src) {
    const auto base = images[src];
    const auto h0 = oracle_dhash(base);
    wb::Image8 copy;
    for (;;) {
      copy = base;
      const int y = static_cast<int>(rng() % 32), x = static_cast<int>(rng() % 32);
      copy.at(y, x) = static_cast<std::uint8_t>(copy.at(y, x) ^ 0x80);
      const auto h1 = oracle_dhash(copy);
      if (!h1) continue;
      const int d = popcount_slow(*h0 ^ *h1);
      if (d >= 1 && d <= max_distance) break;
    }
    const auto id = "n" + pad(i);
    add(id, wb::encode_png(copy));
    out.near.emplace_back(uniques[src], id);
  }
  return out;
}

/// All-pairs reference for find_duplicates: union-find over pairwise byte
/// equality, then pixel equality between byte-class minima, then explicit
/// Hamming comparisons between pixel-class minima.
inline std::vector<wb::dedup::DuplicateGroup> oracle_duplicates(const wb::DatasetManifest& m,
                                                                int threshold) {
  using wb::dedup::DuplicateGroup;
  using wb::dedup::DuplicateKind;
  std::vector<const wb::SampleRecord*> recs;
  for (const auto& [_, r] : m.records) recs.push_back(&r);
  const std::size_t n = recs.size();

  auto classes_of = [&](const std::vector<std::size_t>& items, auto same) {
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t a) {
      while (parent[a] != a) a = parent[a];
      return a;
    };
    for (std::size_t a = 0; a < items.size(); ++a)
      for (std::size_t b = a + 1; b < items.size(); ++b)
        if (same(*recs[items[a]], *recs[items[b]])) parent[find(items[b])] = find(items[a]);
    std::map<std::size_t, std::vector<std::size_t>> cls;
    for (auto i : items) cls[find(i)].push_back(i);
    return cls;
  };

  std::vector<DuplicateGroup> groups;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> reps;
  for (auto& [_, members] : classes_of(all, [](auto& a, auto& b) { return a.byte_hash == b.byte_hash; })) {
    if (members.size() > 1) {
      DuplicateGroup g{DuplicateKind::exact_bytes, {}, 0};
      for (auto i : members) g.member_ids.push_back(recs[i]->id);
      groups.push_back(g);
    }
    reps.push_back(members.front());
  }
  std::vector<std::size_t> with_pixels;
  for (auto i : reps)
    if (recs[i]->pixel_hash) with_pixels.push_back(i);
  std::vector<std::size_t> reps2;
  for (auto& [_, members] : classes_of(with_pixels, [](auto& a, auto& b) { return *a.pixel_hash == *b.pixel_hash; })) {
    if (members.size() > 1) {
      DuplicateGroup g{DuplicateKind::exact_pixels, {}, 0};
      for (auto i : members) g.member_ids.push_back(recs[i]->id);
      groups.push_back(g);
    }
    if (recs[members.front()]->phash) reps2.push_back(members.front());
  }
  for (std::size_t a = 0; a < reps2.size(); ++a)
    for (std::size_t b = a + 1; b < reps2.size(); ++b) {
      const int d = popcount_slow(*recs[reps2[a]]->phash ^ *recs[reps2[b]]->phash);
      if (d <= threshold) {
        std::vector<std::string> ids{recs[reps2[a]]->id, recs[reps2[b]]->id};
        std::sort(ids.begin(), ids.end());
        groups.push_back({DuplicateKind::near, ids, d});
      }
    }
  for (auto& g : groups) std::sort(g.member_ids.begin(), g.member_ids.end());
  std::sort(groups.begin(), groups.end());
  return groups;
}

}  // namespace wbt
