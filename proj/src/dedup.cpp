#include "workbench/dedup.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "workbench/digest.hpp"

namespace wb::dedup {

std::string to_string(DuplicateKind kind) {
  switch (kind) {
    case DuplicateKind::exact_bytes: return "exact_bytes";
    case DuplicateKind::exact_pixels: return "exact_pixels";
    case DuplicateKind::near: return "near";
  }
  return "?";
}

void DedupConfig::validate() const {
  if (canonical_width <= 0 || canonical_height <= 0)
    throw ValidationError("canonical size must be positive");
  if (hamming_threshold < 0 || hamming_threshold > 64)
    throw ValidationError("hamming_threshold must be in [0, 64]");
  if (prefix_bits < 0 || prefix_bits > 64) throw ValidationError("prefix_bits must be in [0, 64]");
}

std::uint64_t difference_hash(const Image8& gray) {
  const Image8 small = resize_area(gray.channels == 1 ? gray : to_grayscale(gray), 9, 8);
  std::uint64_t bits = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) bits = (bits << 1) | (small.at(y, x) > small.at(y, x + 1) ? 1u : 0u);
  return bits;
}

Image8 canonical_pixels(const Image8& decoded, const DedupConfig& config) {
  return resize_area(to_grayscale(decoded), config.canonical_width, config.canonical_height);
}

Hashes compute_hashes_from_bytes(std::span<const std::uint8_t> file_bytes,
                                 const DedupConfig& config) {
  Hashes h;
  h.byte_hash = sha256(file_bytes);
  const Image8 canon = canonical_pixels(decode_png(file_bytes), config);
  // Dimensions are part of the digest so equal byte streams of different
  // shapes cannot collide.
  std::vector<std::uint8_t> buf;
  buf.reserve(canon.data.size() + 8);
  for (int v : {canon.width, canon.height})
    for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<std::uint8_t>(v >> s));
  buf.insert(buf.end(), canon.data.begin(), canon.data.end());
  h.pixel_hash = sha256(buf);
  h.phash = difference_hash(canon);
  return h;
}

Hashes compute_hashes(const SampleRecord& sample, const std::filesystem::path& image_root,
                      const DedupConfig& config) {
  const auto path = image_root / sample.image_path;
  const auto bytes = read_file_bytes(path);
  try {
    return compute_hashes_from_bytes(bytes, config);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<HashFailure> hash_manifest(DatasetManifest& manifest,
                                       const std::filesystem::path& image_root,
                                       const DedupConfig& config) {
  config.validate();
  std::vector<HashFailure> failures;
  for (auto& [id, r] : manifest.records) {
    Hashes h;
    try {
      h = compute_hashes(r, image_root, config);
    } catch (const Error& e) {
      failures.push_back({id, e.what()});
      continue;
    }
    if (r.byte_hash != h.byte_hash || r.pixel_hash != h.pixel_hash || r.phash != h.phash) {
      r.byte_hash = h.byte_hash;
      r.pixel_hash = h.pixel_hash;
      r.phash = h.phash;
      r.touch();
    }
  }
  return failures;
}

namespace {

/// Near-duplicate candidate pairs (index pairs i < j into `hashes`) with
/// Hamming distance <= threshold.
std::set<std::pair<std::size_t, std::size_t>> near_pairs(const std::vector<std::uint64_t>& hashes,
                                                         const DedupConfig& config) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  const int t = config.hamming_threshold;
  const int width = config.prefix_bits > 0 ? config.prefix_bits : 64 / (t + 1);
  const bool bucket_exact = width > 0 && (64 + width - 1) / width > t;

  auto consider = [&](std::size_t i, std::size_t j) {
    if (i == j) return;
    if (i > j) std::swap(i, j);
    if (hamming(hashes[i], hashes[j]) <= t) out.emplace(i, j);
  };

  if (width > 0) {
    // Pigeonhole multi-index: split the 64 bits into disjoint blocks; a pair
    // within distance t agrees on at least one block when blocks > t.
    for (int start = 0; start < 64; start += width) {
      const int w = std::min(width, 64 - start);
      const std::uint64_t mask = w == 64 ? ~0ULL : ((1ULL << w) - 1);
      std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
      for (std::size_t i = 0; i < hashes.size(); ++i)
        buckets[(hashes[i] >> (64 - start - w)) & mask].push_back(i);
      for (const auto& [_, members] : buckets)
        for (std::size_t a = 0; a < members.size(); ++a)
          for (std::size_t b = a + 1; b < members.size(); ++b) consider(members[a], members[b]);
    }
  }
  if (!bucket_exact && hashes.size() <= config.exhaustive_limit) {
    for (std::size_t i = 0; i < hashes.size(); ++i)
      for (std::size_t j = i + 1; j < hashes.size(); ++j) consider(i, j);
  }
  return out;
}

}  // namespace

std::vector<DuplicateGroup> find_duplicates(const DatasetManifest& manifest,
                                            const DedupConfig& config) {
  config.validate();
  std::vector<DuplicateGroup> groups;

  // Stage 1: raw bytes. Records iterate in id order, so the first member of
  // each bucket is its representative.
  std::map<Digest256, std::vector<const SampleRecord*>> by_bytes;
  for (const auto& [_, r] : manifest.records) by_bytes[r.byte_hash].push_back(&r);
  std::vector<const SampleRecord*> reps;
  for (const auto& [_, members] : by_bytes) {
    if (members.size() >= 2) {
      DuplicateGroup g{DuplicateKind::exact_bytes, {}, 0};
      for (auto* r : members) g.member_ids.push_back(r->id);
      groups.push_back(std::move(g));
    }
    reps.push_back(members.front());
  }
  std::sort(reps.begin(), reps.end(), [](auto* a, auto* b) { return a->id < b->id; });

  // Stage 2: canonical pixels over stage-1 representatives.
  std::map<Digest256, std::vector<const SampleRecord*>> by_pixels;
  for (auto* r : reps)
    if (r->pixel_hash) by_pixels[*r->pixel_hash].push_back(r);
  std::vector<const SampleRecord*> reps2;
  for (const auto& [_, members] : by_pixels) {
    if (members.size() >= 2) {
      DuplicateGroup g{DuplicateKind::exact_pixels, {}, 0};
      for (auto* r : members) g.member_ids.push_back(r->id);
      groups.push_back(std::move(g));
    }
    if (members.front()->phash) reps2.push_back(members.front());
  }
  std::sort(reps2.begin(), reps2.end(), [](auto* a, auto* b) { return a->id < b->id; });

  // Stage 3: perceptual hash over stage-2 representatives.
  std::vector<std::uint64_t> hashes;
  hashes.reserve(reps2.size());
  for (auto* r : reps2) hashes.push_back(*r->phash);
  for (const auto& [i, j] : near_pairs(hashes, config))
    groups.push_back({DuplicateKind::near, {reps2[i]->id, reps2[j]->id}, hamming(hashes[i], hashes[j])});

  std::sort(groups.begin(), groups.end());
  return groups;
}

std::vector<LeakagePair> find_split_leakage(const DatasetManifest& manifest,
                                            const DedupConfig& config) {
  config.validate();
  std::vector<const SampleRecord*> train, val;
  for (const auto& [_, r] : manifest.records) {
    if (r.split == Split::train) train.push_back(&r);
    if (r.split == Split::validation) val.push_back(&r);
  }

  auto classify = [&](const SampleRecord& a, const SampleRecord& b) -> std::optional<DuplicateKind> {
    if (a.byte_hash == b.byte_hash) return DuplicateKind::exact_bytes;
    if (a.pixel_hash && b.pixel_hash && *a.pixel_hash == *b.pixel_hash)
      return DuplicateKind::exact_pixels;
    if (a.phash && b.phash && hamming(*a.phash, *b.phash) <= config.hamming_threshold)
      return DuplicateKind::near;
    return std::nullopt;
  };

  // Candidate generation mirrors find_duplicates: exact digests, then
  // multi-index phash buckets over the union of both splits.
  std::set<std::pair<std::size_t, std::size_t>> candidates;  // (train idx, val idx)
  std::map<Digest256, std::vector<std::size_t>> val_bytes, val_pixels;
  for (std::size_t j = 0; j < val.size(); ++j) {
    val_bytes[val[j]->byte_hash].push_back(j);
    if (val[j]->pixel_hash) val_pixels[*val[j]->pixel_hash].push_back(j);
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (auto it = val_bytes.find(train[i]->byte_hash); it != val_bytes.end())
      for (auto j : it->second) candidates.emplace(i, j);
    if (train[i]->pixel_hash)
      if (auto it = val_pixels.find(*train[i]->pixel_hash); it != val_pixels.end())
        for (auto j : it->second) candidates.emplace(i, j);
  }
  std::vector<std::uint64_t> hashes;
  std::vector<std::pair<bool, std::size_t>> origin;  // (is_train, index)
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train[i]->phash) {
      hashes.push_back(*train[i]->phash);
      origin.emplace_back(true, i);
    }
  for (std::size_t j = 0; j < val.size(); ++j)
    if (val[j]->phash) {
      hashes.push_back(*val[j]->phash);
      origin.emplace_back(false, j);
    }
  for (const auto& [a, b] : near_pairs(hashes, config)) {
    if (origin[a].first == origin[b].first) continue;
    auto t = origin[a].first ? origin[a].second : origin[b].second;
    auto v = origin[a].first ? origin[b].second : origin[a].second;
    candidates.emplace(t, v);
  }

  std::vector<LeakagePair> out;
  for (const auto& [i, j] : candidates)
    if (auto kind = classify(*train[i], *val[j])) out.push_back({train[i]->id, val[j]->id, *kind});
  std::sort(out.begin(), out.end());
  return out;
}

ResolvePolicy parse_resolve_policy(const std::string& s) {
  if (s == "keep_first") return ResolvePolicy::keep_first;
  if (s == "keep_best_status") return ResolvePolicy::keep_best_status;
  throw ValidationError("unknown resolve policy '" + s + "'");
}

namespace {

int status_rank(Status s) {
  switch (s) {
    case Status::certified: return 0;
    case Status::relabeled: return 1;
    case Status::unverified: return 2;
    case Status::ambiguous: return 3;
    case Status::rejected: return 4;
  }
  return 5;
}

}  // namespace

DatasetManifest resolve_duplicates(DatasetManifest manifest,
                                   const std::vector<DuplicateGroup>& groups,
                                   ResolvePolicy policy) {
  for (const auto& g : groups)
    for (const auto& id : g.member_ids)
      if (!manifest.contains(id))
        throw ValidationError("duplicate group references unknown id '" + id + "'", id);

  for (const auto& g : groups) {
    std::vector<std::string> members = g.member_ids;
    std::sort(members.begin(), members.end());
    const SampleRecord* survivor = nullptr;
    for (const auto& id : members) {
      const auto& r = manifest.at(id);
      if (r.status == Status::rejected) continue;
      if (!survivor || (policy == ResolvePolicy::keep_best_status &&
                        status_rank(r.status) < status_rank(survivor->status)))
        survivor = &r;
    }
    if (!survivor) continue;
    const std::string keep = survivor->id;
    for (const auto& id : members) {
      if (id == keep) continue;
      auto& r = manifest.at(id);
      if (r.status == Status::rejected) continue;
      r.status = Status::rejected;
      r.split = Split::unassigned;
      r.note = "duplicate of " + keep + " (" + to_string(g.kind) + ")";
      r.touch();
    }
  }
  return manifest;
}

std::string groups_to_json(const std::vector<DuplicateGroup>& groups) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& g : groups)
    arr.push_back({{"kind", to_string(g.kind)}, {"member_ids", g.member_ids}, {"distance", g.distance}});
  return arr.dump(1);
}

std::string leakage_to_json(const std::vector<LeakagePair>& pairs) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : pairs)
    arr.push_back({{"train_id", p.train_id}, {"validation_id", p.validation_id}, {"kind", to_string(p.kind)}});
  return arr.dump(1);
}

}  // namespace wb::dedup
