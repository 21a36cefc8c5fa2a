#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "workbench/image.hpp"
#include "workbench/manifest.hpp"

namespace wb::dedup {

enum class DuplicateKind { exact_bytes, exact_pixels, near };
std::string to_string(DuplicateKind kind);

struct DuplicateGroup {
  DuplicateKind kind = DuplicateKind::exact_bytes;
  std::vector<std::string> member_ids;  // sorted, size >= 2
  int distance = 0;                      // Hamming distance; 0 for exact kinds

  bool operator==(const DuplicateGroup&) const = default;
  auto operator<=>(const DuplicateGroup&) const = default;
};

struct DedupConfig {
  int canonical_width = 32;
  int canonical_height = 32;
  int hamming_threshold = 6;
  /// Bucket key width for near-duplicate candidates; 0 picks
  /// floor(64 / (threshold + 1)), which makes bucketing exact.
  int prefix_bits = 0;
  /// Corpora up to this many representatives are also compared exhaustively.
  std::size_t exhaustive_limit = 10000;

  void validate() const;
};

struct Hashes {
  Digest256 byte_hash{};
  Digest256 pixel_hash{};
  std::uint64_t phash = 0;
};

/// 64-bit difference hash: the canonical image is area-resized to 9x8 and
/// bit (row * 8 + col) is set when pixel (row, col) is brighter than its
/// right neighbour; bit 0 is the most significant.
std::uint64_t difference_hash(const Image8& gray);

/// Decoded -> BT.601 gray -> canonical size; the input to pixel_hash/phash.
Image8 canonical_pixels(const Image8& decoded, const DedupConfig& config);

Hashes compute_hashes_from_bytes(std::span<const std::uint8_t> file_bytes,
                                 const DedupConfig& config);
Hashes compute_hashes(const SampleRecord& sample, const std::filesystem::path& image_root,
                      const DedupConfig& config);

inline int hamming(std::uint64_t a, std::uint64_t b) noexcept {
  return __builtin_popcountll(a ^ b);
}

struct HashFailure {
  std::string id;
  std::string message;
};

/// Fills byte_hash/pixel_hash/phash on every record; undecodable images are
/// reported and left untouched.
std::vector<HashFailure> hash_manifest(DatasetManifest& manifest,
                                       const std::filesystem::path& image_root,
                                       const DedupConfig& config);

/// Staged cascade: byte digest groups, then pixel digest groups over one
/// representative per byte group, then near pairs (Hamming <= threshold)
/// over one representative per pixel group. Exact groups partition ids;
/// near groups are pairs. Output is sorted. Records without pixel_hash or
/// phash take part in the byte stage only.
std::vector<DuplicateGroup> find_duplicates(const DatasetManifest& manifest,
                                            const DedupConfig& config);

struct LeakagePair {
  std::string train_id;
  std::string validation_id;
  DuplicateKind kind = DuplicateKind::exact_bytes;
  bool operator==(const LeakagePair&) const = default;
  auto operator<=>(const LeakagePair&) const = default;
};

/// Every (train, validation) pair meeting a duplicate criterion, labelled
/// with the cheapest criterion it meets. Sorted.
std::vector<LeakagePair> find_split_leakage(const DatasetManifest& manifest,
                                            const DedupConfig& config);

enum class ResolvePolicy { keep_first, keep_best_status };
ResolvePolicy parse_resolve_policy(const std::string& s);

/// One survivor per group, the rest rejected with a note. Idempotent.
DatasetManifest resolve_duplicates(DatasetManifest manifest,
                                   const std::vector<DuplicateGroup>& groups,
                                   ResolvePolicy policy);

std::string groups_to_json(const std::vector<DuplicateGroup>& groups);
std::string leakage_to_json(const std::vector<LeakagePair>& pairs);

}  // namespace wb::dedup
