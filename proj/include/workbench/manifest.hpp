#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "workbench/error.hpp"

namespace wb {

using Digest256 = std::array<std::uint8_t, 32>;

enum class Split { train, validation, test, surplus, unassigned };
enum class Status { unverified, certified, relabeled, rejected, ambiguous };

/// Why a record is in a review queue.
enum class FlagKind { confident_head, suspect_tail, seed };

std::string to_string(Split s);
std::string to_string(Status s);
std::string to_string(FlagKind k);
Split parse_split(const std::string& s);
Status parse_status(const std::string& s);
FlagKind parse_flag_kind(const std::string& s);

std::string to_hex(const Digest256& d);
Digest256 digest_from_hex(const std::string& hex);

struct SampleRecord {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  Digest256 byte_hash{};
  std::optional<Digest256> pixel_hash;
  std::optional<std::uint64_t> phash;
  int label = 0;
  std::optional<int> suggested_label;
  Split split = Split::unassigned;
  Status status = Status::unverified;
  std::optional<double> loss;
  std::optional<int> round;
  std::uint64_t version = 0;

  // Review and provenance bookkeeping.
  std::optional<int> original_label;        // label before a relabel verdict
  std::optional<FlagKind> flag;             // triage selection of `round`
  std::optional<std::string> note;          // e.g. dedup rejection reason
  std::optional<std::string> provenance;    // synthesized samples
  std::optional<std::uint64_t> surplus_order;
  std::optional<std::string> reviewer;

  bool operator==(const SampleRecord&) const = default;

  /// Records that count toward class balance, folds and training.
  bool in_active_pool() const noexcept {
    return status == Status::certified || status == Status::relabeled;
  }
  bool excluded() const noexcept {
    return status == Status::rejected || status == Status::ambiguous;
  }
  /// Bumps the optimistic-concurrency counter; call once per mutation.
  void touch() noexcept { ++version; }
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  long n_max = 10000;
  std::vector<std::string> classes;
  std::map<std::string, SampleRecord> records;

  bool operator==(const DatasetManifest&) const = default;

  int num_classes() const noexcept { return static_cast<int>(classes.size()); }
  int class_index(const std::string& name) const;  // throws ValidationError
  const std::string& class_name(int index) const;

  SampleRecord& at(const std::string& id);
  const SampleRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return records.count(id) != 0; }

  /// Throws InvariantError naming the offending record.
  void add(SampleRecord record);

  std::size_t count(Split split) const;
};

/// Roman numerals i..x, the reference task's label set.
std::vector<std::string> roman_numeral_classes();

struct SizeConstraintReport {
  std::size_t train = 0;
  std::size_t validation = 0;
  long n_max = 0;
  bool satisfied = false;
};

/// |train| + |validation| < n_max over non-excluded records.
SizeConstraintReport validate_size_constraint(const DatasetManifest& manifest);

/// Throws BudgetError when the constraint fails; `context` names the step.
void require_size_constraint(const DatasetManifest& manifest, const std::string& context);

/// Counts non-rejected records per class index; always `num_classes()` long.
std::vector<std::size_t> class_histogram(const DatasetManifest& manifest, Split split);

/// Checks every structural invariant; throws InvariantError on the first
/// violation.
void check_invariants(const DatasetManifest& manifest);

DatasetManifest load_manifest(const std::filesystem::path& path);

/// Atomic: writes a sibling temp file then renames it over `path`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);

}  // namespace wb
