#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "workbench/manifest.hpp"
#include "workbench/rng.hpp"

namespace wb::balance {

/// Ids of certified/relabeled records currently in train or validation.
std::vector<std::string> active_pool(const DatasetManifest& manifest);

/// Active-pool count per class index.
std::vector<std::size_t> active_histogram(const DatasetManifest& manifest);

/// Moves per-class excess to the surplus split so every class has the
/// minimum class count. Throws ValidationError naming an empty class.
DatasetManifest balance_classes(DatasetManifest manifest, Rng& rng);

/// Moves up to `budget` surplus records back to train, always feeding the
/// class with the fewest active samples (oldest surplus entry first), and
/// stops before |train| + |validation| would reach n_max.
DatasetManifest restore_from_surplus(DatasetManifest manifest, std::size_t budget);

struct TestSelection {
  DatasetManifest manifest;
  std::vector<std::string> test_ids;
  std::vector<std::string> warnings;
};

/// Class-stratified (largest remainder) random selection from the active
/// pool; unstratified when `size` is smaller than the number of populated
/// classes.
TestSelection select_test_set(DatasetManifest manifest, std::size_t size, Rng& rng);

struct FoldPlan {
  int n_folds = 8;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;  // sample id -> fold index
  std::vector<std::string> test_ids;

  std::vector<std::string> validation_ids(int fold) const;
  std::vector<std::string> train_ids(int fold) const;
};

/// Stratified partition of the active pool. Per class, fold sizes differ by
/// at most one. Throws ValidationError when the pool is smaller than
/// n_folds and BudgetError when the pool cannot satisfy the size limit.
FoldPlan make_folds(const DatasetManifest& manifest, int n_folds, std::uint64_t seed);

/// Rewrites train/validation splits of the plan's records for one fold.
DatasetManifest apply_fold(DatasetManifest manifest, const FoldPlan& plan, int fold);

std::string fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const std::string& text);

}  // namespace wb::balance
