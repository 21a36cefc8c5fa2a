#include "workbench/balance.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace wb::balance {

namespace {

bool in_pool(const SampleRecord& r) {
  return r.in_active_pool() && (r.split == Split::train || r.split == Split::validation);
}

std::vector<std::vector<std::string>> pool_by_class(const DatasetManifest& m) {
  std::vector<std::vector<std::string>> out(m.num_classes());
  for (const auto& [id, r] : m.records)
    if (in_pool(r)) out[r.label].push_back(id);
  return out;
}

std::uint64_t next_surplus_order(const DatasetManifest& m) {
  std::uint64_t next = 0;
  for (const auto& [_, r] : m.records)
    if (r.surplus_order) next = std::max(next, *r.surplus_order + 1);
  return next;
}

}  // namespace

std::vector<std::string> active_pool(const DatasetManifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& [id, r] : manifest.records)
    if (in_pool(r)) ids.push_back(id);
  return ids;
}

std::vector<std::size_t> active_histogram(const DatasetManifest& manifest) {
  std::vector<std::size_t> h(manifest.num_classes(), 0);
  for (const auto& [_, r] : manifest.records)
    if (in_pool(r)) ++h[r.label];
  return h;
}

DatasetManifest balance_classes(DatasetManifest manifest, Rng& rng) {
  auto by_class = pool_by_class(manifest);
  std::size_t floor_count = std::numeric_limits<std::size_t>::max();
  for (int c = 0; c < manifest.num_classes(); ++c) {
    if (by_class[c].empty())
      throw ValidationError("class '" + manifest.class_name(c) + "' has no active samples");
    floor_count = std::min(floor_count, by_class[c].size());
  }
  std::uint64_t order = next_surplus_order(manifest);
  for (auto& ids : by_class) {
    if (ids.size() == floor_count) continue;
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = floor_count; i < ids.size(); ++i) {
      auto& r = manifest.at(ids[i]);
      r.split = Split::surplus;
      r.surplus_order = order++;
      r.touch();
    }
  }
  return manifest;
}

DatasetManifest restore_from_surplus(DatasetManifest manifest, std::size_t budget) {
  std::vector<std::vector<SampleRecord*>> surplus(manifest.num_classes());
  for (auto& [_, r] : manifest.records)
    if (r.split == Split::surplus) surplus[r.label].push_back(&r);
  for (auto& q : surplus)
    std::sort(q.begin(), q.end(),
              [](const auto* a, const auto* b) { return *a->surplus_order > *b->surplus_order; });

  auto hist = active_histogram(manifest);
  auto budget_report = validate_size_constraint(manifest);
  long used = static_cast<long>(budget_report.train + budget_report.validation);

  for (std::size_t moved = 0; moved < budget; ++moved) {
    if (used + 1 >= manifest.n_max) break;
    int pick = -1;
    for (int c = 0; c < manifest.num_classes(); ++c)
      if (!surplus[c].empty() && (pick < 0 || hist[c] < hist[pick])) pick = c;
    if (pick < 0) break;
    SampleRecord* r = surplus[pick].back();
    surplus[pick].pop_back();
    r->split = Split::train;
    r->surplus_order.reset();
    r->touch();
    ++hist[pick];
    ++used;
  }
  return manifest;
}

TestSelection select_test_set(DatasetManifest manifest, std::size_t size, Rng& rng) {
  TestSelection out;
  auto by_class = pool_by_class(manifest);
  std::size_t pool = 0, populated = 0;
  for (const auto& ids : by_class) {
    pool += ids.size();
    populated += ids.empty() ? 0 : 1;
  }
  if (size > pool)
    throw ValidationError("test size " + std::to_string(size) + " exceeds the active pool of " +
                          std::to_string(pool));
  if (size > 0 && size < populated) {
    out.warnings.push_back("test size " + std::to_string(size) + " is smaller than the " +
                           std::to_string(populated) +
                           " populated classes; selecting without stratification");
    auto ids = active_pool(manifest);
    std::shuffle(ids.begin(), ids.end(), rng);
    out.test_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(size));
  } else if (size > 0) {
    // Largest-remainder quotas; ties go to the lower class index.
    const std::size_t n = by_class.size();
    std::vector<std::size_t> quota(n);
    std::vector<std::pair<std::size_t, std::size_t>> remainder;  // (numerator, class)
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t num = size * by_class[c].size();
      quota[c] = num / pool;
      assigned += quota[c];
      remainder.emplace_back(num % pool, c);
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < size; ++i, ++assigned) ++quota[remainder[i].second];
    for (std::size_t c = 0; c < n; ++c) {
      auto& ids = by_class[c];
      std::shuffle(ids.begin(), ids.end(), rng);
      out.test_ids.insert(out.test_ids.end(), ids.begin(),
                          ids.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
  }
  std::sort(out.test_ids.begin(), out.test_ids.end());
  for (const auto& id : out.test_ids) {
    auto& r = manifest.at(id);
    r.split = Split::test;
    r.touch();
  }
  out.manifest = std::move(manifest);
  return out;
}

std::vector<std::string> FoldPlan::validation_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f == fold) ids.push_back(id);
  return ids;
}

std::vector<std::string> FoldPlan::train_ids(int fold) const {
  std::vector<std::string> ids;
  for (const auto& [id, f] : assignments)
    if (f != fold) ids.push_back(id);
  return ids;
}

FoldPlan make_folds(const DatasetManifest& manifest, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ValidationError("n_folds must be >= 2");
  auto by_class = pool_by_class(manifest);
  std::size_t pool = 0;
  for (const auto& ids : by_class) pool += ids.size();
  if (pool < static_cast<std::size_t>(n_folds))
    throw ValidationError("active pool of " + std::to_string(pool) + " is smaller than " +
                          std::to_string(n_folds) + " folds");
  if (static_cast<long>(pool) >= manifest.n_max)
    throw BudgetError("active pool of " + std::to_string(pool) +
                      " leaves no fold with |train| + |validation| < n_max = " +
                      std::to_string(manifest.n_max));

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  for (const auto& [id, r] : manifest.records)
    if (r.split == Split::test) plan.test_ids.push_back(id);

  Rng rng = derive_rng({seed, 0xf01d});
  int offset = 0;
  for (auto& ids : by_class) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t j = 0; j < ids.size(); ++j)
      plan.assignments[ids[j]] = static_cast<int>((offset + j) % n_folds);
    offset = static_cast<int>((offset + ids.size()) % n_folds);
  }
  return plan;
}

DatasetManifest apply_fold(DatasetManifest manifest, const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= plan.n_folds)
    throw ValidationError("fold " + std::to_string(fold) + " out of range");
  for (const auto& [id, f] : plan.assignments) {
    auto& r = manifest.at(id);
    if (!r.in_active_pool())
      throw ValidationError("fold plan names non-validated sample '" + id + "'", id);
    const Split want = f == fold ? Split::validation : Split::train;
    if (r.split != want) {
      r.split = want;
      r.touch();
    }
  }
  require_size_constraint(manifest, "apply_fold");
  return manifest;
}

std::string fold_plan_to_json(const FoldPlan& plan) {
  nlohmann::ordered_json j;
  j["n_folds"] = plan.n_folds;
  j["seed"] = plan.seed;
  j["test_ids"] = plan.test_ids;
  nlohmann::ordered_json folds = nlohmann::ordered_json::object();
  for (const auto& [id, f] : plan.assignments) folds[id] = f;
  j["assignments"] = std::move(folds);
  return j.dump(1);
}

FoldPlan fold_plan_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FoldPlan plan;
    plan.n_folds = j.at("n_folds").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    plan.assignments = j.at("assignments").get<std::map<std::string, int>>();
    for (const auto& [id, f] : plan.assignments)
      if (f < 0 || f >= plan.n_folds) throw ParseError("fold index out of range for '" + id + "'");
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fold plan: ") + e.what());
  }
}

}  // namespace wb::balance
