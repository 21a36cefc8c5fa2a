#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "workbench/augment.hpp"
#include "workbench/aux_trainer.hpp"
#include "workbench/dedup.hpp"
#include "workbench/gan.hpp"
#include "workbench/triage.hpp"

namespace wb {

enum class SupervisorMode { simulated, file };

struct SupervisorConfig {
  SupervisorMode mode = SupervisorMode::simulated;
  /// simulated: JSON object sample id -> true class name.
  std::filesystem::path truth;
  /// simulated: probability that a corrupted sample is marked ambiguous
  /// instead of relabeled.
  double ambiguity_rate = 0.0;
  /// simulated: probability of a wrong verdict on any sample.
  double error_rate = 0.0;
  std::string reviewer = "simulated";
  std::uint64_t seed = 0;
};

struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path images;  // image root; defaults to the manifest directory
  std::filesystem::path output = "output";
  std::optional<std::filesystem::path> baseline;  // manifest snapshot for the report

  int seed_train = 180;
  int seed_validation = 20;
  std::uint64_t seed = 0;
  double target_ratio = 1.0;
  int max_rounds = 20;

  bool dedup_enabled = true;
  dedup::DedupConfig dedup{};
  dedup::ResolvePolicy dedup_policy = dedup::ResolvePolicy::keep_best_status;

  aux::ModelConfig model{};
  aux::TrainConfig train{};
  triage::TriageConfig triage{};
  triage::ConfirmationRule confirmation = triage::ConfirmationRule::any_corrective;
  SupervisorConfig supervisor{};

  int n_folds = 8;
  std::size_t test_size = 0;
  std::uint64_t fold_seed = 13;

  void validate() const;
};

/// Whole-pipeline document with [paths], [pipeline], [dedup], [train],
/// [augment], [triage], [supervisor] and [folds] tables. Relative paths
/// resolve against the config file's directory. Unknown keys are errors.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Single-module documents: keys at the root or under the module's table
/// ("augment", "train", "gan").
augment::AugmentConfig load_augment_config(const std::filesystem::path& path);
aux::TrainConfig load_train_config(const std::filesystem::path& path, aux::ModelConfig* model = nullptr);

struct GanConfigFile {
  gan::GeneratorSpec generator{};
  gan::DiscriminatorSpec discriminator{};
  gan::GanTrainConfig train{};
};
GanConfigFile load_gan_config(const std::filesystem::path& path);

}  // namespace wb
