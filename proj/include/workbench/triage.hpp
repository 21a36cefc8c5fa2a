#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "workbench/aux_trainer.hpp"
#include "workbench/manifest.hpp"

namespace wb::triage {

struct TriageConfig {
  int k = 500;  // confident head size
  int l = 100;  // suspect tail size
  /// When false, head samples are certified without review.
  bool require_human_confirmation_of_head = true;

  void validate() const;
};

enum class Action { certify, relabel, reject, ambiguous };
std::string to_string(Action a);
Action parse_action(const std::string& s);

struct ReviewVerdict {
  std::string sample_id;
  Action action = Action::certify;
  std::optional<int> new_label;  // required iff action == relabel
  std::string reviewer;
  int round = 1;
  std::string timestamp;
  std::optional<std::uint64_t> expected_version;
};

std::string verdicts_to_json(const std::vector<ReviewVerdict>& verdicts, const DatasetManifest& m);
std::vector<ReviewVerdict> verdicts_from_json(const std::string& text, const DatasetManifest& m);

/// Ascending loss, ties broken by id. Error entries are skipped.
std::vector<std::string> rank_by_loss(const aux::LossReport& report);

struct Selection {
  std::vector<std::string> head;
  std::vector<std::string> tail;
};

/// First k and last l of `ordered`; throws ValidationError when k + l
/// exceeds its length.
Selection select_head_tail(std::span<const std::string> ordered, const TriageConfig& config);

/// Records each scored sample's loss; marks the selection as flagged in
/// `round` (tail samples carry the model's prediction as suggested_label
/// when it differs from the label).
DatasetManifest flag_selection(DatasetManifest manifest, const aux::LossReport& report,
                               const Selection& selection, int round, const TriageConfig& config);

/// All-or-nothing: on any error the input is untouched and nothing is
/// returned. Re-applying a verdict already in effect is a no-op.
DatasetManifest apply_verdicts(DatasetManifest manifest, std::span<const ReviewVerdict> verdicts);

enum class ConfirmationRule {
  any_corrective,    // tail confirmed by reject, ambiguous or relabel
  suggestion_match,  // tail confirmed by reject, ambiguous or relabel to the suggested label
};

struct FlaggedSample {
  std::string id;
  FlagKind kind = FlagKind::confident_head;
  std::optional<int> suggested_label;
};

/// Fraction of flagged samples whose model assessment the supervisor
/// confirmed. Throws ValidationError when a flagged sample has no verdict.
double pipeline_accuracy(std::span<const FlaggedSample> flagged,
                         std::span<const ReviewVerdict> verdicts,
                         ConfirmationRule rule = ConfirmationRule::any_corrective);

bool confirms(FlagKind kind, Action action, std::optional<int> suggested,
              std::optional<int> new_label, ConfirmationRule rule);

struct RoundReport {
  int round = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  double train_accuracy = 0;
  double validation_accuracy = 0;
  double pipeline_accuracy = 0;
  double ratio_validated = 0;
};

/// (certified + relabeled) / records neither rejected nor ambiguous;
/// synthesized records are not part of the corpus.
double ratio_validated(const DatasetManifest& manifest);

RoundReport round_report(const DatasetManifest& manifest, const aux::TrainResult& history,
                         std::size_t train_size, std::size_t validation_size,
                         double pipeline_accuracy_value, int round);

/// Flagged head/tail samples of a round, as recorded in the manifest.
std::vector<FlaggedSample> flagged_in_round(const DatasetManifest& manifest, int round);

/// Verdicts reconstructed from the statuses of a round's reviewed records.
std::vector<ReviewVerdict> verdicts_in_round(const DatasetManifest& manifest, int round);

struct QueueItem {
  std::string sample_id;
  std::string image_url;
  int label = 0;
  std::optional<int> suggested_label;
  std::optional<double> loss;
  FlagKind flag_kind = FlagKind::confident_head;
  int round = 0;
  std::uint64_t version = 0;
};

/// Un-reviewed flagged items: seeds by id, then the tail by descending
/// loss, then the head by ascending loss.
std::vector<QueueItem> build_queue(const DatasetManifest& manifest, int round,
                                   std::optional<FlagKind> filter = std::nullopt);

std::vector<int> flagged_rounds(const DatasetManifest& manifest);

struct RoundStats {
  RoundReport report;
  std::size_t reviewed = 0;
  std::size_t total = 0;
  std::optional<double> live_pipeline_accuracy;  // over reviewed head/tail items
};

/// Live statistics recomputed from the manifest; accuracies of the
/// round's training run are copied from `trained` when provided.
RoundStats round_stats(const DatasetManifest& manifest, int round,
                       const std::optional<RoundReport>& trained = std::nullopt,
                       ConfirmationRule rule = ConfirmationRule::any_corrective);

std::string round_stats_to_json(const RoundStats& stats);
std::string queue_to_json(const std::vector<QueueItem>& items, const DatasetManifest& m);

}  // namespace wb::triage
