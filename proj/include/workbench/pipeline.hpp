#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "workbench/config.hpp"
#include "workbench/triage.hpp"

namespace wb::pipeline {

using Logger = std::function<void(const std::string&)>;

/// Files the orchestrator keeps under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path state() const { return root / "state.json"; }
  std::filesystem::path ledger() const { return root / "rounds.jsonl"; }
  std::filesystem::path baseline() const { return root / "baseline.jsonl"; }
  std::filesystem::path round_dir(int round) const;
  std::filesystem::path model(int round) const { return round_dir(round) / "model.bin"; }
  std::filesystem::path losses(int round) const { return round_dir(round) / "losses.json"; }
  std::filesystem::path queue(int round) const { return round_dir(round) / "queue.json"; }
  std::filesystem::path training(int round) const { return round_dir(round) / "training.json"; }
  /// Where a file-mode supervisor drops verdicts.
  std::filesystem::path verdicts(int round) const { return round_dir(round) / "verdicts.json"; }
};

struct LedgerEntry {
  triage::RoundReport report;
  std::size_t flagged = 0;
  std::size_t new_verdicts = 0;
  double epoch_time_s = 0;
};

std::vector<LedgerEntry> read_ledger(const std::filesystem::path& path);

struct RoundOutcome {
  int round = 0;
  bool paused = false;  // waiting for verdicts; re-run to resume
  std::optional<LedgerEntry> entry;
  std::string message;
};

/// Ground-truth-backed verdicts: certify when the label matches the truth,
/// otherwise relabel to the truth (or ambiguous with ambiguity_rate); with
/// error_rate a verdict is replaced by a wrong one.
std::vector<triage::ReviewVerdict> simulate_verdicts(const DatasetManifest& manifest,
                                                     const std::vector<std::string>& ids,
                                                     const std::map<std::string, int>& truth,
                                                     const SupervisorConfig& config, int round);

/// K and L scaled down proportionally when fewer than k + l samples are
/// available or the size limit leaves less room.
triage::TriageConfig clamp_selection(const triage::TriageConfig& config, std::size_t available);

/// Moves a share of a round's newly validated (non-seed) train records to
/// validation, matching the seed set's validation share.
DatasetManifest distribute_validation(DatasetManifest manifest, int round, double share,
                                      std::uint64_t seed);

/// One round: seed review (round 1), train, infer, triage, review, apply,
/// ledger. Every step is skipped when its output already exists.
RoundOutcome run_round(const PipelineConfig& config, int round, const Logger& log = {});

struct RunSummary {
  std::vector<LedgerEntry> ledger;
  int rounds_run = 0;
  bool paused = false;
  bool halted = false;  // a round produced no verdicts
  double ratio_validated = 0;
  std::string message;
};

RunSummary run_until_validated(const PipelineConfig& config, double target_ratio,
                               const Logger& log = {});

/// Accuracies and sizes of a round's training run, from the ledger or, for a
/// round still under review, from its training record.
std::optional<triage::RoundReport> trained_report(const std::filesystem::path& output, int round);

/// First round whose ledger entry is missing.
int next_round(const PipelineConfig& config);

struct SizeRow {
  std::string name;
  std::size_t train = 0, validation = 0, test = 0, records = 0;
};

/// Markdown round table, dataset-size table against the baseline snapshot,
/// and the size ratio.
std::string report(const PipelineConfig& config);
SizeRow size_row(const std::string& name, const DatasetManifest& manifest);

}  // namespace wb::pipeline
