#include "workbench/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "workbench/aux_trainer.hpp"
#include "workbench/dedup.hpp"
#include "workbench/glyphs.hpp"

namespace wb::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using triage::ReviewVerdict;

std::filesystem::path Layout::round_dir(int round) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "round_%02d", round);
  return root / buf;
}

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

json entry_to_json(const LedgerEntry& e) {
  const auto& r = e.report;
  return {{"round", r.round},
          {"train_size", r.train_size},
          {"validation_size", r.validation_size},
          {"train_accuracy", r.train_accuracy},
          {"validation_accuracy", r.validation_accuracy},
          {"pipeline_accuracy", r.pipeline_accuracy},
          {"ratio_validated", r.ratio_validated},
          {"flagged", e.flagged},
          {"new_verdicts", e.new_verdicts},
          {"epoch_time_s", e.epoch_time_s}};
}

LedgerEntry entry_from_json(const json& j) {
  LedgerEntry e;
  auto& r = e.report;
  r.round = j.at("round");
  r.train_size = j.at("train_size");
  r.validation_size = j.at("validation_size");
  r.train_accuracy = j.at("train_accuracy");
  r.validation_accuracy = j.at("validation_accuracy");
  r.pipeline_accuracy = j.at("pipeline_accuracy");
  r.ratio_validated = j.at("ratio_validated");
  e.flagged = j.at("flagged");
  e.new_verdicts = j.at("new_verdicts");
  e.epoch_time_s = j.at("epoch_time_s");
  return e;
}

void write_state(const Layout& layout, int round, const std::string& phase) {
  write_text(layout.state(), json{{"round", round}, {"phase", phase}}.dump() + "\n");
}

struct Training {
  std::size_t train_size = 0, validation_size = 0;
  double train_accuracy = 0, validation_accuracy = 0;
  double epoch_time_s = 0;
  int epochs_run = 0;
};

void save_training(const fs::path& p, const Training& t) {
  write_text(p, json{{"train_size", t.train_size},
                     {"validation_size", t.validation_size},
                     {"train_accuracy", t.train_accuracy},
                     {"validation_accuracy", t.validation_accuracy},
                     {"epoch_time_s", t.epoch_time_s},
                     {"epochs_run", t.epochs_run}}
                    .dump(1));
}

Training load_training(const fs::path& p) {
  const json j = json::parse(read_text(p));
  Training t;
  t.train_size = j.at("train_size");
  t.validation_size = j.at("validation_size");
  t.train_accuracy = j.at("train_accuracy");
  t.validation_accuracy = j.at("validation_accuracy");
  t.epoch_time_s = j.at("epoch_time_s");
  t.epochs_run = j.at("epochs_run");
  return t;
}

/// Records flagged in `round` (optionally restricted to seeds or non-seeds)
/// still awaiting a verdict.
std::vector<std::string> pending(const DatasetManifest& m, int round, std::optional<bool> seeds) {
  std::vector<std::string> ids;
  for (const auto& [id, r] : m.records) {
    if (!r.flag || r.round != round || r.status != Status::unverified) continue;
    if (seeds && (*r.flag == FlagKind::seed) != *seeds) continue;
    ids.push_back(id);
  }
  return ids;
}

bool any_flag(const DatasetManifest& m, int round, bool seeds) {
  for (const auto& [_, r] : m.records)
    if (r.flag && r.round == round && (*r.flag == FlagKind::seed) == seeds) return true;
  return false;
}

void persist(const DatasetManifest& m, const PipelineConfig& config, const std::string& step) {
  require_size_constraint(m, step);
  save_manifest(m, config.manifest);
}

/// Applies supervisor verdicts to the pending ids; returns how many are
/// still pending afterwards.
std::size_t review(DatasetManifest& m, const PipelineConfig& config, const Layout& layout,
                   int round, const std::vector<std::string>& ids, const Logger& log) {
  if (ids.empty()) return 0;
  std::vector<ReviewVerdict> verdicts;
  if (config.supervisor.mode == SupervisorMode::simulated) {
    const auto truth = glyphs::truth_from_json(read_text(config.supervisor.truth), m);
    verdicts = simulate_verdicts(m, ids, truth, config.supervisor, round);
  } else if (fs::exists(layout.verdicts(round))) {
    const std::set<std::string> wanted(ids.begin(), ids.end());
    for (auto& v : triage::verdicts_from_json(read_text(layout.verdicts(round)), m))
      if (wanted.count(v.sample_id) && v.round == round) verdicts.push_back(std::move(v));
  }
  if (!verdicts.empty()) {
    m = triage::apply_verdicts(std::move(m), verdicts);
    persist(m, config, "apply verdicts, round " + std::to_string(round));
    emit(log, "round " + std::to_string(round) + ": applied " + std::to_string(verdicts.size()) +
                  " verdicts");
  }
  std::size_t left = 0;
  const std::set<std::string> wanted(ids.begin(), ids.end());
  for (const auto& id : wanted)
    if (m.at(id).status == Status::unverified) ++left;
  return left;
}

DatasetManifest select_seeds(DatasetManifest m, const PipelineConfig& config) {
  std::vector<std::string> candidates;
  for (const auto& [id, r] : m.records)
    if (r.status == Status::unverified && !r.flag) candidates.push_back(id);
  const std::size_t want = static_cast<std::size_t>(config.seed_train + config.seed_validation);
  if (candidates.size() < want)
    throw ValidationError("corpus has " + std::to_string(candidates.size()) +
                          " unverified samples, fewer than the seed set of " + std::to_string(want));
  Rng rng = derive_rng({config.seed, 0x5eed});
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (std::size_t i = 0; i < want; ++i) {
    auto& r = m.at(candidates[i]);
    r.flag = FlagKind::seed;
    r.round = 1;
    r.split = i < static_cast<std::size_t>(config.seed_train) ? Split::train : Split::validation;
    r.touch();
  }
  return m;
}

void run_dedup(DatasetManifest& m, const PipelineConfig& config, const Logger& log) {
  const auto failures = dedup::hash_manifest(m, config.images, config.dedup);
  for (const auto& f : failures) emit(log, "dedup: cannot hash " + f.id + ": " + f.message);
  const auto groups = dedup::find_duplicates(m, config.dedup);
  m = dedup::resolve_duplicates(std::move(m), groups, config.dedup_policy);
  emit(log, "dedup: " + std::to_string(groups.size()) + " duplicate groups");
}

Training train_round(DatasetManifest& m, const PipelineConfig& config, const Layout& layout,
                     int round, const Logger& log) {
  std::vector<std::string> train_ids, val_ids;
  for (const auto& [id, r] : m.records) {
    if (!r.in_active_pool()) continue;
    if (r.split == Split::train) train_ids.push_back(id);
    if (r.split == Split::validation) val_ids.push_back(id);
  }
  aux::ModelConfig mc = config.model;
  mc.num_classes = m.num_classes();
  mc.init_seed = config.model.init_seed + static_cast<std::uint64_t>(round);
  auto train_set = aux::load_samples(m, train_ids, config.images, mc);
  auto val_set = aux::load_samples(m, val_ids, config.images, mc);
  aux::TrainConfig tc = config.train;
  tc.seed = config.train.seed + static_cast<std::uint64_t>(round);
  tc.n_max = m.n_max;

  auto model = aux::build_model(mc);
  emit(log, "round " + std::to_string(round) + ": training on " + std::to_string(train_set.size()) +
                " / " + std::to_string(val_set.size()));
  const auto start = std::chrono::steady_clock::now();
  const auto result = aux::train(model, train_set, val_set, tc);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& w : result.warnings) emit(log, "train: " + w);
  fs::create_directories(layout.round_dir(round));
  aux::save_model(model, layout.model(round));

  Training t;
  t.train_size = train_set.size();
  t.validation_size = val_set.size();
  t.train_accuracy = result.train_eval.accuracy;
  t.validation_accuracy = result.validation_eval.accuracy;
  t.epochs_run = static_cast<int>(result.history.size());
  t.epoch_time_s = t.epochs_run > 0 ? seconds / t.epochs_run : 0.0;
  return t;
}

void flag_round(DatasetManifest& m, const PipelineConfig& config, const Layout& layout, int round,
                const Logger& log) {
  aux::Classifier model = aux::load_model(layout.model(round));
  std::vector<std::string> candidates;
  for (const auto& [id, r] : m.records)
    if (r.status == Status::unverified && !r.flag) candidates.push_back(id);
  const auto report = aux::infer_losses(model, m, candidates, config.images);
  write_text(layout.losses(round), aux::loss_report_to_json(report));
  for (const auto& e : report.entries)
    if (!e.ok()) emit(log, "infer: " + e.id + ": " + *e.error);

  const auto ranked = triage::rank_by_loss(report);
  const auto budget = validate_size_constraint(m);
  const long room = m.n_max - 1 - static_cast<long>(budget.train + budget.validation);
  const std::size_t available =
      std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max(0L, room)));
  const auto tc = clamp_selection(config.triage, available);
  const auto selection = triage::select_head_tail(ranked, tc);
  m = triage::flag_selection(std::move(m), report, selection, round, tc);
  persist(m, config, "triage, round " + std::to_string(round));
  write_text(layout.queue(round), triage::queue_to_json(triage::build_queue(m, round), m));
  emit(log, "round " + std::to_string(round) + ": flagged " + std::to_string(tc.k) + " head / " +
                std::to_string(tc.l) + " tail");
}

}  // namespace

std::vector<LedgerEntry> read_ledger(const fs::path& path) {
  std::vector<LedgerEntry> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(entry_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<ReviewVerdict> simulate_verdicts(const DatasetManifest& manifest,
                                             const std::vector<std::string>& ids,
                                             const std::map<std::string, int>& truth,
                                             const SupervisorConfig& config, int round) {
  std::vector<ReviewVerdict> out;
  const int classes = manifest.num_classes();
  for (const auto& id : ids) {
    const auto& r = manifest.at(id);
    auto it = truth.find(id);
    if (it == truth.end()) throw ValidationError("no ground truth for '" + id + "'", id);
    Rng rng = derive_rng({config.seed, static_cast<std::uint64_t>(round), hash_string(id)});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int label = r.original_label.value_or(r.label);
    int believed = it->second;
    if (config.error_rate > 0 && u(rng) < config.error_rate) {
      std::uniform_int_distribution<int> other(1, classes - 1);
      believed = (believed + other(rng)) % classes;
    }
    ReviewVerdict v;
    v.sample_id = id;
    v.round = round;
    v.reviewer = config.reviewer;
    if (believed == label) {
      v.action = triage::Action::certify;
    } else if (config.ambiguity_rate > 0 && u(rng) < config.ambiguity_rate) {
      v.action = triage::Action::ambiguous;
    } else {
      v.action = triage::Action::relabel;
      v.new_label = believed;
    }
    out.push_back(std::move(v));
  }
  return out;
}

triage::TriageConfig clamp_selection(const triage::TriageConfig& config, std::size_t available) {
  triage::TriageConfig c = config;
  const std::size_t want = static_cast<std::size_t>(config.k + config.l);
  if (want <= available) return c;
  c.k = static_cast<int>(available * static_cast<std::size_t>(config.k) / std::max<std::size_t>(want, 1));
  c.l = static_cast<int>(available) - c.k;
  return c;
}

DatasetManifest distribute_validation(DatasetManifest manifest, int round, double share,
                                      std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& [id, r] : manifest.records)
    if (r.flag && *r.flag != FlagKind::seed && r.round == round && r.in_active_pool() &&
        r.split == Split::train)
      ids.push_back(id);
  const auto n = static_cast<std::size_t>(std::llround(share * static_cast<double>(ids.size())));
  Rng rng = derive_rng({seed, static_cast<std::uint64_t>(round), 0xda7a});
  std::shuffle(ids.begin(), ids.end(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = manifest.at(ids[i]);
    r.split = Split::validation;
    r.touch();
  }
  return manifest;
}

std::optional<triage::RoundReport> trained_report(const fs::path& output, int round) {
  const Layout layout{output};
  for (const auto& e : read_ledger(layout.ledger()))
    if (e.report.round == round) return e.report;
  if (!fs::exists(layout.training(round))) return std::nullopt;
  const Training t = load_training(layout.training(round));
  triage::RoundReport r;
  r.round = round;
  r.train_size = t.train_size;
  r.validation_size = t.validation_size;
  r.train_accuracy = t.train_accuracy;
  r.validation_accuracy = t.validation_accuracy;
  return r;
}

int next_round(const PipelineConfig& config) {
  const Layout layout{config.output};
  return static_cast<int>(read_ledger(layout.ledger()).size()) + 1;
}

RoundOutcome run_round(const PipelineConfig& config, int round, const Logger& log) {
  config.validate();
  const Layout layout{config.output};
  fs::create_directories(layout.root);
  RoundOutcome out;
  out.round = round;

  const auto ledger = read_ledger(layout.ledger());
  for (const auto& e : ledger)
    if (e.report.round == round) {
      out.entry = e;
      out.message = "round already complete";
      return out;
    }
  if (static_cast<int>(ledger.size()) + 1 != round)
    throw ValidationError("round " + std::to_string(round) + " cannot run; next round is " +
                          std::to_string(ledger.size() + 1));

  DatasetManifest m = load_manifest(config.manifest);
  if (round == 1 && !fs::exists(layout.baseline())) {
    save_manifest(m, layout.baseline());
    if (config.dedup_enabled) {
      run_dedup(m, config, log);
      persist(m, config, "dedup");
    }
  }

  if (round == 1) {
    bool have_validated = false;
    for (const auto& [_, r] : m.records) have_validated |= r.in_active_pool();
    if (!any_flag(m, 1, true) && !have_validated) {
      m = select_seeds(std::move(m), config);
      persist(m, config, "seed selection");
      emit(log, "round 1: selected " + std::to_string(config.seed_train) + " + " +
                    std::to_string(config.seed_validation) + " seed samples");
    }
    if (review(m, config, layout, 1, pending(m, 1, true), log) > 0) {
      write_state(layout, 1, "seed_review");
      out.paused = true;
      out.message = "waiting for seed verdicts in " + layout.verdicts(1).string();
      return out;
    }
  }

  if (!fs::exists(layout.training(round))) {
    write_state(layout, round, "training");
    const Training t = train_round(m, config, layout, round, log);
    save_training(layout.training(round), t);
  }
  if (!any_flag(m, round, false)) flag_round(m, config, layout, round, log);

  if (review(m, config, layout, round, pending(m, round, false), log) > 0) {
    write_state(layout, round, "review");
    out.paused = true;
    out.message = "waiting for verdicts in " + layout.verdicts(round).string() +
                  " (or through the review service)";
    return out;
  }

  const double share = static_cast<double>(config.seed_validation) /
                       static_cast<double>(config.seed_train + config.seed_validation);
  m = distribute_validation(std::move(m), round, share, config.seed);
  persist(m, config, "round " + std::to_string(round) + " complete");

  const Training t = load_training(layout.training(round));
  const auto flagged = triage::flagged_in_round(m, round);
  const auto verdicts = triage::verdicts_in_round(m, round);
  const double pa =
      flagged.empty() ? 0.0 : triage::pipeline_accuracy(flagged, verdicts, config.confirmation);
  LedgerEntry e;
  e.report.round = round;
  e.report.train_size = t.train_size;
  e.report.validation_size = t.validation_size;
  e.report.train_accuracy = t.train_accuracy;
  e.report.validation_accuracy = t.validation_accuracy;
  e.report.pipeline_accuracy = pa;
  e.report.ratio_validated = triage::ratio_validated(m);
  e.flagged = flagged.size();
  e.epoch_time_s = t.epoch_time_s;
  for (const auto& [_, r] : m.records)
    if (r.flag && r.round == round && r.status != Status::unverified) ++e.new_verdicts;

  std::ofstream ledger_out(layout.ledger(), std::ios::app);
  ledger_out << entry_to_json(e).dump() << "\n";
  if (!ledger_out) throw IoError("cannot append to " + layout.ledger().string());
  ledger_out.close();
  write_state(layout, round, "complete");
  out.entry = e;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "round %d: train %zu / val %zu, accuracy %.3f / %.3f, pipeline %.3f, ratio %.3f",
                round, t.train_size, t.validation_size, t.train_accuracy, t.validation_accuracy,
                pa, e.report.ratio_validated);
  out.message = buf;
  emit(log, buf);
  return out;
}

RunSummary run_until_validated(const PipelineConfig& config, double target_ratio,
                               const Logger& log) {
  if (!(target_ratio > 0.0 && target_ratio <= 1.0))
    throw ValidationError("target ratio must be in (0, 1]");
  const Layout layout{config.output};
  RunSummary s;
  s.ledger = read_ledger(layout.ledger());
  {
    const DatasetManifest m = load_manifest(config.manifest);
    s.ratio_validated = triage::ratio_validated(m);
  }
  // Rounds already on the ledger are done; a pending round resumes.
  while (s.ratio_validated < target_ratio) {
    const int round = static_cast<int>(s.ledger.size()) + 1;
    if (round > config.max_rounds) {
      s.halted = true;
      s.message = "stopped after max_rounds = " + std::to_string(config.max_rounds);
      break;
    }
    const auto outcome = run_round(config, round, log);
    if (outcome.paused) {
      s.paused = true;
      s.message = outcome.message;
      break;
    }
    ++s.rounds_run;
    s.ledger.push_back(*outcome.entry);
    s.ratio_validated = outcome.entry->report.ratio_validated;
    if (outcome.entry->new_verdicts == 0) {
      s.halted = true;
      s.message = "round " + std::to_string(round) +
                  " produced no verdicts (no samples left to flag or no room under n_max)";
      break;
    }
  }
  if (!s.paused && !s.halted)
    s.message = "ratio_validated " + std::to_string(s.ratio_validated) + " reached target " +
                std::to_string(target_ratio);
  emit(log, s.message);
  return s;
}

SizeRow size_row(const std::string& name, const DatasetManifest& m) {
  SizeRow row;
  row.name = name;
  for (const auto& [_, r] : m.records) {
    if (r.excluded()) continue;
    if (r.split == Split::train) ++row.train;
    if (r.split == Split::validation) ++row.validation;
    if (r.split == Split::test) ++row.test;
  }
  row.records = row.train + row.validation + row.test;
  if (row.records == 0) row.records = m.records.size();
  return row;
}

std::string report(const PipelineConfig& config) {
  const Layout layout{config.output};
  const auto ledger = read_ledger(layout.ledger());
  std::ostringstream md;
  char buf[256];
  md << "# Dataset curation report\n\n## Rounds\n\n";
  md << "| Round | Train | Validation | Train accuracy | Validation accuracy | Pipeline accuracy "
        "| Ratio validated | Epoch time (s) |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& e : ledger) {
    const auto& r = e.report;
    std::snprintf(buf, sizeof buf, "| %d | %zu | %zu | %.1f%% | %.1f%% | %.1f%% | %.1f%% | %.3f |\n",
                  r.round, r.train_size, r.validation_size, 100 * r.train_accuracy,
                  100 * r.validation_accuracy, 100 * r.pipeline_accuracy,
                  100 * r.ratio_validated, e.epoch_time_s);
    md << buf;
  }
  if (ledger.empty()) return md.str();

  md << "\n## Dataset size\n\n| Name | Train | Validation | Test | Records |\n|---|---|---|---|---|\n";
  const fs::path baseline_path = config.baseline.value_or(layout.baseline());
  std::optional<SizeRow> base;
  if (fs::exists(baseline_path)) base = size_row("Baseline", load_manifest(baseline_path));
  const SizeRow out = size_row("Pipeline output", load_manifest(config.manifest));
  for (const auto& row : {base, std::optional<SizeRow>(out)}) {
    if (!row) continue;
    std::snprintf(buf, sizeof buf, "| %s | %zu | %zu | %zu | %zu |\n", row->name.c_str(),
                  row->train, row->validation, row->test, row->records);
    md << buf;
  }
  if (base && out.records > 0) {
    std::snprintf(buf, sizeof buf, "\nSize ratio (baseline / output): %.2fx\n",
                  static_cast<double>(base->records) / static_cast<double>(out.records));
    md << buf;
  }
  return md.str();
}

}  // namespace wb::pipeline
