#include "workbench/triage.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

namespace wb::triage {

using nlohmann::json;

void TriageConfig::validate() const {
  if (k < 0 || l < 0) throw ValidationError("k and l must be >= 0");
}

std::string to_string(Action a) {
  switch (a) {
    case Action::certify: return "certify";
    case Action::relabel: return "relabel";
    case Action::reject: return "reject";
    case Action::ambiguous: return "ambiguous";
  }
  return "?";
}

Action parse_action(const std::string& s) {
  if (s == "certify") return Action::certify;
  if (s == "relabel") return Action::relabel;
  if (s == "reject") return Action::reject;
  if (s == "ambiguous") return Action::ambiguous;
  throw ValidationError("unknown action '" + s + "'");
}

std::string verdicts_to_json(const std::vector<ReviewVerdict>& verdicts, const DatasetManifest& m) {
  json arr = json::array();
  for (const auto& v : verdicts) {
    json j{{"sample_id", v.sample_id},
           {"action", to_string(v.action)},
           {"reviewer", v.reviewer},
           {"round", v.round},
           {"timestamp", v.timestamp}};
    if (v.new_label) j["new_label"] = m.class_name(*v.new_label);
    if (v.expected_version) j["expected_version"] = *v.expected_version;
    arr.push_back(std::move(j));
  }
  return arr.dump(1);
}

std::vector<ReviewVerdict> verdicts_from_json(const std::string& text, const DatasetManifest& m) {
  std::vector<ReviewVerdict> out;
  try {
    const json arr = json::parse(text);
    for (const auto& j : arr) {
      ReviewVerdict v;
      v.sample_id = j.at("sample_id").get<std::string>();
      v.action = parse_action(j.at("action").get<std::string>());
      if (j.contains("new_label") && !j["new_label"].is_null())
        v.new_label = m.class_index(j["new_label"].get<std::string>());
      v.reviewer = j.value("reviewer", std::string{});
      v.round = j.at("round").get<int>();
      v.timestamp = j.value("timestamp", std::string{});
      if (j.contains("expected_version") && !j["expected_version"].is_null())
        v.expected_version = j["expected_version"].get<std::uint64_t>();
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("verdicts: ") + e.what());
  }
  return out;
}

std::vector<std::string> rank_by_loss(const aux::LossReport& report) {
  std::vector<const aux::LossEntry*> scored;
  for (const auto& e : report.entries)
    if (e.ok()) scored.push_back(&e);
  std::sort(scored.begin(), scored.end(), [](const auto* a, const auto* b) {
    if (a->loss != b->loss) return a->loss < b->loss;
    return a->id < b->id;
  });
  std::vector<std::string> ids;
  ids.reserve(scored.size());
  for (const auto* e : scored) ids.push_back(e->id);
  return ids;
}

Selection select_head_tail(std::span<const std::string> ordered, const TriageConfig& config) {
  config.validate();
  const std::size_t k = config.k, l = config.l;
  if (k + l > ordered.size())
    throw ValidationError("k + l = " + std::to_string(k + l) + " exceeds the " +
                          std::to_string(ordered.size()) + " ranked samples; choose smaller K/L");
  Selection s;
  s.head.assign(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(k));
  s.tail.assign(ordered.end() - static_cast<std::ptrdiff_t>(l), ordered.end());
  return s;
}

DatasetManifest flag_selection(DatasetManifest manifest, const aux::LossReport& report,
                               const Selection& selection, int round, const TriageConfig& config) {
  if (round < 1) throw ValidationError("round must be >= 1");
  std::map<std::string, const aux::LossEntry*> by_id;
  for (const auto& e : report.entries)
    if (e.ok()) by_id[e.id] = &e;
  for (const auto& [id, e] : by_id) {
    auto& r = manifest.at(id);
    if (r.loss != e->loss) {
      r.loss = e->loss;
      r.touch();
    }
  }
  auto mark = [&](const std::string& id, FlagKind kind) {
    auto& r = manifest.at(id);
    if (r.status != Status::unverified)
      throw ValidationError("sample '" + id + "' was already reviewed", id);
    const auto* e = by_id.at(id);
    r.flag = kind;
    r.round = round;
    r.suggested_label.reset();
    if (e->predicted != r.label) r.suggested_label = e->predicted;
    if (kind == FlagKind::confident_head && !config.require_human_confirmation_of_head) {
      r.status = Status::certified;
      r.split = Split::train;
      r.reviewer = "auto";
    }
    r.touch();
  };
  for (const auto& id : selection.head) mark(id, FlagKind::confident_head);
  for (const auto& id : selection.tail) mark(id, FlagKind::suspect_tail);
  require_size_constraint(manifest, "flag_selection");
  return manifest;
}

DatasetManifest apply_verdicts(DatasetManifest manifest, std::span<const ReviewVerdict> verdicts) {
  for (const auto& v : verdicts) {
    if (!manifest.contains(v.sample_id))
      throw ValidationError("verdict for unknown sample '" + v.sample_id + "'", v.sample_id);
    auto& r = manifest.at(v.sample_id);
    if (!r.flag || !r.round || *r.round != v.round)
      throw ValidationError("sample '" + v.sample_id + "' is not flagged in round " +
                                std::to_string(v.round),
                            v.sample_id);
    if (v.action == Action::relabel) {
      if (!v.new_label) throw ValidationError("relabel requires new_label", v.sample_id);
      if (*v.new_label < 0 || *v.new_label >= manifest.num_classes())
        throw ValidationError("new_label out of range", v.sample_id);
    } else if (v.new_label) {
      throw ValidationError("new_label is only valid with relabel", v.sample_id);
    }

    const int base_label = r.original_label.value_or(r.label);
    const Split keep_split = *r.flag == FlagKind::seed &&
                                     (r.split == Split::train || r.split == Split::validation)
                                 ? r.split
                                 : Split::train;
    SampleRecord target = r;
    switch (v.action) {
      case Action::certify:
        target.status = Status::certified;
        target.label = base_label;
        target.original_label.reset();
        target.split = keep_split;
        break;
      case Action::relabel:
        if (*v.new_label == base_label)
          throw ValidationError("relabel target equals the current label", v.sample_id);
        target.status = Status::relabeled;
        target.original_label = base_label;
        target.label = *v.new_label;
        target.split = keep_split;
        break;
      case Action::reject:
      case Action::ambiguous:
        target.status = v.action == Action::reject ? Status::rejected : Status::ambiguous;
        target.label = base_label;
        target.original_label.reset();
        target.split = Split::unassigned;
        break;
    }
    if (target.status == r.status && target.label == r.label && target.split == r.split)
      continue;  // already in effect
    if (v.expected_version && *v.expected_version != r.version)
      throw ConflictError("sample '" + v.sample_id + "' is at version " + std::to_string(r.version) +
                              ", verdict expected " + std::to_string(*v.expected_version),
                          v.sample_id);
    target.reviewer = v.reviewer.empty() ? std::nullopt : std::optional<std::string>(v.reviewer);
    r = std::move(target);
    r.touch();
  }
  require_size_constraint(manifest, "apply_verdicts");
  return manifest;
}

bool confirms(FlagKind kind, Action action, std::optional<int> suggested,
              std::optional<int> new_label, ConfirmationRule rule) {
  if (kind == FlagKind::confident_head) return action == Action::certify;
  if (kind == FlagKind::suspect_tail) {
    if (action == Action::reject || action == Action::ambiguous) return true;
    if (action == Action::relabel)
      return rule == ConfirmationRule::any_corrective || (suggested && new_label == suggested);
    return false;
  }
  return false;
}

double pipeline_accuracy(std::span<const FlaggedSample> flagged,
                         std::span<const ReviewVerdict> verdicts, ConfirmationRule rule) {
  if (flagged.empty()) throw ValidationError("no flagged samples");
  std::map<std::string, const ReviewVerdict*> latest;
  for (const auto& v : verdicts) latest[v.sample_id] = &v;
  std::size_t confirmed = 0;
  for (const auto& f : flagged) {
    auto it = latest.find(f.id);
    if (it == latest.end()) throw ValidationError("flagged sample '" + f.id + "' has no verdict", f.id);
    if (confirms(f.kind, it->second->action, f.suggested_label, it->second->new_label, rule))
      ++confirmed;
  }
  return static_cast<double>(confirmed) / static_cast<double>(flagged.size());
}

double ratio_validated(const DatasetManifest& manifest) {
  std::size_t validated = 0, corpus = 0;
  for (const auto& [_, r] : manifest.records) {
    if (r.provenance || r.excluded()) continue;
    ++corpus;
    if (r.in_active_pool()) ++validated;
  }
  return corpus == 0 ? 0.0 : static_cast<double>(validated) / static_cast<double>(corpus);
}

RoundReport round_report(const DatasetManifest& manifest, const aux::TrainResult& history,
                         std::size_t train_size, std::size_t validation_size,
                         double pipeline_accuracy_value, int round) {
  RoundReport r;
  r.round = round;
  r.train_size = train_size;
  r.validation_size = validation_size;
  r.train_accuracy = history.train_eval.accuracy;
  r.validation_accuracy = history.validation_eval.accuracy;
  r.pipeline_accuracy = pipeline_accuracy_value;
  r.ratio_validated = ratio_validated(manifest);
  return r;
}

std::vector<FlaggedSample> flagged_in_round(const DatasetManifest& manifest, int round) {
  std::vector<FlaggedSample> out;
  for (const auto& [id, r] : manifest.records)
    if (r.flag && *r.flag != FlagKind::seed && r.round == round)
      out.push_back({id, *r.flag, r.suggested_label});
  return out;
}

std::vector<ReviewVerdict> verdicts_in_round(const DatasetManifest& manifest, int round) {
  std::vector<ReviewVerdict> out;
  for (const auto& [id, r] : manifest.records) {
    if (!r.flag || r.round != round || r.status == Status::unverified) continue;
    ReviewVerdict v;
    v.sample_id = id;
    v.round = round;
    v.reviewer = r.reviewer.value_or("");
    switch (r.status) {
      case Status::certified: v.action = Action::certify; break;
      case Status::relabeled:
        v.action = Action::relabel;
        v.new_label = r.label;
        break;
      case Status::rejected: v.action = Action::reject; break;
      case Status::ambiguous: v.action = Action::ambiguous; break;
      case Status::unverified: break;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<QueueItem> build_queue(const DatasetManifest& manifest, int round,
                                   std::optional<FlagKind> filter) {
  std::vector<QueueItem> seeds, tail, head;
  for (const auto& [id, r] : manifest.records) {
    if (!r.flag || r.round != round || r.status != Status::unverified) continue;
    if (filter && *filter != *r.flag) continue;
    QueueItem q{id, "/api/sample/" + id + "/image", r.label, r.suggested_label, r.loss,
                *r.flag, round, r.version};
    (*r.flag == FlagKind::seed ? seeds : *r.flag == FlagKind::suspect_tail ? tail : head)
        .push_back(std::move(q));
  }
  auto loss_of = [](const QueueItem& q) { return q.loss.value_or(0.0); };
  std::stable_sort(tail.begin(), tail.end(), [&](const auto& a, const auto& b) {
    if (loss_of(a) != loss_of(b)) return loss_of(a) > loss_of(b);
    return a.sample_id < b.sample_id;
  });
  std::stable_sort(head.begin(), head.end(), [&](const auto& a, const auto& b) {
    if (loss_of(a) != loss_of(b)) return loss_of(a) < loss_of(b);
    return a.sample_id < b.sample_id;
  });
  std::vector<QueueItem> out = std::move(seeds);
  out.insert(out.end(), tail.begin(), tail.end());
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<int> flagged_rounds(const DatasetManifest& manifest) {
  std::set<int> rounds;
  for (const auto& [_, r] : manifest.records)
    if (r.flag && r.round) rounds.insert(*r.round);
  return {rounds.begin(), rounds.end()};
}

RoundStats round_stats(const DatasetManifest& manifest, int round,
                       const std::optional<RoundReport>& trained, ConfirmationRule rule) {
  RoundStats s;
  s.report.round = round;
  s.report.train_size = manifest.count(Split::train);
  s.report.validation_size = manifest.count(Split::validation);
  if (trained) {
    s.report.train_size = trained->train_size;
    s.report.validation_size = trained->validation_size;
    s.report.train_accuracy = trained->train_accuracy;
    s.report.validation_accuracy = trained->validation_accuracy;
  }
  s.report.ratio_validated = ratio_validated(manifest);
  std::size_t assessed = 0, confirmed = 0;
  for (const auto& [_, r] : manifest.records) {
    if (!r.flag || r.round != round) continue;
    ++s.total;
    if (r.status == Status::unverified) continue;
    ++s.reviewed;
    if (*r.flag == FlagKind::seed) continue;
    ++assessed;
    Action a = r.status == Status::certified   ? Action::certify
               : r.status == Status::relabeled ? Action::relabel
               : r.status == Status::rejected  ? Action::reject
                                               : Action::ambiguous;
    std::optional<int> new_label;
    if (a == Action::relabel) new_label = r.label;
    if (confirms(*r.flag, a, r.suggested_label, new_label, rule)) ++confirmed;
  }
  if (assessed > 0) {
    s.live_pipeline_accuracy = static_cast<double>(confirmed) / static_cast<double>(assessed);
    s.report.pipeline_accuracy = *s.live_pipeline_accuracy;
  }
  return s;
}

std::string round_stats_to_json(const RoundStats& s) {
  json j{{"round", s.report.round},
         {"train_size", s.report.train_size},
         {"validation_size", s.report.validation_size},
         {"train_accuracy", s.report.train_accuracy},
         {"validation_accuracy", s.report.validation_accuracy},
         {"ratio_validated", s.report.ratio_validated},
         {"reviewed", s.reviewed},
         {"total", s.total}};
  j["pipeline_accuracy"] =
      s.live_pipeline_accuracy ? json(*s.live_pipeline_accuracy) : json(nullptr);
  return j.dump();
}

std::string queue_to_json(const std::vector<QueueItem>& items, const DatasetManifest& m) {
  json arr = json::array();
  for (const auto& q : items) {
    json j{{"sample_id", q.sample_id},
           {"image_url", q.image_url},
           {"label", m.class_name(q.label)},
           {"flag_kind", to_string(q.flag_kind)},
           {"round", q.round},
           {"version", q.version}};
    j["suggested_label"] = q.suggested_label ? json(m.class_name(*q.suggested_label)) : json(nullptr);
    j["loss"] = q.loss ? json(*q.loss) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump();
}

}  // namespace wb::triage
