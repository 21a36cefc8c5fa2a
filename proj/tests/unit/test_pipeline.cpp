#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "support.hpp"
#include "workbench/glyphs.hpp"
#include "workbench/pipeline.hpp"

using namespace wb;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct Run {
  wbt::TempDir dir;
  glyphs::Corpus corpus;
  PipelineConfig config;

  explicit Run(int per_class = 12, double flip = 0.1) {
    glyphs::CorpusSpec spec;
    spec.per_class = per_class;
    spec.flip_fraction = flip;
    spec.seed = 5;
    corpus = glyphs::generate_corpus(spec, dir.path());
    config.manifest = dir / "manifest.jsonl";
    save_manifest(corpus.manifest, config.manifest);
    write_file(dir / "truth.json", glyphs::truth_to_json(corpus.truth, corpus.manifest));

    config.images = dir.path();
    config.output = dir / "out";
    config.seed_train = 27;
    config.seed_validation = 3;
    config.model.width = 4;
    config.train.epochs = 2;
    config.train.batch_size = 16;
    config.train.augment_enabled = false;
    config.triage.k = 20;
    config.triage.l = 10;
    config.supervisor.truth = dir / "truth.json";
    config.max_rounds = 3;
  }
};

std::size_t count_status(const DatasetManifest& m, Status s) {
  std::size_t n = 0;
  for (const auto& [_, r] : m.records) n += r.status == s;
  return n;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("clamp_selection keeps the head share") {
    triage::TriageConfig c;
    c.k = 500;
    c.l = 100;
    auto r = pipeline::clamp_selection(c, 1000);
    CHECK(r.k == 500);
    CHECK(r.l == 100);
    r = pipeline::clamp_selection(c, 300);
    CHECK(r.k == 250);
    CHECK(r.l == 50);
    r = pipeline::clamp_selection(c, 0);
    CHECK(r.k == 0);
    CHECK(r.l == 0);
    for (std::size_t a = 0; a < 700; a += 37) {
      r = pipeline::clamp_selection(c, a);
      CHECK(static_cast<std::size_t>(r.k + r.l) == std::min<std::size_t>(a, 600));
      CHECK(r.k >= 0);
      CHECK(r.l >= 0);
    }
  }

  TEST_CASE("simulated verdicts follow the truth") {
    auto m = wbt::empty_manifest(4);
    std::map<std::string, int> truth;
    for (int i = 0; i < 40; ++i) {
      m.add(wbt::record("r" + wbt::pad(i), i % 4));
      truth["r" + wbt::pad(i)] = i % 5 == 0 ? (i + 1) % 4 : i % 4;
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : m.records) ids.push_back(id);
    SupervisorConfig sc;
    const auto v = pipeline::simulate_verdicts(m, ids, truth, sc, 2);
    REQUIRE(v.size() == ids.size());
    for (const auto& x : v) {
      CHECK(x.round == 2);
      if (truth[x.sample_id] == m.at(x.sample_id).label) {
        CHECK(x.action == triage::Action::certify);
      } else {
        CHECK(x.action == triage::Action::relabel);
        CHECK(x.new_label == truth[x.sample_id]);
      }
    }
    sc.ambiguity_rate = 1.0;
    for (const auto& x : pipeline::simulate_verdicts(m, ids, truth, sc, 2))
      if (truth[x.sample_id] != m.at(x.sample_id).label) CHECK(x.action == triage::Action::ambiguous);

    sc.ambiguity_rate = 0;
    sc.error_rate = 1.0;
    for (const auto& x : pipeline::simulate_verdicts(m, ids, truth, sc, 2)) {
      // Every verdict disagrees with the truth.
      if (x.action == triage::Action::certify) CHECK(truth[x.sample_id] != m.at(x.sample_id).label);
      if (x.action == triage::Action::relabel) CHECK(x.new_label != truth[x.sample_id]);
    }
    truth.erase("r00003");
    CHECK_THROWS_AS(pipeline::simulate_verdicts(m, ids, truth, sc, 2), ValidationError);
  }

  TEST_CASE("distribute_validation moves the requested share of new train records") {
    auto m = wbt::empty_manifest(2);
    for (int i = 0; i < 50; ++i) {
      auto r = wbt::record("v" + wbt::pad(i), i % 2, Split::train, Status::certified);
      r.flag = i < 10 ? FlagKind::seed : FlagKind::suspect_tail;
      r.round = i < 40 ? 1 : 2;
      m.add(r);
    }
    const auto out = pipeline::distribute_validation(m, 1, 0.1, 4);
    std::size_t moved = 0;
    for (const auto& [id, r] : out.records) {
      if (r.split == Split::validation) {
        ++moved;
        CHECK(r.flag != FlagKind::seed);
        CHECK(r.round == 1);
      }
    }
    CHECK(moved == 3);
    CHECK(pipeline::distribute_validation(m, 1, 0.1, 4) == out);
    CHECK(pipeline::distribute_validation(m, 3, 0.5, 4) == m);
  }

  TEST_CASE("simulated rounds write the ledger and grow the validated share") {
    Run run;
    std::vector<std::string> log;
    const auto s = pipeline::run_until_validated(run.config, 1.0, [&](const std::string& l) { log.push_back(l); });
    CHECK_FALSE(s.paused);
    CHECK(s.rounds_run == 3);
    CHECK_FALSE(s.halted);
    CHECK(s.ratio_validated == 1.0);
    const auto ledger = pipeline::read_ledger(pipeline::Layout{run.config.output}.ledger());
    REQUIRE(ledger.size() == 3);
    for (std::size_t i = 0; i < ledger.size(); ++i) {
      CHECK(ledger[i].report.round == static_cast<int>(i) + 1);
      CHECK(ledger[i].flagged == 30);
      CHECK(ledger[i].new_verdicts == (i == 0 ? 60u : 30u));  // seeds count in round 1
      if (i > 0) CHECK(ledger[i].report.ratio_validated > ledger[i - 1].report.ratio_validated);
    }
    const auto m = load_manifest(run.config.manifest);
    CHECK(ledger.back().report.ratio_validated == doctest::Approx(triage::ratio_validated(m)));
    CHECK(validate_size_constraint(m).satisfied);
    // Seeds plus three rounds of 30 cover the corpus.
    CHECK(count_status(m, Status::unverified) == 0);
    for (const auto& [id, r] : m.records)
      if (r.status == Status::certified || r.status == Status::relabeled)
        CHECK(r.label == run.corpus.truth.at(id));
    CHECK_FALSE(log.empty());

    // Already complete rounds are not redone.
    const auto again = pipeline::run_round(run.config, 2);
    CHECK(again.message == "round already complete");
    CHECK_THROWS_AS(pipeline::run_round(run.config, 5), ValidationError);

    const auto md = pipeline::report(run.config);
    CHECK(md.find("| 3 |") != std::string::npos);
    const auto base = pipeline::size_row("Baseline", load_manifest(pipeline::Layout{run.config.output}.baseline()));
    const auto out = pipeline::size_row("Pipeline output", m);
    std::ostringstream row;
    row << "| Pipeline output | " << out.train << " | " << out.validation << " | " << out.test << " | "
        << out.records << " |";
    CHECK(md.find(row.str()) != std::string::npos);
    CHECK(base.records == 120);
    CHECK(out.records == 120 - count_status(m, Status::unverified) - count_status(m, Status::rejected) -
                             count_status(m, Status::ambiguous));
  }

  TEST_CASE("file supervisor pauses until verdicts arrive") {
    Run run;
    run.config.supervisor.mode = SupervisorMode::file;
    const pipeline::Layout layout{run.config.output};
    auto s = pipeline::run_until_validated(run.config, 1.0);
    CHECK(s.paused);
    CHECK(s.rounds_run == 0);

    auto answer = [&](int round) {
      const auto m = load_manifest(run.config.manifest);
      std::vector<std::string> ids;
      for (const auto& [id, r] : m.records)
        if (r.flag && r.round == round && r.status == Status::unverified) ids.push_back(id);
      REQUIRE_FALSE(ids.empty());
      SupervisorConfig sc;
      const auto v = pipeline::simulate_verdicts(m, ids, run.corpus.truth, sc, round);
      fs::create_directories(layout.round_dir(round));
      write_file(layout.verdicts(round), triage::verdicts_to_json(v, m));
      return ids.size();
    };

    CHECK(answer(1) == 30);  // seeds
    s = pipeline::run_until_validated(run.config, 1.0);
    CHECK(s.paused);
    CHECK(s.rounds_run == 0);
    CHECK(fs::exists(layout.model(1)));
    CHECK(answer(1) == 30);  // round 1 head and tail
    s = pipeline::run_until_validated(run.config, 1.0);
    CHECK(s.paused);
    CHECK(s.rounds_run == 1);
    CHECK(pipeline::next_round(run.config) == 2);
    CHECK(pipeline::trained_report(run.config.output, 1).has_value());
  }

  TEST_CASE("a met target runs no rounds") {
    Run run(3, 0.0);
    auto m = load_manifest(run.config.manifest);
    for (auto& [_, r] : m.records) {
      r.status = Status::certified;
      r.split = Split::train;
    }
    save_manifest(m, run.config.manifest);
    const auto s = pipeline::run_until_validated(run.config, 0.5);
    CHECK(s.rounds_run == 0);
    CHECK_FALSE(s.paused);
    CHECK(s.ratio_validated == 1.0);
    CHECK_THROWS_AS(pipeline::run_until_validated(run.config, 0.0), ValidationError);
    CHECK(pipeline::report(run.config).find("## Dataset size") == std::string::npos);
  }

#ifdef WB_CLI_PATH
  TEST_CASE("cli drives a run from a config file") {
    wbt::TempDir dir;
    const std::string cli = WB_CLI_PATH;
    auto sh = [](const std::string& cmd) { return std::system((cmd + " 2>/dev/null").c_str()); };
    REQUIRE(sh(cli + " synth-corpus --out " + (dir / "data").string() +
               " --per-class 8 --flip 0.1 --seed 2") == 0);
    write_file(dir / "run.toml", R"(
[paths]
manifest = "data/manifest.jsonl"
output = "out"

[pipeline]
seed_train = 18
seed_validation = 2

[train]
epochs = 2
width = 4
augment = false

[triage]
k = 10
l = 5

[supervisor]
mode = "simulated"
truth = "data/truth.json"
)");
    const std::string config = (dir / "run.toml").string();
    REQUIRE(sh(cli + " run --config " + config + " --rounds 2") == 0);
    REQUIRE(sh(cli + " report --config " + config + " --out " + (dir / "report.md").string()) == 0);
    std::ifstream in(dir / "report.md");
    std::stringstream md;
    md << in.rdbuf();
    CHECK(md.str().find("| 2 |") != std::string::npos);
    CHECK(md.str().find("Size ratio") != std::string::npos);
    CHECK(pipeline::read_ledger(dir / "out/rounds.jsonl").size() == 2);
    CHECK(sh(cli + " run --config " + (dir / "missing.toml").string()) != 0);
  }
#endif
}
