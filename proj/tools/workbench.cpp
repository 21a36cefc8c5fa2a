// workbench: command-line front end for the dataset curation pipeline.
#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "workbench/augment.hpp"
#include "workbench/aux_trainer.hpp"
#include "workbench/balance.hpp"
#include "workbench/config.hpp"
#include "workbench/dedup.hpp"
#include "workbench/gan.hpp"
#include "workbench/glyphs.hpp"
#include "workbench/pipeline.hpp"
#include "workbench/review_service.hpp"
#include "workbench/triage.hpp"

namespace fs = std::filesystem;
using namespace wb;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& p, const std::string& text) {
  if (p.empty() || p == "-") {
    std::cout << text << "\n";
    return;
  }
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text << "\n";
}

fs::path image_root(const fs::path& manifest, const std::string& images) {
  if (!images.empty()) return images;
  return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

review::ReviewService* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset curation workbench"};
  app.require_subcommand(1);

  std::string manifest, images, out, config;
  int round = 1;
  std::uint64_t seed = 0;

  // ---- synth-corpus
  auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic Roman-numeral corpus");
  glyphs::CorpusSpec corpus_spec;
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--per-class", corpus_spec.per_class, "Images per class");
  synth->add_option("--flip", corpus_spec.flip_fraction, "Fraction of labels to corrupt");
  synth->add_option("--seed", corpus_spec.seed);
  synth->add_option("--n-max", corpus_spec.n_max, "Size limit recorded in the manifest");
  synth->callback([&] {
    const auto corpus = glyphs::generate_corpus(corpus_spec, out);
    save_manifest(corpus.manifest, fs::path(out) / "manifest.jsonl");
    dump(fs::path(out) / "truth.json", glyphs::truth_to_json(corpus.truth, corpus.manifest));
    std::cerr << corpus.manifest.records.size() << " records, " << corpus.flipped.size()
              << " flipped labels\n";
  });

  // ---- dedup
  auto* dd = app.add_subcommand("dedup", "Find and resolve duplicate images");
  dedup::DedupConfig dcfg;
  std::string policy, report_path;
  bool rehash = false, leakage = false;
  dd->add_option("--manifest", manifest)->required();
  dd->add_option("--images", images, "Image root (default: manifest directory)");
  dd->add_option("--threshold", dcfg.hamming_threshold, "Near-duplicate Hamming threshold");
  dd->add_option("--prefix-bits", dcfg.prefix_bits);
  dd->add_option("--apply", policy, "keep_first or keep_best_status");
  dd->add_option("--report", report_path, "Write duplicate groups as JSON");
  dd->add_flag("--rehash", rehash, "Recompute hashes from the images first");
  dd->add_flag("--leakage", leakage, "Report train/validation leakage instead");
  dd->callback([&] {
    auto m = load_manifest(manifest);
    if (rehash) {
      for (const auto& f : dedup::hash_manifest(m, image_root(manifest, images), dcfg))
        std::cerr << "cannot hash " << f.id << ": " << f.message << "\n";
      save_manifest(m, manifest);
    }
    if (leakage) {
      dump(report_path, dedup::leakage_to_json(dedup::find_split_leakage(m, dcfg)));
      return;
    }
    const auto groups = dedup::find_duplicates(m, dcfg);
    dump(report_path, dedup::groups_to_json(groups));
    std::cerr << groups.size() << " duplicate groups\n";
    if (!policy.empty()) {
      m = dedup::resolve_duplicates(std::move(m), groups, dedup::parse_resolve_policy(policy));
      save_manifest(m, manifest);
    }
  });

  // ---- augment
  auto* aug = app.add_subcommand("augment", "Write augmented copies of a directory of PNGs");
  std::string in_dir;
  int multiplier = 1;
  bool have_seed = false;
  aug->add_option("--in", in_dir)->required();
  aug->add_option("--out", out)->required();
  aug->add_option("--config", config, "Augmentation TOML");
  aug->add_option("--seed", seed)->each([&](const std::string&) { have_seed = true; });
  aug->add_option("--multiplier", multiplier, "Copies per input image");
  aug->callback([&] {
    auto cfg = config.empty() ? augment::AugmentConfig{} : load_augment_config(config);
    if (have_seed) cfg.seed = seed;
    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(in_dir))
      if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
    fs::create_directories(out);
    for (const auto& p : inputs) {
      const auto img = to_tensor(to_grayscale(read_png(p)));
      for (int k = 0; k < multiplier; ++k) {
        const auto counter = hash_string(p.filename().string()) + static_cast<std::uint64_t>(k);
        const auto name = p.stem().string() + "__aug" + std::to_string(k) + "_s" +
                          std::to_string(cfg.seed) + ".png";
        write_png(fs::path(out) / name, to_image8(augment::augment(img, cfg, counter)));
      }
    }
    std::cerr << inputs.size() * multiplier << " images written\n";
  });

  // ---- train-aux
  auto* tr = app.add_subcommand("train-aux", "Train an auxiliary classifier on validated samples");
  tr->add_option("--manifest", manifest)->required();
  tr->add_option("--images", images);
  tr->add_option("--round", round, "Round number (offsets the seeds)");
  tr->add_option("--config", config, "Training TOML");
  tr->add_option("--out", out)->required();
  tr->callback([&] {
    const auto m = load_manifest(manifest);
    aux::ModelConfig mc;
    auto tc = config.empty() ? aux::TrainConfig{} : load_train_config(config, &mc);
    mc.num_classes = m.num_classes();
    mc.init_seed += static_cast<std::uint64_t>(round);
    tc.seed += static_cast<std::uint64_t>(round);
    tc.n_max = m.n_max;
    std::vector<std::string> train_ids, val_ids;
    for (const auto& [id, r] : m.records) {
      if (!r.in_active_pool()) continue;
      if (r.split == Split::train) train_ids.push_back(id);
      if (r.split == Split::validation) val_ids.push_back(id);
    }
    const auto root = image_root(manifest, images);
    const auto train_set = aux::load_samples(m, train_ids, root, mc);
    const auto val_set = aux::load_samples(m, val_ids, root, mc);
    auto model = aux::build_model(mc);
    std::cerr << "parameters: " << model.parameter_count() << "\n";
    const auto result = aux::train(model, train_set, val_set, tc);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& e : result.history)
      std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " acc " << e.train_accuracy
                << " val_loss " << e.val_loss << " val_acc " << e.val_accuracy << "\n";
    std::cerr << "train accuracy " << result.train_eval.accuracy << ", validation accuracy "
              << result.validation_eval.accuracy << "\n";
    aux::save_model(model, out);
  });

  // ---- infer
  auto* inf = app.add_subcommand("infer", "Per-sample losses of unverified samples");
  std::string model_path;
  bool all = false;
  inf->add_option("--model", model_path)->required();
  inf->add_option("--manifest", manifest)->required();
  inf->add_option("--images", images);
  inf->add_option("--out", out)->required();
  inf->add_flag("--all", all, "Score every non-excluded record");
  inf->callback([&] {
    const auto m = load_manifest(manifest);
    auto model = aux::load_model(model_path);
    std::vector<std::string> ids;
    for (const auto& [id, r] : m.records)
      if (all ? !r.excluded() : (r.status == Status::unverified && !r.flag)) ids.push_back(id);
    const auto report = aux::infer_losses(model, m, ids, image_root(manifest, images));
    dump(out, aux::loss_report_to_json(report));
  });

  // ---- triage
  auto* tg = app.add_subcommand("triage", "Flag the confident head and suspect tail for review");
  triage::TriageConfig tcfg;
  std::string losses, output_dir;
  bool report_only = false, auto_head = false;
  tg->add_option("--manifest", manifest)->required();
  tg->add_option("--losses", losses);
  tg->add_option("--k", tcfg.k);
  tg->add_option("--l", tcfg.l);
  tg->add_option("--round", round);
  tg->add_option("--out", out, "Queue JSON (default stdout)");
  tg->add_flag("--auto-certify-head", auto_head, "Certify head samples without review");
  tg->add_flag("--report", report_only, "Print live round statistics instead");
  tg->add_option("--output", output_dir, "Pipeline output directory (training accuracies)");
  tg->callback([&] {
    auto m = load_manifest(manifest);
    if (report_only) {
      std::optional<triage::RoundReport> trained;
      if (!output_dir.empty()) trained = pipeline::trained_report(output_dir, round);
      dump(out, triage::round_stats_to_json(triage::round_stats(m, round, trained)));
      return;
    }
    if (losses.empty()) throw ValidationError("--losses is required unless --report is given");
    tcfg.require_human_confirmation_of_head = !auto_head;
    const auto report = aux::loss_report_from_json(slurp(losses));
    const auto selection = triage::select_head_tail(triage::rank_by_loss(report), tcfg);
    m = triage::flag_selection(std::move(m), report, selection, round, tcfg);
    save_manifest(m, manifest);
    dump(out, triage::queue_to_json(triage::build_queue(m, round), m));
  });

  // ---- apply
  auto* ap = app.add_subcommand("apply", "Apply a verdict file");
  std::string verdicts;
  ap->add_option("--manifest", manifest)->required();
  ap->add_option("--verdicts", verdicts)->required();
  ap->callback([&] {
    auto m = load_manifest(manifest);
    const auto v = triage::verdicts_from_json(slurp(verdicts), m);
    m = triage::apply_verdicts(std::move(m), v);
    save_manifest(m, manifest);
    std::cerr << v.size() << " verdicts applied\n";
  });

  // ---- balance
  auto* bal = app.add_subcommand("balance", "Move per-class excess to the surplus pool");
  std::size_t restore = 0;
  bal->add_option("--manifest", manifest)->required();
  bal->add_option("--seed", seed);
  bal->add_option("--restore", restore, "Restore up to N surplus samples instead");
  bal->callback([&] {
    auto m = load_manifest(manifest);
    if (restore > 0) {
      m = balance::restore_from_surplus(std::move(m), restore);
    } else {
      Rng rng = derive_rng({seed, 0xba1});
      m = balance::balance_classes(std::move(m), rng);
    }
    save_manifest(m, manifest);
    const auto h = balance::active_histogram(m);
    for (int c = 0; c < m.num_classes(); ++c) std::cerr << m.class_name(c) << ": " << h[c] << "\n";
  });

  // ---- split
  auto* sp = app.add_subcommand("split", "Select a test set and emit cross-validation folds");
  int folds = 8, apply_fold = -1;
  std::size_t test_size = 0;
  seed = 13;
  sp->add_option("--manifest", manifest)->required();
  sp->add_option("--folds", folds);
  sp->add_option("--test-size", test_size);
  sp->add_option("--seed", seed);
  sp->add_option("--out", out)->required();
  sp->add_option("--apply-fold", apply_fold, "Rewrite train/validation splits for one fold");
  sp->callback([&] {
    auto m = load_manifest(manifest);
    if (test_size > 0) {
      Rng rng = derive_rng({seed, 0x7e57});
      auto sel = balance::select_test_set(std::move(m), test_size, rng);
      for (const auto& w : sel.warnings) std::cerr << "warning: " << w << "\n";
      m = std::move(sel.manifest);
    }
    const auto plan = balance::make_folds(m, folds, seed);
    dump(out, balance::fold_plan_to_json(plan));
    if (apply_fold >= 0) m = balance::apply_fold(std::move(m), plan, apply_fold);
    save_manifest(m, manifest);
  });

  // ---- gan-train
  auto* gt = app.add_subcommand("gan-train", "Train the classifier-guided conditional GAN");
  std::string classifier;
  gt->add_option("--manifest", manifest)->required();
  gt->add_option("--images", images);
  gt->add_option("--classifier", classifier)->required();
  gt->add_option("--config", config, "GAN TOML");
  gt->add_option("--out", out)->required();
  gt->callback([&] {
    const auto m = load_manifest(manifest);
    auto cfg = config.empty() ? GanConfigFile{} : load_gan_config(config);
    cfg.generator.num_classes = cfg.discriminator.num_classes = m.num_classes();
    auto clf = aux::load_model(classifier);
    gan::GanDataset data;
    data.classes = m.classes;
    std::vector<std::string> ids;
    for (const auto& [id, r] : m.records)
      if (r.in_active_pool() && (r.split == Split::train || r.split == Split::validation) &&
          !r.provenance)
        ids.push_back(id);
    aux::ModelConfig shape;
    data.samples = aux::load_samples(m, ids, image_root(manifest, images), shape);
    auto result = gan::train_gan(data, clf, cfg.generator, cfg.discriminator, cfg.train);
    for (const auto& e : result.history)
      std::cerr << "iteration " << e.iteration << " G " << e.generator_loss << " D "
                << e.discriminator_loss << " gamma " << e.gamma << "\n";
    if (result.aborted) std::cerr << "aborted: " << result.message << "\n";
    gan::save_bundle(result.bundle, out);
  });

  // ---- gan-sample
  auto* gs = app.add_subcommand("gan-sample", "Synthesize labeled samples from a GAN bundle");
  std::string bundle_path;
  int per_class = 0;
  gan::SamplerConfig sampler;
  gs->add_option("--bundle", bundle_path)->required();
  gs->add_option("--manifest", manifest)->required();
  gs->add_option("--per-class", per_class)->required();
  gs->add_option("--truncation", sampler.truncation);
  gs->add_option("--seed", seed);
  std::string subdir = "synthetic";
  gs->add_option("--subdir", subdir, "Image directory relative to the manifest");
  gs->callback([&] {
    auto m = load_manifest(manifest);
    auto bundle = gan::load_bundle(bundle_path);
    const fs::path root = fs::path(manifest).has_parent_path() ? fs::path(manifest).parent_path() : ".";
    std::size_t added = 0;
    for (int c = 0; c < m.num_classes(); ++c) {
      auto res = gan::synthesize(bundle, std::move(m), c, per_class, sampler, seed, root, subdir);
      added += res.ids.size();
      m = std::move(res.manifest);
    }
    save_manifest(m, manifest);
    std::cerr << added << " synthesized records added\n";
  });

  // ---- review-serve
  auto* rs = app.add_subcommand("review-serve", "Serve the review API over HTTP");
  std::string host = "127.0.0.1";
  int port = 8080;
  rs->add_option("--manifest", manifest)->required();
  rs->add_option("--images", images);
  rs->add_option("--output", output_dir, "Pipeline output directory");
  rs->add_option("--host", host);
  rs->add_option("--port", port);
  rs->callback([&] {
    review::ServiceOptions opts;
    opts.manifest = manifest;
    opts.image_root = image_root(manifest, images);
    if (!output_dir.empty()) opts.output = output_dir;
    review::ReviewService service(opts);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "review service on http://" << host << ":" << port << "\n";
    if (!service.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    g_service = nullptr;
  });

  // ---- run
  auto* run = app.add_subcommand("run", "Run curation rounds until the target ratio");
  double target = -1;
  int rounds = 0;
  run->add_option("--config", config)->required();
  run->add_option("--target", target, "Target ratio of validated data (default from config)");
  run->add_option("--rounds", rounds, "Run exactly this many further rounds");
  run->callback([&] {
    const auto cfg = load_pipeline_config(config);
    if (rounds > 0) {
      for (int i = 0; i < rounds; ++i) {
        const auto o = pipeline::run_round(cfg, pipeline::next_round(cfg), log_line);
        if (o.paused) {
          std::cerr << o.message << "\n";
          return;
        }
      }
      return;
    }
    const auto s = pipeline::run_until_validated(cfg, target > 0 ? target : cfg.target_ratio, log_line);
    if (s.halted) throw Error(s.message);
  });

  // ---- report
  auto* rep = app.add_subcommand("report", "Round and dataset-size summary as markdown");
  rep->add_option("--config", config)->required();
  rep->add_option("--out", out);
  rep->callback([&] { dump(out, pipeline::report(load_pipeline_config(config))); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
