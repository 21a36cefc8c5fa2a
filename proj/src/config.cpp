#include "workbench/config.hpp"

#include <set>
#include <sstream>

#include <toml.hpp>

namespace wb {

namespace fs = std::filesystem;

namespace {

/// Reads keys from one TOML table and rejects any it was not asked about.
class Section {
 public:
  Section(const toml::table* table, std::string where) : table_(table), where_(std::move(where)) {}

  bool present() const { return table_ != nullptr; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!table_) return;
    used_.insert(key);
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value<bool>();
      if (!v) fail(key, "expected a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value<std::int64_t>();
      if (!v) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (*v < 0) fail(key, "expected a non-negative integer");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v) fail(key, "expected a number");
      out = *v;
    } else {
      auto v = node->value<std::string>();
      if (!v) fail(key, "expected a string");
      out = *v;
    }
  }

  template <typename T>
  void get_pair(const std::string& key, T& lo, T& hi) {
    if (!table_) return;
    used_.insert(key);
    const toml::node* node = table_->get(key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr || arr->size() != 2) fail(key, "expected a two-element array [min, max]");
    std::optional<T> a, b;
    if constexpr (std::is_integral_v<T>) {
      auto x = (*arr)[0].value<std::int64_t>(), y = (*arr)[1].value<std::int64_t>();
      if (x && y) a = static_cast<T>(*x), b = static_cast<T>(*y);
    } else {
      a = (*arr)[0].value<double>();
      b = (*arr)[1].value<double>();
    }
    if (!a || !b) fail(key, "array elements have the wrong type");
    lo = *a;
    hi = *b;
  }

  Section sub(const std::string& key) {
    if (!table_) return {nullptr, where_ + "." + key};
    used_.insert(key);
    const toml::node* node = table_->get(key);
    if (node && !node->is_table()) fail(key, "expected a table");
    return {node ? node->as_table() : nullptr, where_.empty() ? key : where_ + "." + key};
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, _] : *table_)
      if (!used_.count(std::string(k.str())))
        throw ParseError("unknown config key '" + qualified(std::string(k.str())) + "'");
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ParseError("config key '" + qualified(key) + "': " + what);
  }
  std::string qualified(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const toml::table* table_;
  std::string where_;
  std::set<std::string> used_;
};

toml::table parse_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError("cannot read config " + path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << path.string() << ":" << e.source().begin.line << ": " << e.description();
    throw ParseError(msg.str());
  } catch (const std::exception& e) {
    throw IoError("cannot read config " + path.string() + ": " + e.what());
  }
}

void read_spots(Section s, augment::SpotParams& p) {
  s.get_pair("count", p.count.min, p.count.max);
  s.get_pair("radius", p.radius.min, p.radius.max);
  s.finish();
}

void read_augment(Section& s, augment::AugmentConfig& c) {
  s.get("rotation_factor", c.rotation_factor);
  s.get("contrast_factor", c.contrast_factor);
  s.get("translation_fraction", c.translation_fraction);
  s.get("seed", c.seed);
  read_spots(s.sub("black_spots"), c.black_spots);
  read_spots(s.sub("white_spots"), c.white_spots);
  Section d = s.sub("dashed_lines");
  d.get_pair("count", c.dashed_lines.count.min, c.dashed_lines.count.max);
  d.get_pair("length", c.dashed_lines.length.min, c.dashed_lines.length.max);
  d.get("dash", c.dashed_lines.dash);
  d.get("gap", c.dashed_lines.gap);
  d.finish();
}

void read_train(Section& s, aux::TrainConfig& t, aux::ModelConfig* m) {
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("seed", t.seed);
  s.get("augment", t.augment_enabled);
  s.get("early_stopping", t.early_stopping.enabled);
  s.get("patience", t.early_stopping.patience);
  s.get("monitor", t.early_stopping.monitor);
  aux::ModelConfig scratch;
  aux::ModelConfig& model = m ? *m : scratch;
  std::string arch = to_string(model.architecture);
  s.get("architecture", arch);
  model.architecture = aux::parse_architecture(arch);
  s.get("width", model.width);
  s.get("truncation_layer", model.truncation_layer);
  s.get("init_seed", model.init_seed);
}

void read_gan(Section& s, GanConfigFile& g) {
  Section gen = s.sub("generator");
  gen.get("noise_length", g.generator.noise_length);
  gen.get("embedding_dim", g.generator.embedding_dim);
  gen.get("base_width", g.generator.base_width);
  gen.finish();
  Section disc = s.sub("discriminator");
  disc.get("alpha", g.discriminator.alpha);
  disc.get("embedding_dim", g.discriminator.embedding_dim);
  disc.get("base_width", g.discriminator.base_width);
  disc.finish();
  auto& t = g.train;
  s.get("batch_size", t.batch_size);
  s.get("learning_rate", t.learning_rate);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("delta", t.delta);
  s.get("gamma_max", t.gamma_max);
  long ramp = -1;
  s.get("gamma_ramp_iterations", ramp);
  if (ramp >= 0) t.gamma_ramp_iterations = ramp;
  s.get("max_iterations", t.max_iterations);
  s.get("log_interval", t.log_interval);
  s.get("checksum_interval", t.checksum_interval);
  s.get("classifier_feedback", t.classifier_feedback);
  s.get("seed", t.seed);
}

/// Module documents may nest their keys under one table or keep them at the root.
Section module_section(const toml::table& doc, const std::string& name) {
  if (doc.size() == 1 && doc.contains(name) && doc.get(name)->is_table())
    return {doc.get(name)->as_table(), name};
  return {&doc, ""};
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

void PipelineConfig::validate() const {
  if (manifest.empty()) throw ValidationError("paths.manifest is required");
  if (seed_train < 1 || seed_validation < 1)
    throw ValidationError("seed set needs at least one train and one validation sample");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0))
    throw ValidationError("target_ratio must be in (0, 1]");
  if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
  if (n_folds < 2) throw ValidationError("n_folds must be >= 2");
  if (supervisor.ambiguity_rate < 0 || supervisor.ambiguity_rate > 1 ||
      supervisor.error_rate < 0 || supervisor.error_rate > 1)
    throw ValidationError("supervisor rates must be in [0, 1]");
  if (supervisor.mode == SupervisorMode::simulated && supervisor.truth.empty())
    throw ValidationError("simulated supervisor needs a truth file");
  dedup.validate();
  train.validate();
  triage.validate();
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  const toml::table doc = parse_file(path);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  PipelineConfig c;
  Section root(&doc, "");

  Section paths = root.sub("paths");
  std::string manifest, images, output = c.output.string(), baseline;
  paths.get("manifest", manifest);
  paths.get("images", images);
  paths.get("output", output);
  paths.get("baseline", baseline);
  paths.finish();
  if (!manifest.empty()) c.manifest = resolve(base, manifest);
  c.images = images.empty() ? c.manifest.parent_path() : resolve(base, images);
  c.output = resolve(base, output);
  if (!baseline.empty()) c.baseline = resolve(base, baseline);

  Section pipe = root.sub("pipeline");
  pipe.get("seed", c.seed);
  pipe.get("seed_train", c.seed_train);
  pipe.get("seed_validation", c.seed_validation);
  pipe.get("target_ratio", c.target_ratio);
  pipe.get("max_rounds", c.max_rounds);
  pipe.finish();

  Section dd = root.sub("dedup");
  dd.get("enabled", c.dedup_enabled);
  dd.get("threshold", c.dedup.hamming_threshold);
  dd.get("prefix_bits", c.dedup.prefix_bits);
  std::string policy = "keep_best_status";
  dd.get("policy", policy);
  c.dedup_policy = dedup::parse_resolve_policy(policy);
  dd.finish();

  Section tr = root.sub("train");
  read_train(tr, c.train, &c.model);
  tr.finish();
  Section aug = root.sub("augment");
  read_augment(aug, c.train.augment);
  aug.finish();

  Section tg = root.sub("triage");
  tg.get("k", c.triage.k);
  tg.get("l", c.triage.l);
  tg.get("require_human_confirmation_of_head", c.triage.require_human_confirmation_of_head);
  std::string rule = "any_corrective";
  tg.get("confirmation_rule", rule);
  if (rule == "any_corrective")
    c.confirmation = triage::ConfirmationRule::any_corrective;
  else if (rule == "suggestion_match")
    c.confirmation = triage::ConfirmationRule::suggestion_match;
  else
    throw ParseError("triage.confirmation_rule: unknown rule '" + rule + "'");
  tg.finish();

  Section sup = root.sub("supervisor");
  std::string mode = "simulated", truth;
  sup.get("mode", mode);
  if (mode == "simulated")
    c.supervisor.mode = SupervisorMode::simulated;
  else if (mode == "file")
    c.supervisor.mode = SupervisorMode::file;
  else
    throw ParseError("supervisor.mode: unknown mode '" + mode + "'");
  sup.get("truth", truth);
  if (!truth.empty()) c.supervisor.truth = resolve(base, truth);
  sup.get("ambiguity_rate", c.supervisor.ambiguity_rate);
  sup.get("error_rate", c.supervisor.error_rate);
  sup.get("reviewer", c.supervisor.reviewer);
  sup.get("seed", c.supervisor.seed);
  sup.finish();

  Section folds = root.sub("folds");
  folds.get("n_folds", c.n_folds);
  folds.get("test_size", c.test_size);
  folds.get("seed", c.fold_seed);
  folds.finish();

  root.finish();
  c.validate();
  return c;
}

augment::AugmentConfig load_augment_config(const fs::path& path) {
  const toml::table doc = parse_file(path);
  augment::AugmentConfig c;
  Section s = module_section(doc, "augment");
  read_augment(s, c);
  s.finish();
  c.validate();
  return c;
}

aux::TrainConfig load_train_config(const fs::path& path, aux::ModelConfig* model) {
  const toml::table doc = parse_file(path);
  aux::TrainConfig c;
  Section s = module_section(doc, "train");
  read_train(s, c, model);
  Section aug = s.sub("augment_params");
  read_augment(aug, c.augment);
  aug.finish();
  s.finish();
  c.validate();
  return c;
}

GanConfigFile load_gan_config(const fs::path& path) {
  const toml::table doc = parse_file(path);
  GanConfigFile g;
  Section s = module_section(doc, "gan");
  read_gan(s, g);
  s.finish();
  g.train.validate();
  return g;
}

}  // namespace wb
