#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "workbench/config.hpp"

using namespace wb;

namespace {

std::filesystem::path write(const wbt::TempDir& dir, const std::string& name, const std::string& text) {
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("pipeline document") {
    wbt::TempDir dir;
    const auto p = write(dir, "run.toml", R"(
[paths]
manifest = "data/manifest.jsonl"
output = "out"

[pipeline]
seed = 3
seed_train = 90
seed_validation = 10
target_ratio = 0.5
max_rounds = 4

[dedup]
threshold = 4
policy = "keep_first"

[train]
epochs = 12
batch_size = 16
architecture = "truncated_resnet50"
width = 8
augment = false

[augment]
rotation_factor = 0.1
black_spots = { count = [1, 2], radius = [1.5, 2.5] }

[triage]
k = 50
l = 20
confirmation_rule = "suggestion_match"

[supervisor]
mode = "file"

[folds]
n_folds = 4
test_size = 30
)");
    const auto c = load_pipeline_config(p);
    CHECK(c.manifest == dir.path() / "data/manifest.jsonl");
    CHECK(c.images == dir.path() / "data");
    CHECK(c.output == dir.path() / "out");
    CHECK(c.seed == 3);
    CHECK(c.seed_train == 90);
    CHECK(c.target_ratio == 0.5);
    CHECK(c.max_rounds == 4);
    CHECK(c.dedup.hamming_threshold == 4);
    CHECK(c.dedup_policy == dedup::ResolvePolicy::keep_first);
    CHECK(c.train.epochs == 12);
    CHECK(c.train.batch_size == 16);
    CHECK_FALSE(c.train.augment_enabled);
    CHECK(c.model.architecture == aux::Architecture::truncated_resnet50);
    CHECK(c.model.width == 8);
    CHECK(c.train.augment.rotation_factor == 0.1);
    CHECK(c.train.augment.black_spots.count.max == 2);
    CHECK(c.train.augment.black_spots.radius.min == 1.5);
    CHECK(c.triage.k == 50);
    CHECK(c.confirmation == triage::ConfirmationRule::suggestion_match);
    CHECK(c.supervisor.mode == SupervisorMode::file);
    CHECK(c.n_folds == 4);
    CHECK(c.test_size == 30);
  }

  TEST_CASE("defaults follow the reference setup") {
    wbt::TempDir dir;
    const auto c = load_pipeline_config(write(dir, "min.toml", "[paths]\nmanifest = \"m.jsonl\"\n[supervisor]\nmode = \"file\"\n"));
    CHECK(c.triage.k == 500);
    CHECK(c.triage.l == 100);
    CHECK(c.triage.require_human_confirmation_of_head);
    CHECK(c.train.epochs == 200);
    CHECK(c.train.batch_size == 8);
    CHECK(c.n_folds == 8);
    CHECK(c.test_size == 0);
    CHECK(c.dedup.hamming_threshold == 6);
    CHECK(c.train.augment.rotation_factor == 0.05);
    CHECK(c.train.augment.contrast_factor == 0.5);
    CHECK(c.train.augment.translation_fraction == 0.2);
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    wbt::TempDir dir;
    CHECK_THROWS_AS(load_pipeline_config(write(dir, "a.toml", "[paths]\nmanifest = \"m\"\n[supervisor]\nmode = \"file\"\n[triage]\nkk = 3\n")),
                    ParseError);
    CHECK_THROWS_AS(load_pipeline_config(write(dir, "b.toml", "[paths]\nmanifest = \"m\"\n[supervisor]\nmode = \"file\"\n[colour]\n")),
                    ParseError);
    CHECK_THROWS_AS(load_pipeline_config(write(dir, "c.toml", "[paths]\nmanifest = \"m\"\n[supervisor]\nmode = \"file\"\n[folds]\nn_folds = 1\n")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(write(dir, "d.toml", "[paths]\nmanifest = \"m\"\n[supervisor]\nmode = \"file\"\n[triage]\nk = \"lots\"\n")),
                    ParseError);
    CHECK_THROWS_AS(load_pipeline_config(write(dir, "e.toml", "not = [valid\n")), ParseError);
    CHECK_THROWS_AS(load_pipeline_config(dir / "missing.toml"), IoError);
  }

  TEST_CASE("module documents at the root or under their table") {
    wbt::TempDir dir;
    auto a = load_augment_config(write(dir, "a.toml", "rotation_factor = 0.0\nseed = 9\n"));
    CHECK(a.rotation_factor == 0.0);
    CHECK(a.seed == 9);
    a = load_augment_config(write(dir, "b.toml", "[augment]\ncontrast_factor = 0.25\n"));
    CHECK(a.contrast_factor == 0.25);

    aux::ModelConfig model;
    const auto t = load_train_config(write(dir, "t.toml", R"(
[train]
epochs = 3
learning_rate = 0.01
early_stopping = false
monitor = "val_loss"
architecture = "small_cnn"
[train.augment_params]
translation_fraction = 0.1
)"), &model);
    CHECK(t.epochs == 3);
    CHECK(t.learning_rate == 0.01);
    CHECK_FALSE(t.early_stopping.enabled);
    CHECK(t.early_stopping.monitor == "val_loss");
    CHECK(t.augment.translation_fraction == 0.1);
    CHECK(model.architecture == aux::Architecture::small_cnn);

    const auto g = load_gan_config(write(dir, "g.toml", R"(
[gan]
batch_size = 16
max_iterations = 500
gamma_ramp_iterations = 250
[gan.generator]
base_width = 8
[gan.discriminator]
alpha = 0.1
)"));
    CHECK(g.train.batch_size == 16);
    CHECK(g.train.max_iterations == 500);
    CHECK(g.train.ramp() == 250);
    CHECK(g.generator.base_width == 8);
    CHECK(g.generator.noise_length == 64);
    CHECK(g.discriminator.alpha == 0.1);
    CHECK(g.train.learning_rate == 1e-4);
  }
}
