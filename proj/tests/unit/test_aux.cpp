#include <doctest.h>

#include <cmath>

#include "fd.hpp"
#include "support.hpp"
#include "workbench/aux_trainer.hpp"
#include "workbench/nn/loss.hpp"

using namespace wb;
using namespace wb::aux;

namespace {

// Class 0 has ink on the left half, class 1 on the right.
std::vector<Sample> halves(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.15);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s{"h" + wbt::pad(i), ImageTensor(32, 32, 1, 1.0), i % 2};
    for (int y = 4; y < 28; ++y)
      for (int x = 0; x < 16; ++x) s.image.at(y, s.label == 0 ? x : x + 16) = u(rng);
    out.push_back(std::move(s));
  }
  return out;
}

ModelConfig small(int classes = 2) {
  ModelConfig c;
  c.num_classes = classes;
  c.width = 8;
  c.init_seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("aux") {
  TEST_CASE("softmax head output") {
    for (auto arch : {Architecture::small_cnn, Architecture::truncated_resnet50}) {
      ModelConfig cfg;
      cfg.architecture = arch;
      cfg.width = arch == Architecture::small_cnn ? 8 : 16;
      auto model = build_model(cfg);
      std::mt19937_64 g(1);
      auto x = wbt::random_tensor({3, 1, 32, 32}, g);
      const auto p = model.predict(x);
      CHECK(p.shape() == std::vector<int>{3, 10});
      CHECK(p.all_finite());
      for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int c = 0; c < 10; ++c) {
          CHECK(p[i * 10 + c] >= 0.0);
          s += p[i * 10 + c];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
      }
      CHECK(model.parameter_count() > 0);
    }
  }

  TEST_CASE("truncated resnet feature map is a quarter of the input") {
    ModelConfig cfg;
    cfg.architecture = Architecture::truncated_resnet50;
    cfg.width = 8;
    auto model = build_model(cfg);
    nn::Tensor x({2, 1, 32, 32}, 0.5);
    const auto f = model.features().forward(x, nn::Mode::eval);
    CHECK(f.dim(2) == 8);
    CHECK(f.dim(3) == 8);
    CHECK(f.dim(1) == 4 * 8);
  }

  TEST_CASE("truncation layers and validation") {
    ModelConfig cfg;
    cfg.architecture = Architecture::truncated_resnet50;
    cfg.width = 8;
    for (auto layer : {"conv2_block1_out", "conv2_block2_out", "conv2_block3_out"}) {
      cfg.truncation_layer = layer;
      CHECK_NOTHROW(build_model(cfg));
    }
    cfg.truncation_layer = "conv5_block3_out";
    CHECK_THROWS_AS(build_model(cfg), ValidationError);
    CHECK_THROWS_AS(parse_architecture("vgg16"), ValidationError);
    ModelConfig one_class;
    one_class.num_classes = 1;
    CHECK_THROWS_AS(one_class.validate(), ValidationError);
  }

  TEST_CASE("zero epochs returns the initialized model") {
    auto model = build_model(small());
    const auto before = nn::checksum(model);
    TrainConfig tc;
    tc.epochs = 0;
    const auto r = train(model, {}, {}, tc);
    CHECK(r.history.empty());
    CHECK(nn::checksum(model) == before);
  }

  TEST_CASE("training errors") {
    auto model = build_model(small());
    const auto data = halves(4, 1);
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train(model, {}, data, tc), ValidationError);
    CHECK_THROWS_AS(train(model, data, {}, tc), ValidationError);
    tc.n_max = 8;
    CHECK_THROWS_AS(train(model, data, data, tc), BudgetError);
    tc.epochs = -1;
    CHECK_THROWS_AS(tc.validate(), ValidationError);
  }

  TEST_CASE("absent class is a warning") {
    auto model = build_model(small(3));
    const auto data = halves(8, 2);
    TrainConfig tc;
    tc.epochs = 1;
    tc.augment_enabled = false;
    const auto r = train(model, data, data, tc);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("2") != std::string::npos);
  }

  TEST_CASE("separable two-class set reaches full train accuracy") {
    auto model = build_model(small());
    const auto train_set = halves(40, 3), val_set = halves(10, 4);
    TrainConfig tc;
    tc.epochs = 50;
    tc.augment_enabled = false;
    tc.early_stopping.enabled = false;
    const auto r = train(model, train_set, val_set, tc);
    CHECK(r.history.size() == 50);
    CHECK(r.train_eval.accuracy == 1.0);
  }

  TEST_CASE("early stopping returns the best validation checkpoint") {
    auto model = build_model(small());
    auto train_set = halves(16, 5), val_set = halves(8, 6);
    for (auto& s : val_set) s.label = 1 - s.label;  // adversarial validation set
    TrainConfig tc;
    tc.epochs = 30;
    tc.augment_enabled = false;
    tc.early_stopping.patience = 3;
    const auto r = train(model, train_set, val_set, tc);
    REQUIRE_FALSE(r.history.empty());
    CHECK(r.validation_eval.accuracy >= r.history.back().val_accuracy);
    CHECK(r.validation_eval.accuracy == doctest::Approx(r.history[r.best_epoch].val_accuracy));
    CHECK(r.stopped_early);
  }

  TEST_CASE("training is seeded") {
    const auto train_set = halves(12, 7), val_set = halves(4, 8);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 5;
    auto a = build_model(small()), b = build_model(small());
    train(a, train_set, val_set, tc);
    train(b, train_set, val_set, tc);
    CHECK(nn::checksum(a) == nn::checksum(b));
  }

  TEST_CASE("final layer gradient matches finite differences") {
    auto model = build_model(small(4));
    std::mt19937_64 g(9);
    const auto x = wbt::random_tensor({4, 1, 32, 32}, g, 0.3);
    const std::vector<int> labels{0, 1, 2, 3};
    auto loss = [&] { return nn::softmax_cross_entropy(model.forward(x, nn::Mode::train), labels).loss; };
    model.zero_grad();
    auto ce = nn::softmax_cross_entropy(model.forward(x, nn::Mode::train), labels);
    model.backward(ce.grad_logits);
    auto& w = model.head().weight();
    std::vector<double> a, n;
    for (std::size_t i = 0; i < w.value.size(); ++i) {
      a.push_back(w.grad[i]);
      n.push_back(wbt::central_difference(w.value[i], 1e-5, loss));
    }
    CHECK(wbt::relative_error(a, n) < 1e-3);
  }

  TEST_CASE("loss report entries") {
    auto model = build_model(small(10));
    for (auto* p : model.head().parameters()) p->value.fill(0.0);
    const auto data = halves(3, 10);
    const auto uniform = infer_losses(model, data);
    for (const auto& e : uniform.entries) CHECK(e.loss == doctest::Approx(std::log(10.0)).epsilon(1e-9));

    model.head().bias().value[data[0].label] = 60.0;
    const auto sure = infer_losses(model, std::span(data).first(1));
    CHECK(sure.entries[0].loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sure.entries[0].confidence == doctest::Approx(1.0));
  }

  TEST_CASE("report losses equal an independent cross entropy") {
    auto model = build_model(small(10));
    std::vector<Sample> data;
    Rng rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 100; ++i) {
      Sample s{"s" + wbt::pad(i), ImageTensor(32, 32), i % 10};
      for (auto& v : s.image.pixels) v = u(rng);
      data.push_back(s);
    }
    const auto report = infer_losses(model, data);
    REQUIRE(report.entries.size() == 100);
    for (const auto& e : report.entries) {
      double s = 0;
      for (double p : e.probabilities) s += p;
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(std::abs(e.loss + std::log(e.probabilities[e.label])) < 1e-6);
      CHECK(e.predicted == std::max_element(e.probabilities.begin(), e.probabilities.end()) -
                               e.probabilities.begin());
    }
    const auto back = loss_report_from_json(loss_report_to_json(report));
    REQUIRE(back.entries.size() == 100);
    CHECK(back.entries[7].loss == doctest::Approx(report.entries[7].loss).epsilon(1e-12));
    CHECK(back.entries[7].probabilities.size() == 10);
  }

  TEST_CASE("undecodable sample becomes an error entry") {
    wbt::TempDir dir;
    auto m = wbt::empty_manifest(2);
    m.add(wbt::record("a", 0));
    m.add(wbt::record("b", 1));
    std::filesystem::create_directories(dir / "images");
    write_png(dir / "images/a.png", Image8(32, 32, 1, 255));
    write_file_bytes(dir / "images/b.png", std::vector<std::uint8_t>{0, 1});
    auto model = build_model(small());
    const auto report = infer_losses(model, m, {"a", "b"}, dir.path());
    REQUIRE(report.entries.size() == 2);
    CHECK(report.entries[0].ok());
    CHECK_FALSE(report.entries[1].ok());
  }

  TEST_CASE("model file round trip") {
    wbt::TempDir dir;
    ModelConfig cfg = small(3);
    cfg.architecture = Architecture::truncated_resnet50;
    auto model = build_model(cfg);
    save_model(model, dir / "m.bin");
    auto back = load_model(dir / "m.bin");
    CHECK(back.config().architecture == Architecture::truncated_resnet50);
    CHECK(back.config().num_classes == 3);
    CHECK(nn::checksum(back) == nn::checksum(model));
    write_file_bytes(dir / "bad.bin", std::vector<std::uint8_t>{1, 2, 3});
    CHECK_THROWS(load_model(dir / "bad.bin"));
  }
}
