#include <doctest.h>

#include <cmath>
#include <limits>

#include "fd.hpp"
#include "support.hpp"
#include "workbench/gan.hpp"
#include "workbench/nn/optim.hpp"

using namespace wb;
using namespace wb::gan;

namespace {

GeneratorSpec tiny_gen(int classes = 3) { return {8, 4, 4, classes}; }
DiscriminatorSpec tiny_disc(int classes = 3) { return {0.2, 4, 4, classes}; }

aux::Classifier tiny_classifier(int classes = 3) {
  aux::ModelConfig cfg;
  cfg.num_classes = classes;
  cfg.width = 4;
  cfg.init_seed = 1;
  return aux::build_model(cfg);
}

GanDataset blobs(int n, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  GanDataset d;
  for (int c = 0; c < classes; ++c) d.classes.push_back("c" + std::to_string(c));
  for (int i = 0; i < n; ++i) {
    aux::Sample s{"b" + wbt::pad(i), ImageTensor(32, 32, 1, 1.0), i % classes};
    const int x0 = 4 + 8 * s.label;
    for (int y = 8; y < 24; ++y)
      for (int x = x0; x < x0 + 6; ++x) s.image.at(y, x) = 0.2 * u(rng);
    d.samples.push_back(std::move(s));
  }
  return d;
}

GanTrainConfig quick(long iterations) {
  GanTrainConfig c;
  c.batch_size = 8;
  c.max_iterations = iterations;
  c.log_interval = 5;
  c.checksum_interval = 10;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_SUITE("gan") {
  TEST_CASE("generator loss cancels at the balanced point") {
    nn::Tensor cls({1, 4}, 0.25);
    const std::vector<double> d{0.5};
    const std::vector<int> y{2};
    CHECK(std::abs(generator_loss(d, cls, y, 0.5, 1.0)) < 1e-12);
    CHECK(generator_loss(d, cls, y, 0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("losses match scalar recomputation") {
    std::mt19937_64 g(1);
    std::uniform_real_distribution<double> u(1e-3, 1 - 1e-3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> d(32), fake(32);
      std::vector<int> y(32);
      nn::Tensor cls({32, 5});
      double ref_g = 0, ref_c = 0, ref_d = 0;
      for (int i = 0; i < 32; ++i) {
        d[i] = u(g);
        fake[i] = u(g);
        y[i] = static_cast<int>(g() % 5);
        double s = 0;
        for (int c = 0; c < 5; ++c) s += (cls[i * 5 + c] = u(g));
        for (int c = 0; c < 5; ++c) cls[i * 5 + c] /= s;
        ref_g += -std::log(d[i]);
        ref_c += -std::log(cls[i * 5 + y[i]]);
        ref_d += -std::log(d[i]) - std::log(1 - fake[i]);
      }
      const double gamma = u(g), delta = 2 * u(g);
      CHECK(std::abs(generator_loss(d, cls, y, gamma, delta) - (delta * ref_g - gamma * ref_c) / 32) < 1e-6);
      CHECK(std::abs(discriminator_loss(d, fake) - ref_d / 32) < 1e-6);
    }
  }

  TEST_CASE("discriminator loss edge values") {
    const std::vector<double> ones(4, 1.0), zeros(4, 0.0), halves(4, 0.5);
    CHECK(discriminator_loss(ones, zeros) < 1e-6);
    CHECK(discriminator_loss(halves, halves) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("raising gamma never raises the generator loss") {
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> d(6);
      std::vector<int> y(6);
      nn::Tensor cls({6, 3});
      for (int i = 0; i < 6; ++i) {
        d[i] = u(g);
        y[i] = static_cast<int>(g() % 3);
        for (int c = 0; c < 3; ++c) cls[i * 3 + c] = u(g);
      }
      const double a = u(g), b = a + u(g);
      CHECK(generator_loss(d, cls, y, b, 1.0) <= generator_loss(d, cls, y, a, 1.0));
    }
  }

  TEST_CASE("gamma schedule") {
    GanTrainConfig c;
    c.max_iterations = 1000;
    CHECK(gamma_schedule(0, c) == 0.0);
    CHECK(gamma_schedule(1000, c) == doctest::Approx(0.5));
    CHECK(gamma_schedule(500, c) == doctest::Approx(0.25));
    CHECK(gamma_schedule(5000, c) == doctest::Approx(0.5));
    c.gamma_ramp_iterations = 200;
    double last = -1;
    for (long it = 0; it <= 1000; it += 7) {
      const double v = gamma_schedule(it, c);
      CHECK(v >= last);
      CHECK(v <= c.gamma_max);
      CHECK(std::abs(v - 0.5 * std::min(1.0, it / 200.0)) < 1e-12);
      last = v;
    }
    c.gamma_ramp_iterations = 2000;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("noise sampling") {
    Rng rng(3);
    SamplerConfig s;
    s.count = 100;
    const auto z = sample_noise(s, 100, rng);
    CHECK(z.shape() == std::vector<int>{100, 100});
    double worst = 0;
    for (double v : z.values()) worst = std::max(worst, std::abs(v));
    CHECK(worst <= 0.7);

    s.truncation = std::numeric_limits<double>::infinity();
    const auto w = sample_noise(s, 100, rng);
    double mean = 0, var = 0;
    for (double v : w.values()) mean += v;
    mean /= w.size();
    for (double v : w.values()) var += (v - mean) * (v - mean);
    var /= w.size();
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1) < 0.1);

    Rng r1(9), r2(9);
    s.count = 4;
    CHECK(sample_noise(s, 8, r1) == sample_noise(s, 8, r2));
    s.truncation = 0;
    CHECK_THROWS(s.validate());
  }

  TEST_CASE("architecture shapes and layer counts") {
    Rng rng(4);
    Generator gen(tiny_gen(), rng);
    Discriminator disc(tiny_disc(), rng);
    CHECK(gen.conv_layers() == 8);
    CHECK(disc.conv_layers() == 5);
    std::mt19937_64 g(5);
    const auto z = wbt::random_tensor({5, 8}, g, 3.0);
    const std::vector<int> y{0, 1, 2, 0, 1};
    const auto img = gen.generate(z, y, nn::Mode::train);
    CHECK(img.shape() == std::vector<int>{5, 1, 32, 32});
    for (double v : img.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto p = disc.score(img, y, nn::Mode::train);
    CHECK(p.shape() == std::vector<int>{5});
    for (double v : p.values()) CHECK((v > 0.0 && v < 1.0));

    DiscriminatorSpec bad = tiny_disc();
    bad.alpha = 1.0;
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("conditioning changes the output") {
    Rng rng(6);
    Generator gen(tiny_gen(), rng);
    std::mt19937_64 g(7);
    const auto z = wbt::random_tensor({1, 8}, g);
    const std::vector<int> a{0}, b{2};
    CHECK(gen.generate(z, a, nn::Mode::eval) != gen.generate(z, b, nn::Mode::eval));
  }

  TEST_CASE("generator and discriminator input gradients") {
    Rng rng(8);
    Generator gen(tiny_gen(), rng);
    Discriminator disc(tiny_disc(), rng);
    std::mt19937_64 g(9);
    const std::vector<int> y{0, 2, 1};

    auto z = wbt::random_tensor({3, 8}, g);
    const auto w = wbt::random_tensor({3, 1, 32, 32}, g);
    gen.generate(z, y, nn::Mode::train);
    gen.zero_grad();
    const auto gz = gen.backward(w);
    std::vector<double> a, n;
    for (std::size_t i = 0; i < z.size(); ++i) {
      a.push_back(gz[i]);
      n.push_back(wbt::central_difference(z[i], 1e-5, [&] { return wbt::dot(gen.generate(z, y, nn::Mode::train), w); }));
    }
    CHECK(wbt::relative_error(a, n) < 1e-5);

    auto img = wbt::random_tensor({3, 1, 32, 32}, g, 0.2);
    for (auto& v : img.values()) v = 0.5 + v;
    const auto wd = wbt::random_tensor({3}, g);
    disc.score(img, y, nn::Mode::train);
    disc.zero_grad();
    const auto gi = disc.backward(wd);
    a.clear();
    n.clear();
    for (int k = 0; k < 40; ++k) {
      const std::size_t i = g() % img.size();
      a.push_back(gi[i]);
      // Small step: with thousands of leaky-relu units a kink can sit inside a wider stencil.
      n.push_back(wbt::central_difference(img[i], 1e-7, [&] { return wbt::dot(disc.score(img, y, nn::Mode::train), wd); }));
    }
    CHECK(wbt::relative_error(a, n, 1e-4) < 1e-4);
  }

  TEST_CASE("generator step follows the negative objective gradient") {
    Rng rng(10);
    Generator gen(tiny_gen(), rng);
    Discriminator disc(tiny_disc(), rng);
    auto cls = tiny_classifier();
    std::mt19937_64 g(11);
    const auto z = wbt::random_tensor({4, 8}, g);
    const std::vector<int> y{0, 1, 2, 1};
    const double gamma = 0.3;

    gen.zero_grad();
    generator_gradient(gen, disc, &cls, z, y, gamma, 1.0);
    std::vector<nn::Parameter*> params = gen.parameters();
    std::vector<double> analytic, numeric;
    std::vector<std::pair<nn::Parameter*, std::size_t>> probes;
    for (auto* p : params)
      for (int k = 0; k < 6; ++k) probes.emplace_back(p, g() % p->value.size());
    for (auto [p, i] : probes) {
      analytic.push_back(p->grad[i]);
      numeric.push_back(wbt::central_difference(p->value[i], 1e-5, [&] {
        return generator_objective(gen, disc, &cls, z, y, gamma, 1.0).loss;
      }));
    }
    CHECK(wbt::relative_error(analytic, numeric, 1e-4) < 1e-2);

    std::vector<double> before;
    for (auto [p, i] : probes) before.push_back(p->value[i]);
    nn::Adam opt(params, {.learning_rate = 1e-4, .beta1 = 0.5});
    opt.step();
    for (std::size_t k = 0; k < probes.size(); ++k) {
      if (std::abs(numeric[k]) < 1e-6) continue;
      const double moved = probes[k].first->value[probes[k].second] - before[k];
      CHECK(moved * numeric[k] < 0);
    }
  }

  TEST_CASE("training keeps the classifier frozen and logs finite losses") {
    auto cls = tiny_classifier();
    const auto before = nn::checksum(cls);
    const auto data = blobs(30, 3, 12);
    auto result = train_gan(data, cls, tiny_gen(), tiny_disc(), quick(20));
    CHECK_FALSE(result.aborted);
    CHECK(nn::checksum(cls) == before);
    CHECK(result.bundle.classifier_checksum == before);
    REQUIRE(result.history.size() >= 4);
    for (const auto& e : result.history) {
      CHECK(std::isfinite(e.generator_loss));
      CHECK(std::isfinite(e.discriminator_loss));
      CHECK(e.gamma == doctest::Approx(gamma_schedule(e.iteration - 1, quick(20))));
    }
    CHECK(result.bundle.iterations == 20);
    for (auto* p : cls.parameters()) CHECK(p->trainable);
  }

  TEST_CASE("gamma zero equals the plain conditional gan") {
    const auto data = blobs(24, 3, 13);
    auto c1 = tiny_classifier(), c2 = tiny_classifier();
    auto zero = quick(15);
    zero.gamma_max = 0.0;
    auto plain = quick(15);
    plain.classifier_feedback = false;
    const auto a = train_gan(data, c1, tiny_gen(), tiny_disc(), zero);
    const auto b = train_gan(data, c2, tiny_gen(), tiny_disc(), plain);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].generator_loss == doctest::Approx(b.history[i].generator_loss).epsilon(1e-12));
      CHECK(a.history[i].discriminator_loss == doctest::Approx(b.history[i].discriminator_loss).epsilon(1e-12));
    }
  }

  TEST_CASE("training input validation") {
    auto cls = tiny_classifier();
    auto data = blobs(9, 3, 14);
    CHECK_THROWS_AS(train_gan(data, cls, tiny_gen(4), tiny_disc(4), quick(2)), ValidationError);
    for (auto& s : data.samples)
      if (s.label == 2) s.label = 1;
    CHECK_THROWS_AS(train_gan(data, cls, tiny_gen(), tiny_disc(), quick(2)), ValidationError);
  }

  TEST_CASE("synthesis, budget and bundle round trip") {
    wbt::TempDir dir;
    auto cls = tiny_classifier();
    auto result = train_gan(blobs(12, 3, 15), cls, tiny_gen(), tiny_disc(), quick(4));
    auto& bundle = result.bundle;
    auto m = wbt::empty_manifest(3, 50);

    SamplerConfig sampler;
    auto none = synthesize(bundle, m, 1, 0, sampler, 7, dir.path());
    CHECK(none.manifest == m);
    CHECK(none.ids.empty());

    auto made = synthesize(bundle, m, 2, 5, sampler, 7, dir.path());
    CHECK(made.ids.size() == 5);
    for (const auto& id : made.ids) {
      const auto& r = made.manifest.at(id);
      CHECK(r.label == 2);
      CHECK(r.status == Status::certified);
      CHECK(r.split == Split::train);
      CHECK(r.provenance.value_or("").find(bundle.version()) != std::string::npos);
      CHECK(r.provenance.value_or("").find("seed=7") != std::string::npos);
      CHECK(std::filesystem::exists(dir.path() / r.image_path));
      const auto img = read_png(dir.path() / r.image_path);
      CHECK(img.width == 32);
      CHECK(img.height == 32);
    }
    check_invariants(made.manifest);

    CHECK_THROWS_AS(synthesize(bundle, made.manifest, 0, 45, sampler, 8, dir.path()), BudgetError);
    CHECK_FALSE(std::filesystem::exists(dir.path() / "synthetic" / ("gan_" + bundle.version() + "_c0_s8_00000.png")));

    save_bundle(bundle, dir / "b.bin");
    auto back = load_bundle(dir / "b.bin");
    CHECK(back.version() == bundle.version());
    CHECK(back.classes == bundle.classes);
    CHECK(generate_images(back, 1, sampler, 3) == generate_images(bundle, 1, sampler, 3));
  }

  TEST_CASE("exporting across all classes adds one record per sample") {
    wbt::TempDir dir;
    aux::ModelConfig cfg;
    cfg.width = 4;
    auto cls = aux::build_model(cfg);
    auto result = train_gan(blobs(20, 10, 16), cls, tiny_gen(10), tiny_disc(10), quick(2));
    auto m = wbt::empty_manifest(10);
    const std::size_t before = m.records.size();
    const int total = 1226;
    for (int c = 0; c < 10; ++c) {
      const int count = total / 10 + (c < total % 10 ? 1 : 0);
      m = synthesize(result.bundle, m, c, count, {}, 21, dir.path()).manifest;
    }
    CHECK(m.records.size() - before == 1226);
    CHECK(class_histogram(m, Split::train)[0] == 123);
    CHECK(class_histogram(m, Split::train)[9] == 122);
  }
}
