#include <doctest.h>

#include "support.hpp"
#include "workbench/glyphs.hpp"

using namespace wb;
using namespace wb::glyphs;

TEST_SUITE("glyphs") {
  TEST_CASE("numerals render as dark ink on white") {
    Rng rng(1);
    for (int v = 1; v <= 10; ++v) {
      const auto img = render_numeral(v, rng);
      CHECK(img.height == 32);
      CHECK(img.width == 32);
      double dark = 0;
      for (double p : img.pixels) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        dark += p < 0.5;
      }
      CHECK(dark > 10);
      CHECK(dark < 400);
    }
    CHECK_THROWS(render_numeral(11, rng));
  }

  TEST_CASE("corpus layout, flips and truth") {
    wbt::TempDir dir;
    CorpusSpec spec;
    spec.per_class = 6;
    spec.flip_fraction = 0.25;
    spec.seed = 4;
    const auto c = generate_corpus(spec, dir.path());
    CHECK(c.manifest.records.size() == 60);
    CHECK(c.manifest.classes == roman_numeral_classes());
    CHECK(c.flipped.size() == 15);
    for (const auto& [id, r] : c.manifest.records) {
      CHECK(std::filesystem::exists(dir.path() / r.image_path));
      CHECK(r.status == Status::unverified);
      CHECK(r.phash.has_value());
      const bool flipped = std::binary_search(c.flipped.begin(), c.flipped.end(), id);
      CHECK((r.label != c.truth.at(id)) == flipped);
    }
    CHECK(truth_from_json(truth_to_json(c.truth, c.manifest), c.manifest) == c.truth);

    const auto again = generate_corpus(spec, dir.path());
    CHECK(again.manifest == c.manifest);
  }
}
