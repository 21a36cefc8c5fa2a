#include <doctest.h>

#include <json.hpp>

#include "corpus.hpp"
#include "workbench/dedup.hpp"

using namespace wb;
using namespace wb::dedup;
using wbt::record;

namespace {

DatasetManifest hashed(wbt::PlantedCorpus& c, const std::filesystem::path& root,
                       const DedupConfig& cfg = {}) {
  auto failures = hash_manifest(c.manifest, root, cfg);
  REQUIRE(failures.empty());
  return c.manifest;
}

SampleRecord with_hashes(const std::string& id, std::uint8_t byte, std::uint8_t pixel,
                         std::uint64_t phash, Split split = Split::unassigned) {
  auto r = record(id, 0, split);
  r.byte_hash = {};
  r.byte_hash[0] = byte;
  Digest256 p{};
  p[0] = pixel;
  r.pixel_hash = p;
  r.phash = phash;
  return r;
}

}  // namespace

TEST_SUITE("dedup") {
  TEST_CASE("copied file has the same byte hash") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 3, 1, 0, 0, 6, 1);
    const auto m = hashed(c, dir.path());
    const auto& [a, b] = c.exact.front();
    CHECK(m.at(a).byte_hash == m.at(b).byte_hash);
  }

  TEST_CASE("lossless re-encode keeps the pixel hash only") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 4, 0, 2, 0, 6, 2);
    const auto m = hashed(c, dir.path());
    for (const auto& [a, b] : c.metadata) {
      CHECK(m.at(a).byte_hash != m.at(b).byte_hash);
      CHECK(m.at(a).pixel_hash == m.at(b).pixel_hash);
      CHECK(m.at(a).phash == m.at(b).phash);
    }
  }

  TEST_CASE("rgb copy of a gray image has the same pixel hash") {
    std::mt19937_64 rng(3);
    const auto gray = wbt::noise_image(rng);
    Image8 rgb(32, 32, 3);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        for (int ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = gray.at(y, x);
    const auto a = compute_hashes_from_bytes(encode_png(gray), {});
    const auto b = compute_hashes_from_bytes(encode_png(rgb), {});
    CHECK(a.byte_hash != b.byte_hash);
    CHECK(a.pixel_hash == b.pixel_hash);
  }

  TEST_CASE("self distance is zero") {
    std::mt19937_64 rng(4);
    const auto h = difference_hash(wbt::noise_image(rng));
    CHECK(hamming(h, h) == 0);
  }

  TEST_CASE("difference hash matches a from-scratch oracle") {
    std::mt19937_64 rng(5);
    int compared = 0;
    for (int trial = 0; trial < 200; ++trial) {
      auto img = wbt::noise_image(rng, trial % 2 ? 32 : 45);
      const auto ref = wbt::oracle_dhash(img);
      if (!ref) continue;
      ++compared;
      CHECK(difference_hash(img) == *ref);
    }
    CHECK(compared > 150);
  }

  TEST_CASE("bit order puts the top-left comparison in the most significant bit") {
    Image8 img(8, 9, 1, 100);
    img.at(0, 0) = 200;
    CHECK(difference_hash(img) == (1ULL << 63));
  }

  TEST_CASE("undecodable image is reported and skipped") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 3, 0, 0, 0, 6, 6);
    const std::string bad = c.manifest.records.begin()->first;
    write_file_bytes(dir.path() / c.manifest.at(bad).image_path, std::vector<std::uint8_t>{1, 2, 3});
    const auto failures = hash_manifest(c.manifest, dir.path(), {});
    REQUIRE(failures.size() == 1);
    CHECK(failures[0].id == bad);
    CHECK_FALSE(c.manifest.at(bad).phash.has_value());
    CHECK(c.manifest.at(std::next(c.manifest.records.begin())->first).phash.has_value());
  }

  TEST_CASE("two identical files and one unrelated") {
    auto m = wbt::empty_manifest(2);
    m.add(with_hashes("a", 1, 1, 0));
    m.add(with_hashes("b", 1, 1, 0));
    m.add(with_hashes("c", 2, 2, ~0ULL));
    const auto groups = find_duplicates(m, {});
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].kind == DuplicateKind::exact_bytes);
    CHECK(groups[0].member_ids == std::vector<std::string>{"a", "b"});
  }

  TEST_CASE("planted near pairs are found exactly") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 200, 0, 0, 10, 6, 7);
    const auto m = hashed(c, dir.path());
    const auto groups = find_duplicates(m, {});
    std::set<std::pair<std::string, std::string>> found;
    for (const auto& g : groups) {
      CHECK(g.kind == DuplicateKind::near);
      CHECK(g.distance <= 6);
      found.emplace(g.member_ids[0], g.member_ids[1]);
    }
    std::set<std::pair<std::string, std::string>> planted;
    for (const auto& [a, b] : c.near) planted.emplace(std::min(a, b), std::max(a, b));
    CHECK(found == planted);
    CHECK(groups == wbt::oracle_duplicates(m, 6));
  }

  TEST_CASE("cascade equals the all-pairs oracle across configs") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 150, 8, 6, 8, 10, 8);
    const auto m = hashed(c, dir.path());
    for (int threshold : {0, 3, 6, 10, 20}) {
      for (int prefix : {0, 4, 16}) {
        DedupConfig cfg;
        cfg.hamming_threshold = threshold;
        cfg.prefix_bits = prefix;
        CAPTURE(threshold);
        CAPTURE(prefix);
        CHECK(find_duplicates(m, cfg) == wbt::oracle_duplicates(m, threshold));
      }
    }
  }

  TEST_CASE("bucketing alone is exact when blocks outnumber the threshold") {
    std::mt19937_64 rng(9);
    auto m = wbt::empty_manifest(2);
    for (int i = 0; i < 300; ++i) {
      std::uint64_t h = rng();
      if (i % 10 == 1) {
        h = *std::prev(m.records.end())->second.phash;
        for (int k = 0; k < static_cast<int>(rng() % 7); ++k) h ^= 1ULL << (rng() % 64);
      }
      m.add(with_hashes("r" + wbt::pad(i), static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(i), h));
    }
    DedupConfig cfg;
    cfg.exhaustive_limit = 0;
    CHECK(find_duplicates(m, cfg) == wbt::oracle_duplicates(m, cfg.hamming_threshold));
  }

  TEST_CASE("threshold zero near groups coincide with pixel groups") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 60, 0, 6, 0, 6, 10);
    const auto m = hashed(c, dir.path());
    DedupConfig cfg;
    cfg.hamming_threshold = 0;
    const auto groups = find_duplicates(m, cfg);

    // Drop the pixel stage: phash-equal groups over all records.
    std::map<std::uint64_t, std::vector<std::string>> by_phash;
    for (const auto& [id, r] : m.records) by_phash[*r.phash].push_back(id);
    std::set<std::vector<std::string>> phash_groups, pixel_groups;
    for (const auto& [_, ids] : by_phash)
      if (ids.size() > 1) phash_groups.insert(ids);
    for (const auto& g : groups) {
      CHECK(g.kind == DuplicateKind::exact_pixels);
      pixel_groups.insert(g.member_ids);
    }
    CHECK(pixel_groups == phash_groups);
    CHECK(pixel_groups.size() == 6);
  }

  TEST_CASE("exact groups partition ids and near relation is symmetric") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 120, 10, 10, 10, 6, 11);
    auto m = hashed(c, dir.path());
    const auto groups = find_duplicates(m, {});
    std::set<std::string> seen;
    for (const auto& g : groups) {
      CHECK(std::is_sorted(g.member_ids.begin(), g.member_ids.end()));
      CHECK(g.member_ids.size() >= 2);
      if (g.kind == DuplicateKind::near) continue;
      for (const auto& id : g.member_ids) CHECK(seen.insert(id).second);
    }
    for (const auto& g : groups) {
      const auto& a = m.at(g.member_ids[0]);
      const auto& b = m.at(g.member_ids[1]);
      if (g.kind == DuplicateKind::exact_bytes) {
        CHECK(a.pixel_hash == b.pixel_hash);
        CHECK(a.phash == b.phash);
      }
      if (g.kind == DuplicateKind::exact_pixels) CHECK(a.phash == b.phash);
      if (g.kind == DuplicateKind::near) CHECK(hamming(*b.phash, *a.phash) == g.distance);
    }
  }

  TEST_CASE("split leakage") {
    auto m = wbt::empty_manifest(2);
    m.add(with_hashes("t1", 1, 1, 0, Split::train));
    m.add(with_hashes("v1", 1, 1, 0, Split::validation));
    m.add(with_hashes("t2", 2, 2, 0xff00ff00ff00ff00ULL, Split::train));
    m.add(with_hashes("v2", 3, 3, 0x00ff00ff00ff00ffULL, Split::validation));
    auto pairs = find_split_leakage(m, {});
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0] == LeakagePair{"t1", "v1", DuplicateKind::exact_bytes});

    m.at("v1").byte_hash[0] = 9;
    m.at("v1").byte_hash[1] = 9;
    m.at("v1").pixel_hash->at(0) = 9;
    m.at("v1").phash = 0b101;
    pairs = find_split_leakage(m, {});
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].kind == DuplicateKind::near);

    auto disjoint = wbt::empty_manifest(2);
    disjoint.add(with_hashes("a", 1, 1, 0x0123456789abcdefULL, Split::train));
    disjoint.add(with_hashes("b", 2, 2, 0xfedcba9876543210ULL, Split::validation));
    CHECK(find_split_leakage(disjoint, {}).empty());
  }

  TEST_CASE("planted cross split near pairs match a cross-pair oracle") {
    wbt::TempDir dir;
    auto c = wbt::make_planted_corpus(dir.path(), 200, 5, 5, 15, 8, 12);
    auto m = hashed(c, dir.path());
    std::mt19937_64 rng(13);
    for (auto& [_, r] : m.records) r.split = rng() % 2 ? Split::train : Split::validation;
    DedupConfig cfg;
    cfg.hamming_threshold = 8;
    std::vector<LeakagePair> ref;
    for (const auto& [ti, t] : m.records)
      for (const auto& [vi, v] : m.records) {
        if (t.split != Split::train || v.split != Split::validation) continue;
        if (t.byte_hash == v.byte_hash) ref.push_back({ti, vi, DuplicateKind::exact_bytes});
        else if (*t.pixel_hash == *v.pixel_hash) ref.push_back({ti, vi, DuplicateKind::exact_pixels});
        else if (wbt::popcount_slow(*t.phash ^ *v.phash) <= 8) ref.push_back({ti, vi, DuplicateKind::near});
      }
    std::sort(ref.begin(), ref.end());
    CHECK(find_split_leakage(m, cfg) == ref);
    cfg.exhaustive_limit = 0;
    CHECK(find_split_leakage(m, cfg) == ref);
  }

  TEST_CASE("resolve keep_first and idempotence") {
    auto m = wbt::empty_manifest(2);
    m.add(record("a", 0));
    m.add(record("b", 0, Split::train, Status::certified));
    const std::vector<DuplicateGroup> groups{{DuplicateKind::exact_bytes, {"a", "b"}, 0}};
    const auto once = resolve_duplicates(m, groups, ResolvePolicy::keep_first);
    CHECK(once.at("a").status == Status::unverified);
    CHECK(once.at("b").status == Status::rejected);
    CHECK(once.at("b").split == Split::unassigned);
    CHECK(once.at("b").note.value_or("").find("a") != std::string::npos);
    CHECK(resolve_duplicates(once, groups, ResolvePolicy::keep_first) == once);
    check_invariants(once);
  }

  TEST_CASE("keep_best_status prefers certified") {
    auto m = wbt::empty_manifest(2);
    m.add(record("a", 0));
    m.add(record("b", 0, Split::train, Status::certified));
    m.add(record("c", 0));
    const std::vector<DuplicateGroup> groups{{DuplicateKind::near, {"a", "b"}, 2},
                                             {DuplicateKind::near, {"b", "c"}, 3}};
    const auto out = resolve_duplicates(m, groups, ResolvePolicy::keep_best_status);
    CHECK(out.at("b").status == Status::certified);
    CHECK(out.at("a").status == Status::rejected);
    CHECK(out.at("c").status == Status::rejected);
    CHECK(resolve_duplicates(out, groups, ResolvePolicy::keep_best_status) == out);
  }

  TEST_CASE("resolve rejects unknown ids") {
    auto m = wbt::empty_manifest(2);
    m.add(record("a", 0));
    CHECK_THROWS_AS(resolve_duplicates(m, {{DuplicateKind::exact_bytes, {"a", "zz"}, 0}},
                                       ResolvePolicy::keep_first),
                    ValidationError);
  }

  TEST_CASE("config validation") {
    DedupConfig cfg;
    cfg.hamming_threshold = 65;
    CHECK_THROWS(cfg.validate());
    cfg.hamming_threshold = 6;
    cfg.prefix_bits = 65;
    CHECK_THROWS(cfg.validate());
  }

  TEST_CASE("json reports") {
    const std::vector<DuplicateGroup> groups{{DuplicateKind::near, {"a", "b"}, 2}};
    const auto j = nlohmann::json::parse(groups_to_json(groups));
    CHECK(j[0]["kind"] == "near");
    CHECK(j[0]["distance"] == 2);
    const auto l = nlohmann::json::parse(leakage_to_json({{"t", "v", DuplicateKind::exact_pixels}}));
    CHECK(l[0]["validation_id"] == "v");
  }
}
