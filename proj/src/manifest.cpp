#include "workbench/manifest.hpp"

#include <atomic>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include <json.hpp>

namespace wb {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table,
             const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw ParseError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<const char*, Split>, 5> kSplits{{{"train", Split::train},
                                                                {"validation", Split::validation},
                                                                {"test", Split::test},
                                                                {"surplus", Split::surplus},
                                                                {"unassigned", Split::unassigned}}};
constexpr std::array<std::pair<const char*, Status>, 5> kStatuses{
    {{"unverified", Status::unverified},
     {"certified", Status::certified},
     {"relabeled", Status::relabeled},
     {"rejected", Status::rejected},
     {"ambiguous", Status::ambiguous}}};
constexpr std::array<std::pair<const char*, FlagKind>, 3> kFlags{
    {{"confident_head", FlagKind::confident_head},
     {"suspect_tail", FlagKind::suspect_tail},
     {"seed", FlagKind::seed}}};

template <typename E, std::size_t N>
std::string enum_name(E value, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, v] : table)
    if (v == value) return name;
  return "?";
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string phash_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

std::uint64_t phash_from_hex(const std::string& s) {
  if (s.size() != 16) throw ParseError("phash must be 16 hex digits");
  std::uint64_t v = 0;
  for (char c : s) {
    int h = hex_value(c);
    if (h < 0) throw ParseError("phash contains non-hex digit");
    v = (v << 4) | static_cast<std::uint64_t>(h);
  }
  return v;
}

std::string record_line(const SampleRecord& r, const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["image_path"] = r.image_path;
  j["byte_hash"] = to_hex(r.byte_hash);
  if (r.pixel_hash) j["pixel_hash"] = to_hex(*r.pixel_hash);
  if (r.phash) j["phash"] = phash_hex(*r.phash);
  j["label"] = m.class_name(r.label);
  if (r.suggested_label) j["suggested_label"] = m.class_name(*r.suggested_label);
  j["split"] = to_string(r.split);
  j["status"] = to_string(r.status);
  if (r.loss) j["loss"] = *r.loss;
  if (r.round) j["round"] = *r.round;
  j["version"] = r.version;
  if (r.original_label) j["original_label"] = m.class_name(*r.original_label);
  if (r.flag) j["flag"] = to_string(*r.flag);
  if (r.note) j["note"] = *r.note;
  if (r.provenance) j["provenance"] = *r.provenance;
  if (r.surplus_order) j["surplus_order"] = *r.surplus_order;
  if (r.reviewer) j["reviewer"] = *r.reviewer;
  return j.dump();
}

SampleRecord record_from_json(const json& j, const DatasetManifest& m) {
  static const std::set<std::string> known{
      "id",      "image_path", "byte_hash",      "pixel_hash", "phash",      "label",
      "suggested_label", "split", "status",     "loss",       "round",      "version",
      "original_label",  "flag",  "note",       "provenance", "surplus_order", "reviewer"};
  if (!j.is_object()) throw ParseError("record is not an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ParseError("unknown field '" + key + "'");
  auto label_of = [&](const json& v) {
    if (!v.is_string()) throw ParseError("label must be a class name");
    auto name = v.get<std::string>();
    for (int i = 0; i < m.num_classes(); ++i)
      if (m.classes[i] == name) return i;
    throw InvariantError("label '" + name + "' is not in the class list",
                         j.value("id", std::string{}));
  };

  SampleRecord r;
  r.id = j.at("id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.byte_hash = digest_from_hex(j.at("byte_hash").get<std::string>());
  if (j.contains("pixel_hash")) r.pixel_hash = digest_from_hex(j["pixel_hash"].get<std::string>());
  if (j.contains("phash")) r.phash = phash_from_hex(j["phash"].get<std::string>());
  r.label = label_of(j.at("label"));
  if (j.contains("suggested_label")) r.suggested_label = label_of(j["suggested_label"]);
  r.split = parse_split(j.at("split").get<std::string>());
  r.status = parse_status(j.at("status").get<std::string>());
  if (j.contains("loss")) r.loss = j["loss"].get<double>();
  if (j.contains("round")) r.round = j["round"].get<int>();
  r.version = j.at("version").get<std::uint64_t>();
  if (j.contains("original_label")) r.original_label = label_of(j["original_label"]);
  if (j.contains("flag")) r.flag = parse_flag_kind(j["flag"].get<std::string>());
  if (j.contains("note")) r.note = j["note"].get<std::string>();
  if (j.contains("provenance")) r.provenance = j["provenance"].get<std::string>();
  if (j.contains("surplus_order")) r.surplus_order = j["surplus_order"].get<std::uint64_t>();
  if (j.contains("reviewer")) r.reviewer = j["reviewer"].get<std::string>();
  return r;
}

void check_record(const SampleRecord& r, const DatasetManifest& m) {
  auto fail = [&](const std::string& what) {
    throw InvariantError("record '" + r.id + "': " + what, r.id);
  };
  if (r.id.empty()) fail("empty id");
  if (r.label < 0 || r.label >= m.num_classes()) fail("label out of range");
  if (r.suggested_label && (*r.suggested_label < 0 || *r.suggested_label >= m.num_classes()))
    fail("suggested_label out of range");
  if (r.excluded() &&
      (r.split == Split::train || r.split == Split::validation || r.split == Split::test ||
       r.split == Split::surplus))
    fail(to_string(r.status) + " record assigned to split " + to_string(r.split));
  if (r.surplus_order.has_value() != (r.split == Split::surplus))
    fail("surplus_order must be set exactly for surplus records");
  if (r.status == Status::relabeled) {
    if (!r.original_label) fail("relabeled without original_label");
    if (*r.original_label == r.label) fail("relabeled to the original label");
  }
  if (r.loss && !(*r.loss >= 0.0)) fail("negative loss");
  if (r.round && *r.round < 1) fail("round must be >= 1");
}

std::atomic<unsigned long> g_temp_counter{0};

}  // namespace

std::string to_string(Split s) { return enum_name(s, kSplits); }
std::string to_string(Status s) { return enum_name(s, kStatuses); }
std::string to_string(FlagKind k) { return enum_name(k, kFlags); }
Split parse_split(const std::string& s) { return parse_enum(s, kSplits, "split"); }
Status parse_status(const std::string& s) { return parse_enum(s, kStatuses, "status"); }
FlagKind parse_flag_kind(const std::string& s) { return parse_enum(s, kFlags, "flag kind"); }

std::string to_hex(const Digest256& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

Digest256 digest_from_hex(const std::string& hex) {
  if (hex.size() != 64) throw ParseError("digest must be 64 hex digits");
  Digest256 d{};
  for (std::size_t i = 0; i < 32; ++i) {
    int hi = hex_value(hex[2 * i]), lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw ParseError("digest contains non-hex digit");
    d[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
  return d;
}

int DatasetManifest::class_index(const std::string& name) const {
  for (int i = 0; i < num_classes(); ++i)
    if (classes[i] == name) return i;
  throw ValidationError("unknown class '" + name + "'");
}

const std::string& DatasetManifest::class_name(int index) const {
  if (index < 0 || index >= num_classes())
    throw InvariantError("class index " + std::to_string(index) + " out of range");
  return classes[index];
}

SampleRecord& DatasetManifest::at(const std::string& id) {
  auto it = records.find(id);
  if (it == records.end()) throw NotFoundError("unknown sample id '" + id + "'");
  return it->second;
}

const SampleRecord& DatasetManifest::at(const std::string& id) const {
  auto it = records.find(id);
  if (it == records.end()) throw NotFoundError("unknown sample id '" + id + "'");
  return it->second;
}

void DatasetManifest::add(SampleRecord record) {
  check_record(record, *this);
  auto id = record.id;
  if (!records.emplace(id, std::move(record)).second)
    throw InvariantError("duplicate id '" + id + "'", id);
}

std::size_t DatasetManifest::count(Split split) const {
  std::size_t n = 0;
  for (const auto& [_, r] : records)
    if (r.split == split) ++n;
  return n;
}

std::vector<std::string> roman_numeral_classes() {
  return {"i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x"};
}

SizeConstraintReport validate_size_constraint(const DatasetManifest& manifest) {
  SizeConstraintReport rep;
  rep.n_max = manifest.n_max;
  for (const auto& [_, r] : manifest.records) {
    if (r.excluded()) continue;
    if (r.split == Split::train) ++rep.train;
    if (r.split == Split::validation) ++rep.validation;
  }
  rep.satisfied = static_cast<long>(rep.train + rep.validation) < manifest.n_max;
  return rep;
}

void require_size_constraint(const DatasetManifest& manifest, const std::string& context) {
  auto rep = validate_size_constraint(manifest);
  if (!rep.satisfied)
    throw BudgetError(context + ": |train| + |validation| = " +
                      std::to_string(rep.train + rep.validation) + " is not below n_max = " +
                      std::to_string(rep.n_max));
}

std::vector<std::size_t> class_histogram(const DatasetManifest& manifest, Split split) {
  std::vector<std::size_t> h(manifest.classes.size(), 0);
  for (const auto& [_, r] : manifest.records)
    if (r.split == split && r.status != Status::rejected) ++h.at(r.label);
  return h;
}

void check_invariants(const DatasetManifest& manifest) {
  if (manifest.schema_version != DatasetManifest::kSchemaVersion)
    throw InvariantError("unsupported schema_version " + std::to_string(manifest.schema_version));
  if (manifest.n_max <= 0) throw InvariantError("n_max must be positive");
  if (manifest.classes.empty()) throw InvariantError("class list is empty");
  std::set<std::string> names;
  for (const auto& c : manifest.classes)
    if (!names.insert(c).second) throw InvariantError("duplicate class name '" + c + "'");
  for (const auto& [id, r] : manifest.records) {
    if (id != r.id) throw InvariantError("record key mismatch for '" + r.id + "'", r.id);
    check_record(r, manifest);
  }
  require_size_constraint(manifest, "manifest");
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  nlohmann::ordered_json header;
  header["schema_version"] = manifest.schema_version;
  header["n_max"] = manifest.n_max;
  header["classes"] = manifest.classes;
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& [_, r] : manifest.records) {
    out += record_line(r, manifest);
    out.push_back('\n');
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  DatasetManifest m;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        m.schema_version = j.at("schema_version").get<int>();
        m.n_max = j.at("n_max").get<long>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      auto r = record_from_json(j, m);
      auto id = r.id;
      if (!m.records.emplace(id, std::move(r)).second)
        throw InvariantError("duplicate id '" + id + "'", id);
    } catch (const InvariantError& e) {
      throw InvariantError("line " + std::to_string(line_no) + ": " + e.what(), e.record_id());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ParseError("manifest has no header line");
  check_invariants(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_manifest(ss.str());
  } catch (const InvariantError& e) {
    throw InvariantError(path.string() + ": " + e.what(), e.record_id());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  check_invariants(manifest);
  const std::string text = serialize_manifest(manifest);
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(g_temp_counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot replace " + path.string() + ": " + ec.message());
  }
}

}  // namespace wb
