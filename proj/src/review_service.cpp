#include "workbench/review_service.hpp"

#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "workbench/image.hpp"
#include "workbench/pipeline.hpp"

namespace wb::review {

namespace fs = std::filesystem;
using nlohmann::json;

std::string error_json(const std::string& code, const std::string& message,
                       const std::string& sample_id) {
  json j{{"code", code}, {"message", message}};
  if (!sample_id.empty()) j["sample_id"] = sample_id;
  return j.dump();
}

namespace {

Response error(int status, const std::string& code, const std::string& message,
               const std::string& sample_id = "") {
  return {status, "application/json", error_json(code, message, sample_id)};
}

std::optional<int> parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

/// Relative, no parent references: the only image paths the service serves.
bool safe_relative(const fs::path& p) {
  if (p.empty() || p.is_absolute() || p.has_root_name()) return false;
  for (const auto& part : p.lexically_normal())
    if (part == "..") return false;
  return true;
}

}  // namespace

ReviewService::ReviewService(ServiceOptions options) : options_(std::move(options)) {
  if (options_.image_root.empty()) options_.image_root = options_.manifest.parent_path();
  manifest_ = std::make_shared<const DatasetManifest>(load_manifest(options_.manifest));
  loaded_mtime_ = fs::last_write_time(options_.manifest);
}

ReviewService::~ReviewService() { stop(); }

std::shared_ptr<const DatasetManifest> ReviewService::current() {
  std::error_code ec;
  const auto mtime = fs::last_write_time(options_.manifest, ec);
  {
    std::shared_lock lock(snapshot_mutex_);
    if (ec || mtime == loaded_mtime_) return manifest_;
  }
  std::unique_lock lock(snapshot_mutex_);
  if (mtime != loaded_mtime_) {
    manifest_ = std::make_shared<const DatasetManifest>(load_manifest(options_.manifest));
    loaded_mtime_ = mtime;
  }
  return manifest_;
}

DatasetManifest ReviewService::snapshot() { return *current(); }

Response ReviewService::get_rounds() {
  const auto m = current();
  json arr = json::array();
  for (int round : triage::flagged_rounds(*m)) {
    const auto stats = triage::round_stats(*m, round, std::nullopt, options_.rule);
    arr.push_back({{"round", round}, {"total", stats.total}, {"reviewed", stats.reviewed}});
  }
  return {200, "application/json", json{{"rounds", arr}}.dump()};
}

Response ReviewService::get_queue(const std::map<std::string, std::string>& query) {
  auto it = query.find("round");
  if (it == query.end()) return error(400, "validation", "query parameter 'round' is required");
  const auto round = parse_int(it->second);
  if (!round) return error(400, "validation", "round must be an integer");
  std::optional<FlagKind> kind;
  if (auto k = query.find("kind"); k != query.end() && !k->second.empty()) {
    try {
      kind = parse_flag_kind(k->second);
    } catch (const Error& e) {
      return error(400, "validation", e.what());
    }
  }
  const auto m = current();
  const auto rounds = triage::flagged_rounds(*m);
  if (std::find(rounds.begin(), rounds.end(), *round) == rounds.end())
    return error(404, "not_found", "no triage output for round " + std::to_string(*round));
  return {200, "application/json", triage::queue_to_json(triage::build_queue(*m, *round, kind), *m)};
}

Response ReviewService::get_image(const std::string& id) {
  const auto m = current();
  if (!m->contains(id)) return error(404, "not_found", "unknown sample", id);
  const fs::path rel = m->at(id).image_path;
  if (!safe_relative(rel)) return error(403, "forbidden", "image path escapes the image root", id);
  try {
    const auto bytes = read_file_bytes(options_.image_root / rel);
    return {200, "image/png", std::string(bytes.begin(), bytes.end())};
  } catch (const IoError& e) {
    return error(404, "not_found", e.what(), id);
  }
}

Response ReviewService::post_verdict(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, "parse", std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) return error(400, "validation", "request body must be an object");
  const std::string id = j.value("sample_id", std::string{});
  if (id.empty()) return error(400, "validation", "sample_id is required");

  std::lock_guard write(write_mutex_);
  const auto m = current();
  if (!m->contains(id)) return error(404, "not_found", "unknown sample", id);
  const auto& rec = m->at(id);

  triage::ReviewVerdict v;
  v.sample_id = id;
  try {
    v.action = triage::parse_action(j.value("action", std::string{}));
    if (j.contains("new_label") && !j["new_label"].is_null()) {
      if (!j["new_label"].is_string()) return error(400, "validation", "new_label must be a class name", id);
      v.new_label = m->class_index(j["new_label"].get<std::string>());
    }
    if (!j.contains("expected_version") || !j["expected_version"].is_number_unsigned())
      return error(400, "validation", "expected_version is required", id);
    v.expected_version = j["expected_version"].get<std::uint64_t>();
    if (j.contains("round")) {
      if (!j["round"].is_number_integer()) return error(400, "validation", "round must be an integer", id);
      v.round = j["round"].get<int>();
    } else {
      v.round = rec.round.value_or(0);
    }
    v.reviewer = j.value("reviewer", std::string("reviewer"));
    v.timestamp = j.value("timestamp", std::string{});
  } catch (const Error& e) {
    return error(400, "validation", e.what(), id);
  } catch (const json::exception& e) {
    return error(400, "validation", e.what(), id);
  }

  DatasetManifest next;
  try {
    const triage::ReviewVerdict batch[] = {v};
    next = triage::apply_verdicts(*m, batch);
  } catch (const ConflictError& e) {
    return error(409, "conflict", e.what(), id);
  } catch (const BudgetError& e) {
    return error(422, "budget", e.what(), id);
  } catch (const Error& e) {
    return error(400, "validation", e.what(), id);
  }
  // A verdict already in effect changes nothing; it still must name the current version.
  if (next.at(id).version == rec.version && *v.expected_version != rec.version)
    return error(409, "conflict",
                 "sample is at version " + std::to_string(rec.version) + ", request expected " +
                     std::to_string(*v.expected_version),
                 id);
  try {
    if (next.at(id).version != rec.version) save_manifest(next, options_.manifest);
  } catch (const Error& e) {
    return error(500, "io", e.what(), id);
  }
  const auto& r = next.at(id);
  json out{{"sample_id", id},
           {"status", to_string(r.status)},
           {"label", next.class_name(r.label)},
           {"split", to_string(r.split)},
           {"version", r.version}};
  {
    std::unique_lock lock(snapshot_mutex_);
    manifest_ = std::make_shared<const DatasetManifest>(std::move(next));
    std::error_code ec;
    loaded_mtime_ = fs::last_write_time(options_.manifest, ec);
  }
  return {200, "application/json", out.dump()};
}

Response ReviewService::get_stats(const std::map<std::string, std::string>& query) {
  auto it = query.find("round");
  if (it == query.end()) return error(400, "validation", "query parameter 'round' is required");
  const auto round = parse_int(it->second);
  if (!round) return error(400, "validation", "round must be an integer");
  const auto m = current();
  std::optional<triage::RoundReport> trained;
  if (options_.output) trained = pipeline::trained_report(*options_.output, *round);
  return {200, "application/json",
          triage::round_stats_to_json(triage::round_stats(*m, *round, trained, options_.rule))};
}

Response ReviewService::handle(const std::string& method, const std::string& path,
                               const std::map<std::string, std::string>& query,
                               const std::string& body) {
  try {
    if (method == "GET" && path == "/api/rounds") return get_rounds();
    if (method == "GET" && path == "/api/queue") return get_queue(query);
    if (method == "GET" && path == "/api/stats") return get_stats(query);
    if (method == "POST" && path == "/api/verdict") return post_verdict(body);
    const std::string prefix = "/api/sample/", suffix = "/image";
    if (method == "GET" && path.starts_with(prefix) && path.ends_with(suffix) &&
        path.size() > prefix.size() + suffix.size())
      return get_image(path.substr(prefix.size(), path.size() - prefix.size() - suffix.size()));
    return error(404, "not_found", "no route for " + method + " " + path);
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

void ReviewService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const Response r = handle(req.method, req.path, query, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type);
  };
  server_->Get(R"(/api/.*)", dispatch);
  server_->Post(R"(/api/.*)", dispatch);
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

bool ReviewService::listen(const std::string& host, int port) {
  install_routes();
  return server_->listen(host, port);
}

int ReviewService::start_background(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw IoError("cannot bind review service on " + host);
  thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void ReviewService::stop() {
  if (server_) server_->stop();
  if (thread_ && thread_->joinable()) thread_->join();
  thread_.reset();
}

}  // namespace wb::review
