#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>
#include <string>

#include "workbench/manifest.hpp"
#include "workbench/triage.hpp"

namespace httplib {
class Server;
}

namespace wb::review {

struct ServiceOptions {
  std::filesystem::path manifest;
  std::filesystem::path image_root;  // defaults to the manifest directory
  /// Pipeline output directory; supplies the trained accuracies in stats.
  std::optional<std::filesystem::path> output;
  triage::ConfirmationRule rule = triage::ConfirmationRule::any_corrective;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// JSON API over a manifest file. Reads share a snapshot; verdicts are
/// serialized, applied all-or-nothing and saved atomically before the
/// response is sent. The file is reloaded when another process replaces it.
class ReviewService {
 public:
  explicit ReviewService(ServiceOptions options);
  ~ReviewService();

  /// Transport-independent dispatch used by the HTTP server and tests.
  Response handle(const std::string& method, const std::string& path,
                  const std::map<std::string, std::string>& query, const std::string& body);

  Response get_rounds();
  Response get_queue(const std::map<std::string, std::string>& query);
  Response get_image(const std::string& id);
  Response post_verdict(const std::string& body);
  Response get_stats(const std::map<std::string, std::string>& query);

  /// Binds and serves until stop(); returns false if binding failed.
  bool listen(const std::string& host, int port);
  /// Binds to a free port and serves on a background thread; returns the port.
  int start_background(const std::string& host = "127.0.0.1");
  void stop();

  DatasetManifest snapshot();

 private:
  std::shared_ptr<const DatasetManifest> current();
  void install_routes();

  ServiceOptions options_;
  std::shared_mutex snapshot_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const DatasetManifest> manifest_;
  std::filesystem::file_time_type loaded_mtime_{};
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<std::thread> thread_;
};

/// {code, message, sample_id?}
std::string error_json(const std::string& code, const std::string& message,
                       const std::string& sample_id = "");

}  // namespace wb::review
