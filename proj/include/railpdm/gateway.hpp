#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "railpdm/access.hpp"
#include "railpdm/analysis.hpp"
#include "railpdm/dsp.hpp"
#include "railpdm/labeling.hpp"
#include "railpdm/ledger.hpp"

namespace httplib {
class Server;
}

/// HTTP service: frame ingestion, labeling, dashboard reads, ledger sync,
/// bearer-token access control and a ledger-backed audit trail.
namespace railpdm::gateway {

/// Key-value configuration shared by `serve` and the CLI:
///
///   # comment
///   listen = 127.0.0.1:8080
///   ledger_path = data/chain.rslog
///   registry_path = principals.json
///   anomaly_threshold = 4.0
///   link_tolerance_us = 2000000
///   baseline_model = baseline.json      (optional; enables ingest alarms)
///   service_principal = gateway         (authors audit and alarm records)
///   report_alarms = 20
///   ui_dir = webui/dist                 (optional; served at /ui/)
///   durable = true
///
/// Relative paths resolve against the config file's directory.
struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ledger_path = "chain.rslog";
  std::string registry_path = "principals.json";
  double anomaly_threshold = analysis::kDefaultAlarmThreshold;
  std::int64_t link_tolerance_us = labeling::kDefaultLinkTolerance;
  std::string baseline_model;
  std::string service_principal = "gateway";
  std::size_t report_alarms = 20;
  std::string ui_dir;
  bool durable = true;

  static Config parse(const std::string& text, const std::string& base_dir = ".");
  static Config load(const std::string& path);
};

enum class Endpoint {
  post_frames,
  post_label_events,
  post_label_maintenance,
  get_recommendations,
  get_health,
  get_report,
  get_audit,
  get_chain_head,
  get_chain_records,
};

struct Route {
  std::string method;
  std::string path;
  Endpoint endpoint;
  bool mutating;
  std::vector<Role> allowed;
};

/// The full (method, path) -> roles contract.
const std::vector<Route>& route_table();
bool is_allowed(Endpoint endpoint, Role role);

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string authorization;  // raw header value
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

enum class Outcome { ok, denied, error };

struct AuditEntry {
  std::uint64_t seq = 0;
  std::int64_t timestamp = 0;
  std::string principal_id;
  std::string request;  // "METHOD /path"
  Outcome outcome = Outcome::ok;
  std::string detail;
};

nlohmann::json to_json(const AuditEntry& e);
AuditEntry audit_from_json(const nlohmann::json& j);
inline constexpr const char* kAuditKey = "audit/log";

/// One completed workshop visit: frames recorded since the previous exit and
/// up to entry, against frames from exit until the next entry.
struct MaintenanceComparison {
  labeling::MaintenanceRecord entry;
  labeling::MaintenanceRecord exit;
  std::size_t pre_frames = 0;
  std::size_t post_frames = 0;
  analysis::PrePostReport report;
};

/// Every completed visit of the vehicle, oldest first; visits without frames
/// on both sides are skipped.
std::vector<MaintenanceComparison> maintenance_comparisons(const ledger::Ledger& store,
                                                           const std::string& vehicle_id);
nlohmann::json to_json(const MaintenanceComparison& c);

struct UploadResult {
  std::size_t accepted = 0;
  std::vector<std::pair<std::size_t, std::string>> rejected;  // (index, reason)
};

class Gateway {
 public:
  Gateway(Config config, PrincipalRegistry registry);
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Transport-independent request handling; safe to call concurrently.
  Response handle(const Request& request);

  ledger::Ledger& store() { return *store_; }
  const Config& config() const { return config_; }
  const PrincipalRegistry& registry() const { return registry_; }

  std::vector<AuditEntry> audit_entries(std::uint64_t from = 0,
                                        std::uint64_t to = UINT64_MAX) const;
  nlohmann::json report();
  nlohmann::json health();

 private:
  Response dispatch(const Route& route, const Principal& who, const Request& req);
  Response upload_frames(const Principal& who, const Request& req);
  Response post_event(const Principal& who, const Request& req);
  Response post_maintenance(const Principal& who, const Request& req);
  void audit(const std::string& principal, const Request& req, Outcome outcome,
             const std::string& detail);
  ledger::Verification verify_now();

  Config config_;
  PrincipalRegistry registry_;
  const Principal* service_ = nullptr;
  std::unique_ptr<ledger::Ledger> store_;
  std::optional<analysis::BaselineModel> baseline_;

  std::mutex verify_mu_;
  std::optional<ledger::Verification> last_verify_;
  std::int64_t last_verify_at_ = 0;
};

/// Runs a Gateway behind cpp-httplib on a background thread.
class Server {
 public:
  explicit Server(Gateway& gateway);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds (port 0 picks a free port) and starts serving; returns the port.
  int start(const std::string& host, int port);
  /// Blocks serving on the calling thread.
  void run(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  Gateway& gateway_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
};

/// Minimal client for the gateway API (used by the CLI and tests).
class Client {
 public:
  Client(std::string host, int port, std::string token);

  /// Throws ErrorKind::transport when the service cannot be reached.
  Response get(const std::string& path_and_query) const;
  Response post(const std::string& path, const std::string& body,
                const std::string& content_type = "application/json") const;

  /// POST /api/frames as JSON, or as a packed uplink batch. Non-200
  /// responses raise errors by status.
  UploadResult upload_frames(const std::vector<dsp::SpectralFrame>& frames, bool packed = false) const;
  nlohmann::json get_json(const std::string& path_and_query) const;

  ledger::ChainHead chain_head() const;
  ledger::FetchFn fetcher() const;

 private:
  std::string host_;
  int port_;
  std::string token_;
};

/// Raises the error a non-2xx gateway response stands for.
[[noreturn]] void raise_for_status(const Response& r);

/// "host:port" or "http://host:port".
std::pair<std::string, int> parse_endpoint(const std::string& text);

}  // namespace railpdm::gateway
