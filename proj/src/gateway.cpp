#include "railpdm/gateway.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <sstream>
#include <variant>

// Room for bursts of short-lived client connections.
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#include <httplib.h>

#include "railpdm/binary_io.hpp"
#include "railpdm/errors.hpp"

namespace railpdm::gateway {

using nlohmann::json;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ValidationError(key, "not a number: '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(key, "not a number: '" + value + "'");
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

json error_body(const std::string& kind, const std::string& message,
                const std::string& field = {}) {
  json j = {{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  return j;
}

Response reply(int status, const json& body) { return {status, body.dump()}; }

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::denied: return "denied";
    case Outcome::error: return "error";
  }
  return "error";
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "ok") return Outcome::ok;
  if (s == "denied") return Outcome::denied;
  return Outcome::error;
}

std::uint64_t query_u64(const Request& req, const std::string& name, std::uint64_t fallback) {
  auto it = req.query.find(name);
  if (it == req.query.end() || it->second.empty()) return fallback;
  return parse_number<std::uint64_t>(name, it->second);
}

json verification_json(const ledger::Verification& v) {
  json j = {{"ok", v.ok()}, {"length", v.length}};
  if (v.corruption) {
    j["first_bad_seq"] = v.corruption->first_bad_seq;
    j["reason"] = ledger::to_string(v.corruption->reason);
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

Config Config::parse(const std::string& text, const std::string& base_dir) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("line " + std::to_string(line_no), "expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "listen") {
      std::tie(c.host, c.port) = parse_endpoint(value);
    } else if (key == "ledger_path") {
      c.ledger_path = resolve(base_dir, value);
    } else if (key == "registry_path") {
      c.registry_path = resolve(base_dir, value);
    } else if (key == "anomaly_threshold") {
      c.anomaly_threshold = parse_double(key, value);
    } else if (key == "link_tolerance_us") {
      c.link_tolerance_us = parse_number<std::int64_t>(key, value);
      if (c.link_tolerance_us < 0) throw ValidationError(key, "must be non-negative");
    } else if (key == "baseline_model") {
      c.baseline_model = resolve(base_dir, value);
    } else if (key == "service_principal") {
      c.service_principal = value;
    } else if (key == "report_alarms") {
      c.report_alarms = parse_number<std::size_t>(key, value);
    } else if (key == "ui_dir") {
      c.ui_dir = resolve(base_dir, value);
    } else if (key == "durable") {
      if (value != "true" && value != "false") throw ValidationError(key, "must be true or false");
      c.durable = value == "true";
    } else {
      throw ValidationError(key, "unknown config key");
    }
  }
  return c;
}

Config Config::load(const std::string& path) {
  const Bytes raw = read_file(path);
  const auto dir = std::filesystem::path(path).parent_path().string();
  return parse(std::string(raw.begin(), raw.end()), dir.empty() ? "." : dir);
}

std::pair<std::string, int> parse_endpoint(const std::string& text) {
  std::string s = text;
  if (s.starts_with("http://")) s = s.substr(7);
  while (!s.empty() && s.back() == '/') s.pop_back();
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw ValidationError("listen", "expected host:port, got '" + text + "'");
  }
  const int port = parse_number<int>("listen", s.substr(colon + 1));
  if (port < 0 || port > 65535) throw ValidationError("listen", "port out of range");
  return {s.substr(0, colon), port};
}

// ---------------------------------------------------------------------------
// Routes

const std::vector<Route>& route_table() {
  using enum Role;
  static const std::vector<Route> table = {
      {"POST", "/api/frames", Endpoint::post_frames, true, {sensor, admin}},
      {"POST", "/api/labels/events", Endpoint::post_label_events, true, {driver, mechanic}},
      {"POST", "/api/labels/maintenance", Endpoint::post_label_maintenance, true, {mechanic}},
      {"GET", "/api/recommendations", Endpoint::get_recommendations, false, {foreman, partner, admin}},
      {"GET", "/api/health", Endpoint::get_health, false,
       {sensor, driver, mechanic, foreman, partner, admin}},
      {"GET", "/api/report", Endpoint::get_report, false, {foreman, partner}},
      {"GET", "/api/audit", Endpoint::get_audit, false, {admin}},
      {"GET", "/chain/head", Endpoint::get_chain_head, false, {partner, admin}},
      {"GET", "/chain/records", Endpoint::get_chain_records, false, {partner, admin}},
  };
  return table;
}

bool is_allowed(Endpoint endpoint, Role role) {
  for (const auto& r : route_table()) {
    if (r.endpoint == endpoint) {
      return std::find(r.allowed.begin(), r.allowed.end(), role) != r.allowed.end();
    }
  }
  return false;
}

json to_json(const AuditEntry& e) {
  return {{"seq", e.seq},
          {"timestamp", e.timestamp},
          {"principal_id", e.principal_id},
          {"request", e.request},
          {"outcome", to_string(e.outcome)},
          {"detail", e.detail}};
}

AuditEntry audit_from_json(const json& j) {
  AuditEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.timestamp = j.at("timestamp").get<std::int64_t>();
  e.principal_id = j.at("principal_id").get<std::string>();
  e.request = j.at("request").get<std::string>();
  e.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  e.detail = j.at("detail").get<std::string>();
  return e;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(Config config, PrincipalRegistry registry)
    : config_(std::move(config)), registry_(std::move(registry)) {
  service_ = registry_.by_id(config_.service_principal);
  if (service_ == nullptr) {
    throw ValidationError("service_principal",
                          "'" + config_.service_principal + "' is not in the principal registry");
  }
  ledger::Options opts;
  opts.durable = config_.durable;
  store_ = std::make_unique<ledger::Ledger>(config_.ledger_path, registry_.keyring(), opts);
  if (!config_.baseline_model.empty()) {
    const Bytes raw = read_file(config_.baseline_model);
    baseline_ = analysis::baseline_from_json(json::parse(raw.begin(), raw.end()));
  }
}

void Gateway::audit(const std::string& principal, const Request& req, Outcome outcome,
                    const std::string& detail) {
  store_->append_built(kAuditKey, service_->id, service_->mac_key, [&](std::uint64_t version) {
    AuditEntry e;
    e.seq = version - 1;
    e.timestamp = ledger::now_micros();
    e.principal_id = principal;
    e.request = req.method + " " + req.path;
    e.outcome = outcome;
    e.detail = detail.substr(0, 200);
    const std::string s = to_json(e).dump();
    return Bytes(s.begin(), s.end());
  });
}

std::vector<AuditEntry> Gateway::audit_entries(std::uint64_t from, std::uint64_t to) const {
  std::vector<AuditEntry> out;
  for (const auto& rec : store_->history(kAuditKey)) {
    const std::uint64_t seq = rec.version - 1;
    if (seq < from || seq >= to) continue;
    out.push_back(audit_from_json(json::parse(rec.payload.begin(), rec.payload.end())));
  }
  return out;
}

Response Gateway::handle(const Request& req) {
  const auto& table = route_table();
  auto route = std::find_if(table.begin(), table.end(), [&](const Route& r) {
    return r.method == req.method && r.path == req.path;
  });
  if (route == table.end()) {
    return reply(404, error_body("not_found", req.method + " " + req.path));
  }

  const Principal* who = nullptr;
  if (req.authorization.starts_with("Bearer ")) {
    who = registry_.by_token(trim(req.authorization.substr(7)));
  }
  try {
    if (who == nullptr) {
      audit("anonymous", req, Outcome::denied, "missing or invalid token");
      return reply(401, error_body("denied", "missing or invalid bearer token"));
    }
    if (!is_allowed(route->endpoint, who->role)) {
      audit(who->id, req, Outcome::denied, std::string("role ") + to_string(who->role));
      return reply(403, error_body("denied", std::string("role ") + to_string(who->role) +
                                                 " may not call " + req.method + " " + req.path));
    }
  } catch (const std::exception& e) {
    return reply(500, error_body("io", e.what()));
  }

  Response resp;
  Outcome outcome = Outcome::ok;
  std::string detail;
  try {
    resp = dispatch(*route, *who, req);
    if (resp.status >= 400) outcome = Outcome::error;
    detail = "status " + std::to_string(resp.status);
  } catch (const ValidationError& e) {
    resp = reply(422, error_body("validation", e.what(), e.field()));
    outcome = Outcome::error;
    detail = e.what();
  } catch (const Error& e) {
    int status = 500;
    switch (e.kind()) {
      case ErrorKind::permission:
      case ErrorKind::auth: status = 403; outcome = Outcome::denied; break;
      case ErrorKind::reference: status = 404; outcome = Outcome::error; break;
      case ErrorKind::parameter:
      case ErrorKind::validation:
      case ErrorKind::spec:
      case ErrorKind::size: status = 400; outcome = Outcome::error; break;
      default: status = 500; outcome = Outcome::error; break;
    }
    resp = reply(status, error_body(railpdm::to_string(e.kind()), e.what()));
    detail = e.what();
  } catch (const std::exception& e) {
    resp = reply(500, error_body("internal", e.what()));
    outcome = Outcome::error;
    detail = e.what();
  }

  if (route->mutating || outcome == Outcome::denied) {
    try {
      audit(who->id, req, outcome, detail);
    } catch (const std::exception& e) {
      return reply(500, error_body("io", std::string("audit write failed: ") + e.what()));
    }
  }
  return resp;
}

Response Gateway::dispatch(const Route& route, const Principal& who, const Request& req) {
  switch (route.endpoint) {
    case Endpoint::post_frames: return upload_frames(who, req);
    case Endpoint::post_label_events: return post_event(who, req);
    case Endpoint::post_label_maintenance: return post_maintenance(who, req);
    default: break;
  }
  store_->refresh();
  switch (route.endpoint) {
    case Endpoint::get_recommendations: {
      auto it = req.query.find("subject");
      const std::string subject = it == req.query.end() ? std::string{} : it->second;
      json arr = json::array();
      for (const auto& r : analysis::recommendations(*store_, subject)) arr.push_back(analysis::to_json(r));
      return reply(200, arr);
    }
    case Endpoint::get_health: return reply(200, health());
    case Endpoint::get_report: return reply(200, report());
    case Endpoint::get_audit: {
      json arr = json::array();
      for (const auto& e : audit_entries(query_u64(req, "from", 0), query_u64(req, "to", UINT64_MAX))) {
        arr.push_back(to_json(e));
      }
      return reply(200, arr);
    }
    case Endpoint::get_chain_head: return reply(200, ledger::to_json(store_->head()));
    case Endpoint::get_chain_records: {
      const std::uint64_t from = query_u64(req, "from", 0);
      const std::uint64_t to = std::min(query_u64(req, "to", from + 1000), from + 1000);
      json arr = json::array();
      for (const auto& r : store_->records(from, to)) arr.push_back(ledger::to_json(r));
      return reply(200, arr);
    }
    default: break;
  }
  return reply(404, error_body("not_found", req.path));
}

Response Gateway::upload_frames(const Principal& who, const Request& req) {
  // Either a JSON array (or {"frames": [...]}) or a packed uplink batch.
  std::vector<std::variant<dsp::SpectralFrame, std::string>> parsed;
  if (req.body.starts_with(dsp::kUplinkMagic)) {
    std::vector<dsp::SpectralFrame> frames;
    try {
      frames = dsp::unpack_uplink(as_bytes(req.body));
    } catch (const Error& e) {
      throw ValidationError("frames", e.what());
    }
    for (auto& f : frames) {
      if (auto reason = dsp::check_frame(f)) {
        parsed.emplace_back(*reason);
      } else {
        parsed.emplace_back(std::move(f));
      }
    }
  } else {
    json body = json::parse(req.body, nullptr, false);
    if (body.is_object() && body.contains("frames")) body = body["frames"];
    if (body.is_discarded() || !body.is_array()) {
      throw ValidationError("frames", "body must be a JSON array of frames");
    }
    for (const auto& item : body) {
      try {
        parsed.emplace_back(dsp::frame_from_json(item));
      } catch (const ValidationError& e) {
        parsed.emplace_back(e.field());
      }
    }
  }
  UploadResult result;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (const auto* reason = std::get_if<std::string>(&parsed[i])) {
      result.rejected.emplace_back(i, *reason);
      continue;
    }
    const auto& frame = std::get<dsp::SpectralFrame>(parsed[i]);
    const std::string text = dsp::to_json(frame).dump();
    const auto rec = store_->append("frames/" + frame.sensor_id, as_bytes(text), who.id, who.mac_key);
    ++result.accepted;
    if (baseline_ && (baseline_->sensor_id.empty() || baseline_->sensor_id == frame.sensor_id)) {
      const double score = analysis::anomaly_score(frame, *baseline_);
      if (analysis::is_alarm(score, config_.anomaly_threshold)) {
        const json alarm = {{"frame_ref", ledger::to_json({rec.key, rec.version})},
                            {"sensor_id", frame.sensor_id},
                            {"start_timestamp", frame.start_timestamp},
                            {"score", score},
                            {"threshold", config_.anomaly_threshold}};
        const std::string a = alarm.dump();
        store_->append("alarms/" + frame.sensor_id, as_bytes(a), service_->id, service_->mac_key);
      }
    }
  }
  json rejected = json::array();
  for (const auto& [index, reason] : result.rejected) {
    rejected.push_back({{"index", index}, {"reason", reason}});
  }
  return reply(200, {{"accepted", result.accepted}, {"rejected", rejected}});
}

Response Gateway::post_event(const Principal& who, const Request& req) {
  const json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw ValidationError("body", "malformed JSON");
  auto label = labeling::create_event_label(labeling::event_label_from_json(body), who, *store_);
  auto link = labeling::link_label_to_frames(label, *store_, config_.link_tolerance_us, who);
  return reply(200, {{"label", labeling::to_json(label)}, {"link", labeling::to_json(link)}});
}

Response Gateway::post_maintenance(const Principal& who, const Request& req) {
  const json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw ValidationError("body", "malformed JSON");
  auto rec = labeling::create_maintenance_record(labeling::maintenance_from_json(body), who, *store_);
  return reply(200, labeling::to_json(rec));
}

ledger::Verification Gateway::verify_now() {
  std::lock_guard guard(verify_mu_);
  const auto length = store_->size();
  const auto now = ledger::now_micros();
  if (!last_verify_ || last_verify_->length != length || !last_verify_->ok() ||
      now - last_verify_at_ > 1'000'000) {
    last_verify_ = store_->verify_chain();
    last_verify_at_ = now;
  }
  return *last_verify_;
}

json Gateway::health() {
  const auto v = verify_now();
  return {{"frames", store_->count("frames/")},
          {"labels", store_->count("labels/")},
          {"recommendations", store_->count("recommendations/")},
          {"alarms", store_->count("alarms/")},
          {"chain_length", store_->size()},
          {"last_verify", verification_json(v)}};
}

json Gateway::report() {
  json label_counts = json::object();
  for (auto k : labeling::kAllEventKinds) label_counts[labeling::to_string(k)] = 0;
  std::vector<std::string> vehicles;
  for (const auto& key : store_->keys("labels/events/")) {
    for (const auto& l : labeling::event_labels(*store_, key.substr(14))) {
      label_counts[labeling::to_string(l.event_kind)] =
          label_counts[labeling::to_string(l.event_kind)].get<int>() + 1;
    }
  }

  // Latest recommendation per subject, open unless a later workshop exit exists.
  json open = json::array();
  for (const auto& key : store_->keys("recommendations/")) {
    auto latest = store_->get_latest(key);
    auto rec = analysis::recommendation_from_json(json::parse(latest->payload.begin(), latest->payload.end()));
    bool closed = false;
    for (const auto& m : labeling::maintenance_records(*store_, rec.subject)) {
      if (m.phase == labeling::Phase::exit && m.timestamp > rec.created_at) closed = true;
    }
    if (!closed) open.push_back(analysis::to_json(rec));
  }

  std::vector<std::pair<std::uint64_t, json>> alarms;
  for (const auto& key : store_->keys("alarms/")) {
    for (const auto& rec : store_->history(key)) {
      alarms.emplace_back(rec.seq, json::parse(rec.payload.begin(), rec.payload.end()));
    }
  }
  std::sort(alarms.begin(), alarms.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  json recent = json::array();
  for (std::size_t i = 0; i < alarms.size() && i < config_.report_alarms; ++i) {
    recent.push_back(alarms[i].second);
  }

  json comparisons = json::array();
  for (const auto& key : store_->keys("labels/maintenance/")) {
    for (const auto& c : maintenance_comparisons(*store_, key.substr(19))) comparisons.push_back(to_json(c));
  }

  return {{"generated_at", ledger::now_micros()},
          {"frame_count", store_->count("frames/")},
          {"label_counts", label_counts},
          {"open_recommendations", open},
          {"anomaly_alarms_last_n", recent},
          {"chain_verified", verify_now().ok()},
          {"maintenance_comparisons", comparisons}};
}

std::vector<MaintenanceComparison> maintenance_comparisons(const ledger::Ledger& store,
                                                           const std::string& vehicle_id) {
  const auto pairs = labeling::pair_up(store, vehicle_id);
  if (pairs.empty()) return {};
  const auto catalog = labeling::frame_catalog(store, vehicle_id);
  auto features = [&](const labeling::FrameSpan& span) {
    const auto rec = store.get_version(span.ref.key, span.ref.version);
    return analysis::extract_features(dsp::frame_from_json(json::parse(rec->payload.begin(), rec->payload.end())),
                                      span.ref);
  };
  std::vector<MaintenanceComparison> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [entry, exit] = pairs[i];
    const std::int64_t pre_from = i == 0 ? INT64_MIN : pairs[i - 1].second.timestamp;
    const std::int64_t post_to = i + 1 < pairs.size() ? pairs[i + 1].first.timestamp : INT64_MAX;
    std::vector<analysis::FeatureVector> pre, post;
    for (const auto& span : catalog) {
      if (span.start >= pre_from && span.end <= entry.timestamp) pre.push_back(features(span));
      if (span.start >= exit.timestamp && span.end <= post_to) post.push_back(features(span));
    }
    if (pre.empty() || post.empty()) continue;
    out.push_back({entry, exit, pre.size(), post.size(),
                   analysis::compare_pre_post(std::span<const analysis::FeatureVector>(pre),
                                              std::span<const analysis::FeatureVector>(post))});
  }
  return out;
}

json to_json(const MaintenanceComparison& c) {
  json j = analysis::to_json(c.report);
  j["vehicle_id"] = c.entry.vehicle_id;
  j["entry"] = c.entry.record_id;
  j["exit"] = c.exit.record_id;
  j["entry_timestamp"] = c.entry.timestamp;
  j["exit_timestamp"] = c.exit.timestamp;
  j["pre_frames"] = c.pre_frames;
  j["post_frames"] = c.post_frames;
  return j;
}

// ---------------------------------------------------------------------------
// HTTP server

Server::Server(Gateway& gateway) : gateway_(gateway), http_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Server::~Server() { stop(); }

void Server::install_routes() {
  auto bridge = [this](const httplib::Request& in, httplib::Response& out) {
    Request req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query[k] = v;
    req.authorization = in.get_header_value("Authorization");
    req.body = in.body;
    Response r = gateway_.handle(req);
    out.status = r.status;
    out.set_content(r.body, "application/json");
  };
  http_->Get(R"(/(api|chain)/.*)", bridge);
  http_->Post(R"(/(api|chain)/.*)", bridge);
  if (!gateway_.config().ui_dir.empty()) http_->set_mount_point("/ui", gateway_.config().ui_dir);
}

int Server::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = http_->bind_to_any_port(host);
  } else if (!http_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return bound;
}

void Server::run(const std::string& host, int port) {
  if (!http_->listen(host, port)) fail(ErrorKind::io, "cannot listen on " + host + ":" + std::to_string(port));
}

void Server::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------
// Client

Client::Client(std::string host, int port, std::string token)
    : host_(std::move(host)), port_(port), token_(std::move(token)) {}

namespace {
httplib::Headers auth_headers(const std::string& token) {
  return {{"Authorization", "Bearer " + token}};
}
}  // namespace

Response Client::get(const std::string& path_and_query) const {
  httplib::Client cli(host_, port_);
  cli.set_read_timeout(60, 0);
  auto res = cli.Get(path_and_query, auth_headers(token_));
  if (!res) {
    fail(ErrorKind::transport, "GET " + path_and_query + " failed: " + httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

Response Client::post(const std::string& path, const std::string& body,
                      const std::string& content_type) const {
  httplib::Client cli(host_, port_);
  cli.set_read_timeout(60, 0);
  auto res = cli.Post(path, auth_headers(token_), body, content_type);
  if (!res) fail(ErrorKind::transport, "POST " + path + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

void raise_for_status(const Response& r) {
  std::string message = "HTTP " + std::to_string(r.status);
  std::string field;
  json body = json::parse(r.body, nullptr, false);
  if (!body.is_discarded() && body.is_object()) {
    message += ": " + body.value("message", std::string{});
    field = body.value("field", std::string{});
  }
  if (r.status == 422) throw ValidationError(field.empty() ? "body" : field, message);
  if (r.status == 401) fail(ErrorKind::auth, message);
  if (r.status == 403) fail(ErrorKind::permission, message);
  if (r.status == 404) fail(ErrorKind::reference, message);
  if (r.status == 400) fail(ErrorKind::validation, message);
  fail(ErrorKind::transport, message);
}

json Client::get_json(const std::string& path_and_query) const {
  Response r = get(path_and_query);
  if (r.status != 200) raise_for_status(r);
  return r.json();
}

UploadResult Client::upload_frames(const std::vector<dsp::SpectralFrame>& frames, bool packed) const {
  Response r;
  if (packed) {
    const Bytes body = dsp::pack_uplink(frames);
    r = post("/api/frames", std::string(body.begin(), body.end()), "application/octet-stream");
  } else {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& f : frames) arr.push_back(dsp::to_json(f));
    r = post("/api/frames", arr.dump());
  }
  if (r.status != 200) raise_for_status(r);
  json j = r.json();
  UploadResult out;
  out.accepted = j.at("accepted").get<std::size_t>();
  for (const auto& e : j.at("rejected")) {
    out.rejected.emplace_back(e.at("index").get<std::size_t>(), e.at("reason").get<std::string>());
  }
  return out;
}

ledger::ChainHead Client::chain_head() const { return ledger::head_from_json(get_json("/chain/head")); }

ledger::FetchFn Client::fetcher() const {
  return [client = *this](std::uint64_t from, std::uint64_t to) {
    std::vector<ledger::LedgerRecord> out;
    while (from < to) {
      json arr = client.get_json("/chain/records?from=" + std::to_string(from) + "&to=" + std::to_string(to));
      if (!arr.is_array() || arr.empty()) fail(ErrorKind::transport, "peer returned no records");
      for (const auto& j : arr) out.push_back(ledger::record_from_json(j));
      from += arr.size();
    }
    return out;
  };
}

}  // namespace railpdm::gateway
