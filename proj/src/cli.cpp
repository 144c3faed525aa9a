#include "railpdm/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>

#include "railpdm/access.hpp"
#include "railpdm/analysis.hpp"
#include "railpdm/binary_io.hpp"
#include "railpdm/dsp.hpp"
#include "railpdm/gateway.hpp"
#include "railpdm/labeling.hpp"
#include "railpdm/ledger.hpp"
#include "railpdm/simkit.hpp"

namespace railpdm::cli {

using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::transport: return kExitIo;
    default: return kExitFailure;
  }
}

json to_json(const RunManifest& m) {
  json j = {{"command", m.command},
            {"args", m.args},
            {"seed", nullptr},
            {"started_at", m.started_at},
            {"outputs", m.outputs}};
  if (m.seed) j["seed"] = *m.seed;
  return j;
}

namespace {

// Shared state ---------------------------------------------------------------

struct Context {
  std::vector<std::string> args;
  std::int64_t started_at = ledger::now_micros();
  std::string manifest_path;  // --manifest override
  std::string config_path;
};

void write_text(const std::string& path, const std::string& text) {
  write_file(path, as_bytes(text));
}

std::string read_text(const std::string& path) {
  const Bytes raw = read_file(path);
  return {raw.begin(), raw.end()};
}

json read_json(const std::string& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError(path, "not valid JSON");
  return j;
}

void emit_manifest(const Context& ctx, RunManifest m, const std::string& default_path) {
  m.args = ctx.args;
  m.started_at = ctx.started_at;
  const std::string path = ctx.manifest_path.empty() ? default_path : ctx.manifest_path;
  write_text(path, to_json(m).dump(2) + "\n");
}

std::string ledger_range(const std::string& path, std::uint64_t from, std::uint64_t to) {
  return "ledger:" + path + "#seq=" + std::to_string(from) + ".." + std::to_string(to);
}

gateway::Config load_config(const Context& ctx) {
  return ctx.config_path.empty() ? gateway::Config{} : gateway::Config::load(ctx.config_path);
}

/// Local ledger access: --ledger/--registry fall back to the config file.
struct LocalStore {
  std::string ledger_path;
  std::string registry_path;
  std::string principal;

  void add_options(CLI::App* app, bool with_principal) {
    app->add_option("--ledger", ledger_path, "Ledger log file");
    app->add_option("--registry", registry_path, "Principal registry file");
    if (with_principal) app->add_option("--principal", principal, "Principal id used as author");
  }

  void resolve(const gateway::Config& cfg) {
    if (ledger_path.empty()) ledger_path = cfg.ledger_path;
    if (registry_path.empty()) registry_path = cfg.registry_path;
  }

  PrincipalRegistry registry() const { return PrincipalRegistry::load(registry_path); }

  std::unique_ptr<ledger::Ledger> open(const PrincipalRegistry& reg) const {
    return std::make_unique<ledger::Ledger>(ledger_path, reg.keyring());
  }

  const Principal& author(const PrincipalRegistry& reg) const {
    if (principal.empty()) throw ValidationError("principal", "--principal is required");
    const Principal* p = reg.by_id(principal);
    if (p == nullptr) fail(ErrorKind::auth, "unknown principal '" + principal + "'");
    return *p;
  }
};

/// Remote gateway access: --gateway host:port (or the config listen address)
/// and --token (or RAILPDM_TOKEN).
struct Remote {
  std::string endpoint;
  std::string token;

  void add_options(CLI::App* app) {
    app->add_option("--gateway", endpoint, "Gateway address host:port");
    app->add_option("--token", token, "Bearer token (default: $RAILPDM_TOKEN)");
  }

  gateway::Client client(const gateway::Config& cfg) const {
    std::string host = cfg.host;
    int port = cfg.port;
    if (!endpoint.empty()) std::tie(host, port) = gateway::parse_endpoint(endpoint);
    std::string tok = token;
    if (tok.empty()) {
      if (const char* env = std::getenv("RAILPDM_TOKEN")) tok = env;
    }
    if (tok.empty()) throw ValidationError("token", "--token or RAILPDM_TOKEN is required");
    return gateway::Client(host, port, tok);
  }
};

std::vector<dsp::SpectralFrame> load_frames(const std::string& path) {
  return dsp::frames_from_jsonl(read_text(path));
}

std::string vehicle_of(const std::string& sensor_id) {
  const auto slash = sensor_id.find('/');
  return slash == std::string::npos ? sensor_id : sensor_id.substr(0, slash);
}

// simulate ------------------------------------------------------------------

simkit::FaultSpec parse_fault(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.size() < 2) throw ValidationError("fault", "expected kind:severity[:param], got '" + text + "'");
  simkit::FaultSpec f;
  try {
    f.kind = simkit::fault_kind_from_string(parts[0]);
    f.severity = std::stod(parts[1]);
    if (parts.size() > 2) {
      const double param = std::stod(parts[2]);
      if (f.kind == simkit::FaultKind::flat_spot) f.wheel_circumference = param;
      if (f.kind == simkit::FaultKind::rail_bump) f.position = param;
    }
  } catch (const std::logic_error&) {
    throw ValidationError("fault", "cannot parse '" + text + "'");
  }
  return f;
}

json fault_json(const simkit::FaultSpec& f) {
  json j = {{"kind", simkit::to_string(f.kind)}, {"severity", f.severity}};
  if (f.wheel_circumference) j["wheel_circumference"] = *f.wheel_circumference;
  if (f.position) j["position"] = *f.position;
  return j;
}

struct SimulateRideArgs {
  simkit::RideParams params;
  std::string vehicle = "V1";
  std::vector<std::string> faults;
  std::string out = "ride.rsraw";
  std::string truth;
};

void simulate_ride_cmd(const Context& ctx, SimulateRideArgs& a) {
  auto& p = a.params;
  p.sensor_id = a.vehicle + "/axle1";
  for (const auto& f : a.faults) p.faults.push_back(parse_fault(f));
  const auto segments = simkit::simulate_ride(p);
  const auto manifest = simkit::export_raw_archive(segments, a.out);

  json segs = json::array();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    segs.push_back({{"index", i},
                    {"sensor_id", s.sensor_id},
                    {"start_timestamp", s.start_timestamp},
                    {"end_timestamp", s.start_timestamp + static_cast<std::int64_t>(std::llround(
                                                              s.duration() * 1e6))}});
  }
  json faults = json::array();
  for (const auto& f : p.faults) faults.push_back(fault_json(f));
  const json truth = {{"kind", "ride"},
                      {"vehicle_id", a.vehicle},
                      {"sensor_id", p.sensor_id},
                      {"route_length", p.route_length},
                      {"speed", p.speed},
                      {"sample_rate", p.sample_rate},
                      {"segment_duration", p.segment_duration},
                      {"seed", p.seed},
                      {"start_timestamp", p.start_timestamp},
                      {"faults", faults},
                      {"segments", segs},
                      {"archive_digest", manifest.digest}};
  const std::string truth_path = a.truth.empty() ? a.out + ".truth.json" : a.truth;
  write_text(truth_path, truth.dump(2) + "\n");
  emit_manifest(ctx, {"simulate ride", {}, p.seed, 0, {a.out, truth_path}}, a.out + ".manifest.json");
  std::cout << json{{"archive", a.out}, {"segments", manifest.segment_count}, {"digest", manifest.digest}}.dump()
            << "\n";
}

struct SimulatePassArgs {
  simkit::TrackPassParams params;
  std::string direction = "a_to_b";
  std::string fault;
  std::optional<double> snr_db;
  std::string out = "pass.rsraw";
  std::string truth;
};

void simulate_pass_cmd(const Context& ctx, SimulatePassArgs& a) {
  auto& p = a.params;
  p.direction = simkit::direction_from_string(a.direction);
  if (!a.fault.empty()) p.fault = parse_fault(a.fault);
  if (a.snr_db) p.noise_level = simkit::noise_level_for_snr_db(*a.snr_db);
  const auto ev = simkit::simulate_track_pass(p);
  const auto manifest = simkit::export_raw_archive({ev.subunit_a_waveform, ev.subunit_b_waveform}, a.out);
  const json truth = {{"kind", "pass"},
                      {"pass_id", ev.pass_id},
                      {"true_direction", simkit::to_string(ev.true_direction)},
                      {"true_speed", ev.true_speed},
                      {"subunit_spacing", ev.subunit_spacing},
                      {"temperature", ev.temperature},
                      {"timestamp", ev.timestamp},
                      {"noise_level", p.noise_level},
                      {"fault", fault_json(p.fault)},
                      {"seed", p.seed},
                      {"archive_digest", manifest.digest}};
  const std::string truth_path = a.truth.empty() ? a.out + ".truth.json" : a.truth;
  write_text(truth_path, truth.dump(2) + "\n");
  emit_manifest(ctx, {"simulate pass", {}, p.seed, 0, {a.out, truth_path}}, a.out + ".manifest.json");
  std::cout << json{{"archive", a.out}, {"pass_id", ev.pass_id}, {"digest", manifest.digest}}.dump() << "\n";
}

// compress ------------------------------------------------------------------

struct CompressArgs {
  std::string in;
  std::string out;
  std::size_t window_len = dsp::kDefaultWindowLen;
  std::size_t hop = dsp::kDefaultHop;
  std::string window = "hann";
};

void compress_cmd(const Context& ctx, CompressArgs& a) {
  const auto segments = simkit::import_raw_archive(a.in);
  const auto window = dsp::window_from_string(a.window);
  std::vector<dsp::SpectralFrame> frames;
  for (const auto& seg : segments) {
    auto part = dsp::compress(seg, a.window_len, a.hop, window);
    frames.insert(frames.end(), part.begin(), part.end());
  }
  if (a.out.empty()) a.out = a.in + ".frames.jsonl";
  write_text(a.out, dsp::to_jsonl(frames));
  emit_manifest(ctx, {"compress", {}, std::nullopt, 0, {a.out}}, a.out + ".manifest.json");
  std::cout << json{{"frames", frames.size()}, {"out", a.out}}.dump() << "\n";
}

// ingest --------------------------------------------------------------------

struct IngestArgs {
  std::vector<std::string> in;
  bool offline = false;
  LocalStore local;
  Remote remote;
  std::size_t batch = 64;
  std::size_t parallel = 1;
  bool packed = false;
};

/// Runs `work(batch_index)` over `n` batches on up to `parallel` threads.
void fan_out(std::size_t n, std::size_t parallel, const std::function<void(std::size_t)>& work) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        work(i);
      } catch (...) {
        std::lock_guard g(err_mu);
        if (!first_error) first_error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < std::min(parallel, n); ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int ingest_cmd(const Context& ctx, IngestArgs& a) {
  std::vector<dsp::SpectralFrame> frames;
  for (const auto& path : a.in) {
    auto part = load_frames(path);
    frames.insert(frames.end(), part.begin(), part.end());
  }
  if (a.batch == 0) throw ValidationError("batch", "must be positive");
  if (a.parallel == 0) throw ValidationError("parallel", "must be positive");
  const std::size_t n_batches = (frames.size() + a.batch - 1) / a.batch;
  const auto cfg = load_config(ctx);

  std::mutex mu;
  gateway::UploadResult total;
  auto merge = [&](std::size_t b, const gateway::UploadResult& r) {
    std::lock_guard g(mu);
    total.accepted += r.accepted;
    for (const auto& [idx, reason] : r.rejected) total.rejected.emplace_back(b * a.batch + idx, reason);
  };
  auto slice = [&](std::size_t b) {
    const auto first = frames.begin() + static_cast<std::ptrdiff_t>(b * a.batch);
    const auto last = frames.begin() + static_cast<std::ptrdiff_t>(std::min(frames.size(), (b + 1) * a.batch));
    return std::vector<dsp::SpectralFrame>(first, last);
  };

  RunManifest m{"ingest", {}, std::nullopt, 0, {}};
  if (a.offline) {
    a.local.resolve(cfg);
    const auto reg = a.local.registry();
    const Principal& who = a.local.author(reg);
    if (!is_allowed(gateway::Endpoint::post_frames, who.role)) {
      fail(ErrorKind::permission, "principal '" + who.id + "' may not upload frames");
    }
    auto store = a.local.open(reg);
    const auto before = store->size();
    fan_out(n_batches, a.parallel, [&](std::size_t b) {
      gateway::UploadResult r;
      const auto batch = slice(b);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (auto reason = dsp::check_frame(batch[i])) {
          r.rejected.emplace_back(i, *reason);
          continue;
        }
        store->append("frames/" + batch[i].sensor_id, as_bytes(dsp::to_json(batch[i]).dump()), who.id,
                      who.mac_key);
        ++r.accepted;
      }
      merge(b, r);
    });
    m.outputs.push_back(ledger_range(a.local.ledger_path, before, store->size()));
    emit_manifest(ctx, m, a.local.ledger_path + ".ingest.manifest.json");
  } else {
    const auto client = a.remote.client(cfg);
    fan_out(n_batches, a.parallel, [&](std::size_t b) { merge(b, client.upload_frames(slice(b), a.packed)); });
    m.outputs.push_back("gateway:frames+" + std::to_string(total.accepted));
    emit_manifest(ctx, m, a.in.front() + ".ingest.manifest.json");
  }

  std::sort(total.rejected.begin(), total.rejected.end());
  json rejected = json::array();
  for (const auto& [idx, reason] : total.rejected) rejected.push_back({{"index", idx}, {"reason", reason}});
  std::cout << json{{"accepted", total.accepted}, {"rejected", rejected}}.dump() << "\n";
  if (!total.rejected.empty()) {
    throw ValidationError(total.rejected.front().second,
                          std::to_string(total.rejected.size()) + " frame(s) rejected");
  }
  return kExitOk;
}

// label ---------------------------------------------------------------------

struct LabelImportArgs {
  std::string in;
  bool offline = false;
  LocalStore local;
  Remote remote;
  std::optional<std::int64_t> tolerance_us;
};

void label_import_cmd(const Context& ctx, LabelImportArgs& a) {
  const json doc = read_json(a.in);
  const json events = doc.value("events", json::array());
  const json maintenance = doc.value("maintenance", json::array());
  const auto cfg = load_config(ctx);
  json event_ids = json::array();
  json record_ids = json::array();
  std::size_t linked_frames = 0;
  RunManifest m{"label import", {}, std::nullopt, 0, {}};

  if (a.offline) {
    a.local.resolve(cfg);
    const auto reg = a.local.registry();
    const Principal& who = a.local.author(reg);
    auto store = a.local.open(reg);
    const auto before = store->size();
    const std::int64_t tol = a.tolerance_us.value_or(cfg.link_tolerance_us);
    std::map<std::string, std::vector<labeling::FrameSpan>> catalogs;
    for (const auto& e : events) {
      auto label = labeling::create_event_label(labeling::event_label_from_json(e), who, *store);
      auto [it, fresh] = catalogs.try_emplace(label.vehicle_id);
      if (fresh) it->second = labeling::frame_catalog(*store, label.vehicle_id);
      const auto link = labeling::link_label_to_frames(label, *store, tol, who, it->second);
      linked_frames += link.frame_keys.size();
      event_ids.push_back(label.label_id);
    }
    for (const auto& r : maintenance) {
      record_ids.push_back(
          labeling::create_maintenance_record(labeling::maintenance_from_json(r), who, *store).record_id);
    }
    m.outputs.push_back(ledger_range(a.local.ledger_path, before, store->size()));
  } else {
    const auto client = a.remote.client(cfg);
    for (const auto& e : events) {
      auto r = client.post("/api/labels/events", e.dump());
      if (r.status != 200) gateway::raise_for_status(r);
      const json body = r.json();
      event_ids.push_back(body.at("label").at("label_id"));
      linked_frames += body.at("link").at("frame_keys").size();
    }
    for (const auto& rec : maintenance) {
      auto r = client.post("/api/labels/maintenance", rec.dump());
      if (r.status != 200) gateway::raise_for_status(r);
      record_ids.push_back(r.json().at("record_id"));
    }
    m.outputs.push_back("gateway:labels+" + std::to_string(event_ids.size() + record_ids.size()));
  }
  emit_manifest(ctx, m, a.in + ".import.manifest.json");
  std::cout << json{{"events", event_ids}, {"maintenance", record_ids}, {"linked_frames", linked_frames}}.dump()
            << "\n";
}

struct LabelTruthArgs {
  std::vector<std::string> truth;
  std::string out = "labels.json";
  double bump_window = 0.25;  // s either side of a rail bump
};

/// Drafts driver event forms from simulator ground truth: one event per ride
/// (flat_spot_suspected or normal) plus a track_bump event per rail bump.
void label_from_truth_cmd(const Context& ctx, LabelTruthArgs& a) {
  json events = json::array();
  for (const auto& path : a.truth) {
    const json t = read_json(path);
    if (t.value("kind", "") != "ride") throw ValidationError(path, "not a ride ground-truth file");
    const auto& segs = t.at("segments");
    if (segs.empty()) continue;
    const std::int64_t start = segs.front().at("start_timestamp");
    const std::int64_t end = segs.back().at("end_timestamp").get<std::int64_t>() - 1;
    const std::string vehicle = t.at("vehicle_id");
    bool flat = false;
    for (const auto& f : t.at("faults")) {
      if (f.at("kind") == "flat_spot" && f.at("severity").get<double>() > 0.0) flat = true;
    }
    events.push_back({{"vehicle_id", vehicle},
                      {"event_kind", flat ? "flat_spot_suspected" : "normal"},
                      {"memo_text", flat ? "rhythmic knocking from the wheels" : "uneventful run"},
                      {"time_start", start},
                      {"time_end", end}});
    const double speed = t.at("speed");
    for (const auto& f : t.at("faults")) {
      if (f.at("kind") != "rail_bump" || f.at("severity").get<double>() <= 0.0) continue;
      const auto at = start + static_cast<std::int64_t>(std::llround(f.at("position").get<double>() / speed * 1e6));
      const auto half = static_cast<std::int64_t>(std::llround(a.bump_window * 1e6));
      events.push_back({{"vehicle_id", vehicle},
                        {"event_kind", "track_bump"},
                        {"memo_text", "jolt over the rail"},
                        {"time_start", at - half},
                        {"time_end", at + half}});
    }
  }
  write_text(a.out, json{{"events", events}, {"maintenance", json::array()}}.dump(2) + "\n");
  emit_manifest(ctx, {"label from-truth", {}, std::nullopt, 0, {a.out}}, a.out + ".manifest.json");
  std::cout << json{{"events", events.size()}, {"out", a.out}}.dump() << "\n";
}

// analyze -------------------------------------------------------------------

struct BaselineArgs {
  std::vector<std::string> frames;
  std::string out = "baseline.json";
};

void analyze_baseline_cmd(const Context& ctx, BaselineArgs& a) {
  std::vector<dsp::SpectralFrame> frames;
  for (const auto& p : a.frames) {
    auto part = load_frames(p);
    frames.insert(frames.end(), part.begin(), part.end());
  }
  const auto model = analysis::fit_baseline(frames);
  const json j = analysis::to_json(model);
  write_text(a.out, j.dump(2) + "\n");
  emit_manifest(ctx, {"analyze baseline", {}, std::nullopt, 0, {a.out}}, a.out + ".manifest.json");
  std::cout << json{{"out", a.out}, {"n_frames", model.n_frames}, {"fingerprint", j.at("fingerprint")}}.dump()
            << "\n";
}

struct ScoreArgs {
  std::string frames;
  std::string model;
  double threshold = analysis::kDefaultAlarmThreshold;
};

void analyze_score_cmd(ScoreArgs& a) {
  const auto model = analysis::baseline_from_json(read_json(a.model));
  json out = json::array();
  for (const auto& f : load_frames(a.frames)) {
    const double s = analysis::anomaly_score(f, model);
    out.push_back({{"sensor_id", f.sensor_id},
                   {"start_timestamp", f.start_timestamp},
                   {"frame_index", f.frame_index},
                   {"score", s},
                   {"alarm", analysis::is_alarm(s, a.threshold)}});
  }
  std::cout << out.dump() << "\n";
}

struct DirectionArgs {
  std::string in;
  std::optional<double> spacing;
  std::string truth;
};

void analyze_direction_cmd(DirectionArgs& a) {
  const auto segs = simkit::import_raw_archive(a.in);
  if (segs.size() != 2) throw ValidationError("in", "a pass archive holds exactly two waveforms (A, B)");
  simkit::TrackPassEvent ev;
  ev.subunit_a_waveform = segs[0];
  ev.subunit_b_waveform = segs[1];
  if (a.spacing) {
    ev.subunit_spacing = *a.spacing;
  } else if (!a.truth.empty()) {
    ev.subunit_spacing = read_json(a.truth).at("subunit_spacing").get<double>();
  } else {
    throw ValidationError("spacing", "--spacing or --truth is required");
  }
  const auto est = analysis::detect_direction(ev);
  std::cout << json{{"direction", simkit::to_string(est.direction)},
                    {"delta_t", est.delta_t},
                    {"speed_estimate", est.speed_estimate}}
                   .dump()
            << "\n";
}

struct PrePostArgs {
  std::string pre;
  std::string post;
  std::string vehicle;
  LocalStore local;
};

void analyze_prepost_cmd(const Context& ctx, PrePostArgs& a) {
  if (!a.vehicle.empty()) {
    // Latest workshop visit with frames on both sides.
    a.local.resolve(load_config(ctx));
    const auto reg = a.local.registry();
    const auto store = a.local.open(reg);
    const auto visits = gateway::maintenance_comparisons(*store, a.vehicle);
    if (visits.empty()) {
      fail(ErrorKind::insufficient_data, "no completed entry/exit pair with frames on both sides for " + a.vehicle);
    }
    const json out = gateway::to_json(visits.back());
    std::cout << out.dump() << "\n";
    return;
  }
  if (a.pre.empty() || a.post.empty()) {
    throw ValidationError("pre", "--pre and --post frame files (or --vehicle) are required");
  }
  std::cout << analysis::to_json(analysis::compare_pre_post(load_frames(a.pre), load_frames(a.post))).dump() << "\n";
}

// train / predict -------------------------------------------------------------

analysis::FeatureVector stored_features(const ledger::Ledger& store, const ledger::FrameRef& ref) {
  const auto rec = store.get_version(ref.key, ref.version);
  if (!rec) fail(ErrorKind::reference, "frame " + ref.key + " v" + std::to_string(ref.version) + " missing");
  return analysis::extract_features(dsp::frame_from_json(json::parse(rec->payload.begin(), rec->payload.end())),
                                    ref);
}

struct TrainArgs {
  LocalStore local;
  std::string out = "model.json";
  std::vector<std::string> classes;
  std::vector<std::string> vehicles;  // restrict training to these subjects
};

void train_cmd(const Context& ctx, TrainArgs& a) {
  a.local.resolve(load_config(ctx));
  const auto reg = a.local.registry();
  const auto store = a.local.open(reg);
  const std::set<std::string> only(a.vehicles.begin(), a.vehicles.end());

  std::map<std::string, labeling::EventLabel> labels;
  for (const auto& key : store->keys("labels/events/")) {
    const std::string vehicle = key.substr(std::string("labels/events/").size());
    if (!only.empty() && !only.contains(vehicle)) continue;
    for (auto& l : labeling::event_labels(*store, vehicle)) labels.emplace(l.label_id, l);
  }
  std::vector<analysis::LabeledSample> samples;
  for (const auto& key : store->keys("labeled/")) {
    auto it = labels.find(key.substr(std::string("labeled/").size()));
    if (it == labels.end()) continue;
    const auto rec = store->get_latest(key);
    const auto link = labeling::linked_window_from_json(json::parse(rec->payload.begin(), rec->payload.end()));
    for (const auto& ref : link.frame_keys) {
      samples.push_back({stored_features(*store, ref), labeling::to_string(it->second.event_kind)});
    }
  }
  const auto model = analysis::train_classifier(samples, a.classes);
  const json j = analysis::to_json(model);
  write_text(a.out, j.dump(2) + "\n");
  emit_manifest(ctx, {"train", {}, std::nullopt, 0, {a.out}}, a.out + ".manifest.json");
  std::cout << json{{"out", a.out},
                    {"samples", samples.size()},
                    {"classes", model.classes},
                    {"fingerprint", j.at("fingerprint")}}
                   .dump()
            << "\n";
}

struct PredictArgs {
  LocalStore local;
  std::string model;
  std::vector<std::string> subjects;
  bool dry_run = false;
};

void predict_cmd(const Context& ctx, PredictArgs& a) {
  a.local.resolve(load_config(ctx));
  const auto model = analysis::classifier_from_json(read_json(a.model));
  const std::string fp = analysis::fingerprint(model);
  const auto reg = a.local.registry();
  const auto store = a.local.open(reg);
  const Principal* who = a.dry_run ? nullptr : &a.local.author(reg);

  std::vector<std::string> subjects = a.subjects;
  if (subjects.empty()) {
    std::set<std::string> all;
    for (const auto& key : store->keys("frames/")) all.insert(vehicle_of(key.substr(7)));
    subjects.assign(all.begin(), all.end());
  }
  const auto before = store->size();
  json out = json::array();
  for (const auto& subject : subjects) {
    std::vector<analysis::FeatureVector> feats;
    for (const auto& span : labeling::frame_catalog(*store, subject)) {
      feats.push_back(stored_features(*store, span.ref));
    }
    const auto agg = analysis::aggregate_predictions(model, feats);
    if (!agg) continue;
    if (a.dry_run) {
      out.push_back({{"subject", subject},
                     {"predicted_issue", agg->first.predicted_issue},
                     {"confidence", agg->first.confidence},
                     {"evidence_count", agg->second.size()}});
    } else {
      out.push_back(analysis::to_json(
          analysis::publish_recommendation(agg->first, agg->second, subject, fp, *store, *who)));
    }
  }
  if (!a.dry_run) {
    emit_manifest(ctx, {"predict", {}, std::nullopt, 0, {ledger_range(a.local.ledger_path, before, store->size())}},
                  a.local.ledger_path + ".predict.manifest.json");
  }
  std::cout << out.dump() << "\n";
}

// verify / sync ---------------------------------------------------------------

int verify_cmd(const Context& ctx, LocalStore& local) {
  local.resolve(load_config(ctx));
  const auto reg = local.registry();
  if (!std::filesystem::exists(local.ledger_path)) fail(ErrorKind::io, "no ledger at " + local.ledger_path);
  const auto v = ledger::verify_log_file(local.ledger_path, reg.keyring());
  if (v.ok()) {
    std::cout << json{{"ok", true}, {"length", v.length}}.dump() << "\n";
    return kExitOk;
  }
  std::cout << json{{"ok", false},
                    {"first_bad_seq", v.corruption->first_bad_seq},
                    {"reason", ledger::to_string(v.corruption->reason)}}
                   .dump()
            << "\n";
  std::cerr << json{{"error", "verification"},
                    {"message", "chain corrupt at seq " + std::to_string(v.corruption->first_bad_seq)},
                    {"first_bad_seq", v.corruption->first_bad_seq}}
                   .dump()
            << "\n";
  return kExitFailure;
}

struct SyncArgs {
  LocalStore local;
  Remote remote;
};

int sync_cmd(const Context& ctx, SyncArgs& a) {
  const auto cfg = load_config(ctx);
  a.local.resolve(cfg);
  const auto reg = a.local.registry();
  auto store = a.local.open(reg);
  const auto client = a.remote.client(cfg);
  const auto before = store->size();
  const auto result = store->sync_from_peer(client.chain_head(), client.fetcher());
  emit_manifest(ctx, {"sync", {}, std::nullopt, 0, {ledger_range(a.local.ledger_path, before, store->size())}},
                a.local.ledger_path + ".sync.manifest.json");
  json out = {{"appended", result.appended}, {"length", store->size()}};
  if (result.diverged_at) {
    out["diverged_at"] = *result.diverged_at;
    std::cout << out.dump() << "\n";
    std::cerr << json{{"error", "verification"},
                      {"message", "peer diverges at seq " + std::to_string(*result.diverged_at)}}
                     .dump()
              << "\n";
    return kExitFailure;
  }
  std::cout << out.dump() << "\n";
  return kExitOk;
}

// serve / report ----------------------------------------------------------------

struct ServeArgs {
  std::string listen;
  std::string port_file;
};

void serve_cmd(const Context& ctx, ServeArgs& a) {
  auto cfg = load_config(ctx);
  if (!a.listen.empty()) std::tie(cfg.host, cfg.port) = gateway::parse_endpoint(a.listen);
  gateway::Gateway gw(cfg, PrincipalRegistry::load(cfg.registry_path));

  // Worker threads inherit the mask; the main thread waits for the signal.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  gateway::Server server(gw);
  const int port = server.start(cfg.host, cfg.port);
  if (!a.port_file.empty()) write_text(a.port_file, std::to_string(port) + "\n");
  std::cerr << json{{"listening", cfg.host + ":" + std::to_string(port)}}.dump() << std::endl;
  int sig = 0;
  sigwait(&sigs, &sig);
  server.stop();
}

std::string fmt_time(std::int64_t micros) {
  const std::time_t secs = static_cast<std::time_t>(micros / 1'000'000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%d %H:%M:%S") << "Z";
  return os.str();
}

std::string render_report(const json& r) {
  std::ostringstream os;
  os << std::left;
  os << std::setw(22) << "generated_at" << fmt_time(r.at("generated_at")) << "\n";
  os << std::setw(22) << "frame_count" << r.at("frame_count").get<std::uint64_t>() << "\n";
  os << std::setw(22) << "chain_verified" << (r.at("chain_verified").get<bool>() ? "yes" : "NO") << "\n";
  os << "\nlabels\n";
  for (const auto& [kind, n] : r.at("label_counts").items()) {
    os << "  " << std::setw(22) << kind << n.get<std::uint64_t>() << "\n";
  }
  os << "\nopen recommendations\n";
  os << "  " << std::setw(12) << "SUBJECT" << std::setw(22) << "ISSUE" << std::setw(12) << "CONFIDENCE"
     << std::setw(10) << "EVIDENCE" << "REC_ID\n";
  for (const auto& rec : r.at("open_recommendations")) {
    std::ostringstream conf;
    conf << std::fixed << std::setprecision(3) << rec.at("confidence").get<double>();
    os << "  " << std::setw(12) << rec.at("subject").get<std::string>() << std::setw(22)
       << rec.at("predicted_issue").get<std::string>() << std::setw(12) << conf.str() << std::setw(10)
       << rec.at("evidence").size() << rec.at("rec_id").get<std::string>() << "\n";
  }
  os << "\nanomaly alarms (latest first)\n";
  os << "  " << std::setw(16) << "SENSOR" << std::setw(24) << "FRAME_START" << "SCORE\n";
  for (const auto& al : r.at("anomaly_alarms_last_n")) {
    std::ostringstream score;
    score << std::fixed << std::setprecision(2) << al.at("score").get<double>();
    os << "  " << std::setw(16) << al.at("sensor_id").get<std::string>() << std::setw(24)
       << fmt_time(al.at("start_timestamp")) << score.str() << "\n";
  }
  return os.str();
}

void report_cmd(const Context& ctx, Remote& remote, bool as_json) {
  const json r = remote.client(load_config(ctx)).get_json("/api/report");
  std::cout << (as_json ? r.dump(2) + "\n" : render_report(r));
}

// registry ------------------------------------------------------------------------

struct RegistryInitArgs {
  std::string out = "principals.json";
  std::vector<std::string> principals;  // id:role
  bool force = false;
};

void registry_init_cmd(const Context& ctx, RegistryInitArgs& a) {
  if (!a.force && std::filesystem::exists(a.out)) {
    fail(ErrorKind::io, a.out + " exists (use --force to replace it)");
  }
  std::vector<Principal> ps;
  for (const auto& spec : a.principals) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ValidationError("principal", "expected id:role, got '" + spec + "'");
    Principal p;
    p.id = spec.substr(0, colon);
    try {
      p.role = role_from_string(spec.substr(colon + 1));
    } catch (const Error&) {
      throw ValidationError("principal", "unknown role in '" + spec + "'");
    }
    p.token = to_hex(random_bytes(16));
    p.mac_key = random_bytes(32);
    ps.push_back(std::move(p));
  }
  PrincipalRegistry(std::move(ps)).save(a.out);
  emit_manifest(ctx, {"registry init", {}, std::nullopt, 0, {a.out}}, a.out + ".manifest.json");
  std::cout << json{{"out", a.out}, {"principals", a.principals.size()}}.dump() << "\n";
}

void print_error(const std::string& kind, const std::string& message, const std::string& field = {}) {
  json j = {{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  Context ctx;
  for (int i = 1; i < argc; ++i) ctx.args.emplace_back(argv[i]);

  CLI::App app{"Rail vehicle predictive-maintenance pipeline", "railpdm"};
  app.require_subcommand(1);
  app.add_option("--config", ctx.config_path, "Gateway/pipeline config file");
  app.add_option("--manifest", ctx.manifest_path, "Where to write the run manifest");

  std::function<int()> action;

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate synthetic sensor data");
  simulate->require_subcommand(1);
  SimulateRideArgs ride;
  ride.params.route_length = 500.0;
  ride.params.speed = 25.0;
  auto* sim_ride = simulate->add_subcommand("ride", "Vehicle-mounted sensor ride");
  sim_ride->add_option("--route-length", ride.params.route_length, "Route length in m");
  sim_ride->add_option("--speed", ride.params.speed, "Speed in m/s");
  sim_ride->add_option("--sample-rate", ride.params.sample_rate, "Samples per second");
  sim_ride->add_option("--segment-duration", ride.params.segment_duration, "Segment length in s");
  sim_ride->add_option("--fault", ride.faults,
                       "flat_spot:<severity>:<circumference_m> or rail_bump:<severity>:<position_m>");
  sim_ride->add_option("--seed", ride.params.seed, "RNG seed");
  sim_ride->add_option("--vehicle", ride.vehicle, "Vehicle id (sensor is <vehicle>/axle1)");
  sim_ride->add_option("--start", ride.params.start_timestamp, "Start timestamp (us since epoch)");
  sim_ride->add_option("--out", ride.out, "Raw archive path");
  sim_ride->add_option("--truth", ride.truth, "Ground-truth JSON path (default <out>.truth.json)");
  sim_ride->callback([&] { action = [&] { simulate_ride_cmd(ctx, ride); return kExitOk; }; });

  SimulatePassArgs pass;
  pass.params.speed = 20.0;
  pass.params.subunit_spacing = 3.0;
  auto* sim_pass = simulate->add_subcommand("pass", "Track-embedded sensor pass");
  sim_pass->add_option("--speed", pass.params.speed, "Train speed in m/s");
  sim_pass->add_option("--spacing", pass.params.subunit_spacing, "Subunit spacing in m");
  sim_pass->add_option("--direction", pass.direction, "a_to_b or b_to_a");
  sim_pass->add_option("--fault", pass.fault, "Fault on the passing train");
  sim_pass->add_option("--noise-level", pass.params.noise_level, "White noise std");
  sim_pass->add_option("--snr-db", pass.snr_db, "Noise level from SNR in dB");
  sim_pass->add_option("--sample-rate", pass.params.sample_rate, "Samples per second");
  sim_pass->add_option("--seed", pass.params.seed, "RNG seed");
  sim_pass->add_option("--unit", pass.params.unit_id, "Track unit id");
  sim_pass->add_option("--out", pass.out, "Raw archive path");
  sim_pass->add_option("--truth", pass.truth, "Ground-truth JSON path");
  sim_pass->callback([&] { action = [&] { simulate_pass_cmd(ctx, pass); return kExitOk; }; });

  // compress
  CompressArgs comp;
  auto* compress = app.add_subcommand("compress", "Raw archive to spectral frames (JSON lines)");
  compress->add_option("--in", comp.in, "Raw archive")->required();
  compress->add_option("--out", comp.out, "Frames file");
  compress->add_option("--window-len", comp.window_len, "FFT window length");
  compress->add_option("--hop", comp.hop, "Hop in samples");
  compress->add_option("--window", comp.window, "hann or rect");
  compress->callback([&] { action = [&] { compress_cmd(ctx, comp); return kExitOk; }; });

  // ingest
  IngestArgs ing;
  auto* ingest = app.add_subcommand("ingest", "Upload frames to the gateway or a local ledger");
  ingest->add_option("--in", ing.in, "Frames file(s)")->required();
  ingest->add_flag("--offline", ing.offline, "Write straight to the local ledger");
  ing.local.add_options(ingest, true);
  ing.remote.add_options(ingest);
  ingest->add_option("--batch", ing.batch, "Frames per request");
  ingest->add_option("--parallel", ing.parallel, "Concurrent uploads");
  ingest->add_flag("--packed", ing.packed, "Send deflated binary batches instead of JSON");
  ingest->callback([&] { action = [&] { return ingest_cmd(ctx, ing); }; });

  // label
  auto* label = app.add_subcommand("label", "Event and maintenance labels");
  label->require_subcommand(1);
  LabelImportArgs limp;
  auto* label_import = label->add_subcommand("import", "Submit labels from a JSON file");
  label_import->add_option("--in", limp.in, R"(JSON {"events": [...], "maintenance": [...]})")->required();
  label_import->add_flag("--offline", limp.offline, "Write straight to the local ledger");
  limp.local.add_options(label_import, true);
  limp.remote.add_options(label_import);
  label_import->add_option("--tolerance-us", limp.tolerance_us, "Link tolerance (offline)");
  label_import->callback([&] { action = [&] { label_import_cmd(ctx, limp); return kExitOk; }; });

  LabelTruthArgs ltruth;
  auto* label_truth = label->add_subcommand("from-truth", "Draft event labels from ride ground truth");
  label_truth->add_option("--truth", ltruth.truth, "Ride ground-truth file(s)")->required();
  label_truth->add_option("--out", ltruth.out, "Labels JSON");
  label_truth->callback([&] { action = [&] { label_from_truth_cmd(ctx, ltruth); return kExitOk; }; });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Run an analysis and print JSON");
  analyze->require_subcommand(1);
  BaselineArgs base;
  auto* an_base = analyze->add_subcommand("baseline", "Fit a per-sensor baseline");
  an_base->add_option("--frames", base.frames, "Healthy frames file(s)")->required();
  an_base->add_option("--out", base.out, "Baseline model file");
  an_base->callback([&] { action = [&] { analyze_baseline_cmd(ctx, base); return kExitOk; }; });

  ScoreArgs score;
  auto* an_score = analyze->add_subcommand("score", "Anomaly scores against a baseline");
  an_score->add_option("--frames", score.frames, "Frames file")->required();
  an_score->add_option("--model", score.model, "Baseline model file")->required();
  an_score->add_option("--threshold", score.threshold, "Alarm threshold");
  an_score->callback([&] { action = [&] { analyze_score_cmd(score); return kExitOk; }; });

  DirectionArgs dir;
  auto* an_dir = analyze->add_subcommand("direction", "Direction of travel from a pass archive");
  an_dir->add_option("--in", dir.in, "Pass archive")->required();
  an_dir->add_option("--spacing", dir.spacing, "Subunit spacing in m");
  an_dir->add_option("--truth", dir.truth, "Pass ground truth (for the spacing)");
  an_dir->callback([&] { action = [&] { analyze_direction_cmd(dir); return kExitOk; }; });

  PrePostArgs prepost;
  auto* an_pp = analyze->add_subcommand("prepost", "Compare spectra before and after maintenance");
  an_pp->add_option("--pre", prepost.pre, "Frames before maintenance");
  an_pp->add_option("--post", prepost.post, "Frames after maintenance");
  an_pp->add_option("--vehicle", prepost.vehicle, "Use the vehicle's last workshop visit in the ledger");
  prepost.local.add_options(an_pp, false);
  an_pp->callback([&] { action = [&] { analyze_prepost_cmd(ctx, prepost); return kExitOk; }; });

  // train / predict
  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the classifier on labeled ledger frames");
  tr.local.add_options(train, false);
  train->add_option("--out", tr.out, "Model file");
  train->add_option("--classes", tr.classes, "Classes that must be present");
  train->add_option("--vehicle", tr.vehicles, "Train on these vehicles only");
  train->callback([&] { action = [&] { train_cmd(ctx, tr); return kExitOk; }; });

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Classify stored frames and publish recommendations");
  pr.local.add_options(predict, true);
  predict->add_option("--model", pr.model, "Model file")->required();
  predict->add_option("--subject", pr.subjects, "Vehicle(s); default every vehicle with frames");
  predict->add_flag("--dry-run", pr.dry_run, "Print, do not publish");
  predict->callback([&] { action = [&] { predict_cmd(ctx, pr); return kExitOk; }; });

  // verify / sync
  LocalStore vl;
  auto* verify = app.add_subcommand("verify-ledger", "Verify the hash chain");
  vl.add_options(verify, false);
  verify->callback([&] { action = [&] { return verify_cmd(ctx, vl); }; });

  SyncArgs sy;
  auto* sync = app.add_subcommand("sync", "Pull and verify the peer's chain suffix");
  sy.local.add_options(sync, false);
  sy.remote.add_options(sync);
  sync->callback([&] { action = [&] { return sync_cmd(ctx, sy); }; });

  // serve / report / registry
  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Run the gateway");
  serve->add_option("--listen", sv.listen, "Override the listen address");
  serve->add_option("--port-file", sv.port_file, "Write the bound port here");
  serve->callback([&] { action = [&] { serve_cmd(ctx, sv); return kExitOk; }; });

  Remote rep;
  bool rep_json = false;
  auto* report = app.add_subcommand("report", "Fetch the health report");
  rep.add_options(report);
  report->add_flag("--json", rep_json, "Print the raw JSON document");
  report->callback([&] { action = [&] { report_cmd(ctx, rep, rep_json); return kExitOk; }; });

  auto* registry = app.add_subcommand("registry", "Principal registry");
  registry->require_subcommand(1);
  RegistryInitArgs rinit;
  auto* reg_init = registry->add_subcommand("init", "Create a registry with fresh tokens and keys");
  reg_init->add_option("--out", rinit.out, "Registry file");
  reg_init->add_option("--principal", rinit.principals, "id:role")->required();
  reg_init->add_flag("--force", rinit.force, "Replace an existing file");
  reg_init->callback([&] { action = [&] { registry_init_cmd(ctx, rinit); return kExitOk; }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const ValidationError& e) {
    print_error("validation", e.what(), e.field());
    return kExitFailure;
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    print_error("validation", e.what());
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("io", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitFailure;
  }
}

}  // namespace railpdm::cli
