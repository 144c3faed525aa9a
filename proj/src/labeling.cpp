#include "railpdm/labeling.hpp"

#include <algorithm>
#include <cmath>

#include "railpdm/errors.hpp"

namespace railpdm::labeling {

using ledger::FrameRef;
using ledger::Ledger;
using nlohmann::json;

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::track_bump: return "track_bump";
    case EventKind::flat_spot_suspected: return "flat_spot_suspected";
    case EventKind::hard_braking: return "hard_braking";
    case EventKind::switch_crossing: return "switch_crossing";
    case EventKind::normal: return "normal";
    case EventKind::other: return "other";
  }
  return "other";
}

EventKind event_kind_from_string(const std::string& s) {
  for (EventKind k : kAllEventKinds) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("event_kind", "unknown event kind '" + s + "'");
}

namespace {

const char* to_string(Phase p) { return p == Phase::entry ? "entry" : "exit"; }

Phase phase_from_string(const std::string& s) {
  if (s == "entry") return Phase::entry;
  if (s == "exit") return Phase::exit;
  throw ValidationError("phase", "must be entry or exit");
}

const char* to_string(Severity s) {
  switch (s) {
    case Severity::minor: return "minor";
    case Severity::major: return "major";
    case Severity::critical: return "critical";
  }
  return "minor";
}

Severity severity_from_string(const std::string& s, const std::string& field) {
  if (s == "minor") return Severity::minor;
  if (s == "major") return Severity::major;
  if (s == "critical") return Severity::critical;
  throw ValidationError(field, "must be minor, major or critical");
}

std::string str_field(const json& j, const char* name, bool required = true) {
  if (!j.contains(name) || j[name].is_null()) {
    if (required) throw ValidationError(name, "missing");
    return {};
  }
  if (!j[name].is_string()) throw ValidationError(name, "must be a string");
  return j[name].get<std::string>();
}

std::int64_t int_field(const json& j, const char* name, bool required = true) {
  if (!j.contains(name) || j[name].is_null()) {
    if (required) throw ValidationError(name, "missing");
    return 0;
  }
  if (!j[name].is_number_integer()) throw ValidationError(name, "must be an integer");
  return j[name].get<std::int64_t>();
}

std::optional<double> opt_number(const json& j, const char* name) {
  if (!j.contains(name) || j[name].is_null()) return std::nullopt;
  if (!j[name].is_number()) throw ValidationError(name, "must be a number");
  return j[name].get<double>();
}

json parse_payload(const ledger::LedgerRecord& rec) {
  return json::parse(rec.payload.begin(), rec.payload.end());
}

Bytes dump_bytes(const json& j) {
  const std::string s = j.dump();
  return {s.begin(), s.end()};
}

}  // namespace

void validate(const EventLabel& l) {
  if (l.vehicle_id.empty()) throw ValidationError("vehicle_id", "must be non-empty");
  if (l.time_start > l.time_end) throw ValidationError("time_end", "must not precede time_start");
  if (l.event_kind == EventKind::other && l.memo_text.empty()) {
    throw ValidationError("memo_text", "required when event_kind is other");
  }
  if (l.gps_lat && !(std::abs(*l.gps_lat) <= 90.0)) throw ValidationError("gps_lat", "out of range");
  if (l.gps_lon && !(std::abs(*l.gps_lon) <= 180.0)) throw ValidationError("gps_lon", "out of range");
}

void validate(const MaintenanceRecord& r) {
  if (r.vehicle_id.empty()) throw ValidationError("vehicle_id", "must be non-empty");
  for (std::size_t i = 0; i < r.defects.size(); ++i) {
    const std::string base = "defects[" + std::to_string(i) + "].";
    if (r.defects[i].component.empty()) throw ValidationError(base + "component", "must be non-empty");
    if (r.defects[i].defect_kind.empty()) throw ValidationError(base + "defect_kind", "must be non-empty");
  }
  if (r.phase == Phase::exit && !r.defects.empty() && r.work_performed.empty()) {
    throw ValidationError("work_performed", "required on exit when defects are listed");
  }
}

json to_json(const EventLabel& l) {
  json j = {{"label_id", l.label_id},     {"author", l.author},
            {"event_kind", to_string(l.event_kind)}, {"memo_text", l.memo_text},
            {"time_start", l.time_start}, {"time_end", l.time_end},
            {"gps_lat", nullptr},         {"gps_lon", nullptr},
            {"vehicle_id", l.vehicle_id}};
  if (l.gps_lat) j["gps_lat"] = *l.gps_lat;
  if (l.gps_lon) j["gps_lon"] = *l.gps_lon;
  return j;
}

json to_json(const MaintenanceRecord& r) {
  json defects = json::array();
  for (const auto& d : r.defects) {
    defects.push_back({{"component", d.component}, {"defect_kind", d.defect_kind},
                       {"severity", to_string(d.severity)}});
  }
  return {{"record_id", r.record_id},
          {"vehicle_id", r.vehicle_id},
          {"phase", to_string(r.phase)},
          {"defects", defects},
          {"work_performed", r.work_performed},
          {"pass_ref", r.pass_ref ? json(*r.pass_ref) : json(nullptr)},
          {"author", r.author},
          {"timestamp", r.timestamp}};
}

json to_json(const LinkedWindow& w) {
  json refs = json::array();
  for (const auto& r : w.frame_keys) refs.push_back(ledger::to_json(r));
  return {{"label_id", w.label_id}, {"frame_keys", refs}, {"link_tolerance", w.link_tolerance}};
}

EventLabel event_label_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("body", "must be a JSON object");
  EventLabel l;
  l.label_id = str_field(j, "label_id", false);
  l.author = str_field(j, "author", false);
  l.event_kind = event_kind_from_string(str_field(j, "event_kind"));
  l.memo_text = str_field(j, "memo_text", false);
  l.time_start = int_field(j, "time_start");
  l.time_end = int_field(j, "time_end");
  l.gps_lat = opt_number(j, "gps_lat");
  l.gps_lon = opt_number(j, "gps_lon");
  l.vehicle_id = str_field(j, "vehicle_id");
  return l;
}

MaintenanceRecord maintenance_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("body", "must be a JSON object");
  MaintenanceRecord r;
  r.record_id = str_field(j, "record_id", false);
  r.vehicle_id = str_field(j, "vehicle_id");
  r.phase = phase_from_string(str_field(j, "phase"));
  if (j.contains("defects") && !j["defects"].is_null()) {
    if (!j["defects"].is_array()) throw ValidationError("defects", "must be an array");
    std::size_t i = 0;
    for (const auto& d : j["defects"]) {
      const std::string base = "defects[" + std::to_string(i++) + "].";
      if (!d.is_object()) throw ValidationError(base.substr(0, base.size() - 1), "must be an object");
      Defect def;
      try {
        def.component = str_field(d, "component");
        def.defect_kind = str_field(d, "defect_kind");
        def.severity = severity_from_string(str_field(d, "severity"), base + "severity");
      } catch (const ValidationError& e) {
        if (e.field().starts_with("defects[")) throw;
        throw ValidationError(base + e.field(), "invalid");
      }
      r.defects.push_back(std::move(def));
    }
  }
  r.work_performed = str_field(j, "work_performed", false);
  std::string pass = str_field(j, "pass_ref", false);
  if (!pass.empty()) r.pass_ref = pass;
  r.author = str_field(j, "author", false);
  r.timestamp = int_field(j, "timestamp", false);
  return r;
}

LinkedWindow linked_window_from_json(const json& j) {
  LinkedWindow w;
  w.label_id = j.at("label_id").get<std::string>();
  for (const auto& r : j.at("frame_keys")) w.frame_keys.push_back(ledger::ref_from_json(r));
  w.link_tolerance = j.at("link_tolerance").get<std::int64_t>();
  return w;
}

std::string events_key(const std::string& vehicle_id) { return "labels/events/" + vehicle_id; }
std::string maintenance_key(const std::string& vehicle_id) {
  return "labels/maintenance/" + vehicle_id;
}
std::string linked_key(const std::string& label_id) { return "labeled/" + label_id; }

EventLabel create_event_label(EventLabel form, const Principal& author, Ledger& store) {
  if (author.role != Role::driver && author.role != Role::mechanic) {
    fail(ErrorKind::permission, "event labels require role driver or mechanic");
  }
  form.author = author.id;
  validate(form);
  EventLabel stored;
  store.append_built(events_key(form.vehicle_id), author.id, author.mac_key,
                     [&](std::uint64_t version) {
                       stored = form;
                       stored.label_id = form.vehicle_id + "-e" + std::to_string(version);
                       return dump_bytes(to_json(stored));
                     });
  return stored;
}

MaintenanceRecord create_maintenance_record(MaintenanceRecord form, const Principal& author,
                                            Ledger& store) {
  if (author.role != Role::mechanic) {
    fail(ErrorKind::permission, "maintenance records require role mechanic");
  }
  form.author = author.id;
  if (form.timestamp == 0) form.timestamp = ledger::now_micros();
  validate(form);
  MaintenanceRecord stored;
  store.append_built(maintenance_key(form.vehicle_id), author.id, author.mac_key,
                     [&](std::uint64_t version) {
                       stored = form;
                       stored.record_id = form.vehicle_id + "-m" + std::to_string(version);
                       return dump_bytes(to_json(stored));
                     });
  return stored;
}

std::vector<EventLabel> event_labels(const Ledger& store, const std::string& vehicle_id) {
  std::vector<EventLabel> out;
  for (const auto& rec : store.history(events_key(vehicle_id))) {
    out.push_back(event_label_from_json(parse_payload(rec)));
  }
  return out;
}

std::vector<MaintenanceRecord> maintenance_records(const Ledger& store,
                                                   const std::string& vehicle_id) {
  std::vector<MaintenanceRecord> out;
  for (const auto& rec : store.history(maintenance_key(vehicle_id))) {
    out.push_back(maintenance_from_json(parse_payload(rec)));
  }
  return out;
}

std::optional<EventLabel> find_event_label(const Ledger& store, const std::string& vehicle_id,
                                           const std::string& label_id) {
  for (auto& l : event_labels(store, vehicle_id)) {
    if (l.label_id == label_id) return l;
  }
  return std::nullopt;
}

std::vector<std::pair<MaintenanceRecord, MaintenanceRecord>> pair_up(const Ledger& store,
                                                                     const std::string& vehicle_id) {
  auto records = maintenance_records(store, vehicle_id);
  // history() is version order; the stable sort keeps it as the tie-break.
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::vector<std::pair<MaintenanceRecord, MaintenanceRecord>> out;
  std::optional<MaintenanceRecord> open_entry;
  for (auto& r : records) {
    if (r.phase == Phase::entry) {
      open_entry = std::move(r);
    } else if (open_entry) {
      out.emplace_back(std::move(*open_entry), std::move(r));
      open_entry.reset();
    }
  }
  return out;
}

bool sensor_belongs_to(const std::string& sensor_id, const std::string& vehicle_id) {
  if (vehicle_id.empty()) return false;
  return sensor_id == vehicle_id ||
         (sensor_id.size() > vehicle_id.size() && sensor_id.starts_with(vehicle_id) &&
          sensor_id[vehicle_id.size()] == '/');
}

std::vector<FrameSpan> frame_catalog(const Ledger& store, const std::string& vehicle_id) {
  std::vector<FrameSpan> out;
  for (const auto& key : store.keys("frames/")) {
    const std::string sensor = key.substr(7);
    if (!sensor_belongs_to(sensor, vehicle_id)) continue;
    for (const auto& rec : store.history(key)) {
      const json j = parse_payload(rec);
      FrameSpan span;
      span.ref = {key, rec.version};
      span.sensor_id = sensor;
      span.start = j.at("start_timestamp").get<std::int64_t>();
      const auto window_len = j.at("window_len").get<std::int64_t>();
      const auto sample_rate = j.at("sample_rate").get<std::int64_t>();
      span.end = span.start + window_len * 1'000'000 / sample_rate;
      out.push_back(std::move(span));
    }
  }
  return out;
}

std::vector<FrameRef> select_frames(const EventLabel& label, std::span<const FrameSpan> catalog,
                                    std::int64_t tolerance) {
  const std::int64_t lo = label.time_start - tolerance;
  const std::int64_t hi = label.time_end + tolerance;
  std::vector<FrameRef> out;
  for (const auto& f : catalog) {
    if (!sensor_belongs_to(f.sensor_id, label.vehicle_id)) continue;
    if (f.start <= hi && lo < f.end) out.push_back(f.ref);
  }
  std::sort(out.begin(), out.end());
  return out;
}

LinkedWindow link_label_to_frames(const EventLabel& label, Ledger& store, std::int64_t tolerance,
                                  const Principal& author) {
  const auto catalog = frame_catalog(store, label.vehicle_id);
  return link_label_to_frames(label, store, tolerance, author, catalog);
}

LinkedWindow link_label_to_frames(const EventLabel& label, Ledger& store, std::int64_t tolerance,
                                  const Principal& author, std::span<const FrameSpan> catalog) {
  if (tolerance < 0) throw ValidationError("link_tolerance", "must be non-negative");
  if (!find_event_label(store, label.vehicle_id, label.label_id)) {
    fail(ErrorKind::reference, "label " + label.label_id + " is not in the ledger");
  }
  LinkedWindow w;
  w.label_id = label.label_id;
  w.link_tolerance = tolerance;
  w.frame_keys = select_frames(label, catalog, tolerance);
  const std::string text = to_json(w).dump();
  store.append(linked_key(label.label_id), as_bytes(text), author.id, author.mac_key);
  return w;
}

}  // namespace railpdm::labeling
