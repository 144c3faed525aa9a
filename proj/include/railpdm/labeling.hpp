#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "railpdm/access.hpp"
#include "railpdm/ledger.hpp"

/// Driver event forms, workshop entry/exit documentation, and linkage of
/// labels to the spectral frames they describe.
namespace railpdm::labeling {

enum class EventKind { track_bump, flat_spot_suspected, hard_braking, switch_crossing, normal, other };

inline constexpr EventKind kAllEventKinds[] = {
    EventKind::track_bump, EventKind::flat_spot_suspected, EventKind::hard_braking,
    EventKind::switch_crossing, EventKind::normal, EventKind::other};

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

inline constexpr std::int64_t kDefaultLinkTolerance = 2'000'000;  // 2 s

struct EventLabel {
  std::string label_id;
  std::string author;
  EventKind event_kind = EventKind::normal;
  std::string memo_text;  // transcript of the driver's voice memo
  std::int64_t time_start = 0;
  std::int64_t time_end = 0;
  std::optional<double> gps_lat;
  std::optional<double> gps_lon;
  std::string vehicle_id;

  bool operator==(const EventLabel&) const = default;
};

enum class Phase { entry, exit };
enum class Severity { minor, major, critical };

struct Defect {
  std::string component;
  std::string defect_kind;
  Severity severity = Severity::minor;

  bool operator==(const Defect&) const = default;
};

struct MaintenanceRecord {
  std::string record_id;
  std::string vehicle_id;
  Phase phase = Phase::entry;
  std::vector<Defect> defects;
  std::string work_performed;
  std::optional<std::string> pass_ref;
  std::string author;
  std::int64_t timestamp = 0;

  bool operator==(const MaintenanceRecord&) const = default;
};

struct LinkedWindow {
  std::string label_id;
  std::vector<ledger::FrameRef> frame_keys;
  std::int64_t link_tolerance = 0;

  bool operator==(const LinkedWindow&) const = default;
};

/// Throws ValidationError naming the first offending field.
void validate(const EventLabel& label);
void validate(const MaintenanceRecord& record);

nlohmann::json to_json(const EventLabel& label);
nlohmann::json to_json(const MaintenanceRecord& record);
nlohmann::json to_json(const LinkedWindow& window);
/// Parse a submitted form; ids and authors in the input are ignored by the
/// create_* operations. Type errors raise ValidationError on the field.
EventLabel event_label_from_json(const nlohmann::json& j);
MaintenanceRecord maintenance_from_json(const nlohmann::json& j);
LinkedWindow linked_window_from_json(const nlohmann::json& j);

std::string events_key(const std::string& vehicle_id);
std::string maintenance_key(const std::string& vehicle_id);
std::string linked_key(const std::string& label_id);

EventLabel create_event_label(EventLabel form, const Principal& author, ledger::Ledger& store);
MaintenanceRecord create_maintenance_record(MaintenanceRecord form, const Principal& author,
                                            ledger::Ledger& store);

std::vector<EventLabel> event_labels(const ledger::Ledger& store, const std::string& vehicle_id);
std::vector<MaintenanceRecord> maintenance_records(const ledger::Ledger& store,
                                                   const std::string& vehicle_id);
std::optional<EventLabel> find_event_label(const ledger::Ledger& store, const std::string& vehicle_id,
                                           const std::string& label_id);

/// Entry/exit pairs for a vehicle: each entry pairs with the nearest
/// subsequent exit that has no other entry in between.
std::vector<std::pair<MaintenanceRecord, MaintenanceRecord>> pair_up(
    const ledger::Ledger& store, const std::string& vehicle_id);

/// A sensor belongs to a vehicle when its id is the vehicle id or starts
/// with "<vehicle_id>/".
bool sensor_belongs_to(const std::string& sensor_id, const std::string& vehicle_id);

/// Time span of one stored frame, [start, end) in microseconds.
struct FrameSpan {
  ledger::FrameRef ref;
  std::string sensor_id;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

/// Every stored frame of the vehicle's sensors, ordered by (key, version).
std::vector<FrameSpan> frame_catalog(const ledger::Ledger& store, const std::string& vehicle_id);

/// Frames whose span intersects [time_start - tolerance, time_end + tolerance].
std::vector<ledger::FrameRef> select_frames(const EventLabel& label,
                                            std::span<const FrameSpan> catalog,
                                            std::int64_t tolerance);

/// Links a stored label to its frames and records the link under
/// `labeled/<label_id>`.
LinkedWindow link_label_to_frames(const EventLabel& label, ledger::Ledger& store,
                                  std::int64_t tolerance, const Principal& author);
LinkedWindow link_label_to_frames(const EventLabel& label, ledger::Ledger& store,
                                  std::int64_t tolerance, const Principal& author,
                                  std::span<const FrameSpan> catalog);

}  // namespace railpdm::labeling
