#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "railpdm/crypto.hpp"

/// Deterministic stand-ins for the vehicle-mounted and track-embedded
/// structure-borne-noise sensors.
namespace railpdm::simkit {

inline constexpr std::uint32_t kDefaultSampleRate = 8192;
inline constexpr double kDefaultSegmentDuration = 1.0;

struct VehicleTelemetry {
  std::int64_t timestamp = 0;  // microseconds since epoch
  double gps_lat = 0.0;
  double gps_lon = 0.0;
  double temperature = 0.0;
  double accel_x = 0.0;
  double accel_y = 0.0;
  double accel_z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  bool operator==(const VehicleTelemetry&) const = default;
};

struct WaveformSegment {
  std::string sensor_id;
  std::int64_t start_timestamp = 0;
  std::uint32_t sample_rate = kDefaultSampleRate;
  Eigen::VectorXf samples;
  VehicleTelemetry telemetry;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  friend bool operator==(const WaveformSegment& a, const WaveformSegment& b) {
    return a.sensor_id == b.sensor_id && a.start_timestamp == b.start_timestamp &&
           a.sample_rate == b.sample_rate && a.telemetry == b.telemetry &&
           a.samples.size() == b.samples.size() && a.samples == b.samples;
  }
};

enum class FaultKind { none, flat_spot, rail_bump };

struct FaultSpec {
  FaultKind kind = FaultKind::none;
  double severity = 0.0;                      // [0, 1], scales amplitude linearly
  std::optional<double> wheel_circumference;  // meters, flat_spot only
  std::optional<double> position;             // meters along route, rail_bump only
};

enum class Direction { a_to_b, b_to_a };

struct TrackPassEvent {
  std::string pass_id;
  WaveformSegment subunit_a_waveform;
  WaveformSegment subunit_b_waveform;
  double subunit_spacing = 0.0;
  Direction true_direction = Direction::a_to_b;
  double true_speed = 0.0;
  double temperature = 0.0;
  std::int64_t timestamp = 0;
};

struct RideParams {
  double route_length = 0.0;  // m
  double speed = 0.0;         // m/s
  std::uint32_t sample_rate = kDefaultSampleRate;
  double segment_duration = kDefaultSegmentDuration;
  std::vector<FaultSpec> faults;
  std::uint64_t seed = 0;

  std::string sensor_id = "V1/axle1";
  std::int64_t start_timestamp = 1'700'000'000'000'000;
  double origin_lat = 51.67;
  double origin_lon = 8.35;
  double bearing_deg = 30.0;
  double temperature = 15.0;
};

struct TrackPassParams {
  double speed = 0.0;
  double subunit_spacing = 0.0;
  Direction direction = Direction::a_to_b;
  FaultSpec fault;
  std::uint32_t sample_rate = kDefaultSampleRate;
  /// Standard deviation of additive white noise. The train excitation has unit
  /// RMS over its active span, so SNR_dB = -20 log10(noise_level).
  double noise_level = 0.0;
  std::uint64_t seed = 0;

  std::string unit_id = "T1";
  std::int64_t timestamp = 1'700'000'000'000'000;
  double temperature = 15.0;
};

std::vector<WaveformSegment> simulate_ride(const RideParams& params);

inline std::vector<WaveformSegment> simulate_ride(double route_length, double speed,
                                                  std::uint32_t sample_rate,
                                                  double segment_duration,
                                                  std::vector<FaultSpec> faults,
                                                  std::uint64_t seed) {
  RideParams p;
  p.route_length = route_length;
  p.speed = speed;
  p.sample_rate = sample_rate;
  p.segment_duration = segment_duration;
  p.faults = std::move(faults);
  p.seed = seed;
  return simulate_ride(p);
}

TrackPassEvent simulate_track_pass(const TrackPassParams& params);

/// Noise level whose white-noise power sits `snr_db` below the unit-RMS
/// train excitation.
inline double noise_level_for_snr_db(double snr_db) {
  return std::pow(10.0, -snr_db / 20.0);
}

/// Great-circle distance in meters (haversine, spherical earth).
double ground_distance(double lat1, double lon1, double lat2, double lon2);

// Raw archive ("RSRAW1"), the weekly hard-drive dump of unprocessed data.

struct ArchiveManifest {
  std::string path;
  std::uint32_t segment_count = 0;
  std::string digest;  // hex SHA-256 of the archive bytes
};

Bytes encode_raw_archive(const std::vector<WaveformSegment>& segments);
std::vector<WaveformSegment> decode_raw_archive(std::span<const std::uint8_t> bytes);

ArchiveManifest export_raw_archive(const std::vector<WaveformSegment>& segments,
                                   const std::string& path);
std::vector<WaveformSegment> import_raw_archive(const std::string& path);

const char* to_string(FaultKind kind);
const char* to_string(Direction d);
FaultKind fault_kind_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);

}  // namespace railpdm::simkit
