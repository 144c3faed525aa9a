#include "railpdm/simkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "railpdm/binary_io.hpp"
#include "railpdm/errors.hpp"

namespace railpdm::simkit {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEarthRadius = 6'371'000.0;

// Impact ringing of a wheel flat: decaying resonance at 0.3 fs.
constexpr double kFlatSpotAmplitude = 12.0;
constexpr double kFlatSpotDecay = 0.012;  // s
constexpr double kFlatSpotResonance = 0.3;

// Rail bump: Hann-windowed burst.
constexpr double kBumpAmplitude = 8.0;
constexpr double kBumpDuration = 0.04;  // s
constexpr double kBumpFrequency = 0.08;

// Track sensor train model.
constexpr std::array<double, 8> kAxleOffsets{0.0, 2.5, 15.0, 17.5, 21.0, 23.5, 36.0, 38.5};
constexpr double kAxleDecay = 0.02;
constexpr double kAxleResonance = 0.12;
constexpr double kRumbleAmplitude = 0.5;
constexpr double kRumbleRamp = 0.05;
constexpr double kPassPreRoll = 0.25;
constexpr double kPassPostRoll = 0.35;

constexpr std::uint64_t kFaultStream = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kTelemetryStream = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kSubunitStream = 0x165667B19E3779F9ULL;

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    fail(ErrorKind::parameter, std::string(name) + " must be positive");
  }
}

void validate_fault(const FaultSpec& f) {
  if (!(f.severity >= 0.0 && f.severity <= 1.0)) {
    fail(ErrorKind::parameter, "fault severity must lie in [0, 1]");
  }
  if (f.kind == FaultKind::flat_spot) {
    if (!f.wheel_circumference) fail(ErrorKind::spec, "flat_spot fault requires wheel_circumference");
    require_positive(*f.wheel_circumference, "wheel_circumference");
  }
  if (f.kind == FaultKind::rail_bump && !f.position) {
    fail(ErrorKind::spec, "rail_bump fault requires position");
  }
}

/// Direct-form-I biquad, RBJ low-pass.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad lowpass(double cutoff_ratio, double q) {
    const double w0 = 2.0 * kPi * cutoff_ratio;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f{};
    f.b0 = (1.0 - c) / 2.0 / a0;
    f.b1 = (1.0 - c) / a0;
    f.b2 = f.b0;
    f.a1 = -2.0 * c / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
  }

  double step(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

/// White Gaussian noise through a 4th-order Butterworth low-pass at fs/8,
/// rescaled to roughly unit RMS.
Eigen::VectorXd shaped_noise(std::size_t n, std::mt19937_64& rng) {
  Biquad s1 = Biquad::lowpass(0.125, 0.54119610);
  Biquad s2 = Biquad::lowpass(0.125, 1.30656296);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr std::size_t warmup = 1024;
  for (std::size_t i = 0; i < warmup; ++i) s2.step(s1.step(gauss(rng)));
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out[static_cast<Eigen::Index>(i)] = 2.0 * s2.step(s1.step(gauss(rng)));
  return out;
}

/// Adds a decaying resonance starting at sample `at`.
void add_ring(Eigen::VectorXd& x, Eigen::Index at, double amplitude, double decay_s,
              double freq_ratio, double fs) {
  const auto len = static_cast<Eigen::Index>(std::ceil(8.0 * decay_s * fs));
  const Eigen::Index end = std::min<Eigen::Index>(x.size(), at + len);
  for (Eigen::Index n = std::max<Eigen::Index>(at, 0); n < end; ++n) {
    const double t = static_cast<double>(n - at) / fs;
    x[n] += amplitude * std::exp(-t / decay_s) * std::cos(2.0 * kPi * freq_ratio * fs * t);
  }
}

void add_burst(Eigen::VectorXd& x, Eigen::Index center, double amplitude, double duration_s,
               double freq_ratio, double fs) {
  const auto half = static_cast<Eigen::Index>(std::round(duration_s * fs / 2.0));
  for (Eigen::Index k = -half; k <= half; ++k) {
    const Eigen::Index n = center + k;
    if (n < 0 || n >= x.size()) continue;
    const double w = 0.5 * (1.0 + std::cos(kPi * static_cast<double>(k) / static_cast<double>(half)));
    x[n] += amplitude * w * std::sin(2.0 * kPi * freq_ratio * static_cast<double>(k));
  }
}

/// Impact train with the given period starting at a seeded phase in [0, period).
void add_flat_spot(Eigen::VectorXd& x, double period_s, double amplitude, double fs,
                   double t_from, double t_to, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, period_s);
  for (double t = t_from + phase(rng); t < t_to; t += period_s) {
    add_ring(x, static_cast<Eigen::Index>(std::llround(t * fs)), amplitude, kFlatSpotDecay,
             kFlatSpotResonance, fs);
  }
}

double wrap_angle(double a) {
  return std::remainder(a, 2.0 * kPi);
}

/// Point at `distance` meters along the great circle leaving the origin at
/// `bearing` radians.
std::pair<double, double> destination(double lat_deg, double lon_deg, double bearing,
                                      double distance) {
  const double phi1 = lat_deg * kPi / 180.0;
  const double lambda1 = lon_deg * kPi / 180.0;
  const double delta = distance / kEarthRadius;
  const double phi2 = std::asin(std::sin(phi1) * std::cos(delta) +
                                std::cos(phi1) * std::sin(delta) * std::cos(bearing));
  const double lambda2 =
      lambda1 + std::atan2(std::sin(bearing) * std::sin(delta) * std::cos(phi1),
                           std::cos(delta) - std::sin(phi1) * std::sin(phi2));
  return {phi2 * 180.0 / kPi, wrap_angle(lambda2) * 180.0 / kPi};
}

Eigen::VectorXf to_float(const Eigen::VectorXd& x) { return x.cast<float>(); }

}  // namespace

double ground_distance(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = lat1 * kPi / 180.0;
  const double p2 = lat2 * kPi / 180.0;
  const double dp = p2 - p1;
  const double dl = (lon2 - lon1) * kPi / 180.0;
  const double h = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(h)));
}

std::vector<WaveformSegment> simulate_ride(const RideParams& p) {
  require_positive(p.route_length, "route_length");
  require_positive(p.speed, "speed");
  require_positive(static_cast<double>(p.sample_rate), "sample_rate");
  require_positive(p.segment_duration, "segment_duration");
  for (const auto& f : p.faults) validate_fault(f);

  const double fs = p.sample_rate;
  const double ride_duration = p.route_length / p.speed;
  const auto seg_samples = static_cast<std::size_t>(std::llround(p.segment_duration * fs));
  if (seg_samples == 0) fail(ErrorKind::parameter, "segment_duration shorter than one sample");
  const auto n_segments = static_cast<std::size_t>(
      std::max(1.0, std::ceil(ride_duration / p.segment_duration - 1e-9)));
  const std::size_t total = seg_samples * n_segments;

  std::mt19937_64 noise_rng(p.seed);
  Eigen::VectorXd signal = shaped_noise(total, noise_rng);

  for (std::size_t i = 0; i < p.faults.size(); ++i) {
    const FaultSpec& f = p.faults[i];
    if (f.kind == FaultKind::none || f.severity == 0.0) continue;
    std::mt19937_64 fault_rng(p.seed ^ (kFaultStream + i));
    if (f.kind == FaultKind::flat_spot) {
      add_flat_spot(signal, *f.wheel_circumference / p.speed, f.severity * kFlatSpotAmplitude,
                    fs, 0.0, static_cast<double>(total) / fs, fault_rng);
    } else {
      const double t = *f.position / p.speed;
      add_burst(signal, static_cast<Eigen::Index>(std::llround(t * fs)),
                f.severity * kBumpAmplitude, kBumpDuration, kBumpFrequency, fs);
    }
  }

  std::mt19937_64 tele_rng(p.seed ^ kTelemetryStream);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const double bearing = p.bearing_deg * kPi / 180.0;
  const auto seg_us = static_cast<std::int64_t>(std::llround(p.segment_duration * 1e6));

  std::vector<WaveformSegment> out;
  out.reserve(n_segments);
  for (std::size_t s = 0; s < n_segments; ++s) {
    WaveformSegment seg;
    seg.sensor_id = p.sensor_id;
    seg.sample_rate = p.sample_rate;
    seg.start_timestamp = p.start_timestamp + static_cast<std::int64_t>(s) * seg_us;
    seg.samples = to_float(signal.segment(static_cast<Eigen::Index>(s * seg_samples),
                                          static_cast<Eigen::Index>(seg_samples)));
    const double travelled = p.speed * p.segment_duration * static_cast<double>(s);
    auto [lat, lon] = destination(p.origin_lat, p.origin_lon, bearing, travelled);
    VehicleTelemetry& t = seg.telemetry;
    t.timestamp = seg.start_timestamp;
    t.gps_lat = lat;
    t.gps_lon = lon;
    t.temperature = p.temperature + 0.05 * jitter(tele_rng);
    t.accel_x = 0.05 * jitter(tele_rng);
    t.accel_y = 0.05 * jitter(tele_rng);
    t.accel_z = 9.80665 + 0.05 * jitter(tele_rng);
    t.roll = 0.002 * jitter(tele_rng);
    t.pitch = 0.002 * jitter(tele_rng);
    t.yaw = wrap_angle(bearing);
    out.push_back(std::move(seg));
  }
  return out;
}

TrackPassEvent simulate_track_pass(const TrackPassParams& p) {
  require_positive(p.speed, "speed");
  require_positive(p.subunit_spacing, "subunit_spacing");
  require_positive(static_cast<double>(p.sample_rate), "sample_rate");
  if (!(p.noise_level >= 0.0)) fail(ErrorKind::parameter, "noise_level must be non-negative");
  validate_fault(p.fault);

  const double fs = p.sample_rate;
  const double lag = p.subunit_spacing / p.speed;
  const double train_span = kAxleOffsets.back() / p.speed;
  const double active = train_span + 8.0 * kAxleDecay;
  const double duration = kPassPreRoll + lag + active + kPassPostRoll;
  const auto n = static_cast<Eigen::Index>(std::ceil(duration * fs));

  const double first_onset = kPassPreRoll;
  const double second_onset = kPassPreRoll + lag;
  const double onset_a = p.direction == Direction::a_to_b ? first_onset : second_onset;
  const double onset_b = p.direction == Direction::a_to_b ? second_onset : first_onset;

  auto excitation = [&](double onset_s, std::uint64_t stream) {
    const Eigen::Index on = static_cast<Eigen::Index>(std::llround(onset_s * fs));
    const auto active_len = static_cast<Eigen::Index>(std::ceil(active * fs));
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);

    // Both subunits hear the same train: one rumble realization, shifted.
    std::mt19937_64 rumble_rng(p.seed ^ kSubunitStream);
    Eigen::VectorXd rumble = shaped_noise(static_cast<std::size_t>(active_len), rumble_rng);
    const double ramp = kRumbleRamp * fs;
    for (Eigen::Index k = 0; k < active_len && on + k < n; ++k) {
      const double kd = static_cast<double>(k);
      const double rem = static_cast<double>(active_len - 1 - k);
      double env = 1.0;
      if (kd < ramp) env = 0.5 * (1.0 - std::cos(kPi * kd / ramp));
      if (rem < ramp) env = std::min(env, 0.5 * (1.0 - std::cos(kPi * rem / ramp)));
      x[on + k] += kRumbleAmplitude * env * rumble[k];
    }
    for (double offset : kAxleOffsets) {
      const auto at = on + static_cast<Eigen::Index>(std::llround(offset / p.speed * fs));
      add_ring(x, at, 1.0, kAxleDecay, kAxleResonance, fs);
      if (p.fault.kind == FaultKind::rail_bump && p.fault.severity > 0.0) {
        add_burst(x, at, p.fault.severity * kBumpAmplitude, kBumpDuration / 2, kBumpFrequency, fs);
      }
    }
    if (p.fault.kind == FaultKind::flat_spot && p.fault.severity > 0.0) {
      std::mt19937_64 fault_rng(p.seed ^ kFaultStream);
      add_flat_spot(x, *p.fault.wheel_circumference / p.speed,
                    p.fault.severity * kFlatSpotAmplitude, fs, static_cast<double>(on) / fs,
                    static_cast<double>(on) / fs + train_span, fault_rng);
    }

    const double rms = std::sqrt(x.segment(on, std::min(active_len, n - on)).squaredNorm() /
                                 static_cast<double>(std::min(active_len, n - on)));
    if (rms > 0.0) x /= rms;

    if (p.noise_level > 0.0) {
      std::mt19937_64 noise_rng(p.seed ^ (kSubunitStream * (stream + 7)));
      std::normal_distribution<double> gauss(0.0, p.noise_level);
      for (Eigen::Index i = 0; i < n; ++i) x[i] += gauss(noise_rng);
    }
    return x;
  };

  TrackPassEvent ev;
  ev.pass_id = p.unit_id + "-" + std::to_string(p.timestamp);
  ev.subunit_spacing = p.subunit_spacing;
  ev.true_direction = p.direction;
  ev.true_speed = p.speed;
  ev.temperature = p.temperature;
  ev.timestamp = p.timestamp;

  auto make_segment = [&](std::string id, Eigen::VectorXd x) {
    WaveformSegment seg;
    seg.sensor_id = std::move(id);
    seg.start_timestamp = p.timestamp;
    seg.sample_rate = p.sample_rate;
    seg.samples = to_float(x);
    seg.telemetry.timestamp = p.timestamp;
    seg.telemetry.temperature = p.temperature;
    seg.telemetry.accel_z = 9.80665;
    return seg;
  };
  ev.subunit_a_waveform = make_segment(p.unit_id + "/A", excitation(onset_a, 1));
  ev.subunit_b_waveform = make_segment(p.unit_id + "/B", excitation(onset_b, 2));
  return ev;
}

// ---------------------------------------------------------------------------
// Raw archive

namespace {
constexpr std::string_view kArchiveMagic = "RSRAW1";
}

Bytes encode_raw_archive(const std::vector<WaveformSegment>& segments) {
  ByteWriter w;
  w.raw(kArchiveMagic);
  w.u32(static_cast<std::uint32_t>(segments.size()));
  for (const auto& s : segments) {
    w.prefixed(s.sensor_id);
    w.u64(static_cast<std::uint64_t>(s.start_timestamp));
    w.u32(s.sample_rate);
    w.u32(static_cast<std::uint32_t>(s.samples.size()));
    for (Eigen::Index i = 0; i < s.samples.size(); ++i) w.f32(s.samples[i]);
    const auto& t = s.telemetry;
    for (double v : {static_cast<double>(t.timestamp), t.gps_lat, t.gps_lon, t.temperature,
                     t.accel_x, t.accel_y, t.accel_z, t.roll, t.pitch, t.yaw}) {
      w.f64(v);
    }
  }
  return std::move(w).take();
}

std::vector<WaveformSegment> decode_raw_archive(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(kArchiveMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kArchiveMagic.begin())) {
    fail(ErrorKind::io, "not a raw archive (bad magic)");
  }
  const std::uint32_t count = r.u32();
  std::vector<WaveformSegment> out;
  out.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    WaveformSegment s;
    s.sensor_id = r.prefixed_string();
    s.start_timestamp = static_cast<std::int64_t>(r.u64());
    s.sample_rate = r.u32();
    const std::uint32_t n = r.u32();
    if (static_cast<std::size_t>(n) * 4 > r.remaining()) fail(ErrorKind::io, "truncated raw archive");
    s.samples.resize(n);
    for (std::uint32_t k = 0; k < n; ++k) s.samples[k] = r.f32();
    auto& t = s.telemetry;
    t.timestamp = static_cast<std::int64_t>(r.f64());
    t.gps_lat = r.f64();
    t.gps_lon = r.f64();
    t.temperature = r.f64();
    t.accel_x = r.f64();
    t.accel_y = r.f64();
    t.accel_z = r.f64();
    t.roll = r.f64();
    t.pitch = r.f64();
    t.yaw = r.f64();
    out.push_back(std::move(s));
  }
  if (!r.done()) fail(ErrorKind::io, "trailing bytes after raw archive");
  return out;
}

ArchiveManifest export_raw_archive(const std::vector<WaveformSegment>& segments,
                                   const std::string& path) {
  const Bytes bytes = encode_raw_archive(segments);
  write_file(path, bytes);
  return {path, static_cast<std::uint32_t>(segments.size()), to_hex(sha256(bytes))};
}

std::vector<WaveformSegment> import_raw_archive(const std::string& path) {
  const Bytes bytes = read_file(path);
  return decode_raw_archive(bytes);
}

const char* to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::none: return "none";
    case FaultKind::flat_spot: return "flat_spot";
    case FaultKind::rail_bump: return "rail_bump";
  }
  return "none";
}

const char* to_string(Direction d) {
  return d == Direction::a_to_b ? "a_to_b" : "b_to_a";
}

FaultKind fault_kind_from_string(const std::string& s) {
  if (s == "none") return FaultKind::none;
  if (s == "flat_spot") return FaultKind::flat_spot;
  if (s == "rail_bump") return FaultKind::rail_bump;
  fail(ErrorKind::parameter, "unknown fault kind '" + s + "'");
}

Direction direction_from_string(const std::string& s) {
  if (s == "a_to_b") return Direction::a_to_b;
  if (s == "b_to_a") return Direction::b_to_a;
  fail(ErrorKind::parameter, "unknown direction '" + s + "'");
}

}  // namespace railpdm::simkit
