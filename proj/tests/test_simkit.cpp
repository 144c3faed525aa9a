#include <doctest.h>

#include <fstream>

#include "railpdm/binary_io.hpp"
#include "railpdm/simkit.hpp"
#include "support.hpp"

using namespace railpdm;
using namespace railpdm::simkit;

namespace {

RideParams ride(double route, double speed, std::uint64_t seed) {
  RideParams p;
  p.route_length = route;
  p.speed = speed;
  p.seed = seed;
  return p;
}

Eigen::VectorXd concat(const std::vector<WaveformSegment>& segs) {
  Eigen::Index n = 0;
  for (const auto& s : segs) n += s.samples.size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& s : segs) {
    out.segment(at, s.samples.size()) = s.samples.cast<double>();
    at += s.samples.size();
  }
  return out;
}

/// First index whose magnitude exceeds `thr` (or -1).
Eigen::Index onset(const Eigen::VectorXf& x, float thr = 0.0f) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > thr) return i;
  }
  return -1;
}

}  // namespace

TEST_CASE("ride is deterministic under a fixed seed") {
  auto a = simulate_ride(ride(100.0, 20.0, 7));
  auto b = simulate_ride(ride(100.0, 20.0, 7));
  REQUIRE(a.size() == b.size());
  CHECK(encode_raw_archive(a) == encode_raw_archive(b));
  auto c = simulate_ride(ride(100.0, 20.0, 8));
  CHECK(encode_raw_archive(a) != encode_raw_archive(c));
}

TEST_CASE("segments tile the ride without gaps") {
  auto segs = simulate_ride(ride(130.0, 20.0, 1));
  CHECK(segs.size() == 7);  // 6.5 s rounded up to whole segments
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(segs[i].samples.size() == 8192);
    CHECK(segs[i].duration() == doctest::Approx(1.0));
    if (i > 0) {
      CHECK(segs[i].start_timestamp - segs[i - 1].start_timestamp == 1'000'000);
      CHECK(segs[i].telemetry.timestamp > segs[i - 1].telemetry.timestamp);
    }
    CHECK(segs[i].telemetry.gps_lat >= -90.0);
    CHECK(segs[i].telemetry.gps_lat <= 90.0);
  }
}

TEST_CASE("zero-severity flat spot leaves the samples untouched") {
  auto clean = ride(60.0, 15.0, 3);
  auto faulty = clean;
  faulty.faults = {{FaultKind::flat_spot, 0.0, 2.7, std::nullopt}};
  CHECK(simulate_ride(clean) == simulate_ride(faulty));
}

TEST_CASE("flat spot impact period equals circumference over speed") {
  // Injected-only signal = faulted minus clean (separate RNG streams).
  auto clean = ride(27.0, 13.5, 11);
  auto faulty = clean;
  faulty.faults = {{FaultKind::flat_spot, 1.0, 2.7, std::nullopt}};
  const Eigen::VectorXd diff = concat(simulate_ride(faulty)) - concat(simulate_ride(clean));

  // Energy envelope (squared, 8-sample moving average) removes the ringing
  // carrier; its autocorrelation peaks at the impact period.
  Eigen::VectorXd inj = Eigen::VectorXd::Zero(diff.size());
  for (Eigen::Index i = 0; i < diff.size(); ++i) {
    for (Eigen::Index k = std::max<Eigen::Index>(0, i - 7); k <= i; ++k) inj[i] += diff[k] * diff[k];
  }

  // Autocorrelation oracle, lags in [0.1 s, 0.3 s].
  const Eigen::Index lo = 819, hi = 2458;
  Eigen::Index best = lo;
  double best_v = -1e300;
  for (Eigen::Index lag = lo; lag <= hi; ++lag) {
    const double v = inj.head(inj.size() - lag).dot(inj.tail(inj.size() - lag));
    if (v > best_v) {
      best_v = v;
      best = lag;
    }
  }
  CHECK(std::abs(static_cast<double>(best) - 8192.0 / 5.0) <= 1.0);  // period 0.2 s
}

TEST_CASE("flat spot energy is non-decreasing in severity") {
  auto clean = ride(40.0, 20.0, 5);
  const Eigen::VectorXd base = concat(simulate_ride(clean));
  double last = -1.0;
  for (double sev : {0.0, 0.1, 0.3, 0.5, 0.8, 1.0}) {
    auto p = clean;
    p.faults = {{FaultKind::flat_spot, sev, 2.8, std::nullopt}};
    const double rms = (concat(simulate_ride(p)) - base).norm();
    CHECK(rms >= last);
    last = rms;
  }
}

TEST_CASE("rail bump lands in the segment covering its position") {
  auto clean = ride(100.0, 20.0, 9);
  auto bumped = clean;
  bumped.faults = {{FaultKind::rail_bump, 1.0, std::nullopt, 52.0}};  // t = 2.6 s
  auto a = simulate_ride(clean);
  auto b = simulate_ride(bumped);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = (a[i].samples - b[i].samples).cast<double>().norm();
    if (i == 2) {
      CHECK(diff > 1.0);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("telemetry displacement matches speed times segment duration") {
  auto p = ride(400.0, 25.0, 2);
  auto segs = simulate_ride(p);
  for (std::size_t i = 1; i < segs.size(); ++i) {
    const auto& t0 = segs[i - 1].telemetry;
    const auto& t1 = segs[i].telemetry;
    const double d = ground_distance(t0.gps_lat, t0.gps_lon, t1.gps_lat, t1.gps_lon);
    CHECK(std::abs(d - 25.0) / 25.0 < 1e-6);
  }
}

TEST_CASE("invalid ride parameters") {
  CHECK_THROWS_AS(simulate_ride(ride(0.0, 10.0, 1)), Error);
  try {
    simulate_ride(ride(100.0, -1.0, 1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parameter);
  }
  auto p = ride(100.0, 10.0, 1);
  p.faults = {{FaultKind::flat_spot, 0.5, std::nullopt, std::nullopt}};
  try {
    simulate_ride(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::spec);
  }
  p.faults = {{FaultKind::flat_spot, 1.5, 2.7, std::nullopt}};
  CHECK_THROWS_AS(simulate_ride(p), Error);
}

TEST_CASE("track pass onset lag equals spacing over speed") {
  TrackPassParams p;
  p.speed = 10.0;
  p.subunit_spacing = 5.0;
  p.seed = 4;
  auto ev = simulate_track_pass(p);
  CHECK(ev.subunit_a_waveform.sample_rate == ev.subunit_b_waveform.sample_rate);
  const auto a = onset(ev.subunit_a_waveform.samples);
  const auto b = onset(ev.subunit_b_waveform.samples);
  REQUIRE(a >= 0);
  CHECK(std::abs((b - a) - 4096) <= 1);  // 0.5 s at 8192 Hz

  p.direction = Direction::b_to_a;
  auto rev = simulate_track_pass(p);
  CHECK(onset(rev.subunit_b_waveform.samples) < onset(rev.subunit_a_waveform.samples));
  CHECK(rev.true_direction == Direction::b_to_a);
}

TEST_CASE("track pass is deterministic and validates parameters") {
  TrackPassParams p;
  p.speed = 30.0;
  p.subunit_spacing = 2.0;
  p.seed = 99;
  auto a = simulate_track_pass(p);
  auto b = simulate_track_pass(p);
  CHECK(a.subunit_a_waveform == b.subunit_a_waveform);
  CHECK(a.subunit_b_waveform == b.subunit_b_waveform);
  p.subunit_spacing = 0.0;
  CHECK_THROWS_AS(simulate_track_pass(p), Error);
}

TEST_CASE("track pass noise level sets the SNR") {
  TrackPassParams p;
  p.speed = 20.0;
  p.subunit_spacing = 3.0;
  p.seed = 1;
  auto clean = simulate_track_pass(p);
  p.noise_level = noise_level_for_snr_db(10.0);
  auto noisy = simulate_track_pass(p);
  const Eigen::VectorXd noise =
      (noisy.subunit_a_waveform.samples - clean.subunit_a_waveform.samples).cast<double>();
  const double sigma = std::sqrt(noise.squaredNorm() / static_cast<double>(noise.size()));
  CHECK(sigma == doctest::Approx(std::pow(10.0, -0.5)).epsilon(0.02));
}

TEST_CASE("raw archive round trip and digest") {
  testing::TempDir dir;
  auto segs = simulate_ride(ride(45.0, 15.0, 21));
  const auto path = dir.file("ride.rsraw");
  auto m = export_raw_archive(segs, path);
  CHECK(m.segment_count == segs.size());
  CHECK(m.digest == to_hex(sha256(read_file(path))));
  CHECK(import_raw_archive(path) == segs);

  auto empty = export_raw_archive({}, dir.file("empty.rsraw"));
  CHECK(empty.segment_count == 0);
  CHECK(import_raw_archive(dir.file("empty.rsraw")).empty());

  auto changed = segs;
  changed[1].samples[100] += 1e-3f;
  CHECK(export_raw_archive(changed, dir.file("changed.rsraw")).digest != m.digest);
  CHECK(export_raw_archive(segs, dir.file("same.rsraw")).digest == m.digest);

  // Layout: magic then little-endian segment count.
  const Bytes raw = read_file(path);
  CHECK(std::string(raw.begin(), raw.begin() + 6) == "RSRAW1");
  CHECK(raw[6] == segs.size());

  CHECK_THROWS_AS(export_raw_archive(segs, dir.file("missing/dir/x.rsraw")), Error);
}
