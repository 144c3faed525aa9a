#include "railpdm/dsp.hpp"

#include <sstream>

#include <zlib.h>

#include "railpdm/binary_io.hpp"

namespace railpdm::dsp {

const char* to_string(Window w) { return w == Window::rect ? "rect" : "hann"; }

Window window_from_string(const std::string& s) {
  if (s == "rect") return Window::rect;
  if (s == "hann") return Window::hann;
  fail(ErrorKind::parameter, "unknown window '" + s + "'");
}

Framing frame_waveform(const simkit::WaveformSegment& segment, std::size_t window_len,
                       std::size_t hop, Window window) {
  if (hop < 1) fail(ErrorKind::parameter, "hop must be >= 1");
  if (window_len < 2 || !is_power_of_two(window_len)) {
    fail(ErrorKind::size, "window_len must be a power of two >= 2");
  }
  const auto len = static_cast<std::size_t>(segment.samples.size());
  const auto wl = static_cast<Eigen::Index>(window_len);
  Framing out;
  if (len < window_len) {
    out.frames.resize(wl, 0);
    out.short_segment = true;
    return out;
  }
  const std::size_t count = (len - window_len) / hop + 1;
  const Eigen::VectorXd w = window_coefficients<double>(window, wl);
  out.frames.resize(wl, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    out.frames.col(static_cast<Eigen::Index>(i)) =
        segment.samples.segment(static_cast<Eigen::Index>(i * hop), wl).cast<double>().cwiseProduct(w);
  }
  return out;
}

std::vector<SpectralFrame> compress(const simkit::WaveformSegment& segment, std::size_t window_len,
                                    std::size_t hop, Window window) {
  const Framing framing = frame_waveform(segment, window_len, hop, window);
  std::vector<SpectralFrame> out;
  out.reserve(static_cast<std::size_t>(framing.count()));
  for (Eigen::Index i = 0; i < framing.count(); ++i) {
    const Eigen::VectorXd mag = fft_magnitude(framing.frames.col(i));
    SpectralFrame f;
    f.sensor_id = segment.sensor_id;
    f.frame_index = static_cast<std::uint32_t>(i);
    f.start_timestamp =
        segment.start_timestamp +
        std::llround(static_cast<double>(i) * static_cast<double>(hop) * 1e6 / segment.sample_rate);
    f.window_len = static_cast<std::uint32_t>(window_len);
    f.hop = static_cast<std::uint32_t>(hop);
    f.sample_rate = segment.sample_rate;
    const double peak = mag.maxCoeff();
    f.scale = peak > 0.0 ? peak : 1.0;
    f.bins.resize(static_cast<std::size_t>(mag.size()));
    for (Eigen::Index k = 0; k < mag.size(); ++k) {
      f.bins[static_cast<std::size_t>(k)] =
          static_cast<std::uint16_t>(std::lround(mag[k] / f.scale * kCodeMax));
    }
    out.push_back(std::move(f));
  }
  return out;
}

Eigen::VectorXd dequantize(const SpectralFrame& frame) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(frame.bins.size()));
  for (std::size_t k = 0; k < frame.bins.size(); ++k) {
    m[static_cast<Eigen::Index>(k)] = frame.bins[k] / kCodeMax * frame.scale;
  }
  return m;
}

std::optional<std::string> check_frame(const SpectralFrame& f) {
  if (f.sensor_id.empty()) return "sensor_id";
  if (f.window_len < 2 || !is_power_of_two(f.window_len)) return "window_len";
  if (f.hop < 1) return "hop";
  if (f.sample_rate < 1) return "sample_rate";
  if (!(f.scale > 0.0) || !std::isfinite(f.scale)) return "scale";
  if (f.bins.size() != f.window_len / 2 + 1) return "bins_length";
  return std::nullopt;
}

nlohmann::ordered_json to_json(const SpectralFrame& f) {
  nlohmann::ordered_json j;
  j["sensor_id"] = f.sensor_id;
  j["start_timestamp"] = f.start_timestamp;
  j["frame_index"] = f.frame_index;
  j["window_len"] = f.window_len;
  j["hop"] = f.hop;
  j["sample_rate"] = f.sample_rate;
  j["scale"] = f.scale;
  j["bins"] = f.bins;
  return j;
}

namespace {

template <typename T>
T unsigned_field(const nlohmann::json& j, const char* name, std::uint64_t max) {
  if (!j.contains(name)) throw ValidationError(name, "missing");
  const auto& v = j.at(name);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ValidationError(name, "must be a non-negative integer");
  }
  const auto u = v.get<std::uint64_t>();
  if (u > max) throw ValidationError(name, "out of range");
  return static_cast<T>(u);
}

}  // namespace

SpectralFrame frame_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("frame", "must be an object");
  SpectralFrame f;
  if (!j.contains("sensor_id") || !j["sensor_id"].is_string()) {
    throw ValidationError("sensor_id", "must be a string");
  }
  f.sensor_id = j["sensor_id"].get<std::string>();
  if (!j.contains("start_timestamp") || !j["start_timestamp"].is_number_integer()) {
    throw ValidationError("start_timestamp", "must be an integer");
  }
  f.start_timestamp = j["start_timestamp"].get<std::int64_t>();
  f.frame_index = unsigned_field<std::uint32_t>(j, "frame_index", UINT32_MAX);
  f.window_len = unsigned_field<std::uint32_t>(j, "window_len", UINT32_MAX);
  f.hop = unsigned_field<std::uint32_t>(j, "hop", UINT32_MAX);
  f.sample_rate = unsigned_field<std::uint32_t>(j, "sample_rate", UINT32_MAX);
  if (!j.contains("scale") || !j["scale"].is_number()) throw ValidationError("scale", "must be a number");
  f.scale = j["scale"].get<double>();
  if (!j.contains("bins") || !j["bins"].is_array()) throw ValidationError("bins", "must be an array");
  f.bins.reserve(j["bins"].size());
  for (const auto& b : j["bins"]) {
    if (!b.is_number_unsigned() || b.get<std::uint64_t>() > 65535) {
      throw ValidationError("bins", "codes must be integers in [0, 65535]");
    }
    f.bins.push_back(static_cast<std::uint16_t>(b.get<std::uint64_t>()));
  }
  if (auto reason = check_frame(f)) throw ValidationError(*reason, "invariant violated");
  return f;
}

std::string to_jsonl(const std::vector<SpectralFrame>& frames) {
  std::string out;
  for (const auto& f : frames) {
    out += to_json(f).dump();
    out += '\n';
  }
  return out;
}

std::vector<SpectralFrame> frames_from_jsonl(const std::string& text) {
  std::vector<SpectralFrame> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ValidationError("line " + std::to_string(line_no), "malformed JSON");
    }
    out.push_back(frame_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uplink packing

Bytes pack_uplink(const std::vector<SpectralFrame>& frames) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(frames.size()));
  for (const auto& f : frames) {
    w.prefixed(f.sensor_id);
    w.i64(f.start_timestamp);
    w.u32(f.frame_index);
    w.u32(f.window_len);
    w.u32(f.hop);
    w.u32(f.sample_rate);
    w.f64(f.scale);
    w.u32(static_cast<std::uint32_t>(f.bins.size()));
    // High-byte plane first: it carries most of the redundancy.
    Bytes planes(f.bins.size() * 2);
    for (std::size_t k = 0; k < f.bins.size(); ++k) {
      planes[k] = static_cast<std::uint8_t>(f.bins[k] >> 8);
      planes[f.bins.size() + k] = static_cast<std::uint8_t>(f.bins[k] & 0xff);
    }
    w.raw(planes);
  }
  const Bytes& plain = w.bytes();
  uLongf packed_len = compressBound(static_cast<uLong>(plain.size()));
  Bytes out(kUplinkMagic.size() + 4 + packed_len);
  std::copy(kUplinkMagic.begin(), kUplinkMagic.end(), out.begin());
  const auto n = static_cast<std::uint32_t>(plain.size());
  for (int i = 0; i < 4; ++i) out[kUplinkMagic.size() + i] = static_cast<std::uint8_t>(n >> (8 * i));
  if (compress2(out.data() + kUplinkMagic.size() + 4, &packed_len, plain.data(),
                static_cast<uLong>(plain.size()), Z_BEST_COMPRESSION) != Z_OK) {
    fail(ErrorKind::io, "deflate failed");
  }
  out.resize(kUplinkMagic.size() + 4 + packed_len);
  return out;
}

std::vector<SpectralFrame> unpack_uplink(std::span<const std::uint8_t> packed) {
  ByteReader header(packed);
  auto magic = header.raw(kUplinkMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kUplinkMagic.begin())) {
    fail(ErrorKind::io, "not an uplink frame batch");
  }
  const std::uint32_t plain_len = header.u32();
  Bytes plain(plain_len);
  uLongf out_len = plain_len;
  auto body = packed.subspan(header.position());
  if (uncompress(plain.data(), &out_len, body.data(), static_cast<uLong>(body.size())) != Z_OK ||
      out_len != plain_len) {
    fail(ErrorKind::io, "corrupt uplink frame batch");
  }
  ByteReader r(plain);
  const std::uint32_t count = r.u32();
  std::vector<SpectralFrame> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    SpectralFrame f;
    f.sensor_id = r.prefixed_string();
    f.start_timestamp = r.i64();
    f.frame_index = r.u32();
    f.window_len = r.u32();
    f.hop = r.u32();
    f.sample_rate = r.u32();
    f.scale = r.f64();
    const std::uint32_t nb = r.u32();
    auto raw = r.raw(static_cast<std::size_t>(nb) * 2);
    f.bins.resize(nb);
    for (std::uint32_t k = 0; k < nb; ++k) {
      f.bins[k] = static_cast<std::uint16_t>(raw[k] << 8 | raw[nb + k]);
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace railpdm::dsp
