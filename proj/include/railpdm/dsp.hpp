#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "railpdm/crypto.hpp"
#include "railpdm/errors.hpp"
#include "railpdm/simkit.hpp"


/// FFT preprocessing and lossy magnitude compression of raw waveforms.
namespace railpdm::dsp {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 decimation-in-time transform.
/// Forward uses e^{-2πi kn/N}; inverse is unnormalized.
template <typename Scalar>
void fft_inplace(ComplexVector<Scalar>& data, bool inverse = false) {
  const auto n = static_cast<std::size_t>(data.size());
  if (n < 2 || !is_power_of_two(n)) {
    fail(ErrorKind::size, "FFT length must be a power of two >= 2, got " + std::to_string(n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[static_cast<Eigen::Index>(i)], data[static_cast<Eigen::Index>(j)]);
  }
  const Scalar sign = inverse ? Scalar(1) : Scalar(-1);
  // Twiddles for the largest stage, computed directly (no recurrence drift).
  std::vector<std::complex<Scalar>> tw(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const Scalar angle = sign * Scalar(2) * std::numbers::pi_v<Scalar> * Scalar(k) / Scalar(n);
    tw[k] = {std::cos(angle), std::sin(angle)};
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto a = static_cast<Eigen::Index>(start + k);
        const auto b = static_cast<Eigen::Index>(start + k + half);
        const std::complex<Scalar> t = tw[k * stride] * data[b];
        data[b] = data[a] - t;
        data[a] += t;
      }
    }
  }
}

/// |X[k]| for k = 0..N/2 of a real sequence whose length is a power of two.
template <typename Derived>
Vector<typename Derived::Scalar> fft_magnitude(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  ComplexVector<Scalar> buf = x.template cast<std::complex<Scalar>>();
  fft_inplace(buf);
  return buf.head(buf.size() / 2 + 1).cwiseAbs();
}

/// Full two-sided spectrum of a real sequence (unnormalized).
template <typename Derived>
ComplexVector<typename Derived::Scalar> fft_real(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  ComplexVector<Scalar> buf = x.template cast<std::complex<Scalar>>();
  fft_inplace(buf);
  return buf;
}

/// Linear cross-correlation r[l] = Σ_n a[n] b[n + l] for l in
/// [-(len(a)-1), len(b)-1], returned with index 0 at lag -(len(a)-1).
template <typename DerivedA, typename DerivedB>
Vector<typename DerivedA::Scalar> cross_correlate(const Eigen::MatrixBase<DerivedA>& a,
                                                  const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Eigen::Index out_len = a.size() + b.size() - 1;
  Eigen::Index n = 2;
  while (n < out_len) n <<= 1;
  ComplexVector<Scalar> fa = ComplexVector<Scalar>::Zero(n);
  ComplexVector<Scalar> fb = ComplexVector<Scalar>::Zero(n);
  // Reverse a so the product computes correlation instead of convolution.
  fa.head(a.size()) = a.reverse().template cast<std::complex<Scalar>>();
  fb.head(b.size()) = b.template cast<std::complex<Scalar>>();
  fft_inplace(fa);
  fft_inplace(fb);
  fa = fa.cwiseProduct(fb);
  fft_inplace(fa, true);
  return fa.head(out_len).real() / Scalar(n);
}

enum class Window { rect, hann };

/// Symmetric raised-cosine taper (w[0] = w[N-1] = 0) or all ones.
template <typename Scalar>
Vector<Scalar> window_coefficients(Window kind, Eigen::Index n) {
  if (kind == Window::rect || n < 2) return Vector<Scalar>::Ones(n);
  Vector<Scalar> w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = Scalar(0.5) * (Scalar(1) - std::cos(Scalar(2) * std::numbers::pi_v<Scalar> *
                                               Scalar(i) / Scalar(n - 1)));
  }
  return w;
}

const char* to_string(Window w);
Window window_from_string(const std::string& s);

struct Framing {
  /// One column per frame, window_len rows.
  Eigen::MatrixXd frames;
  /// Set when the segment is shorter than one window (frames is empty).
  bool short_segment = false;

  Eigen::Index count() const { return frames.cols(); }
};

Framing frame_waveform(const simkit::WaveformSegment& segment, std::size_t window_len,
                       std::size_t hop, Window window);

inline constexpr std::size_t kDefaultWindowLen = 1024;
inline constexpr std::size_t kDefaultHop = 1024;
inline constexpr double kCodeMax = 65535.0;

struct SpectralFrame {
  std::string sensor_id;
  std::int64_t start_timestamp = 0;
  std::uint32_t frame_index = 0;
  std::uint32_t window_len = 0;
  std::uint32_t hop = 0;
  std::uint32_t sample_rate = 0;
  double scale = 1.0;
  std::vector<std::uint16_t> bins;

  bool operator==(const SpectralFrame&) const = default;

  /// Window span in microseconds (floor).
  std::int64_t duration_us() const {
    return static_cast<std::int64_t>(window_len) * 1'000'000 / sample_rate;
  }
  double nyquist() const { return sample_rate / 2.0; }
};

std::vector<SpectralFrame> compress(const simkit::WaveformSegment& segment,
                                    std::size_t window_len = kDefaultWindowLen,
                                    std::size_t hop = kDefaultHop, Window window = Window::hann);

/// code / 65535 * scale per bin.
Eigen::VectorXd dequantize(const SpectralFrame& frame);

/// First violated invariant as a short machine-readable reason, if any.
std::optional<std::string> check_frame(const SpectralFrame& frame);

nlohmann::ordered_json to_json(const SpectralFrame& frame);
/// Throws ValidationError whose field() is the failure reason.
SpectralFrame frame_from_json(const nlohmann::json& j);

std::string to_jsonl(const std::vector<SpectralFrame>& frames);
std::vector<SpectralFrame> frames_from_jsonl(const std::string& text);

/// Compact uplink form of a frame batch: little-endian binary frame records
/// deflated with zlib, behind the magic "RSFRM1". This is what crosses the
/// constrained mobile link.
inline constexpr std::string_view kUplinkMagic = "RSFRM1";
Bytes pack_uplink(const std::vector<SpectralFrame>& frames);
std::vector<SpectralFrame> unpack_uplink(std::span<const std::uint8_t> packed);

}  // namespace railpdm::dsp
